"""Signed payment tokens.

Wire format: base64url(payload) "." base64url(HMAC-SHA256(key, payload)),
both segments unpadded. The payload is canonical JSON with keys sorted
(amount, exp, ref_id), no whitespace, and the amount rendered with exactly
two decimals, so equal payloads are equal bytes and the MAC is deterministic.

Checks run in a fixed order: format, then signature, then expiry. A token is
valid at exp and expired at exp + 1. MAC comparison is constant-time.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import json
import re
from dataclasses import dataclass

from .money import format_cents, parse_fixed_amount

__all__ = ["TokenPayload", "VerifyResult", "mint", "verify"]

INVALID_FORMAT = "invalid_token_format"
INVALID_SIGNATURE = "invalid_signature"
EXPIRED = "token_expired"

_B64URL_SEGMENT = re.compile(r"^[A-Za-z0-9_-]+$")
_PAYLOAD_KEYS = {"amount", "exp", "ref_id"}


@dataclass(frozen=True)
class TokenPayload:
    ref_id: str
    amount_cents: int
    exp: int


@dataclass(frozen=True)
class VerifyResult:
    valid: bool
    payload: TokenPayload | None = None
    reason: str | None = None


def _b64url(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _b64url_decode(segment: str) -> bytes | None:
    if not _B64URL_SEGMENT.match(segment):
        return None
    padded = segment + "=" * (-len(segment) % 4)
    try:
        raw = base64.urlsafe_b64decode(padded.encode("ascii"))
    except (binascii.Error, ValueError):
        return None
    # strict canonical form: reject unused trailing bits and padded variants
    if _b64url(raw) != segment:
        return None
    return raw


def _canonical_payload(ref_id: str, amount_cents: int, exp: int) -> bytes:
    doc = {"amount": format_cents(amount_cents), "exp": exp, "ref_id": ref_id}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def mint(ref_id: str, amount_cents: int, ttl: int, now: int, key: bytes) -> tuple[str, int]:
    """Mint a signed token; returns (wire_string, exp)."""
    if not ref_id:
        raise ValueError("ref_id must be non-empty")
    if amount_cents <= 0:
        raise ValueError("amount must be positive")
    if ttl <= 0:
        raise ValueError("ttl must be positive")
    exp = int(now) + int(ttl)
    payload = _canonical_payload(ref_id, amount_cents, exp)
    mac = hmac.new(key, payload, hashlib.sha256).digest()
    return _b64url(payload) + "." + _b64url(mac), exp


def _parse_payload(raw: bytes) -> TokenPayload | None:
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    if not isinstance(doc, dict) or set(doc) != _PAYLOAD_KEYS:
        return None
    ref_id, exp = doc["ref_id"], doc["exp"]
    if not isinstance(ref_id, str) or not ref_id:
        return None
    if isinstance(exp, bool) or not isinstance(exp, int):
        return None
    amount_cents = parse_fixed_amount(doc["amount"])
    if amount_cents is None or amount_cents <= 0:
        return None
    # strict canonicality: re-serialization must reproduce the bytes
    if _canonical_payload(ref_id, amount_cents, exp) != raw:
        return None
    return TokenPayload(ref_id=ref_id, amount_cents=amount_cents, exp=exp)


def verify(wire: str, now: int, key: bytes) -> VerifyResult:
    """Check a wire token. Never raises on untrusted input."""
    if not isinstance(wire, str) or wire.count(".") != 1:
        return VerifyResult(False, reason=INVALID_FORMAT)
    payload_seg, mac_seg = wire.split(".", 1)
    if not payload_seg or not mac_seg:
        return VerifyResult(False, reason=INVALID_FORMAT)
    payload_raw = _b64url_decode(payload_seg)
    mac_raw = _b64url_decode(mac_seg)
    if payload_raw is None or mac_raw is None:
        return VerifyResult(False, reason=INVALID_FORMAT)
    payload = _parse_payload(payload_raw)
    if payload is None:
        return VerifyResult(False, reason=INVALID_FORMAT)
    expected = hmac.new(key, payload_raw, hashlib.sha256).digest()
    if not hmac.compare_digest(mac_raw, expected):
        return VerifyResult(False, reason=INVALID_SIGNATURE)
    if payload.exp < int(now):
        return VerifyResult(False, reason=EXPIRED)
    return VerifyResult(True, payload=payload)
