"""Append-only JSONL audit log.

One JSON object per line, one line per handled request. Appends serialize on
a lock and flush per line, so a line is complete in the OS buffer before the
HTTP response goes out (process-crash durable; fsync is deliberately not
paid per line). Nothing here may ever receive the signing secret, and
callers must truncate tokens before logging them.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

__all__ = ["LogEvent", "AuditLog", "ReadResult", "read_all", "truncate_token"]

EVENT_TYPES = ("request", "payment", "policy")
STATUSES = ("success", "blocked", "failed")

# the fixed reason vocabulary; not enforced at write time because policy
# block reasons embed the offending amounts and so are open-ended
KNOWN_REASONS = frozenset(
    {
        "ok",
        "internal_error",
        "idempotent_replay",
        "policy_disabled",
        "payment_required",
        "unknown_baseline",
        "malformed_body",
        "invalid_amount",
        "payment_disabled",
        "unknown_ref",
        "amount_mismatch",
        "idempotency_conflict",
        "already_consumed",
        "token_already_consumed",
        "not_settled",
        "token_mismatch",
        "invalid_token_format",
        "invalid_signature",
        "token_expired",
        "transport_error",
    }
)


def truncate_token(token: str) -> str:
    """First 8 characters only; full tokens never reach the log."""
    return token[:8]


@dataclass
class LogEvent:
    timestamp: str
    event_type: str
    endpoint: str
    request_id: str
    status: str
    reason: str
    ref_id: str | None = None
    amount: float | None = None
    attack_type: str | None = None
    latency_ms: float | None = None

    def validate(self) -> None:
        if self.event_type not in EVENT_TYPES:
            raise ValueError(f"bad event_type: {self.event_type!r}")
        if self.status not in STATUSES:
            raise ValueError(f"bad status: {self.status!r}")
        if self.status in ("blocked", "failed") and not self.reason:
            raise ValueError("blocked/failed events need a reason")

    def to_dict(self) -> dict:
        doc = {
            "timestamp": self.timestamp,
            "event_type": self.event_type,
            "endpoint": self.endpoint,
            "request_id": self.request_id,
            "status": self.status,
            "reason": self.reason,
        }
        if self.ref_id is not None:
            doc["ref_id"] = self.ref_id
        if self.amount is not None:
            doc["amount"] = self.amount
        if self.attack_type is not None:
            doc["attack_type"] = self.attack_type
        if self.latency_ms is not None:
            doc["latency_ms"] = self.latency_ms
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "LogEvent":
        event = cls(
            timestamp=doc["timestamp"],
            event_type=doc["event_type"],
            endpoint=doc["endpoint"],
            request_id=doc["request_id"],
            status=doc["status"],
            reason=doc["reason"],
            ref_id=doc.get("ref_id"),
            amount=doc.get("amount"),
            attack_type=doc.get("attack_type"),
            latency_ms=doc.get("latency_ms"),
        )
        event.validate()
        return event


@dataclass
class ReadResult:
    events: list[LogEvent] = field(default_factory=list)
    errors: list[tuple[int, str]] = field(default_factory=list)  # (lineno, message)


class AuditLog:
    """Serialized appender over a single JSONL file."""

    def __init__(self, path: str):
        self._path = str(path)
        self._lock = threading.Lock()
        self._fh = open(self._path, "a", encoding="utf-8")

    @property
    def path(self) -> str:
        return self._path

    def append(self, event: LogEvent) -> None:
        event.validate()
        line = json.dumps(event.to_dict(), separators=(",", ":"))
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def read_all(path: str) -> ReadResult:
    """Parse a log file; malformed lines are reported, never dropped silently."""
    result = ReadResult()
    file = Path(path)
    if not file.exists():
        logger.warning("audit log %s does not exist", path)
        return result
    with file.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                result.errors.append((lineno, "empty line"))
                continue
            try:
                doc = json.loads(line)
                result.events.append(LogEvent.from_dict(doc))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                result.errors.append((lineno, str(exc)))
    return result
