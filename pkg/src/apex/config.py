"""Runtime configuration.

Everything operational is an environment variable so a deployment is just a
process plus a directory. Secrets are never logged; a missing APEX_SECRET
falls back to a random per-process key, which is fine for development and
useless for anything that must survive a restart.
"""

from __future__ import annotations

import logging
import os
import secrets
from dataclasses import dataclass, field

from .money import to_cents

logger = logging.getLogger(__name__)

MIN_SECRET_BYTES = 32

DEFAULT_PRICE = "5.0"
DEFAULT_MAX_PER_REQUEST = "10.0"
DEFAULT_DAILY_BUDGET = "100.0"
DEFAULT_TOKEN_TTL = "300"
DEFAULT_DB_PATH = "apex.db"
DEFAULT_LOG_PATH = "logs.json"
DEFAULT_BIND_ADDR = "127.0.0.1:8000"
DEFAULT_PAYEE_VPA = "apex@sim"


def load_secret(raw: str | None) -> bytes:
    """Decode APEX_SECRET (hex) or generate a random development key."""
    if raw is None or raw == "":
        logger.warning(
            "APEX_SECRET is not set; using a random per-process key. "
            "Tokens will not survive a restart."
        )
        return secrets.token_bytes(MIN_SECRET_BYTES)
    try:
        key = bytes.fromhex(raw)
    except ValueError as exc:
        raise ValueError("APEX_SECRET must be hex-encoded") from exc
    if len(key) < MIN_SECRET_BYTES:
        raise ValueError(
            f"APEX_SECRET must decode to at least {MIN_SECRET_BYTES} bytes, "
            f"got {len(key)}"
        )
    return key


@dataclass
class ApexConfig:
    secret: bytes
    db_path: str = DEFAULT_DB_PATH
    log_path: str = DEFAULT_LOG_PATH
    price_cents: int = 500
    max_per_request_cents: int = 1000
    daily_budget_cents: int = 10000
    token_ttl: int = 300
    bind_host: str = "127.0.0.1"
    bind_port: int = 8000
    payee_vpa: str = DEFAULT_PAYEE_VPA
    allow_reset: bool = True

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> "ApexConfig":
        env = dict(os.environ) if env is None else env
        host, _, port = env.get("APEX_BIND_ADDR", DEFAULT_BIND_ADDR).partition(":")
        return cls(
            secret=load_secret(env.get("APEX_SECRET")),
            db_path=env.get("APEX_DB_PATH", DEFAULT_DB_PATH),
            log_path=env.get("APEX_LOG_PATH", DEFAULT_LOG_PATH),
            price_cents=to_cents(env.get("APEX_PRICE", DEFAULT_PRICE)),
            max_per_request_cents=to_cents(
                env.get("APEX_MAX_PER_REQUEST", DEFAULT_MAX_PER_REQUEST)
            ),
            daily_budget_cents=to_cents(
                env.get("APEX_DAILY_BUDGET", DEFAULT_DAILY_BUDGET)
            ),
            token_ttl=int(env.get("APEX_TOKEN_TTL", DEFAULT_TOKEN_TTL)),
            bind_host=host or "127.0.0.1",
            bind_port=int(port) if port else 8000,
            payee_vpa=env.get("APEX_UPI_VPA", DEFAULT_PAYEE_VPA),
            allow_reset=env.get("APEX_ALLOW_RESET", "1") not in ("0", "false", "no"),
        )
