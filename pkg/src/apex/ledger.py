"""Payment ledger.

A single SQLite table holds one row per payment reference and walks it
through CHALLENGED -> INITIATED -> SETTLED -> CONSUMED, forward only.
INITIATED is written inside the settlement transaction and committed
together with SETTLED, so it is externally visible only after a crash
mid-settlement; settle() treats such a row as resumable.

Settlement and consumption each run inside a single BEGIN IMMEDIATE
transaction, which is what makes "exactly one spend per reference" and
"exactly one consume per token" hold under concurrent callers. Connections
are per-thread; writes additionally serialize on a process-wide lock per
store instance.

Spend accounting is keyed on created_at (UTC calendar day) over rows in
state SETTLED or CONSUMED. Amounts are integer cents throughout.
"""

from __future__ import annotations

import datetime as dt
import enum
import sqlite3
import threading
import uuid
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator

__all__ = [
    "PaymentState",
    "LedgerRecord",
    "SettleResult",
    "ConsumeResult",
    "Ledger",
    "utc_now_iso",
]


class PaymentState(str, enum.Enum):
    CHALLENGED = "CHALLENGED"
    INITIATED = "INITIATED"
    SETTLED = "SETTLED"
    CONSUMED = "CONSUMED"


# rejection reasons
UNKNOWN_REF = "unknown_ref"
AMOUNT_MISMATCH = "amount_mismatch"
IDEMPOTENCY_CONFLICT = "idempotency_conflict"
ALREADY_CONSUMED = "already_consumed"
TOKEN_ALREADY_CONSUMED = "token_already_consumed"
NOT_SETTLED = "not_settled"
TOKEN_MISMATCH = "token_mismatch"

_SCHEMA = """
CREATE TABLE IF NOT EXISTS ledger (
    ref_id          TEXT PRIMARY KEY,
    amount_cents    INTEGER NOT NULL,
    created_at      TEXT NOT NULL,
    state           TEXT NOT NULL,
    token           TEXT,
    token_expiry    INTEGER,
    consumed_at     TEXT,
    idempotency_key TEXT
);
CREATE INDEX IF NOT EXISTS idx_ledger_state ON ledger(state);
CREATE INDEX IF NOT EXISTS idx_ledger_token ON ledger(token);
"""


def utc_now_iso() -> str:
    """ISO-8601 UTC with millisecond precision and a Z suffix."""
    now = dt.datetime.now(dt.timezone.utc)
    return now.strftime("%Y-%m-%dT%H:%M:%S.") + f"{now.microsecond // 1000:03d}Z"


def _day_bounds(day: dt.date) -> tuple[str, str]:
    start = f"{day.isoformat()}T00:00:00.000Z"
    end = f"{(day + dt.timedelta(days=1)).isoformat()}T00:00:00.000Z"
    return start, end


@dataclass(frozen=True)
class LedgerRecord:
    ref_id: str
    amount_cents: int
    created_at: str
    state: PaymentState
    token: str | None = None
    token_expiry: int | None = None
    consumed_at: str | None = None
    idempotency_key: str | None = None


@dataclass(frozen=True)
class SettleResult:
    outcome: str  # "settled" | "idempotent_replay" | "rejected"
    token: str | None = None
    token_expiry: int | None = None
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.outcome in ("settled", "idempotent_replay")


@dataclass(frozen=True)
class ConsumeResult:
    outcome: str  # "consumed" | "rejected"
    record: LedgerRecord | None = None
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.outcome == "consumed"


def _row_to_record(row: sqlite3.Row) -> LedgerRecord:
    return LedgerRecord(
        ref_id=row["ref_id"],
        amount_cents=row["amount_cents"],
        created_at=row["created_at"],
        state=PaymentState(row["state"]),
        token=row["token"],
        token_expiry=row["token_expiry"],
        consumed_at=row["consumed_at"],
        idempotency_key=row["idempotency_key"],
    )


class Ledger:
    """SQLite-backed payment ledger. Safe for multi-threaded use."""

    def __init__(self, db_path: str):
        self._db_path = str(db_path)
        self._lock = threading.RLock()
        self._local = threading.local()
        with self._lock:
            # executescript manages its own transaction
            self._conn().executescript(_SCHEMA)

    def _conn(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = sqlite3.connect(self._db_path, timeout=30.0)
            conn.row_factory = sqlite3.Row
            conn.isolation_level = None  # explicit transactions only
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("PRAGMA synchronous=NORMAL")
            conn.execute("PRAGMA busy_timeout=30000")
            self._local.conn = conn
        return conn

    @contextmanager
    def _txn(self) -> Iterator[sqlite3.Connection]:
        with self._lock:
            conn = self._conn()
            conn.execute("BEGIN IMMEDIATE")
            try:
                yield conn
            except BaseException:
                conn.execute("ROLLBACK")
                raise
            conn.execute("COMMIT")

    def close(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None

    # -- state transitions ------------------------------------------------

    def create_challenge(self, amount_cents: int) -> LedgerRecord:
        """Open a new CHALLENGED row under a fresh random ref_id."""
        if amount_cents <= 0:
            raise ValueError("amount must be positive")
        ref_id = uuid.uuid4().hex
        created_at = utc_now_iso()
        with self._txn() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO ledger "
                "(ref_id, amount_cents, created_at, state) VALUES (?, ?, ?, ?)",
                (ref_id, amount_cents, created_at, PaymentState.CHALLENGED.value),
            )
        return LedgerRecord(
            ref_id=ref_id,
            amount_cents=amount_cents,
            created_at=created_at,
            state=PaymentState.CHALLENGED,
        )

    def settle(
        self,
        ref_id: str,
        amount_cents: int,
        token: str,
        token_expiry: int,
        idempotency_key: str | None,
    ) -> SettleResult:
        """Move a challenge to SETTLED, exactly once per reference.

        A retry with the same idempotency key returns the stored token
        unchanged and adds no spend. A different key after settlement is a
        conflict.
        """
        with self._txn() as conn:
            row = conn.execute(
                "SELECT * FROM ledger WHERE ref_id = ?", (ref_id,)
            ).fetchone()
            if row is None:
                return SettleResult("rejected", reason=UNKNOWN_REF)
            if row["amount_cents"] != amount_cents:
                return SettleResult("rejected", reason=AMOUNT_MISMATCH)
            state = PaymentState(row["state"])
            if state == PaymentState.CONSUMED:
                return SettleResult("rejected", reason=ALREADY_CONSUMED)
            if state == PaymentState.SETTLED:
                if row["idempotency_key"] == idempotency_key:
                    return SettleResult(
                        "idempotent_replay",
                        token=row["token"],
                        token_expiry=row["token_expiry"],
                    )
                return SettleResult("rejected", reason=IDEMPOTENCY_CONFLICT)
            # CHALLENGED, or INITIATED left over from a crashed settlement
            conn.execute(
                "UPDATE ledger SET state = ? WHERE ref_id = ?",
                (PaymentState.INITIATED.value, ref_id),
            )
            conn.execute(
                "UPDATE ledger SET state = ?, token = ?, token_expiry = ?, "
                "idempotency_key = ? WHERE ref_id = ?",
                (PaymentState.SETTLED.value, token, token_expiry, idempotency_key, ref_id),
            )
        return SettleResult("settled", token=token, token_expiry=token_expiry)

    def consume(self, ref_id: str, token: str) -> ConsumeResult:
        """Consume a settled payment, exactly once per token."""
        with self._txn() as conn:
            row = conn.execute(
                "SELECT * FROM ledger WHERE ref_id = ?", (ref_id,)
            ).fetchone()
            if row is None:
                return ConsumeResult("rejected", reason=UNKNOWN_REF)
            state = PaymentState(row["state"])
            if state == PaymentState.CONSUMED:
                return ConsumeResult("rejected", reason=TOKEN_ALREADY_CONSUMED)
            if state in (PaymentState.CHALLENGED, PaymentState.INITIATED):
                return ConsumeResult("rejected", reason=NOT_SETTLED)
            if row["token"] != token:
                return ConsumeResult("rejected", reason=TOKEN_MISMATCH)
            consumed_at = utc_now_iso()
            conn.execute(
                "UPDATE ledger SET state = ?, consumed_at = ? WHERE ref_id = ?",
                (PaymentState.CONSUMED.value, consumed_at, ref_id),
            )
            updated = conn.execute(
                "SELECT * FROM ledger WHERE ref_id = ?", (ref_id,)
            ).fetchone()
        return ConsumeResult("consumed", record=_row_to_record(updated))

    # -- queries -----------------------------------------------------------

    def get(self, ref_id: str) -> LedgerRecord | None:
        row = self._conn().execute(
            "SELECT * FROM ledger WHERE ref_id = ?", (ref_id,)
        ).fetchone()
        return _row_to_record(row) if row is not None else None

    def spent_in_window(self, day: dt.date) -> int:
        """Sum of settled or consumed amounts created on the given UTC day."""
        start, end = _day_bounds(day)
        row = self._conn().execute(
            "SELECT COALESCE(SUM(amount_cents), 0) AS total FROM ledger "
            "WHERE state IN (?, ?) AND created_at >= ? AND created_at < ?",
            (PaymentState.SETTLED.value, PaymentState.CONSUMED.value, start, end),
        ).fetchone()
        return int(row["total"])

    def count(self) -> int:
        row = self._conn().execute("SELECT COUNT(*) AS n FROM ledger").fetchone()
        return int(row["n"])

    def reset(self) -> None:
        """Delete every row. Lab use only; the gateway flag-gates the endpoint."""
        with self._txn() as conn:
            conn.execute("DELETE FROM ledger")
