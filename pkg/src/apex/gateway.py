"""HTTP gateway.

Three endpoints: GET /data serves the protected payload or a 402 challenge,
POST /pay settles a challenge into a signed token, POST /reset clears the
ledger for the next experiment cell.

Every handled request to /data or /pay appends exactly one audit line,
including malformed ones. The read-spend, policy-evaluate, settle sequence
in /pay runs under a single process-wide lock, which is what keeps the daily
budget invariant exact under concurrent clients.
"""

from __future__ import annotations

import datetime as dt
import threading
import time
import uuid

from fastapi import FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import tokens
from .audit import AuditLog, LogEvent
from .config import ApexConfig
from .ledger import Ledger, utc_now_iso
from .money import cents_to_float, format_cents, to_cents
from .policy import BaselineMode, PolicyConfig, evaluate, parse_baseline

__all__ = ["create_app"]

PAYMENT_REQUIRED_MESSAGE = "Payment Required"
DATA_TITLE = "Protected research data"
DATA_CONTENT = "Simulated premium dataset record."

# settle rejection -> HTTP status
_SETTLE_STATUS = {
    "unknown_ref": 404,
    "amount_mismatch": 409,
    "idempotency_conflict": 409,
    "already_consumed": 409,
}


def _upi_link(vpa: str, amount_cents: int, ref_id: str) -> str:
    return f"upi://pay?pa={vpa}&am={format_cents(amount_cents)}&tn={ref_id}"


def create_app(cfg: ApexConfig | None = None) -> FastAPI:
    cfg = cfg or ApexConfig.from_env()
    ledger = Ledger(cfg.db_path)
    audit = AuditLog(cfg.log_path)
    policy_cfg = PolicyConfig(
        max_per_request_cents=cfg.max_per_request_cents,
        daily_budget_cents=cfg.daily_budget_cents,
    )
    pay_lock = threading.Lock()

    app = FastAPI(title="apex", docs_url=None, redoc_url=None)
    app.state.config = cfg
    app.state.ledger = ledger
    app.state.audit = audit

    def emit(
        request: Request,
        *,
        event_type: str,
        status: str,
        reason: str,
        ref_id: str | None = None,
        amount_cents: int | None = None,
    ) -> None:
        t0 = getattr(request.state, "t0", None)
        latency_ms = round((time.perf_counter() - t0) * 1000, 3) if t0 else None
        audit.append(
            LogEvent(
                timestamp=utc_now_iso(),
                event_type=event_type,
                endpoint=request.url.path,
                request_id=getattr(request.state, "request_id", uuid.uuid4().hex),
                status=status,
                reason=reason,
                ref_id=ref_id,
                amount=cents_to_float(amount_cents) if amount_cents is not None else None,
                attack_type=request.headers.get("x-scenario"),
                latency_ms=latency_ms,
            )
        )

    @app.middleware("http")
    async def _stamp_request(request: Request, call_next):
        request.state.t0 = time.perf_counter()
        request.state.request_id = uuid.uuid4().hex
        return await call_next(request)

    @app.exception_handler(RequestValidationError)
    async def _on_bad_input(request: Request, exc: RequestValidationError):
        # the handler never ran, so the audit line is owed here
        if request.url.path in ("/data", "/pay"):
            event_type = "payment" if request.url.path == "/pay" else "request"
            emit(request, event_type=event_type, status="failed", reason="malformed_body")
        return JSONResponse(
            status_code=400, content={"status": "failed", "reason": "malformed_body"}
        )

    @app.exception_handler(Exception)
    async def _on_crash(request: Request, exc: Exception):
        if request.url.path in ("/data", "/pay"):
            event_type = "payment" if request.url.path == "/pay" else "request"
            emit(request, event_type=event_type, status="failed", reason="internal_error")
        return JSONResponse(
            status_code=500, content={"status": "failed", "reason": "internal_error"}
        )

    @app.get("/data")
    def handle_data(
        request: Request,
        baseline: str | None = None,
        amount: str | None = None,
        x_payment_token: str | None = Header(default=None, alias="x-payment-token"),
    ) -> JSONResponse:
        mode = parse_baseline(baseline)
        if mode is None:
            emit(request, event_type="request", status="failed", reason="unknown_baseline")
            return JSONResponse(
                status_code=400,
                content={"status": "failed", "reason": "unknown_baseline"},
            )

        if mode == BaselineMode.NO_POLICY:
            emit(request, event_type="request", status="success", reason="ok")
            return JSONResponse(
                status_code=200,
                content={
                    "status": "ok",
                    "baseline": mode.value,
                    "data": {"title": DATA_TITLE, "content": DATA_CONTENT},
                },
            )

        if x_payment_token is None:
            # open a challenge; amount override is lab surface for fuzzing
            if amount is not None:
                try:
                    amount_cents = to_cents(amount)
                except ValueError:
                    amount_cents = 0
                if amount_cents <= 0:
                    emit(
                        request,
                        event_type="request",
                        status="failed",
                        reason="invalid_amount",
                    )
                    return JSONResponse(
                        status_code=400,
                        content={"status": "failed", "reason": "invalid_amount"},
                    )
            else:
                amount_cents = cfg.price_cents
            record = ledger.create_challenge(amount_cents)
            emit(
                request,
                event_type="request",
                status="blocked",
                reason="payment_required",
                ref_id=record.ref_id,
                amount_cents=amount_cents,
            )
            return JSONResponse(
                status_code=402,
                content={
                    "detail": {
                        "amount": cents_to_float(amount_cents),
                        "ref_id": record.ref_id,
                        "baseline": mode.value,
                        "upi_link": _upi_link(cfg.payee_vpa, amount_cents, record.ref_id),
                        "message": PAYMENT_REQUIRED_MESSAGE,
                    }
                },
            )

        check = tokens.verify(x_payment_token, int(time.time()), cfg.secret)
        if not check.valid:
            emit(request, event_type="request", status="blocked", reason=check.reason)
            return JSONResponse(
                status_code=401,
                content={"status": "blocked", "reason": check.reason},
            )

        result = ledger.consume(check.payload.ref_id, x_payment_token)
        if not result.ok:
            emit(
                request,
                event_type="request",
                status="blocked",
                reason=result.reason,
                ref_id=check.payload.ref_id,
                amount_cents=check.payload.amount_cents,
            )
            return JSONResponse(
                status_code=401,
                content={"status": "blocked", "reason": result.reason},
            )

        emit(
            request,
            event_type="request",
            status="success",
            reason="ok",
            ref_id=check.payload.ref_id,
            amount_cents=check.payload.amount_cents,
        )
        return JSONResponse(
            status_code=200,
            content={
                "status": "ok",
                "baseline": mode.value,
                "data": {"title": DATA_TITLE, "content": DATA_CONTENT},
            },
        )

    @app.post("/pay")
    def handle_pay(request: Request, body: dict) -> JSONResponse:
        def fail(status_code: int, reason: str, *, ref_id: str | None = None,
                 amount_cents: int | None = None) -> JSONResponse:
            emit(
                request,
                event_type="payment",
                status="failed",
                reason=reason,
                ref_id=ref_id,
                amount_cents=amount_cents,
            )
            return JSONResponse(
                status_code=status_code,
                content={"status": "failed", "reason": reason},
            )

        ref_id = body.get("ref_id")
        raw_amount = body.get("amount")
        idempotency_key = body.get("idempotency_key")
        if (
            not isinstance(ref_id, str)
            or not ref_id
            or isinstance(raw_amount, (bool, type(None)))
            or not isinstance(raw_amount, (int, float, str))
            or not (idempotency_key is None or isinstance(idempotency_key, str))
        ):
            return fail(400, "malformed_body")
        try:
            amount_cents = to_cents(raw_amount)
        except ValueError:
            return fail(400, "invalid_amount", ref_id=ref_id)
        if amount_cents <= 0:
            return fail(400, "invalid_amount", ref_id=ref_id)

        mode = parse_baseline(body.get("baseline"))
        if mode is None:
            return fail(400, "unknown_baseline", ref_id=ref_id, amount_cents=amount_cents)
        if mode == BaselineMode.NO_POLICY:
            return fail(400, "payment_disabled", ref_id=ref_id, amount_cents=amount_cents)

        # single critical section: spend read, policy decision, settle
        with pay_lock:
            spent = ledger.spent_in_window(dt.datetime.now(dt.timezone.utc).date())
            decision = evaluate(mode, amount_cents, spent, policy_cfg)
            if not decision.allowed:
                emit(
                    request,
                    event_type="policy",
                    status="blocked",
                    reason=decision.reason,
                    ref_id=ref_id,
                    amount_cents=amount_cents,
                )
                return JSONResponse(
                    status_code=403,
                    content={"detail": {"allowed": False, "reason": decision.reason}},
                )
            wire, exp = tokens.mint(
                ref_id, amount_cents, cfg.token_ttl, int(time.time()), cfg.secret
            )
            result = ledger.settle(ref_id, amount_cents, wire, exp, idempotency_key)

        if result.ok:
            emit(
                request,
                event_type="payment",
                status="success",
                reason="ok" if result.outcome == "settled" else "idempotent_replay",
                ref_id=ref_id,
                amount_cents=amount_cents,
            )
            return JSONResponse(
                status_code=200,
                content={
                    "status": "success",
                    "ref_id": ref_id,
                    "amount": cents_to_float(amount_cents),
                    "token": result.token,
                    "token_expiry": result.token_expiry,
                    "state": "SETTLED",
                },
            )

        return fail(
            _SETTLE_STATUS.get(result.reason, 409),
            result.reason,
            ref_id=ref_id,
            amount_cents=amount_cents,
        )

    @app.post("/reset")
    def handle_reset() -> JSONResponse:
        if not cfg.allow_reset:
            return JSONResponse(
                status_code=403,
                content={"status": "failed", "reason": "reset_disabled"},
            )
        ledger.reset()
        return JSONResponse(status_code=200, content={"status": "ok"})

    return app
