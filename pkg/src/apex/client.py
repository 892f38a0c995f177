"""Protocol-disciplined agent client.

Drives the challenge, pay, consume sequence over HTTP and classifies every
terminal response as success, blocked, or failed. Attack operations exist to
measure the server, so they never special-case themselves around a rejection:
a blocked replay is reported as blocked, not retried.

Latency on an outcome is wall-clock from the start of the operation to the
terminal response of the sequence that produced it. spend_delta is the amount
this operation freshly settled (idempotent replays add nothing).
"""

from __future__ import annotations

import secrets
import time
import uuid
from dataclasses import dataclass

import httpx

from . import tokens
from .money import to_cents

__all__ = ["AgentOutcome", "IdempotencyProbe", "AgentClient"]

INVALID_TOKEN_VARIANTS = ("malformed", "bad_signature", "wrong_key")


@dataclass(frozen=True)
class AgentOutcome:
    status: str  # "success" | "blocked" | "failed"
    reason: str
    latency_ms: float
    spend_delta: float


@dataclass(frozen=True)
class IdempotencyProbe:
    first_token: str
    retry_token: str
    conflict: AgentOutcome
    settled_amount: float = 0.0  # freshly settled by this probe, once per pair


def _reason_from(response: httpx.Response) -> str:
    try:
        doc = response.json()
    except ValueError:
        return f"http_{response.status_code}"
    if isinstance(doc, dict):
        if isinstance(doc.get("reason"), str):
            return doc["reason"]
        detail = doc.get("detail")
        if isinstance(detail, dict) and isinstance(detail.get("reason"), str):
            return detail["reason"]
    return f"http_{response.status_code}"


class AgentClient:
    """One logical agent talking to one gateway."""

    def __init__(
        self,
        base_url: str | None = None,
        *,
        http: httpx.Client | None = None,
        scenario: str | None = None,
        timeout: float = 30.0,
    ):
        if http is None:
            if base_url is None:
                raise ValueError("need base_url or an httpx client")
            http = httpx.Client(base_url=base_url, timeout=timeout)
        self._http = http
        self.scenario = scenario
        self.requests_sent = 0  # /data and /pay only

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "AgentClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- transport ---------------------------------------------------------

    def _headers(self, token: str | None = None) -> dict[str, str]:
        headers: dict[str, str] = {}
        if token is not None:
            headers["x-payment-token"] = token
        if self.scenario is not None:
            headers["x-scenario"] = self.scenario
        return headers

    def _get_data(self, baseline: str, token: str | None = None,
                  amount: str | None = None) -> httpx.Response:
        params: dict[str, str] = {"baseline": baseline}
        if amount is not None:
            params["amount"] = amount
        self.requests_sent += 1
        return self._http.get("/data", params=params, headers=self._headers(token))

    def _post_pay(self, ref_id: str, amount: float, baseline: str,
                  idempotency_key: str | None) -> httpx.Response:
        body = {"ref_id": ref_id, "amount": amount, "baseline": baseline}
        if idempotency_key is not None:
            body["idempotency_key"] = idempotency_key
        self.requests_sent += 1
        return self._http.post("/pay", json=body, headers=self._headers())

    def reset(self) -> None:
        self._http.post("/reset")

    # -- operations ----------------------------------------------------------

    def fetch_paid(self, baseline: str, idempotency_key: str | None = None) -> AgentOutcome:
        """Full protocol sequence: GET, pay on 402, GET again with the token."""
        outcome, _token, _amount = self._paid_fetch(baseline, idempotency_key)
        return outcome

    def _paid_fetch(
        self,
        baseline: str,
        idempotency_key: str | None = None,
        wait: float = 0.0,
    ) -> tuple[AgentOutcome, str | None, float]:
        t0 = time.perf_counter()

        def done(status: str, reason: str, spend: float) -> AgentOutcome:
            return AgentOutcome(status, reason, (time.perf_counter() - t0) * 1000, spend)

        try:
            first = self._get_data(baseline)
            if first.status_code == 200:
                return done("success", "ok", 0.0), None, 0.0
            if first.status_code != 402:
                return done("failed", _reason_from(first), 0.0), None, 0.0

            detail = first.json()["detail"]
            ref_id, amount = detail["ref_id"], detail["amount"]
            paid = self._post_pay(
                ref_id, amount, baseline, idempotency_key or uuid.uuid4().hex
            )
            if paid.status_code == 403:
                return done("blocked", _reason_from(paid), 0.0), None, amount
            if paid.status_code != 200:
                return done("failed", _reason_from(paid), 0.0), None, amount
            token = paid.json()["token"]

            if wait > 0:
                time.sleep(wait)

            final = self._get_data(baseline, token=token)
            if final.status_code == 200:
                return done("success", "ok", amount), token, amount
            if final.status_code == 401:
                return done("blocked", _reason_from(final), amount), token, amount
            return done("failed", _reason_from(final), amount), token, amount
        except httpx.HTTPError:
            return done("failed", "transport_error", 0.0), None, 0.0

    def replay_attack(
        self, baseline: str, replays: int = 1
    ) -> tuple[AgentOutcome, list[AgentOutcome]]:
        """One legitimate paid fetch, then the same token re-sent N times.

        Replay latencies are cumulative from the start of the operation, so
        with replays=1 the counted outcome spans the whole sequence.
        """
        t0 = time.perf_counter()
        setup, token, amount = self._paid_fetch(baseline)
        results: list[AgentOutcome] = []
        for _ in range(replays):
            if token is None:
                # nothing to replay without a token; re-fetch directly
                response = self._get_data(baseline)
            else:
                response = self._get_data(baseline, token=token)
            latency = (time.perf_counter() - t0) * 1000
            if response.status_code == 200:
                results.append(AgentOutcome("success", "ok", latency, 0.0))
            elif response.status_code == 402:
                # tokenless fallback hit a fresh challenge; that is a block
                results.append(
                    AgentOutcome("blocked", "payment_required", latency, 0.0)
                )
            elif response.status_code == 401:
                results.append(
                    AgentOutcome("blocked", _reason_from(response), latency, 0.0)
                )
            else:
                results.append(
                    AgentOutcome("failed", _reason_from(response), latency, 0.0)
                )
        return setup, results

    def invalid_token_attack(self, baseline: str, variant: str = "malformed") -> AgentOutcome:
        """Present a token that was never issued. Never touches /pay."""
        if variant not in INVALID_TOKEN_VARIANTS:
            raise ValueError(f"unknown variant: {variant!r}")
        token = self._forge_token(variant)
        t0 = time.perf_counter()
        try:
            response = self._get_data(baseline, token=token)
        except httpx.HTTPError:
            return AgentOutcome(
                "failed", "transport_error", (time.perf_counter() - t0) * 1000, 0.0
            )
        latency = (time.perf_counter() - t0) * 1000
        if response.status_code == 200:
            return AgentOutcome("success", "ok", latency, 0.0)
        if response.status_code == 401:
            return AgentOutcome("blocked", _reason_from(response), latency, 0.0)
        return AgentOutcome("failed", _reason_from(response), latency, 0.0)

    @staticmethod
    def _forge_token(variant: str) -> str:
        if variant == "malformed":
            return "not-a-token"
        throwaway = secrets.token_bytes(32)
        wire, _ = tokens.mint(
            uuid.uuid4().hex, to_cents("5.00"), 300, int(time.time()), throwaway
        )
        if variant == "wrong_key":
            return wire
        # bad_signature: flip one MAC character
        head, mac = wire.rsplit(".", 1)
        flipped = ("A" if mac[-1] != "A" else "B") + mac[1:]
        return head + "." + flipped

    def expiry_probe(self, baseline: str, wait: float) -> AgentOutcome:
        """Paid fetch with a pause between settlement and consumption."""
        outcome, _token, _amount = self._paid_fetch(baseline, wait=wait)
        return outcome

    def idempotency_probe(
        self, baseline: str, idempotency_key: str | None = None
    ) -> IdempotencyProbe:
        """Pay once, retry with the same key, then retry with a fresh key.

        Returns the two token strings (identical iff the replay was
        idempotent) and the outcome of the conflicting-key attempt. Without a
        challenge (no_policy) both tokens are empty and the fetch outcome
        stands in for the conflict slot.
        """
        t0 = time.perf_counter()

        def outcome_of(response: httpx.Response) -> AgentOutcome:
            latency = (time.perf_counter() - t0) * 1000
            if response.status_code == 200:
                return AgentOutcome("success", "ok", latency, 0.0)
            # 409 is the enforcement outcome this probe provokes on purpose
            status = "blocked" if response.status_code in (401, 403, 409) else "failed"
            return AgentOutcome(status, _reason_from(response), latency, 0.0)

        try:
            first = self._get_data(baseline)
            if first.status_code == 200:
                return IdempotencyProbe("", "", outcome_of(first))
            if first.status_code != 402:
                return IdempotencyProbe("", "", outcome_of(first))

            detail = first.json()["detail"]
            ref_id, amount = detail["ref_id"], detail["amount"]
            key = idempotency_key or uuid.uuid4().hex

            paid = self._post_pay(ref_id, amount, baseline, key)
            if paid.status_code != 200:
                return IdempotencyProbe("", "", outcome_of(paid))
            first_token = paid.json()["token"]

            retry = self._post_pay(ref_id, amount, baseline, key)
            retry_token = retry.json()["token"] if retry.status_code == 200 else ""

            conflict = self._post_pay(ref_id, amount, baseline, uuid.uuid4().hex)
            return IdempotencyProbe(
                first_token, retry_token, outcome_of(conflict), settled_amount=amount
            )
        except httpx.HTTPError:
            latency = (time.perf_counter() - t0) * 1000
            return IdempotencyProbe(
                "", "", AgentOutcome("failed", "transport_error", latency, 0.0)
            )
