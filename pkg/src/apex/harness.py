"""Scenario harness.

Runs the fixed scenario grid (three baselines x six scenarios, two trials
per scenario) against a live gateway and reduces each cell to a
ScenarioSummary. The ledger is reset between cells but never between the two
trials of a cell, so trial two inherits trial one's spend. That carry-over
is what produces the published blocked counts.

Spend per cell is confirmed against the ledger database when its path is
known; otherwise the client-side sum of freshly settled amounts stands in.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .client import AgentClient, AgentOutcome
from .ledger import Ledger
from .money import cents_to_float

logger = logging.getLogger(__name__)

__all__ = [
    "ScenarioSpec",
    "ScenarioSummary",
    "SCENARIOS",
    "SCENARIO_ORDER",
    "BASELINES",
    "aggregate",
    "run_scenario",
    "run_all",
    "LedgerSpendReader",
]

BASELINES = ("no_policy", "payment_no_policy", "payment_with_policy")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    requests_per_trial: int
    trials: int = 2
    wait_seconds: float = 0.0

    @property
    def total_requests(self) -> int:
        return self.requests_per_trial * self.trials


SCENARIO_ORDER = (
    "normal",
    "overspending",
    "replay_attack",
    "invalid_token",
    "token_expiry",
    "idempotency",
)

SCENARIOS: dict[str, ScenarioSpec] = {
    "normal": ScenarioSpec("normal", 20),
    "overspending": ScenarioSpec("overspending", 15),
    "replay_attack": ScenarioSpec("replay_attack", 10),
    "invalid_token": ScenarioSpec("invalid_token", 10),
    "token_expiry": ScenarioSpec("token_expiry", 5, wait_seconds=2.0),
    "idempotency": ScenarioSpec("idempotency", 5),
}


@dataclass(frozen=True)
class ScenarioSummary:
    baseline: str
    scenario: str
    total: int
    successes: int
    blocked: int
    failed: int
    success_rate: float
    avg_latency_ms: float
    latency_std_ms: float
    ci95_ms: float
    p95_latency_ms: float
    throughput_rps: float
    total_spend: float

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "scenario": self.scenario,
            "total": self.total,
            "successes": self.successes,
            "blocked": self.blocked,
            "failed": self.failed,
            "success_rate": self.success_rate,
            "avg_latency_ms": self.avg_latency_ms,
            "latency_std_ms": self.latency_std_ms,
            "ci95_ms": self.ci95_ms,
            "p95_latency_ms": self.p95_latency_ms,
            "throughput_rps": self.throughput_rps,
            "total_spend": self.total_spend,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioSummary":
        return cls(**{f: doc[f] for f in cls.__dataclass_fields__})


def percentile_nearest_rank(values: list[float], q: float) -> float:
    """Nearest-rank percentile: the ceil(q*n)-th order statistic."""
    if not values:
        raise ValueError("no values")
    ordered = sorted(values)
    rank = math.ceil(q * len(ordered))
    return ordered[max(rank, 1) - 1]


def aggregate(
    outcomes: list[AgentOutcome],
    wall_clock_s: float,
    confirmed_spend: float,
    *,
    baseline: str,
    scenario: str,
) -> ScenarioSummary:
    """Reduce one cell's counted outcomes to a summary."""
    if not outcomes:
        raise ValueError("aggregate needs at least one outcome")
    latencies = [o.latency_ms for o in outcomes]
    n = len(outcomes)
    successes = sum(1 for o in outcomes if o.status == "success")
    blocked = sum(1 for o in outcomes if o.status == "blocked")
    failed = n - successes - blocked
    std = statistics.stdev(latencies) if n > 1 else 0.0
    return ScenarioSummary(
        baseline=baseline,
        scenario=scenario,
        total=n,
        successes=successes,
        blocked=blocked,
        failed=failed,
        success_rate=successes / n,
        avg_latency_ms=statistics.fmean(latencies),
        latency_std_ms=std,
        ci95_ms=1.96 * std / math.sqrt(n),
        p95_latency_ms=percentile_nearest_rank(latencies, 0.95),
        throughput_rps=n / wall_clock_s if wall_clock_s > 0 else 0.0,
        total_spend=confirmed_spend,
    )


class LedgerSpendReader:
    """Read-only view of today's settled spend, straight from the database."""

    def __init__(self, db_path: str):
        self._ledger = Ledger(db_path)

    def spent_today(self) -> float:
        day = dt.datetime.now(dt.timezone.utc).date()
        return cents_to_float(self._ledger.spent_in_window(day))


@dataclass
class RunResult:
    summary: ScenarioSummary
    outcomes: list[AgentOutcome] = field(default_factory=list)
    requests_sent: int = 0
    client_spend: float = 0.0


def _run_once(
    client: AgentClient, baseline: str, spec: ScenarioSpec, index: int
) -> tuple[list[AgentOutcome], float]:
    """Execute one counted run; returns (counted outcomes, freshly settled spend)."""
    name = spec.name
    if name in ("normal", "overspending"):
        outcome = client.fetch_paid(baseline)
        return [outcome], outcome.spend_delta
    if name == "replay_attack":
        setup, replays = client.replay_attack(baseline, replays=1)
        spend = setup.spend_delta + sum(r.spend_delta for r in replays)
        return replays, spend
    if name == "invalid_token":
        variant = "malformed" if index % 2 == 0 else "bad_signature"
        outcome = client.invalid_token_attack(baseline, variant)
        return [outcome], outcome.spend_delta
    if name == "token_expiry":
        outcome = client.expiry_probe(baseline, spec.wait_seconds)
        return [outcome], outcome.spend_delta
    if name == "idempotency":
        probe = client.idempotency_probe(baseline)
        if probe.first_token == "":
            # no challenge (no_policy) or the pay itself was rejected
            return [probe.conflict], probe.settled_amount
        ok = (
            probe.first_token == probe.retry_token
            and probe.conflict.status != "success"
        )
        counted = AgentOutcome(
            status="success" if ok else "failed",
            reason="ok" if ok else "idempotency_violation",
            latency_ms=probe.conflict.latency_ms,
            spend_delta=probe.settled_amount,
        )
        return [counted], probe.settled_amount
    raise ValueError(f"unknown scenario: {name!r}")


def _print_outcome(echo: Callable[[str], None], index: int, outcome: AgentOutcome) -> None:
    if outcome.status == "success":
        echo(f"[RUN {index}] SUCCESS - latency: {round(outcome.latency_ms)}ms")
    elif outcome.status == "blocked":
        echo(f"[RUN {index}] BLOCKED - reason: {outcome.reason}")
    else:
        echo(f"[RUN {index}] FAILED - reason: {outcome.reason}")


def run_scenario(
    base_url: str,
    baseline: str,
    spec: ScenarioSpec,
    *,
    spend_reader: LedgerSpendReader | None = None,
    reset: bool = True,
    concurrency: int = 1,
    echo: Callable[[str], None] = print,
) -> RunResult:
    """Run one cell: trials x requests_per_trial counted runs, sequentially
    unless a concurrency level is given (used by the concurrent-budget check).
    """
    total_runs = spec.total_requests
    outcomes: list[AgentOutcome] = []
    client_spend = 0.0
    requests_sent = 0

    with AgentClient(base_url, scenario=spec.name) as setup_client:
        if reset:
            setup_client.reset()

    started = time.perf_counter()
    if concurrency <= 1:
        with AgentClient(base_url, scenario=spec.name) as client:
            for index in range(total_runs):
                counted, spend = _run_once(client, baseline, spec, index)
                client_spend += spend
                for outcome in counted:
                    outcomes.append(outcome)
                    _print_outcome(echo, len(outcomes), outcome)
            requests_sent = client.requests_sent
    else:
        clients = [AgentClient(base_url, scenario=spec.name) for _ in range(concurrency)]
        try:
            def worker(arg: tuple[int, int]) -> tuple[list[AgentOutcome], float]:
                slot, index = arg
                return _run_once(clients[slot], baseline, spec, index)

            jobs = [(i % concurrency, i) for i in range(total_runs)]
            with ThreadPoolExecutor(max_workers=concurrency) as pool:
                for counted, spend in pool.map(worker, jobs):
                    client_spend += spend
                    for outcome in counted:
                        outcomes.append(outcome)
                        _print_outcome(echo, len(outcomes), outcome)
            requests_sent = sum(c.requests_sent for c in clients)
        finally:
            for c in clients:
                c.close()
    wall_clock = time.perf_counter() - started

    if spend_reader is not None:
        confirmed = spend_reader.spent_today()
        if abs(confirmed - client_spend) > 0.005:
            logger.warning(
                "spend mismatch in %s/%s: ledger=%.2f client=%.2f",
                baseline, spec.name, confirmed, client_spend,
            )
    else:
        confirmed = client_spend

    summary = aggregate(
        outcomes, wall_clock, confirmed, baseline=baseline, scenario=spec.name
    )
    return RunResult(
        summary=summary,
        outcomes=outcomes,
        requests_sent=requests_sent,
        client_spend=client_spend,
    )


def _baseline_aggregate(
    summaries: list[ScenarioSummary], pooled_latencies: list[float]
) -> dict:
    total = sum(s.total for s in summaries)
    std = statistics.stdev(pooled_latencies) if len(pooled_latencies) > 1 else 0.0
    return {
        "total": total,
        "successes": sum(s.successes for s in summaries),
        "blocked": sum(s.blocked for s in summaries),
        "failed": sum(s.failed for s in summaries),
        # mean of the per-scenario rates, not success-weighted by volume
        "success_rate": statistics.fmean(s.success_rate for s in summaries),
        "avg_latency_ms": statistics.fmean(pooled_latencies),
        "latency_std_ms": std,
        "p95_latency_ms": percentile_nearest_rank(pooled_latencies, 0.95),
        "total_spend": round(sum(s.total_spend for s in summaries), 2),
    }


def run_all(
    base_url: str,
    *,
    out_path: str | None = None,
    db_path: str | None = None,
    baselines: tuple[str, ...] | None = None,
    scenarios: tuple[str, ...] | None = None,
    concurrency: int = 1,
    echo: Callable[[str], None] = print,
) -> dict:
    """Run the full grid and export one results document.

    The document is keyed results[baseline][scenario] with a per-baseline
    aggregate block alongside.
    """
    run_baselines = baselines or BASELINES
    run_scenarios = scenarios or SCENARIO_ORDER
    for name in run_scenarios:
        if name not in SCENARIOS:
            raise ValueError(f"unknown scenario: {name!r}")
    for name in run_baselines:
        if name not in BASELINES:
            raise ValueError(f"unknown baseline: {name!r}")

    spend_reader = LedgerSpendReader(db_path) if db_path else None
    doc: dict = {
        "generated_at": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "base_url": base_url,
        "results": {},
        "aggregates": {},
        "requests_sent": 0,
    }
    for baseline in run_baselines:
        echo(f"=== baseline: {baseline} ===")
        cell_summaries: list[ScenarioSummary] = []
        pooled: list[float] = []
        doc["results"][baseline] = {}
        for name in run_scenarios:
            spec = SCENARIOS[name]
            echo(f"--- scenario: {name} ({spec.total_requests} requests) ---")
            result = run_scenario(
                base_url,
                baseline,
                spec,
                spend_reader=spend_reader,
                reset=True,
                concurrency=concurrency,
                echo=echo,
            )
            doc["results"][baseline][name] = result.summary.to_dict()
            doc["requests_sent"] += result.requests_sent
            cell_summaries.append(result.summary)
            pooled.extend(o.latency_ms for o in result.outcomes)
        doc["aggregates"][baseline] = _baseline_aggregate(cell_summaries, pooled)

    if out_path:
        path = Path(out_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        echo(f"results written to {path}")
    return doc
