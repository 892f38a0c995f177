"""Acceptance gate: nine numbered criteria, one verdict line each.

Each test exercises one criterion end to end and records a line of the form
`[ACCEPTANCE] C<k> <name>: PASS|FAIL`. The lines are echoed after the pytest
summary (see conftest). Functional counts are exact; latency appears only as
an ordering property, never as absolute numbers.
"""

from __future__ import annotations

import concurrent.futures
import random
import re
import statistics
import string
import time
import uuid
from dataclasses import dataclass
from types import SimpleNamespace

import httpx
import pytest
from fastapi.testclient import TestClient

import conftest
from apex import tokens
from apex.audit import read_all
from apex.client import AgentClient
from apex.gateway import create_app
from apex.harness import BASELINES, LedgerSpendReader, run_all
from apex.money import format_cents

from conftest import TEST_SECRET, TEST_SECRET_HEX, LiveServer, make_config

WITH = "payment_with_policy"
NOPOL = "no_policy"
PAYNP = "payment_no_policy"

TOKEN_WIRE_RE = re.compile(r"[A-Za-z0-9_-]{20,}\.[A-Za-z0-9_-]{43}")


def _verdict(k: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[ACCEPTANCE] C{k} {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- shared full-grid run -------------------------------------------------------


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    cfg = make_config(base)
    server = LiveServer(create_app(cfg)).start()
    try:
        doc: dict = {"results": {}, "aggregates": {}, "requests_sent": 0}
        timings: dict[str, float] = {}
        for baseline in BASELINES:
            t0 = time.perf_counter()
            part = run_all(server.base_url, db_path=cfg.db_path,
                           baselines=(baseline,), echo=lambda _line: None)
            timings[baseline] = time.perf_counter() - t0
            doc["results"].update(part["results"])
            doc["aggregates"].update(part["aggregates"])
            doc["requests_sent"] += part["requests_sent"]

        # snapshot the log before later criteria add their own traffic
        with open(cfg.log_path, encoding="utf-8") as fh:
            raw_log = fh.read()
        log = read_all(cfg.log_path)

        yield SimpleNamespace(cfg=cfg, server=server, doc=doc,
                              timings=timings, raw_log=raw_log, log=log)
    finally:
        server.stop()


def _cell(bundle, baseline: str, scenario: str) -> dict:
    return bundle.doc["results"][baseline][scenario]


# -- criteria --------------------------------------------------------------------


def test_c1_policy_grid_functional(bundle):
    # (success_rate rounded to 3dp, blocked, total_spend) per scenario
    expected = {
        "normal": (0.500, 20, 100.0),
        "overspending": (0.667, 10, 100.0),
        "replay_attack": (0.000, 20, 100.0),
        "invalid_token": (0.000, 20, 0.0),
        "token_expiry": (1.000, 0, 50.0),
        "idempotency": (1.000, 0, 50.0),
    }
    misses = []
    for scenario, (rate, blocked, spend) in expected.items():
        cell = _cell(bundle, WITH, scenario)
        got = (round(cell["success_rate"], 3), cell["blocked"],
               round(cell["total_spend"], 2))
        if got != (rate, blocked, spend):
            misses.append(f"{scenario}: {got} != {(rate, blocked, spend)}")
    elapsed = bundle.timings[WITH]
    if elapsed >= 180.0:
        misses.append(f"runtime {elapsed:.1f}s >= 180s")
    _verdict(1, "governed-baseline scenario grid", not misses,
             "; ".join(misses) or f"6/6 rows exact, {elapsed:.1f}s")


def test_c2_ungoverned_baselines_functional(bundle):
    misses = []
    for scenario in bundle.doc["results"][NOPOL]:
        cell = _cell(bundle, NOPOL, scenario)
        if (cell["success_rate"], round(cell["total_spend"], 2)) != (1.0, 0.0):
            misses.append(f"{NOPOL}/{scenario}")
    checks = [
        ("normal", "total_spend", 200.0),
        ("overspending", "total_spend", 150.0),
        ("replay_attack", "success_rate", 0.0),
        ("replay_attack", "blocked", 20),
        ("invalid_token", "success_rate", 0.0),
        ("invalid_token", "blocked", 20),
    ]
    for scenario, field, want in checks:
        got = _cell(bundle, PAYNP, scenario)[field]
        if round(got, 2) != want:
            misses.append(f"{PAYNP}/{scenario}.{field}={got}")
    _verdict(2, "ungoverned baselines", not misses, "; ".join(misses))


def test_c3_aggregate_spend_reduction(bundle):
    agg = bundle.doc["aggregates"]
    spend_np = round(agg[PAYNP]["total_spend"], 2)
    spend_wp = round(agg[WITH]["total_spend"], 2)
    reduction = 100.0 * (1.0 - spend_wp / spend_np)
    ok = spend_np == 550.0 and spend_wp == 400.0 and abs(reduction - 27.3) <= 0.1
    _verdict(3, "aggregate spend reduction", ok,
             f"{spend_np} -> {spend_wp}, reduction {reduction:.2f}%")


def test_c4_replay_and_forgery_blocked(bundle, tmp_path):
    replay = _cell(bundle, WITH, "replay_attack")
    forged = _cell(bundle, WITH, "invalid_token")
    grid_ok = (replay["blocked"] == replay["total"] == 20
               and forged["blocked"] == forged["total"] == 20)

    # property run: a thousand replays of one consumed token, zero successes
    agent = AgentClient(http=TestClient(create_app(make_config(tmp_path))))
    setup, replays = agent.replay_attack(WITH, replays=1000)
    successes = sum(1 for r in replays if r.status == "success")
    prop_ok = (setup.status == "success" and len(replays) == 1000
               and successes == 0
               and all(r.reason == "token_already_consumed" for r in replays))
    _verdict(4, "replay and forgery containment", grid_ok and prop_ok,
             f"grid 20/20 + 20/20, property {1000 - successes}/1000 blocked")


# -- criterion 5: randomized settlement fuzz -------------------------------------

SEQUENTIAL_ROUNDS = 50
CONCURRENT_ROUNDS = 50
OPS_PER_ROUND = 100
POOL_REFS = 15
BUDGET_LIMIT = 100.0


@dataclass
class PayOp:
    ref_id: str | None  # None: open a challenge first
    cents: int          # challenged amount
    send_cents: int     # amount actually sent (sometimes mismatched)
    key: str


def _build_ops(rng: random.Random, pool: list[tuple[str, int]]) -> list[PayOp]:
    ops: list[PayOp] = []
    for ref_id, cents in pool:
        key = uuid.uuid4().hex
        ops.append(PayOp(ref_id, cents, cents, key))
        retry_key = key if rng.random() < 0.5 else uuid.uuid4().hex
        ops.append(PayOp(ref_id, cents, cents, retry_key))
    while len(ops) < OPS_PER_ROUND:
        cents = rng.randint(1, 1500)
        send = cents
        if rng.random() < 0.05:
            send = cents - 1 if cents == 1500 else cents + 1
        ops.append(PayOp(None, cents, send, uuid.uuid4().hex))
    rng.shuffle(ops)
    return ops


def _open_challenge(client, cents: int) -> str:
    response = client.get("/data", params={
        "baseline": WITH, "amount": format_cents(cents),
    })
    assert response.status_code == 402
    return response.json()["detail"]["ref_id"]


def _execute_op(client, op: PayOp) -> None:
    ref_id = op.ref_id or _open_challenge(client, op.cents)
    response = client.post("/pay", json={
        "ref_id": ref_id,
        "amount": float(format_cents(op.send_cents)),
        "baseline": WITH,
        "idempotency_key": op.key,
    })
    assert response.status_code in (200, 400, 403, 404, 409), response.text


def test_c5_budget_invariant_fuzz(tmp_path_factory):
    rng = random.Random(0xA9E1)
    worst = 0.0
    rounds = 0

    # sequential half, in-process transport
    base = tmp_path_factory.mktemp("fuzz_seq")
    cfg = make_config(base)
    tc = TestClient(create_app(cfg))
    reader = LedgerSpendReader(cfg.db_path)
    for _ in range(SEQUENTIAL_ROUNDS):
        pool = []
        for _ in range(POOL_REFS):
            cents = rng.randint(1, 1500)
            pool.append((_open_challenge(tc, cents), cents))
        for op in _build_ops(rng, pool):
            _execute_op(tc, op)
        spent = reader.spent_today()
        worst = max(worst, spent)
        rounds += 1
        assert spent <= BUDGET_LIMIT + 1e-9, f"round {rounds}: spent {spent}"
        tc.post("/reset")

    # concurrent half, eight clients racing over a socket
    base = tmp_path_factory.mktemp("fuzz_conc")
    cfg = make_config(base)
    server = LiveServer(create_app(cfg)).start()
    reader = LedgerSpendReader(cfg.db_path)
    try:
        clients = [httpx.Client(base_url=server.base_url, timeout=30)
                   for _ in range(8)]
        for _ in range(CONCURRENT_ROUNDS):
            pool = []
            for _ in range(POOL_REFS):
                cents = rng.randint(1, 1500)
                pool.append((_open_challenge(clients[0], cents), cents))
            ops = _build_ops(rng, pool)
            chunks = [ops[i::8] for i in range(8)]

            def run_chunk(pair):
                client, chunk = pair
                for op in chunk:
                    _execute_op(client, op)

            with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool_ex:
                list(pool_ex.map(run_chunk, zip(clients, chunks)))

            spent = reader.spent_today()
            worst = max(worst, spent)
            rounds += 1
            assert spent <= BUDGET_LIMIT + 1e-9, f"round {rounds}: spent {spent}"
            clients[0].post("/reset")
        for client in clients:
            client.close()
    finally:
        server.stop()

    total_pays = rounds * OPS_PER_ROUND
    _verdict(5, "daily budget invariant under fuzz",
             rounds == SEQUENTIAL_ROUNDS + CONCURRENT_ROUNDS,
             f"{total_pays} randomized settlements, worst day spend "
             f"{worst:.2f} <= {BUDGET_LIMIT}")


def test_c6_token_suite():
    key = TEST_SECRET
    now = 1_700_000_000
    wire, exp = tokens.mint("a" * 32, 500, ttl=300, now=now, key=key)

    round_trip = tokens.verify(wire, now=now, key=key)
    ok_round = (round_trip.valid and round_trip.payload.ref_id == "a" * 32
                and round_trip.payload.amount_cents == 500
                and round_trip.payload.exp == exp)

    cross = tokens.verify(wire, now=now, key=b"\x01" * 32)
    ok_cross = not cross.valid and cross.reason == tokens.INVALID_SIGNATURE

    alphabet = string.ascii_letters + string.digits + "-_."
    tampered_ok = True
    for i, original in enumerate(wire):
        substitute = "A" if original != "A" else "B"
        mutant = wire[:i] + substitute + wire[i + 1:]
        if tokens.verify(mutant, now=now, key=key).valid:
            tampered_ok = False
            break

    at_exp = tokens.verify(wire, now=exp, key=key)
    past_exp = tokens.verify(wire, now=exp + 1, key=key)
    ok_expiry = (at_exp.valid and not past_exp.valid
                 and past_exp.reason == tokens.EXPIRED)

    rng = random.Random(0xF00D)
    crashes = 0
    accepted = 0
    for i in range(10_000):
        if i % 3 == 0:
            junk = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 200)))
            candidate = junk.decode("latin-1")
        elif i % 3 == 1:
            candidate = "".join(rng.choice(alphabet)
                                for _ in range(rng.randrange(0, 200)))
        else:
            left = "".join(rng.choice(alphabet[:-1]) for _ in range(rng.randrange(1, 80)))
            right = "".join(rng.choice(alphabet[:-1]) for _ in range(43))
            candidate = f"{left}.{right}"
        try:
            if tokens.verify(candidate, now=now, key=key).valid:
                accepted += 1
        except Exception:
            crashes += 1
    ok_fuzz = crashes == 0 and accepted == 0

    _verdict(6, "token integrity suite",
             ok_round and ok_cross and tampered_ok and ok_expiry and ok_fuzz,
             f"{len(wire)} tamper positions, 10000 fuzz inputs, "
             f"{crashes} crashes, {accepted} accepted")


def test_c7_idempotent_settlement(tmp_path):
    cfg = make_config(tmp_path)
    tc = TestClient(create_app(cfg))
    identical = 0
    conflicts = 0
    for _ in range(100):
        challenge = tc.get("/data", params={"baseline": PAYNP}).json()["detail"]
        body = {"ref_id": challenge["ref_id"], "amount": challenge["amount"],
                "baseline": PAYNP, "idempotency_key": uuid.uuid4().hex}
        first = tc.post("/pay", json=body)
        retry = tc.post("/pay", json=body)
        if (first.status_code == retry.status_code == 200
                and first.json()["token"] == retry.json()["token"]):
            identical += 1
        conflict = tc.post("/pay", json={**body, "idempotency_key": uuid.uuid4().hex})
        if (conflict.status_code == 409
                and conflict.json()["reason"] == "idempotency_conflict"):
            conflicts += 1
    spend = LedgerSpendReader(cfg.db_path).spent_today()
    ok = identical == 100 and conflicts == 100 and spend == 500.0
    _verdict(7, "idempotent settlement", ok,
             f"{identical}/100 identical pairs, {conflicts}/100 conflicts "
             f"rejected, spend {spend:.2f} (once per pair)")


def test_c8_latency_ordering(bundle):
    agent = AgentClient(base_url=bundle.server.base_url)
    agent.reset()

    free = [agent.fetch_paid(NOPOL).latency_ms for _ in range(30)]
    paid_outcomes = [agent.fetch_paid(WITH) for _ in range(15)]
    paid = [o.latency_ms for o in paid_outcomes]
    rejected = [
        agent.invalid_token_attack(
            WITH, variant="malformed" if i % 2 == 0 else "bad_signature"
        ).latency_ms
        for i in range(30)
    ]
    agent.close()

    assert all(o.status == "success" for o in paid_outcomes)
    m_free = statistics.median(free)
    m_paid = statistics.median(paid)
    m_rejected = statistics.median(rejected)
    ok = m_free < m_paid and m_rejected < m_paid
    _verdict(8, "latency ordering", ok,
             f"median ms: free {m_free:.1f} < paid {m_paid:.1f}; "
             f"rejected {m_rejected:.1f} < paid {m_paid:.1f}")


def test_c9_log_integrity(bundle):
    lines = [line for line in bundle.raw_log.splitlines() if line.strip()]
    count_ok = len(lines) == bundle.doc["requests_sent"]
    schema_ok = not bundle.log.errors and len(bundle.log.events) == len(lines)
    no_secret = TEST_SECRET_HEX not in bundle.raw_log
    no_wire = not TOKEN_WIRE_RE.search(bundle.raw_log)
    _verdict(9, "log integrity", count_ok and schema_ok and no_secret and no_wire,
             f"{len(lines)} lines == {bundle.doc['requests_sent']} requests, "
             f"0 schema errors: {schema_ok}, secret absent: {no_secret}, "
             f"no token wire: {no_wire}")
