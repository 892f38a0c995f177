"""Spend policy.

Pure decision function over (mode, amount, spent so far). Only
payment_with_policy enforces anything; payment_no_policy settles without
checks and no_policy never reaches the payment layer at all. Violations are
strict: an amount exactly at the per-request cap, or one that lands the day
total exactly on the budget, is admitted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .money import format_cents

__all__ = ["BaselineMode", "PolicyConfig", "PolicyDecision", "evaluate", "parse_baseline"]


class BaselineMode(str, enum.Enum):
    NO_POLICY = "no_policy"
    PAYMENT_NO_POLICY = "payment_no_policy"
    PAYMENT_WITH_POLICY = "payment_with_policy"


def parse_baseline(raw: str | None) -> BaselineMode | None:
    """Case-sensitive parse; None for anything unknown."""
    if raw is None:
        return None
    try:
        return BaselineMode(raw)
    except ValueError:
        return None


@dataclass(frozen=True)
class PolicyConfig:
    max_per_request_cents: int = 1000
    daily_budget_cents: int = 10000


@dataclass(frozen=True)
class PolicyDecision:
    allowed: bool
    reason: str


def evaluate(
    mode: BaselineMode,
    amount_cents: int,
    spent_today_cents: int,
    cfg: PolicyConfig,
) -> PolicyDecision:
    """Decide whether a payment may settle. Total; never raises."""
    if mode != BaselineMode.PAYMENT_WITH_POLICY:
        return PolicyDecision(True, "policy_disabled")
    if amount_cents > cfg.max_per_request_cents:
        return PolicyDecision(
            False,
            "max_per_request exceeded "
            f"(amount={format_cents(amount_cents)}, "
            f"max={format_cents(cfg.max_per_request_cents)})",
        )
    if spent_today_cents + amount_cents > cfg.daily_budget_cents:
        return PolicyDecision(
            False,
            "daily_budget exceeded "
            f"(spent={format_cents(spent_today_cents)}, "
            f"amount={format_cents(amount_cents)}, "
            f"budget={format_cents(cfg.daily_budget_cents)})",
        )
    return PolicyDecision(True, "ok")
