"""Exact currency arithmetic on integer minor units.

Amounts cross the HTTP boundary as JSON numbers but are held internally as
integer cents so that budget sums never accumulate float error. Currency has
exactly two decimal places.
"""

from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation, ROUND_HALF_EVEN

_CENT = Decimal("0.01")

# fixed two-decimal rendering, no sign, no leading zeros beyond "0"
AMOUNT_RE = re.compile(r"^(0|[1-9][0-9]*)\.[0-9]{2}$")


def to_cents(value: float | int | str | Decimal) -> int:
    """Convert a currency amount to integer cents, quantized to 2 dp."""
    if isinstance(value, bool):
        raise ValueError("amount must be numeric")
    try:
        dec = Decimal(str(value))
    except InvalidOperation as exc:
        raise ValueError(f"not a currency amount: {value!r}") from exc
    if not dec.is_finite():
        raise ValueError(f"not a currency amount: {value!r}")
    return int(dec.quantize(_CENT, rounding=ROUND_HALF_EVEN) * 100)


def cents_to_float(cents: int) -> float:
    """Render cents as a JSON-friendly number."""
    return cents / 100.0


def format_cents(cents: int) -> str:
    """Render cents with exactly two decimals, e.g. 500 -> "5.00"."""
    if cents < 0:
        raise ValueError("amounts are non-negative")
    return f"{cents // 100}.{cents % 100:02d}"


def parse_fixed_amount(text: str) -> int | None:
    """Parse the canonical two-decimal rendering back to cents.

    Returns None when the text is not in canonical form.
    """
    if not isinstance(text, str) or not AMOUNT_RE.match(text):
        return None
    whole, frac = text.split(".")
    return int(whole) * 100 + int(frac)
