"""apex: a payment-gated HTTP API with signed single-use tokens.

Serves protected data behind an HTTP 402 challenge. Payments settle through
an idempotent ledger into HMAC-signed, single-use, expiring tokens; a spend
policy caps per-request and per-day totals; every handled request lands in an
append-only JSONL audit log. A protocol client and a scenario harness drive
the whole surface, including the attack paths.
"""

__version__ = "0.1.0"
