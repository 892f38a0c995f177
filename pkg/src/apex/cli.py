"""Console entry points: apex-server and apex-harness."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .harness import BASELINES, SCENARIO_ORDER, run_all
from .report import render_report, write_csvs


def server_main(argv: list[str] | None = None) -> int:
    import uvicorn

    from .config import ApexConfig
    from .gateway import create_app

    parser = argparse.ArgumentParser(
        prog="apex-server", description="Run the payment gateway."
    )
    parser.add_argument("--host", default=None, help="bind host (default: APEX_BIND_ADDR)")
    parser.add_argument("--port", type=int, default=None, help="bind port")
    args = parser.parse_args(argv)

    cfg = ApexConfig.from_env()
    host = args.host or cfg.bind_host
    port = args.port if args.port is not None else cfg.bind_port
    uvicorn.run(create_app(cfg), host=host, port=port, log_level="info")
    return 0


def harness_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="apex-harness", description="Drive the scenario grid against a gateway."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run scenarios and export a results document")
    run_p.add_argument("--base-url", default="http://127.0.0.1:8000")
    run_p.add_argument("--out", default="experiments/quick_results.json")
    run_p.add_argument("--baseline", choices=BASELINES, action="append",
                       default=None,
                       help="restrict to this baseline (repeatable; default: all)")
    run_p.add_argument("--scenario", choices=SCENARIO_ORDER, action="append",
                       default=None,
                       help="restrict to this scenario (repeatable; default: all)")
    run_p.add_argument("--concurrency", type=int, default=1,
                       help="parallel clients (budget safety check)")
    run_p.add_argument("--db-path", default=os.environ.get("APEX_DB_PATH"),
                       help="ledger database for spend confirmation "
                            "(default: APEX_DB_PATH)")

    report_p = sub.add_parser("report", help="render tables from a results document")
    report_p.add_argument("results", help="path to a results JSON document")
    report_p.add_argument("--csv-dir", default=None,
                          help="directory for CSVs (default: <results stem>_tables)")

    args = parser.parse_args(argv)

    if args.command == "run":
        doc = run_all(
            args.base_url,
            out_path=args.out,
            db_path=args.db_path,
            baselines=tuple(args.baseline) if args.baseline else None,
            scenarios=tuple(args.scenario) if args.scenario else None,
            concurrency=args.concurrency,
        )
        print(render_report(doc))
        return 0

    results_path = Path(args.results)
    doc = json.loads(results_path.read_text(encoding="utf-8"))
    print(render_report(doc))
    csv_dir = args.csv_dir or str(
        results_path.parent / f"{results_path.stem}_tables"
    )
    for path in write_csvs(doc, csv_dir):
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(harness_main())
