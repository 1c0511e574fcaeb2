"""Command-line interface: index, reformulate, evaluate, sweep.

Exit codes: 0 on success, 2 when some turns or sweep values failed but the
run completed, 1 on fatal errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from gcqr.config import SWEEP_AXES, ConfigError, load_config
from gcqr.pipeline import PipelineError, cmd_evaluate, cmd_index, cmd_reformulate, cmd_sweep

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gcqr",
        description="Guided conversational query reformulation pipeline.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--filter-threshold", type=float, default=None)
        p.add_argument("--guided-n", type=int, default=None)
        p.add_argument("--span", type=int, default=None, help="keywords per document")
        p.add_argument("--top-docs", type=int, default=None, help="documents mined for keywords")
        p.add_argument("--output-dir", default=None)

    p_index = sub.add_parser("index", help="build and persist the corpus index")
    add_common(p_index)

    p_reformulate = sub.add_parser("reformulate", help="run the full reformulation pipeline")
    add_common(p_reformulate)

    p_evaluate = sub.add_parser("evaluate", help="score runs against qrels")
    add_common(p_evaluate)
    p_evaluate.add_argument(
        "--run", default=None,
        help="run file to evaluate (default: both pipeline runs, with deltas)",
    )

    p_sweep = sub.add_parser("sweep", help="grid of reformulate+evaluate over one axis")
    add_common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument(
        "--values", required=True,
        help="comma-separated axis values, e.g. 10,100,1000,2000",
    )

    return parser


def _parse_values(axis: str, raw: str) -> list:
    values = []
    for piece in raw.split(","):
        piece = piece.strip()
        if not piece:
            continue
        values.append(float(piece) if axis == "filter_threshold" else int(piece))
    return values


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_config(args.config).with_overrides(
            filter_threshold=args.filter_threshold,
            guided_n=args.guided_n,
            span=args.span,
            top_docs=args.top_docs,
            output_dir=args.output_dir,
        )

        if args.command == "index":
            path = cmd_index(config)
            print(path)
            return EXIT_OK

        if args.command == "reformulate":
            report = cmd_reformulate(config)
            print(report.final_run_path)
            print(report.baseline_run_path)
            print(report.reformulated_path)
            if report.failures:
                for key, message in report.failures.items():
                    print(f"failed turn {key}: {message}", file=sys.stderr)
                return EXIT_PARTIAL
            return EXIT_OK

        if args.command == "evaluate":
            report = cmd_evaluate(config, run_path=args.run)
            print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_OK

        if args.command == "sweep":
            rows = cmd_sweep(config, args.axis, _parse_values(args.axis, args.values))
            print(json.dumps(rows, indent=2))
            if any(row.get("status") != "ok" for row in rows):
                return EXIT_PARTIAL
            return EXIT_OK

        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except Exception as exc:  # fatal catch-all so the CLI exits 1 instead of tracebacking
        logging.getLogger(__name__).exception("fatal error")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
