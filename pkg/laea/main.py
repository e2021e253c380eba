#!/usr/bin/env python3
"""Command-line entry point: run experiments, rebuild tables, check prompt fixtures, serve the mock."""

import argparse
import logging
import sys
from pathlib import Path

from laea.config import config
from laea.errors import LaeaError
from laea.harness import build_table, load_config, run_experiment, validate_prompt_fixtures

DEFAULT_FIXTURES = Path(__file__).parent / "fixtures" / "prompts"


def configure_logging(level: str | None = None) -> None:
    logging.basicConfig(
        level=(level or config.LAEA_LOG_LEVEL).upper(),
        format="%(asctime)s [%(name)s] %(levelname)s %(message)s",
    )
    # httpx logs every request at INFO
    logging.getLogger("httpx").setLevel(logging.WARNING)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    print("=" * 60)
    print(f"[Run] Experiment: {cfg.experiment.value}")
    print(f"[Run] Config: {args.config}")
    print(f"[Run] Seeds: {len(cfg.seed_list)}, arms: {len(cfg.arms)}")
    print("=" * 60)
    result = run_experiment(cfg, out_dir=args.out, jobs=args.jobs)
    if hasattr(result, "to_string"):
        print(result.to_string(index=False))
    else:
        for path in result:
            print(f"[Run] Wrote {path}")
    return 0


def cmd_table(args) -> int:
    table = build_table(args.results_dir)
    print(table.to_string(index=False))
    print(f"[Table] Wrote table.csv and summary.csv to {args.results_dir}")
    return 0


def cmd_validate_prompts(args) -> int:
    messages = validate_prompt_fixtures(args.fixtures_dir)
    for message in messages:
        print(message)
    return 0 if all(m.startswith("SUCCESS") for m in messages) else 1


def cmd_serve_mock(args) -> int:
    from laea.mock_server import serve

    serve(args.mode, args.canned, args.latency)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="laea",
        description="LLM-assisted surrogate experiments for expensive optimization",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Offline smoke run of the pre-selection study
  NO_NETWORK=1 laea run configs/preselect.json --jobs 4

  # Recompute table.csv and summary.csv from finished cells
  laea table results/compare

  # Check prompt golden files
  laea validate-prompts laea/fixtures/prompts

  # Serve the nearest-neighbour mock on MOCK_HOST:MOCK_PORT
  laea serve-mock --mode nearest
        """,
    )
    parser.add_argument("--log-level", help=f"Logging level (default: {config.LAEA_LOG_LEVEL})")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment document")
    run.add_argument("config", type=Path, help="Path to experiment JSON")
    run.add_argument("-j", "--jobs", type=int, help=f"Worker processes for run cells (default: {config.LAEA_JOBS})")
    run.add_argument("-o", "--out", type=Path, help="Output directory (default: config output_dir or LAEA_OUTPUT_DIR/<experiment>)")
    run.set_defaults(func=cmd_run)

    table = sub.add_parser("table", help="Re-aggregate a results directory")
    table.add_argument("results_dir", type=Path)
    table.set_defaults(func=cmd_table)

    validate = sub.add_parser("validate-prompts", help="Compare rendered fixtures with golden prompt files")
    validate.add_argument("fixtures_dir", type=Path, nargs="?", default=DEFAULT_FIXTURES)
    validate.set_defaults(func=cmd_validate_prompts)

    mock_srv = sub.add_parser("serve-mock", help="Serve a mock chat-completions endpoint")
    mock_srv.add_argument("--mode", choices=["echo", "nearest"], default="nearest")
    mock_srv.add_argument("--canned", default='{"Value": "0.5"}', help="Reply used in echo mode")
    mock_srv.add_argument("--latency", type=float, default=0.0, help="Seconds added to each reply")
    mock_srv.set_defaults(func=cmd_serve_mock)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except LaeaError as e:
        print(f"Error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
