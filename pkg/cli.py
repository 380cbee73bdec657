#!/usr/bin/env python3
"""
Privacy Signaling Simulator - command line
Runs scenarios, message-length sweeps and lists the bundled scenarios.

Usage:
    python cli.py list
    python cli.py run vlc_single_3m                     # 20 trials, text report
    python cli.py run scenario.yaml --seed 7 --reps 1 --trace trace.jsonl
    python cli.py run multi_user_uwb --check --report machine
    python cli.py sweep --lengths 14..26 --motion walking vlc_single_3m

Exit codes: 0 success, 2 scenario/argument error, 3 failed --check.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from src.config import get_settings
from src.services.harness import check_expectations, run_batch, run_scenario
from src.services.results_store import log_batch_result
from src.services.scenario import ScenarioParseError, list_bundled_scenarios, resolve_scenario
from src.services.sweep import message_length_sweep, parse_lengths
from src.services.vlc import PACKET_BITS

EXIT_OK = 0
EXIT_PARSE_ERROR = 2
EXIT_CHECK_FAILED = 3

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Bystander privacy signaling simulator")
    parser.add_argument("--log-level", type=str, default=None, help="Override the configured log level")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run seeded trials of a scenario")
    run.add_argument("scenario", help="Scenario file path or bundled scenario name")
    run.add_argument("--seed", type=int, default=None, help="Base seed (default: noise.rng_seed)")
    run.add_argument("--reps", type=int, default=None, help="Trials (default: trial.repetitions)")
    run.add_argument("--workers", type=int, default=None, help="Worker processes")
    run.add_argument("--trace", type=str, default=None, help="Write the first trial's trace as JSONL")
    run.add_argument("--report", choices=("text", "machine"), default="text")
    run.add_argument("--check", action="store_true", help="Exit 3 if trial.expect is not met")
    run.add_argument("--persist", action="store_true", help="Store the batch summary")

    sweep = sub.add_parser("sweep", help="VLC decode success versus packet length")
    sweep.add_argument("scenario", help="Scenario file path or bundled scenario name")
    sweep.add_argument("--lengths", type=str, default="14..26")
    sweep.add_argument("--motion", choices=("static", "walking"), default="walking")
    sweep.add_argument("--trials", type=int, default=20)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--workers", type=int, default=None)
    sweep.add_argument("--report", choices=("text", "machine"), default="text")

    sub.add_parser("list", help="List bundled scenarios")
    return parser


def _print_batch(name: str, batch, failures: List[str]) -> None:
    print("=" * 70)
    print(f"{name}  [{batch.modality}, condition {batch.condition}]")
    print("=" * 70)
    print(f"   Trials:            {batch.repetitions} (seeds {batch.base_seed}..{batch.base_seed + batch.repetitions - 1})")
    print(f"   Valid signals:     {batch.n_signals}")
    print(f"   Accuracy:          {batch.accuracy:.1%}")
    print(f"   False positives:   {batch.false_positives} ({batch.false_positive_rate:.1%})")
    print(f"   False negatives:   {batch.false_negatives} ({batch.false_negative_rate:.1%})")
    if batch.n_adversarial:
        print(f"   Impersonations:    {batch.impersonations_accepted} of {batch.n_adversarial} accepted")
    mean = batch.mean_latency_ms
    print(f"   Mean latency:      {'n/a' if mean is None else f'{mean:.1f} ms'}")
    if batch.modality == "uwb":
        print(f"   Ranging sessions:  {batch.ranging_sessions}  Fast Path hits: {batch.fast_path_hits}")
    print(f"   Frame time p95:    {batch.frame_ms_p95:.2f} ms")
    for failure in failures:
        print(f"   ! {failure}")


def _cmd_run(args, workers: int) -> int:
    scenario = resolve_scenario(args.scenario)
    if args.trace:
        seed = scenario.noise.rng_seed if args.seed is None else args.seed
        run_scenario(scenario, seed=seed, trace_path=args.trace)

    batch = run_batch(scenario, repetitions=args.reps, base_seed=args.seed, workers=workers)
    failures = check_expectations(scenario, batch)
    if args.persist:
        log_batch_result(batch, scenario=args.scenario, packet_bits=PACKET_BITS)

    if args.report == "machine":
        print(json.dumps({"scenario": args.scenario, "result": batch.to_dict(), "expectation_failures": failures}))
    else:
        _print_batch(args.scenario, batch, failures)

    if args.check and failures:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _cmd_sweep(args, workers: int) -> int:
    scenario = resolve_scenario(args.scenario)
    lengths = parse_lengths(args.lengths)
    rows = message_length_sweep(
        scenario, lengths, motion=args.motion, trials=args.trials, base_seed=args.seed, workers=workers
    )
    if args.report == "machine":
        print(json.dumps({"scenario": args.scenario, "rows": [r.to_dict() for r in rows]}))
        return EXIT_OK

    print(f"Message-length sweep: {args.scenario} ({args.motion}, {args.trials} trials per length)")
    print(f"   {'bits':>4}  {'success':>7}")
    for row in rows:
        print(f"   {row.packet_bits:>4}  {row.success_rate:>7.2f}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    settings = get_settings()
    parser = _build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, (args.log_level or settings.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )

    if args.command == "list":
        for name in list_bundled_scenarios():
            print(name)
        return EXIT_OK

    workers = args.workers or settings.max_workers
    try:
        if args.command == "run":
            return _cmd_run(args, workers)
        return _cmd_sweep(args, workers)
    except ScenarioParseError as e:
        print(f"{args.scenario}: {e}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE_ERROR


if __name__ == "__main__":
    sys.exit(main())
