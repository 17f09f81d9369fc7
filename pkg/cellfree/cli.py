"""Command-line front end: ``cellfree <experiment> --out DIR [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 budget guard,
4 failed closed-form validation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import SimulationConfig
from .exceptions import CellFreeBudgetError, CellFreeConfigurationError
from .experiments import EXPERIMENTS, ExperimentResult, run_experiment, write_results

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BUDGET = 3
EXIT_VALIDATION = 4


def _count(text: str) -> int:
    """Parse a positive count, accepting float notation such as ``1e5``."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value < 1 or value != int(value):
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(value)


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellfree",
        description="Cell-free massive MIMO uplink simulator under LoS/NLoS channels.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS, help="experiment to run")
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--config", type=Path, help="JSON file with SimulationConfig fields")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--trials", type=_count, help="channel draws per drop (1e5 accepted)")
    parser.add_argument("--drops", type=_count, help="geometry drops (validate: geometries)")
    parser.add_argument("--m", type=_int_list, help="AP counts, e.g. 128,1024")
    parser.add_argument("--k", type=_int_list, help="UE counts for sweep-k")
    parser.add_argument("--snr", type=_float_list, help="data SNR grid in dB")
    parser.add_argument("--psi", type=_float_list, help="regularizer factors for sweep-psi")
    parser.add_argument(
        "--paper-scale",
        "--full-scale",
        dest="full_scale",
        action="store_true",
        help="M=1024, K=64, 1000 trials",
    )
    parser.add_argument("--workers", type=_count)
    parser.add_argument("--budget", type=float, help="maximum MN*drops*trials")
    parser.add_argument("--db-url", help="also record the run in this results database")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def load_config(args: argparse.Namespace) -> SimulationConfig:
    """Defaults, then the config file, then flag overrides, then the M=1024, K=64 preset."""
    overrides = {
        "seed": args.seed,
        "trials": args.trials,
        "drops": args.drops,
        "snr_db": args.snr,
        "workers": args.workers,
        "budget": args.budget,
        "out": str(args.out),
    }
    # A single --m/--k value sets M/K for experiments that do not sweep it
    if args.m and len(args.m) == 1 and args.experiment not in ("pmf-los", "sweep-ap"):
        overrides["n_aps"] = args.m[0]
    if args.k and len(args.k) == 1 and args.experiment != "sweep-k":
        overrides["n_users"] = args.k[0]
    if args.config is not None:
        config = SimulationConfig.from_file(args.config, **overrides)
    else:
        config = SimulationConfig.build(**{k: v for k, v in overrides.items() if v is not None})
    if args.full_scale:
        config = config.full_scale().with_overrides(trials=args.trials)
    return config


def _record(results: list[ExperimentResult], out_dir: Path, url: str) -> None:
    from resultsdb.load_results import load_directories

    loaded = load_directories([out_dir], url)
    logger.info("Recorded %d of %d tables in the results database", sum(c for _, c in loaded), len(results))


def _summary(name: str, results: list[ExperimentResult], out_dir: Path) -> str:
    line = f"{name}: {len(results)} table(s) written to {out_dir}"
    if name == "validate":
        meta = results[0].metadata
        failed = [f for f, e in meta["summary"].items() if e["status"] == "fail"]
        flagged = [f for f, e in meta["summary"].items() if e["status"] == "flagged"]
        verdict = "passed" if meta["passed"] else f"FAILED ({', '.join(failed)})"
        line += f" | {verdict}; {len(flagged)} reference form(s) flagged"
    return line


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = load_config(args)
        options = {"m_list": args.m, "k_list": args.k, "factors": args.psi}
        results = run_experiment(args.experiment, config, **options)
        write_results(results, args.out, config)
        if args.db_url:
            _record(results, args.out, args.db_url)
    except CellFreeBudgetError as e:
        print(f"Refused: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except CellFreeConfigurationError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    print(_summary(args.experiment, results, args.out))
    if args.experiment == "validate" and not results[0].metadata["passed"]:
        return EXIT_VALIDATION
    return EXIT_OK


def main() -> None:
    try:
        sys.exit(cli_main())
    except KeyboardInterrupt:
        print("\nInterrupted.")
        sys.exit(130)


if __name__ == "__main__":
    main()
