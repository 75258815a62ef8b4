"""Command-line front end for the experiment suite.

Subcommands: sweep | train | evaluate | constellation | coded | params | selftest.
Every run is reproducible from (config file, seed): rerunning with the same
inputs reproduces each CSV byte-for-byte.
"""

from __future__ import annotations

import argparse
import sys

from . import experiments
from .config import ExperimentConfig, SchemaError, load_config


def _parse_powers(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"bad power list {text!r}: {err}") from err


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH",
                        help="experiment config JSON (defaults used if omitted)")
    parser.add_argument("--out", metavar="DIR", default="results",
                        help="output directory (default: results)")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="override the config seed")
    parser.add_argument("--power-dbm", type=_parse_powers, metavar="P1,P2,...",
                        help="override the power grid / training powers")
    parser.add_argument("--no-figures", action="store_true",
                        help="emit CSVs only, skip the PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thzlink",
        description="Hardware-impairment link simulator with two-stage NN compensation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="per-impairment ablation SER curves")
    _add_common(p)

    p = sub.add_parser("train", help="train stage-1 / compensators / baseline")
    _add_common(p)
    p.add_argument("--stage", required=True, choices=experiments.STAGES)
    p.add_argument("--slim", default="none", metavar="MODE",
                   help="none | prune:N | share | remove")

    p = sub.add_parser("evaluate", help="deploy a compensator and measure SER")
    _add_common(p)
    p.add_argument("--side", required=True, choices=["tx", "rx", "none", "ddnn"])
    p.add_argument("--slim", default="none", metavar="MODE")

    p = sub.add_parser("constellation", help="equalized constellation dump")
    _add_common(p)
    p.add_argument("--scenario", required=True,
                   help="ideal | dac_adc | iq | phase_noise | shifters | pa | all")

    p = sub.add_parser("coded", help="rate-2/3 coded system with Tx compensation")
    _add_common(p)

    p = sub.add_parser("params", help="parameter-count report for every variant")
    _add_common(p)

    p = sub.add_parser("selftest", help="fast structural self-checks")
    _add_common(p)
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config.seed = args.seed
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load(args)
    except (SchemaError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    figures = None if not args.no_figures else False
    powers = args.power_dbm

    try:
        if args.command == "sweep":
            path = experiments.run_sweep(config, args.out, powers=powers,
                                         figures=figures)
            print(path)
        elif args.command == "train":
            for path in experiments.run_train(config, args.stage, args.out,
                                              slim=args.slim, powers=powers,
                                              figures=figures):
                print(path)
        elif args.command == "evaluate":
            path = experiments.run_evaluate(config, args.side, args.out,
                                            slim=args.slim, powers=powers,
                                            figures=figures)
            print(path)
        elif args.command == "constellation":
            power = powers[0] if powers else None
            path = experiments.run_constellation(config, args.scenario, args.out,
                                                 power_dbm=power, figures=figures)
            print(path)
        elif args.command == "coded":
            path = experiments.run_coded(config, args.out, powers=powers,
                                         figures=figures)
            print(path)
        elif args.command == "params":
            path = experiments.run_params(config, args.out)
            print(path)
        elif args.command == "selftest":
            return 0 if experiments.run_selftest(config) else 1
    except experiments.DependencyError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
