"""Command-line entry point: ``structlin run | analyze | budget | emit-plots``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import analysis, budget, runner
from .errors import (
    ConfigError,
    NoCommonSupportError,
    NoCrossoverError,
    OutOfSupportError,
    ResultsParseError,
    SpecError,
)
from .linop import CostModel

log = logging.getLogger("structlin")


def parse_dims(text: str) -> list[tuple[int, int]]:
    """``"256x256,128x64"`` -> ``[(256, 256), (128, 64)]``."""
    dims = []
    for part in text.split(","):
        try:
            o, i = part.lower().split("x")
            dims.append((int(o), int(i)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad layer dims {part!r}, expected OUTxIN") from None
    return dims


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_run(args) -> int:
    try:
        config = runner.ExperimentConfig.load(args.config)
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return runner.EXIT_IO
    if args.epochs_override is not None:
        if args.epochs_override < 1:
            log.error("--epochs-override must be >= 1")
            return runner.EXIT_CONFIG
        config = replace(config, train=config.train.with_epochs(args.epochs_override))
    if args.output_dir:
        config = replace(config, output_dir=args.output_dir)
    try:
        return runner.run(config, jobs=args.jobs)
    except OSError as exc:
        log.error("cannot write results: %s", exc)
        return runner.EXIT_IO


def cmd_exclusion(args) -> int:
    rep = analysis.exclusion_report(args.n_real, args.n_virtual, args.trials, args.seed)
    _emit(rep.to_json())
    return 0


def cmd_crossover(args) -> int:
    model = CostModel(dct_kappa=args.kappa) if args.kappa is not None else None
    _emit({"layers": args.layers, "crossover": analysis.acdc_crossover(args.layers, model)})
    return 0


def cmd_solve(args) -> int:
    sol = budget.solve_budget(args.kind, args.dims, args.target, args.tol)
    _emit(sol.to_json())
    return 0


def cmd_emit(args) -> int:
    for path in runner.emit_plotdata(args.results, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="structlin", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a matrix-fit experiment grid from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--epochs-override", type=int)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--output-dir", help="override the config's output_dir")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="closed-form analyses")
    asub = a.add_subparsers(dest="analysis", required=True)
    ex = asub.add_parser("exclusion", help="HashedNet excluded-weight statistics")
    ex.add_argument("--n-real", type=int, required=True)
    ex.add_argument("--n-virtual", type=int, required=True)
    ex.add_argument("--trials", type=int, default=0, help="Monte-Carlo trials (0 skips)")
    ex.add_argument("--seed", type=int, default=0)
    ex.set_defaults(func=cmd_exclusion)
    cr = asub.add_parser("crossover", help="smallest N where L-layer ACDC beats dense in mult-adds")
    cr.add_argument("--layers", type=int, required=True)
    cr.add_argument("--kappa", type=float, help="DCT cost constant (default: calibrated)")
    cr.set_defaults(func=cmd_crossover)

    b = sub.add_parser("budget", help="parameter budgets")
    bsub = b.add_subparsers(dest="budget_cmd", required=True)
    sv = bsub.add_parser("solve", help="knob setting closest to a parameter budget")
    sv.add_argument("--kind", required=True)
    sv.add_argument("--dims", type=parse_dims, required=True, help="comma list of OUTxIN")
    sv.add_argument("--target", type=float, required=True)
    sv.add_argument("--tol", type=float, default=0.0)
    sv.set_defaults(func=cmd_solve)

    e = sub.add_parser("emit-plots", help="write plot CSVs from results.json")
    e.add_argument("--results", required=True)
    e.add_argument("--out", help="output directory (default: next to results)")
    e.set_defaults(func=cmd_emit)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return runner.EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ResultsParseError as exc:
        log.error("%s", exc)
        return runner.EXIT_IO
    except (ConfigError, SpecError, OutOfSupportError, NoCommonSupportError, NoCrossoverError, ValueError) as exc:
        log.error("%s", exc)
        return runner.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
