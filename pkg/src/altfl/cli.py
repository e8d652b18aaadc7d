"""Command line entry point: ``altfl <subcommand> [--config spec.json] [--<field> value ...]``.

Every experiment-spec field can be overridden by a flag of the same name
(underscores become dashes); values are parsed as JSON when possible, so
``--alphas "[0.25, 1]"`` and ``--rounds 20`` both work. The archive root is
``--archive``, else $ALTFL_ARCHIVE, else ./results.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import runner, selection as sel

SUBCOMMANDS = {
    "run": "all stages: matrices/levels (if needed), train, attack, select, report",
    "train": "train every (method configuration, level, alpha, r, seed) into records.csv",
    "attack": "attack success per configuration and level into attacks.csv",
    "matrix": "attack-success matrices over the sigma x eta grid",
    "levels": "derive privacy levels from the matrices (or from --from FILE)",
    "select": "threshold-based method selection tables",
    "report": "plain-text summary of the archive",
    "bench-he": "measure encryption timings to calibrate the cost model",
    "recommend": "objective-oriented method recommendation",
}


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="altfl", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=helptext, description=helptext)
        if name == "recommend":
            sp.add_argument("requirement", choices=["strong", "moderate"])
            sp.add_argument("priority", choices=["accuracy", "low_communication"])
            continue
        if name == "bench-he":
            sp.add_argument("--backend", choices=["simulator", "ckks"], default="simulator")
            sp.add_argument("--sizes", type=_value, default=[1000, 10000])
            sp.add_argument("--out", type=Path, default=None, help="write the JSON here as well")
            continue
        sp.add_argument("--config", type=Path, help="experiment spec (JSON)")
        sp.add_argument("--archive", help="archive root directory")
        if name == "levels":
            sp.add_argument("--from", dest="source", help="JSON with per-attack rows {attack: {eta: sigma}}")
        if name == "select":
            sp.add_argument("--input", help="candidate CSV instead of the archive's records + attacks")
        group = sp.add_argument_group("spec overrides")
        for f in dataclasses.fields(runner.ExperimentSpec):
            group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"set_{f.name}", type=_value,
                               default=None, metavar="VALUE")
    return p


def load_spec(args) -> runner.ExperimentSpec:
    d = json.loads(args.config.read_text()) if args.config else {}
    for f in dataclasses.fields(runner.ExperimentSpec):
        v = getattr(args, f"set_{f.name}", None)
        if v is not None:
            d[f.name] = v
    return runner.ExperimentSpec.from_dict(d)


def _failed(failures: dict, out: Path) -> int:
    if failures:
        print(f"{sum(len(v) if isinstance(v, dict) else 1 for v in failures.values())} task(s) failed; "
              f"see {out / 'failures.json'}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.command == "recommend":
        rec = sel.recommend(args.requirement, args.priority)
        print(", ".join(rec.methods) + (f"  ({rec.note})" if rec.note else ""))
        return 0
    if args.command == "bench-he":
        res = runner.bench_he(tuple(args.sizes), backend=args.backend)
        text = json.dumps(res, indent=2)
        if args.out:
            args.out.write_text(text + "\n")
        print(text)
        return 0
    try:
        spec = load_spec(args)
    except (runner.SpecError, TypeError, ValueError) as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return 2
    out = runner.archive_dir(spec, args.archive)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "run":
            out, failures = runner.run_experiment(spec, args.archive)
            return _failed(failures, out)
        if args.command == "train":
            return _failed(runner.run_train(spec, out), out)
        if args.command == "attack":
            return _failed(runner.run_attack(spec, out), out)
        if args.command == "matrix":
            runner.run_matrix(spec, out)
        elif args.command == "levels":
            print(runner.lv.format_levels(runner.run_levels(spec, out, args.source)), end="")
        elif args.command == "select":
            runner.run_select(spec, out, args.input)
            for rq in sorted(spec.thresholds):
                print((out / "selection" / f"{rq}.txt").read_text())
        elif args.command == "report":
            print(runner.run_report(spec, out), end="")
    except runner.SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
