"""Command line entry point: ``deepsight {run,ablate,sweep-tf,prove}``.

Every command reads an optional flat config file, applies ``--set`` and the
dedicated flags on top, and writes JSON lines (plus a CSV summary when
``--out`` names a file). Output depends only on config and seed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import properties
from .defense import MODES
from .harness import (ExperimentConfig, ablate, dump_config, load_config, parse_value,
                      reference_config, run_experiment, sweep_threshold_factor)

log = logging.getLogger("deepsight")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _key_value(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), parse_value(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat 'dotted.key = value' config file")
    common.add_argument("--seed", type=int, help="root seed (overrides the config's seed)")
    common.add_argument("--out", type=Path, help="JSONL output path; a .csv summary is written beside it")
    common.add_argument("--mode", choices=MODES, help="defense mode (overrides defense.mode)")
    common.add_argument("--set", dest="overrides", type=_key_value, action="append", default=[],
                        metavar="KEY=VALUE", help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="deepsight", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one multi-round experiment")
    ab = sub.add_parser("ablate", parents=[common], help="final BA/MA per defense layer")
    ab.add_argument("--modes", default=",".join(MODES[::-1]),
                    help="comma-separated defense modes (default: all)")
    ab.add_argument("--complexities", type=_ints, default=[1, 2, 3],
                    help="comma-separated trigger counts")
    ab.add_argument("--pdrs", type=_floats, help="comma-separated poisoned data rates")
    tf = sub.add_parser("sweep-tf", parents=[common], help="threshold-factor sweep")
    tf.add_argument("--factors", type=_floats,
                    default=[0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5])
    pr = sub.add_parser("prove", parents=[common], help="run the invariance property suite")
    pr.add_argument("--only", choices=sorted(properties.SUITE), action="append",
                    help="restrict to the named properties")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = dict(args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["defense.mode"] = args.mode
    if args.config is not None:
        return load_config(args.config, overrides)
    return reference_config(**overrides)


def _write_rows(rows: Sequence[dict], out: Optional[Path]) -> None:
    lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    if out is None:
        sys.stdout.write(lines)
        return
    Path(out).write_text(lines)
    if rows:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        Path(out).with_suffix(".csv").write_text(buf.getvalue())


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
    except (KeyError, ValueError, TypeError, OSError) as exc:
        print(f"deepsight: invalid configuration: {exc}", file=sys.stderr)
        return 2
    log.info("configuration:\n%s", dump_config(cfg))
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)

    if args.command == "run":
        reports = run_experiment(cfg, args.out)
        if args.out is None:
            sys.stdout.write("".join(r.to_json() + "\n" for r in reports))
        return 0
    if args.command == "ablate":
        modes = [m.strip() for m in args.modes.split(",") if m.strip()]
        bad = [m for m in modes if m not in MODES]
        if bad:
            print(f"deepsight: unknown modes {bad}", file=sys.stderr)
            return 2
        _write_rows(ablate(cfg, modes, args.complexities, args.pdrs), args.out)
        return 0
    if args.command == "sweep-tf":
        _write_rows(sweep_threshold_factor(cfg, args.factors), args.out)
        return 0
    # prove
    names = args.only or list(properties.SUITE)
    results = [properties.SUITE[n](seed=cfg.rng_seed) for n in names]
    _write_rows([json.loads(r.to_json()) for r in results], args.out)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.failures}/{r.trials} failures",
              file=sys.stderr)
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
