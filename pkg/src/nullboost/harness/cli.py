"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 1 anything else.
"""
from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

import yaml

from .. import hyperboost as hb
from ..searchspace import MalformedSpaceError
from .data import DataError, load_expression_csv, make_synthetic, write_expression_csv
from .run import ConfigError, RunConfig, export_predictions, load_npz, report, run, save_npz

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _cmd_run(args):
    cfg = RunConfig.load(args.config)
    out = run(cfg, base=Path(args.config).resolve().parent)
    print(out)


def _load_images(path, side):
    p = Path(path)
    if p.suffix == ".npz":
        return load_npz(p).images
    return load_expression_csv(p, side=side).images


def _cmd_predict(args):
    ens = Path(args.ensemble)
    if not (ens / "manifest.json").exists():
        raise ConfigError(f"{ens} is not an ensemble directory")
    state = hb.load_ensemble(ens)
    images = _load_images(args.data, args.side)
    export_predictions(state, images, args.out)


def _cmd_synth(args):
    try:
        with open(args.spec) as fh:
            spec = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read {args.spec}: {e}") from None
    if not isinstance(spec, dict) or "n" not in spec:
        raise ConfigError("synthetic spec needs at least 'n'")
    ds = make_synthetic(spec, seed=int(spec.get("seed", args.seed)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_npz(ds, out / "data.npz")
    write_expression_csv(ds, out / "train.csv")
    shutil.copyfile(args.spec, out / "spec.yaml")
    print(out)


def _cmd_report(args):
    if not (Path(args.run) / "rounds.csv").exists():
        raise ConfigError(f"{args.run} has no rounds.csv")
    sys.stdout.write(report(args.run))


def build_parser():
    ap = argparse.ArgumentParser(prog="nullboost", description="Boosted hyperparameter search for image features.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run or resume a search")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("predict", help="predict with a saved ensemble")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--data", required=True, help="CSV in the expression layout, or .npz with 'images'")
    p.add_argument("--out", required=True)
    p.add_argument("--side", type=int, default=48, help="image side for CSV input")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("report", help="per-round accuracy table of a run")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, MalformedSpaceError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
