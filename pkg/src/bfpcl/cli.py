"""Command-line entry point: ``bfpcl run | summarize | probe``."""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .analysis import linear_probe, stratified_fraction
from .config import load_config
from .errors import BfpError
from .experiment import run_experiment, summarize


def load_labels(path):
    """Labels from a matrix file (one row or one column) or a text file, one per line."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == fileio.MATRIX_MAGIC:
        M = fileio.parse_matrix(raw)
        if 1 not in M.shape:
            raise BfpError(f"{path}: label matrix must have one row or one column, got {M.shape}")
        values = M.ravel()
    else:
        values = np.array([float(s) for s in raw.decode("utf-8").split()])
    if np.any(values != np.round(values)) or np.any(values < 0):
        raise BfpError(f"{path}: labels must be non-negative integers")
    return values.astype(np.int64)


def _cmd_run(args):
    cfg = load_config(args.config)
    status = run_experiment(cfg)
    print(f"wrote {cfg.resolve(cfg.run.output)}")
    if not args.quiet:
        table, _ = summarize(cfg.resolve(cfg.run.output))
        print(table, end="")
    return status


def _cmd_summarize(args):
    table, missing = summarize(args.directory)
    print(table, end="")
    for path in missing:
        print(f"missing: {path}", file=sys.stderr)
    return 1 if missing else 0


def _cmd_probe(args):
    Z = fileio.load_matrix(args.features)
    y = load_labels(args.labels)
    if y.size != Z.shape[1]:
        raise BfpError(f"{Z.shape[1]} feature columns but {y.size} labels")
    if args.test_features:
        if not args.test_labels:
            raise BfpError("--test-features needs --test-labels")
        Zte, yte = fileio.load_matrix(args.test_features), load_labels(args.test_labels)
        Ztr, ytr = Z, y
    else:
        held = np.zeros(y.size, dtype=bool)
        held[stratified_fraction(y, args.holdout, args.seed)] = True
        Ztr, ytr, Zte, yte = Z[:, ~held], y[~held], Z[:, held], y[held]
    print("fraction,accuracy")
    for f in args.fraction or [1.0]:
        print(f"{f!r},{linear_probe(Ztr, ytr, Zte, yte, fraction=f, seed=args.seed)!r}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bfpcl", description="Continual-learning experiments with feature projection.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("-q", "--quiet", action="store_true", help="skip the summary table")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("summarize", help="print the FAA table of an output directory")
    s.add_argument("directory")
    s.set_defaults(func=_cmd_summarize)

    pr = sub.add_parser("probe", help="linear-probe accuracy of a feature dump")
    pr.add_argument("features", help="matrix file, one column per example")
    pr.add_argument("labels", help="matrix or text file of integer labels")
    pr.add_argument("--test-features")
    pr.add_argument("--test-labels")
    pr.add_argument("--fraction", type=float, action="append", help="training fraction (repeatable)")
    pr.add_argument("--holdout", type=float, default=0.2, help="test share when no test set is given")
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(func=_cmd_probe)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BfpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
