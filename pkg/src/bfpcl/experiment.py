"""Grid runner: methods x seeds x gamma cells, per-cell artifacts and summaries.

Output layout under ``run.output``::

    cells/<cell>/accuracy.csv         after_task, eval_task, mode, accuracy
    cells/<cell>/metrics.json         one record per mode: method, seed, gamma, mode, faa, ff, ala
    cells/<cell>/spectrum_t<t>.csv    k, s_k, proj_acc_k       (analysis.spectrum)
    cells/<cell>/cka.csv              t, seen, unseen          (analysis.cka)
    cells/<cell>/probe.csv            fraction, accuracy       (analysis.probe_fractions)
    cells/<cell>/features_t<t>.mat    test features per boundary (analysis.dump_features)
    aggregate.json                    mean/std over seeds per method, gamma and mode
    manifest.json                     config echo, versions, cell status; volatile
                                      fields live under "timing"
"""

import platform
import re
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import fileio
from .analysis import cka_trace, linear_probe, spectrum_report
from .config import ExperimentConfig
from .data import load_idx, load_mnist_subset, make_gaussian_tasks, split_by_classes
from .errors import BfpError
from .metrics import MetricsReport, aggregate
from .network import forward_features
from .trainer import MODES, run_continual


def load_stream(cfg: ExperimentConfig):
    d = cfg.dataset
    if d.kind == "gaussian":
        return make_gaussian_tasks(d.tasks, d.classes_per_task, d.dim, d.separation, d.n_per_class, d.seed)
    if d.kind == "mnist-subset":
        train, test = load_mnist_subset()
    else:
        train = load_idx(cfg.resolve(d.train_images), cfg.resolve(d.train_labels), d.class_count)
        test = load_idx(cfg.resolve(d.test_images), cfg.resolve(d.test_labels), d.class_count)
    return split_by_classes(train, test, d.classes_per_task)


def cell_name(method, seed, gamma=None):
    slug = re.sub(r"[^a-z0-9]+", "-", method.name.lower().replace("++", "pp")).strip("-")
    if gamma is not None:
        slug += f"_g{gamma:g}"
    return f"{slug}_s{seed}"


def _features(params, inputs):
    return forward_features(params, inputs.T)[0]


def _analyses(cfg, stream, result, out: Path):
    a = cfg.analysis
    if a.spectrum:
        for t, ckpt in zip(result.boundaries, result.checkpoints):
            train = stream.joint(t + 1)
            test = stream.joint_test(t + 1) if a.spectrum_eval == "seen" else stream[t].test
            Z_fit, Z_eval = _features(ckpt, train.inputs), _features(ckpt, test.inputs)
            rep = spectrum_report(Z_fit, ckpt.head, Z_eval, test.labels, center=a.spectrum_center)
            fileio.write_csv(out / f"spectrum_t{t + 1}.csv", fileio.SPECTRUM_COLUMNS, rep.rows())
    if a.cka:
        fileio.write_csv(out / "cka.csv", fileio.CKA_COLUMNS, cka_trace(result.features, result.test_tasks))
    if a.probe_fractions:
        train, test = stream.joint(), stream.joint_test()
        Ztr, Zte = _features(result.params, train.inputs), _features(result.params, test.inputs)
        rows = [
            (f, linear_probe(Ztr, train.labels, Zte, test.labels, fraction=f, seed=a.probe_seed))
            for f in a.probe_fractions
        ]
        fileio.write_csv(out / "probe.csv", ("fraction", "accuracy"), rows)
    if a.dump_features:
        for t, Z in zip(result.boundaries, result.features):
            fileio.save_matrix(out / f"features_t{t + 1}.mat", Z)
        fileio.save_matrix(out / "labels_test.mat", result.test_labels[:, None])
        train = stream.joint()
        fileio.save_matrix(out / "features_train.mat", _features(result.params, train.inputs))
        fileio.save_matrix(out / "labels_train.mat", train.labels[:, None])


def run_cell(cfg: ExperimentConfig, method, gamma, seed, stream=None):
    """Run one grid cell and write its files; returns a status record."""
    name = cell_name(method, seed, gamma)
    out = cfg.resolve(cfg.run.output) / "cells" / name
    out.mkdir(parents=True, exist_ok=True)
    record = {"cell": name, "method": method.name, "seed": seed, "gamma": gamma}
    start = time.perf_counter()
    try:
        stream = stream or load_stream(cfg)
        result = run_continual(stream, method, cfg.training, seed)
        fileio.write_csv(out / "accuracy.csv", fileio.ACCURACY_COLUMNS, fileio.accuracy_rows(result.accuracy))
        metrics = []
        for mode in MODES:
            rep = MetricsReport.from_matrix(result.accuracy[mode])
            metrics.append({"method": method.name, "seed": seed, "gamma": gamma, "mode": mode, **rep.as_dict()})
        fileio.write_json(out / "metrics.json", metrics)
        _analyses(cfg, stream, result, out)
        record["status"] = "ok"
    except (BfpError, OSError, ValueError) as exc:
        record["status"] = "failed"
        record["error"] = f"{type(exc).__name__}: {exc}"
        print(f"cell {name} failed: {record['error']}", file=sys.stderr)
        if not isinstance(exc, BfpError):
            traceback.print_exc()
    record["seconds"] = time.perf_counter() - start
    return record


def _group_key(rec):
    return rec["method"], rec["gamma"], rec["mode"]


def aggregate_metrics(records):
    """Mean/std over seeds of each ``(method, gamma, mode)`` group, in first-seen order."""
    groups = {}
    for rec in records:
        groups.setdefault(_group_key(rec), []).append(rec)
    out = []
    for (method, gamma, mode), recs in groups.items():
        reps = [MetricsReport(r["faa"], r["ff"], r["ala"]) for r in recs]
        out.append({
            "method": method,
            "gamma": gamma,
            "mode": mode,
            "seeds": [r["seed"] for r in recs],
            **aggregate(reps),
        })
    return out


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "bfpcl": own}


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run every cell, then write the aggregate and the manifest.

    Returns 0 when all cells succeeded and 1 otherwise; failed cells do not
    stop the remaining ones.
    """
    began = time.time()
    root = cfg.resolve(cfg.run.output)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(m, g, s) for m, g in cfg.method_specs() for s in cfg.run.seeds]
    if cfg.run.workers > 1:
        with ProcessPoolExecutor(cfg.run.workers) as pool:
            futures = [pool.submit(run_cell, cfg, m, g, s) for m, g, s in jobs]
            cells = [f.result() for f in futures]
    else:
        stream = load_stream(cfg)
        cells = [run_cell(cfg, m, g, s, stream) for m, g, s in jobs]

    records = []
    for c in cells:
        path = root / "cells" / c["cell"] / "metrics.json"
        if c["status"] == "ok":
            records += fileio.read_json(path)
    fileio.write_json(root / "aggregate.json", aggregate_metrics(records))
    manifest = {
        "config": cfg.as_dict(),
        "versions": _versions(),
        "cells": [{k: v for k, v in c.items() if k != "seconds"} for c in cells],
        "timing": {
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(began)),
            "wall_seconds": time.time() - began,
            "cell_seconds": {c["cell"]: c["seconds"] for c in cells},
        },
    }
    fileio.write_json(root / "manifest.json", manifest)
    return 0 if all(c["status"] == "ok" for c in cells) else 1


# --- summary table ------------------------------------------------------------


def _label(method, gamma):
    return method if gamma is None else f"{method} (gamma={gamma:g})"


def _base_of(method):
    return method.split(" w/ ")[0] if " w/ " in method else None


def summarize(directory) -> tuple:
    """``(table text, missing files)`` for an output directory.

    FAA is shown as mean +- std in percent over seeds.  Rows with a
    projector also show the difference to their base method.
    """
    root = Path(directory)
    missing, records = [], []
    cells = sorted((root / "cells").glob("*")) if (root / "cells").is_dir() else []
    if not cells:
        missing.append(str(root / "cells"))
    for cell in cells:
        path = cell / "metrics.json"
        if path.is_file():
            records += fileio.read_json(path)
        else:
            missing.append(str(path))
    agg = aggregate_metrics(sorted(records, key=lambda r: (r["method"], r["gamma"] is not None, r["gamma"] or 0, r["seed"])))
    faa = {(a["method"], a["gamma"], a["mode"]): a["faa"] for a in agg}
    rows = []
    for method, gamma in dict.fromkeys((a["method"], a["gamma"]) for a in agg):
        row = [_label(method, gamma)]
        for mode in MODES:
            stat = faa.get((method, gamma, mode))
            if stat is None or stat["mean"] is None:
                row += ["-", ""]
                continue
            row.append(f"{100 * stat['mean']:.2f} +- {100 * stat['std']:.2f}")
            base = faa.get((_base_of(method), None, mode)) if _base_of(method) else None
            row.append(f"{100 * (stat['mean'] - base['mean']):+.2f}" if base else "")
        rows.append(row)
    header = ["method"] + [h for mode in MODES for h in (f"{mode} FAA", "delta")]
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip() for r in [header] + rows]
    return "\n".join(lines) + "\n", missing
