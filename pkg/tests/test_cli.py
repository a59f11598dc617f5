import json

import numpy as np
import pytest

from bfpcl import fileio
from bfpcl.cli import load_labels, main
from bfpcl.config import load_config
from bfpcl.experiment import cell_name, run_experiment, summarize
from bfpcl.trainer import MethodSpec

GAUSSIAN = """
[dataset]
kind = "gaussian"
tasks = 3
dim = 10
separation = 5.0
n_per_class = 40

[training]
hidden = [16]
feature_dim = 8
epochs = 1
buffer_capacity = 30

[methods]
names = {names}

[run]
seeds = [0, 1]
output = "out"

[analysis]
probe_fractions = [0.5, 1.0]
dump_features = true
"""


def _write(tmp_path, names='["FT", "ER w/ BFP"]', extra=""):
    path = tmp_path / "exp.ini"
    path.write_text(GAUSSIAN.format(names=names) + extra)
    return path


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("grid")
    path = _write(tmp)
    assert main(["run", str(path), "-q"]) == 0
    return tmp / "out"


def test_cell_names():
    assert cell_name(MethodSpec.parse("DER++ w/ BFP"), 3, 0.1) == "derpp-w-bfp_g0.1_s3"
    assert cell_name(MethodSpec.parse("FT"), 0) == "ft_s0"


def test_grid_writes_one_metrics_file_per_cell(finished):
    cells = sorted(p.name for p in (finished / "cells").iterdir())
    assert len(cells) == 4
    for c in cells:
        recs = fileio.read_json(finished / "cells" / c / "metrics.json")
        assert {r["mode"] for r in recs} == {"class-il", "task-il"}
    agg = fileio.read_json(finished / "aggregate.json")
    assert {(a["method"], a["mode"]) for a in agg} == {(m, mode) for m in ("FT", "ER w/ BFP") for mode in ("class-il", "task-il")}
    manifest = fileio.read_json(finished / "manifest.json")
    assert all(c["status"] == "ok" for c in manifest["cells"]) and "timing" in manifest


def test_probe_rows(finished):
    for cell in (finished / "cells").iterdir():
        rows = fileio.read_csv(cell / "probe.csv")
        assert [float(r["fraction"]) for r in rows] == [0.5, 1.0]
        assert all(0 <= float(r["accuracy"]) <= 1 for r in rows)


def test_aggregate_std_matches_recomputation(finished):
    faas = {}
    for cell in (finished / "cells").iterdir():
        for r in fileio.read_json(cell / "metrics.json"):
            faas.setdefault((r["method"], r["mode"]), []).append(r["faa"])
    for a in fileio.read_json(finished / "aggregate.json"):
        vals = faas[(a["method"], a["mode"])]
        assert abs(a["faa"]["mean"] - np.mean(vals)) <= 1e-9
        assert abs(a["faa"]["std"] - np.std(vals)) <= 1e-9


def test_summary_table_and_delta_sign(finished):
    table, missing = summarize(finished)
    assert not missing
    lines = table.splitlines()
    assert lines[0].startswith("method") and len(lines) == 3
    # no plain ER row exists here, so the projector row has an empty delta
    row = next(l for l in lines if l.startswith("ER w/ BFP"))
    assert row.split()[4:] == [row.split()[4], "+-", row.split()[6], row.split()[7], "+-", row.split()[9]]
    assert len(row.split()) == 10


def test_summary_delta_against_base(tmp_path):
    path = _write(tmp_path, names='["ER", "ER w/ BFP"]')
    cfg = load_config(path)
    assert run_experiment(cfg) == 0
    agg = {(a["method"], a["mode"]): a["faa"]["mean"] for a in fileio.read_json(tmp_path / "out" / "aggregate.json")}
    want = 100 * (agg[("ER w/ BFP", "class-il")] - agg[("ER", "class-il")])
    row = next(l for l in summarize(tmp_path / "out")[0].splitlines() if l.startswith("ER w/ BFP"))
    assert row.split()[7] == f"{want:+.2f}"


def test_single_run_summary(tmp_path, capsys):
    path = _write(tmp_path, names='["FT"]')
    path.write_text(path.read_text().replace("seeds = [0, 1]", "seeds = [4]"))
    assert main(["run", str(path)]) == 0
    out = capsys.readouterr().out
    assert "FT" in out and "+- 0.00" in out


def test_summarize_reports_missing(tmp_path, capsys):
    (tmp_path / "cells" / "ft_s0").mkdir(parents=True)
    assert main(["summarize", str(tmp_path)]) == 1
    assert "missing" in capsys.readouterr().err


def test_failed_cell_gives_nonzero_exit(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text(
        '[dataset]\nkind = "idx"\ntrain_images = "nope.idx"\ntrain_labels = "nope.idx"\n'
        'test_images = "nope.idx"\ntest_labels = "nope.idx"\n[run]\noutput = "out"\n'
        '[training]\nepochs = 1\n'
    )
    assert main(["run", str(path), "-q"]) != 0


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[run]\nseeds = []\n")
    assert main(["run", str(path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_probe_verb(finished, capsys, tmp_path):
    cell = finished / "cells" / "ft_s0"
    args = ["probe", str(cell / "features_train.mat"), str(cell / "labels_train.mat"), "--fraction", "0.5", "--fraction", "1.0"]
    assert main(args) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "fraction,accuracy" and len(lines) == 3
    # held-out test split supplied explicitly, labels as text
    Z = fileio.load_matrix(cell / "features_t3.mat")
    y = fileio.load_matrix(cell / "labels_test.mat").ravel().astype(int)
    (tmp_path / "y.txt").write_text("\n".join(map(str, y)))
    args = ["probe", str(cell / "features_train.mat"), str(cell / "labels_train.mat"),
            "--test-features", str(cell / "features_t3.mat"), "--test-labels", str(tmp_path / "y.txt")]
    assert main(args) == 0
    acc = float(capsys.readouterr().out.splitlines()[1].split(",")[1])
    assert 0 <= acc <= 1 and Z.shape[1] == y.size


def test_probe_verb_mismatch(tmp_path, capsys):
    fileio.save_matrix(tmp_path / "z.mat", np.zeros((3, 4)))
    (tmp_path / "y.txt").write_text("0 1 0")
    assert main(["probe", str(tmp_path / "z.mat"), str(tmp_path / "y.txt")]) == 2


def test_load_labels_rejects_fractions(tmp_path):
    (tmp_path / "y.txt").write_text("0 1.5")
    with pytest.raises(Exception, match="integers"):
        load_labels(tmp_path / "y.txt")
