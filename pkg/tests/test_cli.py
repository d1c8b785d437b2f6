import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from lkcr.bundle_io import load_bundle, save_bundle
from lkcr.cli import main
from lkcr.domain import GridDomain
from lkcr.simulation import GrfSpec, simulate


@pytest.fixture(scope="module")
def square(tmp_path_factory):
    p = tmp_path_factory.mktemp("b") / "square_g20.lkcb"
    save_bundle(simulate(GrfSpec(GridDomain("square", 20), 100.0, 15, seed=2024)), p)
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_ec(square, capsys):
    code, out, err = run(capsys, "ec", square, "--U", 50, "--spacing", "equal")
    assert code == 0 and err == ""
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 50
    assert float(rows[0]["mean_ec"]) == 1.0


def test_ec_explicit_levels(square, capsys):
    code, out, _ = run(capsys, "ec", square, "--levels=-10,0,10", "--connectivity", "4")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [float(r["mean_ec"]) for r in rows][::2] == [1.0, 0.0]


def test_ec_errors(square, tmp_path, capsys):
    code, out, err = run(capsys, "ec", tmp_path / "nope.lkcb")
    assert code == 2 and out == "" and "no such bundle" in err
    code, out, err = run(capsys, "ec", square, "--connectivity", "26")
    assert code == 2 and "connectivity/domain mismatch" in err
    bad = tmp_path / "bad.lkcb"
    bad.write_bytes(b"garbage")
    code, _, err = run(capsys, "ec", bad)
    assert code == 2 and "offset" in err


def test_fit(square, capsys, tmp_path):
    code, out, _ = run(capsys, "fit", square)
    d = json.loads(out)
    assert code == 0 and 3.5 <= d["threshold_95"] <= 3.9
    code, out2, _ = run(capsys, "fit", square, "--cov", "sd")
    assert out2 == out
    code, _, err = run(capsys, "fit", square, "--alpha", "0.5")
    assert code == 2 and "alpha outside ECH validity" in err
    code, _, _ = run(capsys, "fit", square, "--cov", "bogus")
    assert code == 2
    code, out, _ = run(capsys, "fit", square, "--free-l0", "--out", tmp_path / "f.json")
    assert code == 0 and out == ""
    assert json.loads((tmp_path / "f.json").read_text())["fixed_l0"] is False


@pytest.mark.parametrize("lkcs,expected,tol", [("1,28.284,200", 3.72, 0.01), ("2,0,502.65", 3.96, 0.01),
                                               ("1,0,0", 1.6449, 1e-4)])
def test_threshold(capsys, lkcs, expected, tol):
    code, out, _ = run(capsys, "threshold", "--lkcs", lkcs, "--alpha", "0.05")
    assert code == 0 and abs(float(out) - expected) <= tol


def test_threshold_pvalue_and_errors(capsys):
    code, out, _ = run(capsys, "threshold", "--lkcs", "1,0,0", "--pvalue", "1.6448536")
    assert code == 0 and abs(float(out) - 0.05) < 1e-6
    assert run(capsys, "threshold", "--lkcs", "1,x")[0] == 2
    assert run(capsys, "threshold", "--lkcs", "0,0,0")[0] == 3
    assert run(capsys, "threshold", "--lkcs", "1,1", "--family", "t")[0] == 2


def test_simulate_round_trip(tmp_path, capsys):
    a, b = tmp_path / "a.lkcb", tmp_path / "b.lkcb"
    for p in (a, b):
        assert run(capsys, "simulate", "--domain", "cube", "--G", 6, "--F", 3, "--seed", 9, "--out", p)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    bundle = load_bundle(a)
    assert bundle.field_count == 3 and bundle.domain.n_sites == 216


def test_simulate_fiac_like(tmp_path, capsys):
    p = tmp_path / "f.lkcb"
    assert run(capsys, "simulate", "--fiac-like", "--G", 12, "--out", p)[0] == 0
    b = load_bundle(p)
    assert b.field_count == 16 and b.mask is not None


def test_simulate_variance_via_ec(tmp_path, capsys):
    p = tmp_path / "v.lkcb"
    run(capsys, "simulate", "--G", 10, "--F", 400, "--seed", 1, "--out", p)
    code, out, _ = run(capsys, "ec", p, "--levels", "0", "--no-normalize")
    assert code == 0
    b = load_bundle(p)
    assert abs(b.values.var() - 1) < 0.05


def test_simulate_too_large(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--domain", "sphere", "--G", 400, "--out", tmp_path / "x.lkcb")
    assert code == 2 and "exceed" in err


def test_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "threshold")[0] == 2
    assert run(capsys, "simulate", "--G", 5, "--out", "x", "--unknown")[0] == 2


def test_experiment_and_plotdata(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"domains": ["square"], "grid_sizes": [5, 8, 10, 12], "cov_methods": ["sd", "i"],
                               "replicates": 3, "empirical_B": 200, "seed": 1}))
    out_dir = tmp_path / "exp"
    code, out, _ = run(capsys, "experiment", "--config", cfg, "--out", out_dir, "--threads", 2)
    assert code == 0 and out.strip().endswith("summary.csv")
    summ = list(csv.DictReader((out_dir / "summary.csv").open()))
    assert len(summ) == 4 * 2
    for fig in ("runtime", "sd", "median", "bias"):
        assert (out_dir / f"{fig}.png").exists()
    code, out, _ = run(capsys, "plotdata", "--result", out_dir / "results.csv", "--figure", "median",
                       "--png", tmp_path / "m.png")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and all(r["bracketed"] == "true" for r in rows)
    assert (tmp_path / "m.png").exists()
    code, _, err = run(capsys, "plotdata", "--result", out_dir / "results.csv", "--figure", "pie")
    assert code == 2
    cfg.write_text(json.dumps({"domains": ["cube"], "grid_sizes": [500]}))
    assert run(capsys, "experiment", "--config", cfg, "--out", out_dir)[0] == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "lkcr", "threshold", "--lkcs", "1,0,0"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "1.644854" and r.stderr == ""


def test_simulate_needs_grid_size(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--out", tmp_path / "x.lkcb")
    assert code == 2 and "--G is required" in err
