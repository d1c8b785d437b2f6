import csv
import json

import numpy as np
import pytest

from lkcr import experiment as ex
from lkcr.errors import InputError, SingularDesign
from lkcr.experiment import ExperimentConfig, read_results, run_experiment
from lkcr.reports import FIGURES, plot_table, render, table_csv

SMALL = {"domains": ["square", "sphere"], "grid_sizes": {"square": [5, 8, 10, 12], "sphere": [6, 8, 10, 12]},
         "cov_methods": ["i", "sd", "pi"], "replicates": 4, "seed": 5}


@pytest.fixture(scope="module")
def small_result():
    return run_experiment({**SMALL, "empirical_B": 200})


def test_config_validation(tmp_path):
    with pytest.raises(InputError, match="unknown config keys"):
        ExperimentConfig.from_dict({"domains": ["square"], "bogus": 1})
    with pytest.raises(InputError):
        ExperimentConfig(domains=("cube",), grid_sizes={"cube": [200]})
    ExperimentConfig(domains=("square",), grid_sizes={"square": [200]})
    with pytest.raises(InputError):
        ExperimentConfig(empirical_B=10)
    with pytest.raises(InputError):
        ExperimentConfig(connectivity=26)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(SMALL))
    assert ExperimentConfig.load(p).replicates == 4
    p.write_text("{not json")
    with pytest.raises(InputError):
        ExperimentConfig.load(p)
    with pytest.raises(InputError):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_grid_list_applies_to_all_domains():
    cfg = ExperimentConfig(domains=("square", "cube"), grid_sizes=[10, 5])
    assert cfg.grid_sizes == {"square": [5, 10], "cube": [5, 10]}


def test_replicate_seeds_are_distinct():
    seeds = {ex.replicate_seed(0, d, G, r) for d in range(3) for G in (5, 10) for r in range(50)}
    assert len(seeds) == 300


def test_summary_shape(small_result):
    keys = [(s["domain"], s["G"], s["method"], s["cov"]) for s in small_result.summary]
    assert len(keys) == len(set(keys)) == 2 * 4 * 3
    assert all(s["n_ok"] + s["n_failed"] == 4 for s in small_result.summary)
    assert small_result.replicate_count == 4
    assert len(small_result.rows) == 2 * 4 * 3 * 4
    assert all(r["seed"] for r in small_result.rows)


def test_bias_table(small_result):
    assert {(b["domain"], b["cov"]) for b in small_result.bias} == {
        (d, c) for d in ("square", "sphere") for c in ("i", "pd", "sd", "pi") if c != "pd"}
    for b in small_result.bias:
        assert b["status"] == "ok" or b["status"].startswith(("NoConvergence", "InputError"))


def test_thread_count_does_not_change_results():
    cfg = {**SMALL, "replicates": 3}
    a = run_experiment(cfg, threads=1)
    b = run_experiment(cfg, threads=3)
    strip = lambda rows: [(r["domain"], r["G"], r["cov"], r["replicate"], r["seed"], r.get("threshold"),
                           r.get("L1"), r.get("L2")) for r in rows]
    assert strip(a.rows) == strip(b.rows)


def test_failures_are_logged_and_persisted(tmp_path, monkeypatch):
    real = ex.finish_fit

    def flaky(profile, sigma, domain, design, opts):
        if str(sigma.method) == "pi":
            raise SingularDesign("forced failure")
        return real(profile, sigma, domain, design, opts)

    monkeypatch.setattr(ex, "finish_fit", flaky)
    res = run_experiment({**SMALL, "domains": ["square"], "replicates": 2})
    assert len(res.failures) == 4 * 2
    assert all("forced failure" in f for f in res.failures)
    ok = [r for r in res.rows if r["cov"] != "pi"]
    assert all(r["status"] == "ok" for r in ok)
    paths = res.write(tmp_path)
    assert len(paths["failures"].read_text().splitlines()) == 8
    summ = list(csv.DictReader(paths["summary"].open()))
    pi = [s for s in summ if s["cov"] == "pi"]
    assert all(s["n_ok"] == "0" and s["n_failed"] == "2" for s in pi)


def test_write_and_read_back(small_result, tmp_path):
    paths = small_result.write(tmp_path)
    head = paths["results"].read_text().splitlines()[0].split(",")
    assert head[:7] == ["domain", "G", "method", "cov", "replicate", "threshold", "runtime_ms"]
    rows = read_results(paths["results"])
    assert len(rows) == len(small_result.rows)
    again = plot_table(rows, "sd")
    for a, b in zip(again, small_result.summary):
        assert a["sd_threshold"] == pytest.approx(b["sd_threshold"], rel=1e-12)
    cfg = json.loads(paths["config"].read_text())
    assert cfg["seed"] == 5


def test_median_table_brackets(small_result):
    table = plot_table(small_result.rows, "median")
    sq = [t for t in table if t["domain"] == "square"]
    assert all(t["bracketed"] == "true" for t in sq)
    assert table_csv(table, "median").splitlines()[0].endswith("bracketed")


def test_plot_tables_and_figures(small_result, tmp_path):
    for fig in FIGURES:
        table = plot_table(small_result.rows, fig)
        assert table
        path = render(table, fig, tmp_path / f"{fig}.png")
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    with pytest.raises(InputError):
        plot_table(small_result.rows, "histogram")


def test_read_results_validates(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(InputError):
        read_results(p)
    with pytest.raises(InputError):
        read_results(tmp_path / "missing.csv")
