import json

import numpy as np
import pytest

from cuspfactor import cli, mcmc
from cuspfactor import factor_model as fm


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_derive_stream_stable_and_distinct():
    a = cli.derive_stream(7, "chain", 0, "m20_H5_dense", "F", 1)
    assert a == cli.derive_stream(7, "chain", 0, "m20_H5_dense", "F", 1)
    assert a != cli.derive_stream(7, "chain", 0, "m20_H5_dense", "L", 1)
    assert 0 <= a < 2**63


def test_simulate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--m", 12, "--H0", 2, "--n", 30, "--seed", 4, "--out", tmp_path / d) == 0
    for name in ("Y.csv", "truth.json"):
        a = (tmp_path / "a" / "m12_H2_dense" / "rep000" / name).read_bytes()
        b = (tmp_path / "b" / "m12_H2_dense" / "rep000" / name).read_bytes()
        assert a == b


def test_simulate_sparse_zero_count(tmp_path):
    assert run("simulate", "--m", 20, "--H0", 5, "--density", "sparse", "--out", tmp_path) == 0
    d = fm.load_dataset(tmp_path / "m20_H5_sparse" / "rep000")
    assert np.sum(d.beta0 == 0) == 30


def test_fit_and_summarize_are_reproducible(tmp_path):
    run("simulate", "--m", 12, "--H0", 2, "--n", 40, "--seed", 1, "--out", tmp_path / "data")
    ds = tmp_path / "data" / "m12_H2_dense" / "rep000"
    blobs = []
    for d in ("c1", "c2"):
        assert run("fit", ds, "--seed", 3, "--iters", 150, "--burnin", 30, "--out", tmp_path / d) == 0
        assert run("summarize", tmp_path / d) == 0
        blobs.append((tmp_path / d / "summary.json").read_bytes())
    assert blobs[0] == blobs[1]
    s = json.loads(blobs[0])
    assert s["n_kept"] == 150 and s["H0"] == 2 and s["mse_omega"] is not None
    for name in ("draws.csv", "S.csv", "tau.csv", "theta.csv", "meta.json",
                 "fig_hstar_trace.csv", "fig_alpha_trace.csv", "fig_cusp_box.csv"):
        assert (tmp_path / "c1" / name).exists()
    meta = json.loads((tmp_path / "c1" / "meta.json").read_text())
    assert meta["seed"] == 3 and "wall_time" in meta


def test_fit_with_config_file(tmp_path):
    d = fm.simulate_dataset(np.random.default_rng(0), fm.ScenarioSpec(10, 1, n=30))
    fm.save_dataset(d, tmp_path / "data")
    cfg = {"prior": "H", "algorithm": "algo2", "iters": 120, "burnin": 10, "sampler": {"boosting": False}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run("fit", tmp_path / "data", "--config", tmp_path / "cfg.json", "--standardize", "--out", tmp_path / "c") == 0
    meta = json.loads((tmp_path / "c" / "meta.json").read_text())
    assert meta["config"]["algorithm"] == "algo2" and meta["config"]["a_theta"] == 0.5
    assert meta["config"]["boosting"] is False and meta["standardized"] is True


def test_prior_sim_outputs(tmp_path):
    assert run("prior-sim", "--family", "1pb", "--alpha", 5, "--H", 10, "--draws", 20000, "--out", tmp_path) == 0
    for name in ("shrinkage.csv", "hstar_moments.csv", "order_stats.csv"):
        assert (tmp_path / name).exists()
    rows = (tmp_path / "hstar_moments.csv").read_text().splitlines()
    assert rows[0].startswith("quantity") and len(rows) == 3


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        run("fit", tmp_path, "--algorithm", "algo9", "--out", tmp_path)
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        run("bogus")
    assert e.value.code == 1
    assert run("simulate", "--m", 12, "--out", tmp_path) == 1
    assert run("simulate", "--m", 12, "--H0", 9, "--out", tmp_path) == 1


def test_bad_config_key_exit_1(tmp_path):
    fm.save_dataset(fm.simulate_dataset(np.random.default_rng(0), fm.ScenarioSpec(10, 1, n=20)), tmp_path / "d")
    (tmp_path / "cfg.json").write_text(json.dumps({"itters": 5}))
    assert run("fit", tmp_path / "d", "--config", tmp_path / "cfg.json", "--out", tmp_path / "c") == 1


def test_numerical_failure_exit_2(tmp_path, monkeypatch):
    fm.save_dataset(fm.simulate_dataset(np.random.default_rng(0), fm.ScenarioSpec(10, 1, n=20)), tmp_path / "d")

    def boom(*a, **k):
        raise mcmc.NumericalError("iteration 3: not positive definite")

    monkeypatch.setattr(mcmc, "run_chain", boom)
    assert run("fit", tmp_path / "d", "--out", tmp_path / "c") == 2


def test_missing_files_exit_3(tmp_path):
    assert run("fit", tmp_path / "nope", "--out", tmp_path / "c") == 3
    assert run("summarize", tmp_path / "nochain") == 3


def _tiny_study(tmp_path, jobs, name, scenarios):
    cfg = {"scenarios": scenarios, "replicates": 2, "priors": ["F", "H"], "iters": 100, "burnin": 20}
    p = tmp_path / "study.json"
    p.write_text(json.dumps(cfg))
    assert run("reproduce-table", "--config", p, "--seed", 9, "--jobs", jobs, "--out", tmp_path / name) == 0
    return json.loads((tmp_path / name / "table.json").read_text())


def test_reproduce_table_serial_equals_parallel(tmp_path):
    scen = [{"m": 10, "H0": 1, "n": 30}, {"m": 12, "H0": 2, "n": 30, "density": "sparse"}]
    a = _tiny_study(tmp_path, 1, "serial", scen)
    b = _tiny_study(tmp_path, 2, "parallel", scen)
    strip = lambda rows: [{k: v for k, v in r.items() if not k.startswith("runtime")} for r in rows]
    assert strip(a["rows"]) == strip(b["rows"])
    assert strip(a["table"]) == strip(b["table"])
    assert len(a["rows"]) == 8 and len(a["table"]) == 4
    assert all(r["status"] == "ok" for r in a["rows"])


def test_dataset_seed_independent_of_prior(tmp_path):
    scen = [{"m": 10, "H0": 1, "n": 30}]
    a = _tiny_study(tmp_path, 1, "x", scen)
    # both priors see the same data, so the true dimension ordinate is defined for each
    assert {r["prior"] for r in a["rows"]} == {"F", "H"}
    s = fm.ScenarioSpec(10, 1, n=30)
    d1, d2 = cli.dataset_for(9, 0, s, 1), cli.dataset_for(9, 0, s, 1)
    assert np.array_equal(d1.Y, d2.Y)
    assert not np.array_equal(d1.Y, cli.dataset_for(9, 0, s, 0).Y)


def test_reproduce_table_empty_scenarios(tmp_path):
    out = _tiny_study(tmp_path, 1, "empty", [])
    assert out == {"rows": [], "table": []}


def test_failed_unit_is_recorded(monkeypatch):
    def boom(*a, **k):
        raise mcmc.NumericalError("iteration 0: bad")

    monkeypatch.setattr(mcmc, "run_chain", boom)
    cfg = cli.StudyConfig(scenarios=[{"m": 10, "H0": 1, "n": 20}], replicates=2, iters=100, burnin=0)
    rows, table = cli.reproduce_table(cfg)
    assert all(r["status"] == "failed" for r in rows)
    assert table[0]["n_failed"] == 2 and np.isnan(table[0]["mode_median"])
