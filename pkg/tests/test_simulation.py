import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffuse import simulation as sim
from diffuse.exceptions import ParameterError
from diffuse.forecasters import pca_forecast


def test_config_defaults_and_validation():
    cfg = sim.DgpConfig(n=10, t=20)
    assert cfg.gamma == (1.0, 1.0) and cfg.noise_var == 2.0 and cfg.r == 2
    assert sim.DgpConfig(n=10, t=20, r=3).noise_var == 3.0
    for bad in (dict(alpha=0.0), dict(alpha=1.2), dict(rho=1.0), dict(gamma=(1.0,)), dict(reps=0), dict(master_seed=-1), dict(noise_var=-1.0)):
        with pytest.raises(ParameterError):
            sim.DgpConfig(n=10, t=20, **bad)


def test_panel_layout_and_determinism():
    cfg = sim.DgpConfig(n=8, t=30, h=2, master_seed=4)
    ts, truth = sim.simulate_panel(cfg, 3)
    f, lam, e, eps = sim.simulate_components(cfg, 3)
    x = f @ lam.T + e
    np.testing.assert_array_equal(ts.x, x[:29])
    np.testing.assert_array_equal(ts.x_new, x[30])
    np.testing.assert_allclose(ts.y, f[:29].sum(axis=1) + eps[2:])
    assert truth == pytest.approx(f[30].sum())
    ts2, _ = sim.simulate_panel(cfg, 3)
    np.testing.assert_array_equal(ts.x, ts2.x)
    ts3, _ = sim.simulate_panel(cfg, 4)
    assert not np.array_equal(ts.x, ts3.x)


def test_idiosyncratic_variance_and_loadings_scale():
    cfg = sim.DgpConfig(n=200, t=400, alpha=1.0)
    f, lam, e, eps = sim.simulate_components(cfg, 0)
    assert e.var() == pytest.approx(2.0, rel=0.02)
    assert eps.var() == pytest.approx(2.0, rel=0.15)
    strong = sim.DgpConfig(n=5000, t=5, alpha=1.0)
    _, lam_s, _, _ = sim.simulate_components(strong, 0)
    assert lam_s.var() == pytest.approx(1.0, rel=0.05)
    weak = sim.DgpConfig(n=5000, t=5, alpha=0.5)
    _, lam_w, _, _ = sim.simulate_components(weak, 0)
    assert lam_w.var() == pytest.approx(5000**0.5 / 5000, rel=0.05)


def test_ar1_noise_autocorrelation_and_variance():
    cfg = sim.DgpConfig(n=50, t=2000, rho=0.7, noise_var=1.0)
    _, _, e, _ = sim.simulate_components(cfg, 0)
    lag1 = np.mean([np.corrcoef(e[1:, i], e[:-1, i])[0, 1] for i in range(50)])
    assert lag1 == pytest.approx(0.7, abs=0.02)
    assert e.var() == pytest.approx(1.0, rel=0.05)


def test_noiseless_pca_forecast_is_exact():
    cfg = sim.DgpConfig(n=30, t=40, noise_var=0.0, reps=3)
    for rep in range(3):
        ts, truth = sim.simulate_panel(cfg, rep)
        assert abs(pca_forecast(ts, 2) - truth) < 1e-8
    res = sim.run_monte_carlo(cfg, methods=("pca",))
    assert res.msfe("pca") < 1e-16


def test_expost_tune_and_ties():
    errs = np.array([[3.0, 1.0, 2.0], [3.0, 1.0, 2.0]])
    assert sim.expost_tune([10, 20, 30], errs) == 20
    assert sim.expost_tune([10, 20, 30], np.array([[1.0, 1.0, 1.0]])) == 10
    assert sim.expost_tune([30, 20, 10], np.array([[1.0, 1.0, 1.0]])) == 10
    assert sim.pca_k_tune(3, np.array([[2.0, 1.0, 1.0]])) == 2
    with pytest.raises(ParameterError):
        sim.expost_tune([], np.empty((1, 0)))
    with pytest.raises(ParameterError):
        sim.expost_tune([1, 2], np.ones((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=8), st.integers(1, 5))
def test_expost_tune_is_minimiser(vals, reps):
    errs = np.tile(np.asarray(vals), (reps, 1))
    grid = list(range(len(vals)))
    best = sim.expost_tune(grid, errs)
    assert errs.mean(axis=0)[best] == errs.mean(axis=0).min()
    assert best == int(np.argmin(errs.mean(axis=0)))


def test_default_grids():
    g = sim.Grids().resolve(sim.DgpConfig(n=100, t=100))
    assert len(g.ridge_k) == 40 and g.ridge_k[0] == pytest.approx(1e-2) and g.ridge_k[-1] == pytest.approx(1e6)
    assert g.rp_k == tuple(range(1, 61)) and g.pca_r == g.rp_k
    small = sim.Grids().resolve(sim.DgpConfig(n=5, t=20))
    assert small.rp_k == (1, 2, 3, 4, 5)
    with pytest.raises(ParameterError):
        sim.Grids(rp_k=(2, 1)).resolve(sim.DgpConfig(n=5, t=20))


def test_run_monte_carlo_summary_matches_errors():
    cfg = sim.DgpConfig(n=20, t=30, alpha=0.75, reps=6, master_seed=2)
    grids = sim.Grids(ridge_k=(0.1, 1.0, 10.0), rp_k=(1, 2, 3), pca_r=(1, 2, 3, 4), rp_draws=5)
    res = sim.run_monte_carlo(cfg, grids=grids, keep_errors=True)
    for name, mr in res.methods.items():
        np.testing.assert_allclose(mr.msfe_curve, mr.errors.mean(axis=0))
        np.testing.assert_allclose(mr.se_curve, mr.errors.std(axis=0, ddof=1) / np.sqrt(6))
        assert mr.msfe == mr.msfe_curve.min()
    # Each replication can be rebuilt on its own.
    one = sim.rep_errors(cfg, 4, ("ridge",), grids.resolve(cfg))
    np.testing.assert_array_equal(one["ridge"], res.methods["ridge"].errors[4])


def test_threads_do_not_change_results():
    cfg = sim.DgpConfig(n=15, t=25, reps=4, master_seed=9)
    grids = sim.Grids(ridge_k=(0.5, 5.0), rp_k=(1, 2), pca_r=(1, 2), rp_draws=4)
    a = sim.results_to_csv([sim.run_monte_carlo(cfg, grids=grids, threads=1)])
    b = sim.results_to_csv([sim.run_monte_carlo(cfg, grids=grids, threads=2)])
    assert a == b


def test_failing_replication_aborts(monkeypatch):
    cfg = sim.DgpConfig(n=10, t=20, reps=3)
    real = sim.rep_errors

    def flaky(cfg_, rep, methods, grids):
        if rep == 1:
            raise FloatingPointError("boom")
        return real(cfg_, rep, methods, grids)

    monkeypatch.setattr(sim, "rep_errors", flaky)
    with pytest.raises(sim.RepFailure) as info:
        sim.run_monte_carlo(cfg, methods=("pca",))
    assert info.value.rep == 1


def test_csv_layout():
    cfg = sim.DgpConfig(n=10, t=20, reps=2)
    grids = sim.Grids(ridge_k=(0.5, 5.0), rp_k=(1,), pca_r=(1, 2), rp_draws=3)
    res = sim.run_monte_carlo(cfg, methods=("pca", "ridge"), grids=grids)
    summary, grid = sim.results_to_csv([res])
    rows = list(csv.DictReader(io.StringIO(summary)))
    assert [r["method"] for r in rows] == ["pca", "ridge"]
    assert float(rows[1]["msfe"]) == res.msfe("ridge")
    grid_rows = list(csv.DictReader(io.StringIO(grid)))
    assert len(grid_rows) == 1 + 2
    assert sum(int(r["is_best"]) for r in grid_rows if r["method"] == "ridge") == 1
    doc = sim.manifest([res])
    assert doc["cells"][0]["cfg"]["n"] == 10


def test_rate_scan_relative_msfe():
    cfgs = [sim.DgpConfig(n=n, t=20, reps=3) for n in (10, 20)]
    rows = sim.rate_scan(cfgs, methods=("ridge",), grids=sim.Grids(ridge_k=(1.0,)))
    assert [r["n"] for r in rows] == [10, 20]
    for r in rows:
        assert r["relative"] == pytest.approx(r["result"].msfe("ridge") / r["result"].msfe("pca"))
