from importlib import resources

import numpy as np

from diffuse import ingest, synthetic


def test_shipped_fixture_regenerates_byte_for_byte(tmp_path):
    path = synthetic.write_fixture(tmp_path / "regen.csv")
    shipped = resources.files("diffuse").joinpath("data", synthetic.FIXTURE_FILE).read_bytes()
    assert path.read_bytes() == shipped


def test_fixture_shape_and_codes():
    ds = synthetic.load_fixture()
    assert len(ds.names) == 128 and len(ds.dates) == 320
    assert {ds.tcode[n] for n in ds.names} == {1, 2, 5}
    assert not np.isnan(ds.values).any()


def test_transforms_recover_stationary_panel():
    spec = synthetic.SyntheticSpec(n_series=8, n_months=50, seed=7)
    z, f, lam = synthetic.stationary_panel(spec)
    ds, bad = ingest.transform_dataset(synthetic.generate(spec))
    assert bad == {}
    for j, name in enumerate(ds.names):
        out = ds.values[:, j]
        code = ds.tcode[name]
        scale = synthetic.LOG_SCALE if code == 5 else 1.0
        start = 0 if code == 1 else 1
        np.testing.assert_allclose(out[start:], scale * z[start:, j], atol=1e-9)
    assert f.shape == (50, 2) and lam.shape == (8, 2)


def test_spillover_zero_gives_white_idiosyncratic_noise():
    spec = synthetic.SyntheticSpec(n_series=40, n_months=3000, alpha=0.5, n_factors=1, spillover=0.0, seed=3)
    z, f, lam = synthetic.stationary_panel(spec)
    e = z - f @ lam.T
    lag1 = np.mean([np.corrcoef(e[1:, i], e[:-1, i])[0, 1] for i in range(40)])
    assert abs(lag1) < 0.02
    spec = synthetic.SyntheticSpec(n_series=40, n_months=3000, alpha=0.5, n_factors=1, spillover=0.8, seed=3)
    z, f, lam = synthetic.stationary_panel(spec)
    e = z - f @ lam.T
    cross = np.corrcoef(e[1:].T, e[:-1].T)[:40, 40:]
    assert np.abs(cross[~np.eye(40, dtype=bool)]).mean() > 0.05
