import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rank1_panel
from gammort.baselines import (lee_carter_fit, lee_carter_forecast, lee_carter_matrix, lee_carter_panel,
                               li_lee_forecast, li_lee_matrices, li_lee_panel, log_rate_matrix)
from gammort.errors import DegenerateError
from gammort.ingest import SynthSpec, synth_panel


def test_lee_carter_toy():
    fit = lee_carter_matrix([[0, 1, 2], [0, 2, 4]])
    # centered rows (-1,0,1) and (-2,0,2): b = (1,2)/3, kappa = (-3,0,3)
    assert np.allclose(fit.a, [1, 2], atol=1e-14)
    assert np.allclose(fit.b, [1 / 3, 2 / 3], atol=1e-12)
    assert np.allclose(fit.kappa, [-3, 0, 3], atol=1e-12)
    assert abs(fit.b.sum() - 1) < 1e-12 and abs(fit.kappa.sum()) < 1e-12
    assert np.max(np.abs(fit.reconstruct() - [[0, 1, 2], [0, 2, 4]])) < 1e-10


def test_lee_carter_rank1_recovery():
    panel = rank1_panel(ages=range(0, 30), years=range(1970, 2010))
    fit = lee_carter_fit(panel)
    _, _, Y, n_imp = log_rate_matrix(panel, "SYN", "female")
    assert n_imp == 0
    assert np.max(np.abs(fit.reconstruct() - Y)) < 1e-8


def test_lee_carter_constant_matrix_is_degenerate():
    with pytest.raises(DegenerateError):
        lee_carter_matrix(np.full((3, 4), -2.0))


def test_lee_carter_forecast_rules():
    ages, years = np.arange(3), np.arange(2000, 2010)
    b = np.array([0.0, 0.4, 0.6])
    k = np.linspace(4.5, -4.5, 10)
    Y = np.array([-3.0, -4, -5])[:, None] + b[:, None] * k[None, :]
    fit = lee_carter_matrix(Y, ages, years)
    fc = lee_carter_forecast(fit, 3)
    assert np.allclose(fc.loc[fc["age"] == 0, "log_rate_hat"], -3.0, atol=1e-12)
    # a linear kappa continues on its line
    expect = -4 + 0.4 * (4.5 - np.arange(10, 13))
    assert np.allclose(fc.loc[fc["age"] == 1, "log_rate_hat"], expect, atol=1e-10)


def test_zero_drift_equals_last_reconstruction():
    ages, years = np.arange(3), np.arange(2000, 2005)
    k = np.array([1.0, -1.0, 0.5, -0.5, 1.0])
    Y = np.array([-3.0, -4, -5])[:, None] + np.array([0.2, 0.3, 0.5])[:, None] * k[None, :]
    fit = lee_carter_matrix(Y, ages, years)
    fc = lee_carter_forecast(fit, 1)
    assert np.allclose(fc["log_rate_hat"], fit.reconstruct()[:, -1], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10))
def test_lc_matches_dense_svd_and_normalization(seed, c):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(6, 9))
    fit = lee_carter_matrix(Y)
    C = Y - Y.mean(axis=1, keepdims=True)
    U, s, Vt = np.linalg.svd(C)
    assert np.max(np.abs(fit.reconstruct() - (Y.mean(axis=1, keepdims=True) + s[0] * np.outer(U[:, 0], Vt[0])))) < 1e-8
    assert np.sum((Y - fit.reconstruct()) ** 2) <= np.sum(C ** 2) + 1e-12
    again = lee_carter_matrix(fit.a[:, None] + np.outer(c * fit.b, fit.kappa / c))
    assert np.allclose(again.b, fit.b, atol=1e-10) and np.allclose(again.kappa, fit.kappa, atol=1e-8)


def planted(n_ages=8, n_years=15, opposite=False):
    rng = np.random.default_rng(11)
    B = rng.uniform(0.5, 1.5, n_ages)
    B /= B.sum()
    K = np.linspace(5, -5, n_years) + 0.3 * np.sin(np.arange(n_years))
    K -= K.mean()
    a = {p: rng.uniform(-7, -2, n_ages) for p in ("P1", "P2")}
    mats = {p: a[p][:, None] + np.outer(B, K) for p in a}
    if opposite:
        b = rng.uniform(0.5, 1.5, n_ages)
        b /= b.sum()
        k = np.cos(np.arange(n_years))
        k -= k.mean()
        mats["P1"] = mats["P1"] + np.outer(b, k)
        mats["P2"] = mats["P2"] - np.outer(b, k)
    return B, K, mats


def test_li_lee_recovers_planted_common_factor():
    B, K, mats = planted()
    fit = li_lee_matrices(mats)
    assert np.max(np.abs(fit.B - B)) < 1e-8 and np.max(np.abs(fit.K - K)) < 1e-8
    assert set(fit.degenerate) == {"P1", "P2"}
    assert np.allclose(fit.b["P1"], 1 / 8) and np.all(fit.k["P1"] == 0)
    for p in mats:
        assert np.max(np.abs(fit.reconstruct(p) - mats[p])) < 1e-8
    fc = li_lee_forecast(fit, 2)
    drift = (K[-1] - K[0]) / (K.size - 1)
    K_next = K[-1] + drift * np.arange(1, 3)
    for p in mats:
        got = fc.loc[fc["population"] == p].sort_values(["age", "year"])["log_rate_hat"].to_numpy()
        common = (fit.a[p][:, None] + np.outer(B, K_next)).ravel()
        assert np.max(np.abs(got - common)) < 1e-8


def test_li_lee_opposite_residual_factors():
    B, K, mats = planted(opposite=True)
    fit = li_lee_matrices(mats)
    assert np.max(np.abs(fit.B - B)) < 1e-8 and np.max(np.abs(fit.K - K)) < 1e-8
    assert np.allclose(fit.b["P1"], fit.b["P2"], atol=1e-8)
    assert np.allclose(fit.k["P1"], -fit.k["P2"], atol=1e-8)


def test_li_lee_identical_populations_degenerate():
    B, K, mats = planted()
    fit = li_lee_matrices({"X": mats["P1"], "Y": mats["P1"].copy()})
    assert set(fit.degenerate) == {"X", "Y"}


def test_li_lee_zero_drift_horizon_one():
    mats = {"P1": np.array([[-3.0, -3.2, -3.0], [-5.0, -5.4, -5.0]]),
            "P2": np.array([[-2.0, -2.1, -2.0], [-4.0, -4.3, -4.0]])}
    fit = li_lee_matrices(mats, years=np.array([2000, 2001, 2002]))
    fc = li_lee_forecast(fit, 1)
    for p in mats:
        got = fc.loc[fc["population"] == p, "log_rate_hat"].to_numpy()
        assert np.allclose(got, fit.reconstruct(p)[:, -1], atol=1e-12)


def test_panel_wrappers_and_imputation():
    spec = SynthSpec(np.arange(4), np.arange(2000, 2010), [-5, -4, -3, -2], [0.1, 0.2, 0.3, 0.4],
                     np.linspace(1, -1, 10), 0.01, ("AAA", "BBB"))
    panel = synth_panel(spec, 1)
    r = panel.records
    holed = panel.subset(~((r["country"] == "AAA") & (r["age"] == 2) & (r["year"] == 2004)))
    _, _, Y, n_imp = log_rate_matrix(holed, "AAA", "female")
    assert n_imp == 1 and np.isfinite(Y).all()
    fitted, fc = li_lee_panel(holed, 5)
    assert set(fc["year"]) == set(range(2010, 2015))
    assert len(fc) == 2 * 2 * 4 * 5 and len(fitted) == 2 * 2 * 4 * 10
    fitted, fc = lee_carter_panel(holed, 5)
    assert list(fc.columns) == ["country", "gender", "age", "year", "log_rate_hat", "rate_hat"]
