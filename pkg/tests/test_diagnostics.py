import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from gammort.diagnostics import acf, diagnose, heteroskedasticity, panel_acf, qq_points
from gammort.errors import UndefinedACFError


def acf_loops(r, max_lag):
    """Textbook estimator with explicit loops."""
    n = len(r)
    m = sum(r) / n
    c0 = sum((v - m) ** 2 for v in r) / n
    return [sum((r[t] - m) * (r[t + h] - m) for t in range(n - h)) / n / c0 for h in range(max_lag + 1)]


def test_alternating_series():
    r = np.tile([1.0, -1.0], 20)
    assert acf(r, 5)[1] == pytest.approx(-1.0 * 39 / 40)
    # the finite-sample factor (n-1)/n vanishes for a long series
    assert acf(np.tile([1.0, -1.0], 5000), 1)[1] == pytest.approx(-1.0, abs=1e-3)


def test_constant_series_is_undefined():
    with pytest.raises(UndefinedACFError):
        acf(np.full(30, 2.0), 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(21, 60))
def test_acf_matches_double_loop(seed, n):
    r = np.random.default_rng(seed).normal(size=n)
    assert np.max(np.abs(acf(r, 20) - acf_loops(list(r), 20))) < 1e-12


def test_acf_gaps_use_present_pairs():
    r = np.array([1.0, np.nan, -1.0, 2.0, np.nan, 0.5, -0.3, 1.2])
    out = acf(r, 2)
    x = r - np.nanmean(r)
    lag1 = np.nansum(x[1:] * x[:-1]) / (np.sum(~np.isnan(x[1:] * x[:-1])) + 1)
    lag0 = np.nansum(x * x) / np.sum(~np.isnan(x))
    assert out[1] == pytest.approx(lag1 / lag0, abs=1e-14)


def test_qq_hand_standardization():
    q = qq_points([-1.0, 0.0, 1.0])
    assert np.allclose(q["sample"], [-1.2247448714, 0.0, 1.2247448714], atol=1e-10)


def test_qq_self_consistency():
    n = 500
    z = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    z = (z - z.mean()) / z.std()
    q = qq_points(np.random.default_rng(0).permutation(z))
    assert np.max(np.abs(q["sample"] - z)) < 1e-12
    sym = qq_points(np.array([-3.0, -1.0, 0.0, 1.0, 3.0]))
    assert np.allclose(sym["sample"], -sym["sample"][::-1], atol=1e-15)
    assert np.allclose(sym["theoretical"], -sym["theoretical"][::-1], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=50))
def test_standardized_mean_zero(values):
    r = np.asarray(values)
    if r.std() <= 1e-9 * max(1.0, np.abs(r).max()):
        return
    assert abs(qq_points(r)["sample"].mean()) < 1e-12


def test_panel_acf_equal_weights():
    rng = np.random.default_rng(1)
    rows = []
    series = {}
    for age in range(3):
        r = rng.normal(size=25)
        series[age] = r
        rows += [("A", "female", age, 2000 + t, r[t]) for t in range(25)]
    table = pd.DataFrame(rows, columns=["country", "gender", "age", "year", "residual"])
    out = panel_acf(table, 5)
    expected = np.mean([acf(series[a], 5) for a in range(3)], axis=0)
    assert np.allclose(out["coef"], expected, atol=1e-14)
    assert out.attrs["n_series"] == 3


def test_diagnose_on_fit(small_multi_fit, small_multi_frame, tmp_path):
    rep = diagnose(small_multi_fit, small_multi_frame, 10)
    assert abs(rep.residuals.mean()) < 1e-8
    assert -1 < rep.lag1 < 1
    paths = rep.write(tmp_path)
    assert all(p.exists() for p in paths)
    spread = heteroskedasticity(rep.table, 5)
    assert spread["n"].sum() == len(rep.table)
