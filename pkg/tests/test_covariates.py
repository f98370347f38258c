import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gammort.covariates import attach_covariates, compute_covariates, compute_kct, compute_kt
from gammort.errors import JoinError, MissingSegmentError, MissingYearError
from gammort.ingest import MortalityPanel, _finish, _make_records


def make_panel(rows, omega=100):
    df = pd.DataFrame(rows, columns=["country", "gender", "age", "year", "y"])
    rec = _make_records(df["country"], df["gender"], df["age"], df["year"], np.exp(df["y"]))
    rec["log_rate"] = df["y"].to_numpy(dtype=float)
    return _finish(rec, omega, 0)


def brute_force(panel: MortalityPanel, split_age):
    """Plain loops over records."""
    sums, counts = {}, {}
    csums, ccounts = {}, {}
    for c, a, t, y in zip(panel.records["country"], panel.records["age"], panel.records["year"],
                          panel.records["log_rate"]):
        sums[t] = sums.get(t, 0.0) + y
        counts[t] = counts.get(t, 0) + 1
        seg = "low" if a <= split_age else "high"
        csums[(c, seg, t)] = csums.get((c, seg, t), 0.0) + y
        ccounts[(c, seg, t)] = ccounts.get((c, seg, t), 0) + 1
    return ({t: sums[t] / counts[t] for t in sums}, {k: csums[k] / ccounts[k] for k in csums})


def test_kt_mean_of_eight():
    rows = [("A", "female" if i < 4 else "male", i % 4, 2000, float(i)) for i in range(8)]
    assert compute_kt(make_panel(rows))[2000] == 3.5


def test_kt_constant_and_symmetric():
    rows = [("A", g, a, t, -3.0) for g in ("female", "male") for a in range(3) for t in (2000, 2001)]
    assert np.all(compute_kt(make_panel(rows)) == -3.0)
    rows = [("A", "female", a, 2000, 1.0) for a in range(3)] + [("A", "male", a, 2000, -1.0) for a in range(3)]
    assert compute_kt(make_panel(rows))[2000] == 0.0


def test_kct_small_panel():
    ys = iter([-1, -2, -3, -4, -5, -6])
    rows = []
    for g in ("female", "male"):
        for a in (0, 1):
            rows.append(("A", g, a, 2000, float(next(ys))))
    rows += [("A", "female", 41, 2000, -5.0), ("A", "male", 41, 2000, -6.0)]
    kct = compute_kct(make_panel(rows), 40)
    assert kct[("A", "low", 2000)] == -2.5
    assert kct[("A", "high", 2000)] == -5.5


def test_kct_piecewise_and_boundaries():
    rows = [("A", g, a, 2000, -5.0 if a <= 40 else -2.0) for g in ("female", "male") for a in range(101)]
    panel = make_panel(rows)
    cov = compute_covariates(panel, 40)
    assert cov.kct[("A", "low", 2000)] == -5.0 and cov.kct[("A", "high", 2000)] == -2.0
    frame = attach_covariates(panel, cov)
    assert frame.loc[frame["age"] == 40, "kct"].eq(-5.0).all()
    assert frame.loc[frame["age"] == 41, "kct"].eq(-2.0).all()


def test_constant_panel_kct_equals_kt():
    rows = [(c, g, a, t, -4.0) for c in "AB" for g in ("female", "male") for a in range(0, 101, 20)
            for t in (2000, 2001)]
    panel = make_panel(rows)
    frame = attach_covariates(panel, compute_covariates(panel))
    assert np.all(frame["kct"] == frame["kt"])


def test_missing_year_and_segment():
    rows = [("A", "female", a, t, -1.0) for a in (0, 50) for t in (2000, 2002)]
    with pytest.raises(MissingYearError):
        compute_kt(make_panel(rows))
    rows = [("A", "female", 0, 2000, -1.0), ("A", "female", 0, 2001, -1.0), ("A", "female", 50, 2000, -1.0)]
    with pytest.raises(MissingSegmentError):
        compute_kct(make_panel(rows))


def test_attach_uncovered_year():
    rows = [("A", "female", a, t, -1.0) for a in (0, 50) for t in (2000, 2001)]
    panel = make_panel(rows)
    cov = compute_covariates(panel.subset(panel.records["year"] == 2000))
    with pytest.raises(JoinError):
        attach_covariates(panel, cov)


@st.composite
def random_panels(draw):
    n_c = draw(st.integers(1, 3))
    omega = draw(st.integers(3, 12))
    split = draw(st.integers(1, omega - 1))
    years = range(2000, 2000 + draw(st.integers(1, 4)))
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    rows = [(f"C{c}", g, a, t, float(rng.normal(-5, 2)))
            for c in range(n_c) for g in ("female", "male") for a in range(omega + 1) for t in years]
    return make_panel(rows, omega), split, omega


@settings(max_examples=50, deadline=None)
@given(random_panels())
def test_covariates_match_loops(args):
    panel, split, omega = args
    kt_ref, kct_ref = brute_force(panel, split)
    kt, kct = compute_kt(panel), compute_kct(panel, split)
    assert max(abs(kt[t] - v) for t, v in kt_ref.items()) < 1e-12
    assert max(abs(kct[k] - v) for k, v in kct_ref.items()) < 1e-12
    # complete panel: weighted recombination reproduces kt
    for t in kt.index:
        parts = [((split + 1) * kct[(c, "low", t)] + (omega - split) * kct[(c, "high", t)]) / (omega + 1)
                 for c in panel.countries]
        assert abs(np.mean(parts) - kt[t]) < 1e-12
    shuffled = MortalityPanel(panel.records.sample(frac=1.0, random_state=1), panel.omega)
    assert np.allclose(compute_kt(shuffled), kt, rtol=0, atol=1e-12)
