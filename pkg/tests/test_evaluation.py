import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gammort.errors import AlignmentError, JoinError, SplitError
from gammort.evaluation import compare, model_rows, mse, split
from gammort.ingest import SynthSpec, synth_panel


def test_mse_examples():
    assert mse([1.0, 2.0], [0.0, 0.0]) == 2.5
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse(np.log([1.0, 2.0]), np.log([0.0 + 1e-300, 1e-300]), scale="rate") == pytest.approx(2.5)
    with pytest.raises(AlignmentError):
        mse([1.0], [1.0, 2.0])
    with pytest.raises(AlignmentError):
        mse(pd.Series([1.0], index=["a"]), pd.Series([1.0], index=["b"]))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=30), st.integers(0, 1000))
def test_mse_permutation_invariant(pairs, seed):
    a, p = map(np.array, zip(*pairs))
    perm = np.random.default_rng(seed).permutation(len(a))
    assert mse(a[perm], p[perm]) == pytest.approx(mse(a, p), rel=1e-12, abs=1e-15)


def panel(years=range(1961, 2020)):
    spec = SynthSpec(np.arange(3), np.asarray(list(years)), [-5, -4, -3], [0.1, 0.2, 0.3],
                     np.linspace(1, -1, len(years)), 0.01, ("AUT", "CZE"))
    return synth_panel(spec, 2)


def test_split_protocols():
    p = panel()
    train, test = split(p, 2010)
    assert train.year_range == (1961, 2010) and test.year_range == (2011, 2019)
    assert len(train) + len(test) == len(p)
    train, test = split(p, 1999)
    assert test.year_range == (2000, 2019)
    with pytest.raises(SplitError):
        split(p, 2019)


def predictions(records, shift):
    out = records[["country", "gender", "age", "year"]].copy()
    out["log_rate_hat"] = records["log_rate"] + shift
    return out


def test_compare_ratios():
    train, test = split(panel(), 2010)
    tr, te = train.records, test.records
    gamm = model_rows("GAMM", tr, predictions(tr, 0.01), te, predictions(te, 0.02))
    same = model_rows("LL", tr, predictions(tr, 0.01), te, predictions(te, 0.02))
    rep = compare([gamm, same])
    assert np.allclose(rep.ratios["ratio"], 1.0)
    assert len(rep.ratios[rep.ratios["scale"] == "rate"]) == 4
    worse = model_rows("LL", tr, predictions(tr, 0.01), te, predictions(te, 0.06))
    rep = compare([gamm, worse])
    assert rep.ratio("AUT", "female", "log") == pytest.approx(9.0)
    # ratios recompute exactly from the stored rows
    rows = rep.rows.set_index(["country", "gender", "model", "scale"])["test_mse"]
    for _, r in rep.ratios.iterrows():
        assert r["ratio"] == rows[(r["country"], r["gender"], "LL", r["scale"])] / \
            rows[(r["country"], r["gender"], "GAMM", r["scale"])]
    text = rep.to_text("rate")
    assert "LL test set/GAMM test set" in text and "AUT-F" in text


def test_single_population_lc_schema():
    train, test = split(panel(range(1980, 2020)), 1999)
    tr = train.records[(train.records["country"] == "AUT") & (train.records["gender"] == "male")]
    te = test.records[(test.records["country"] == "AUT") & (test.records["gender"] == "male")]
    rep = compare([model_rows("GAMM", tr, predictions(tr, 0), te, predictions(te, 0.1)),
                   model_rows("LC", tr, predictions(tr, 0), te, predictions(te, 0.2))])
    assert list(rep.ratios["baseline"].unique()) == ["LC"]
    assert len(rep.ratios) == 2


def test_join_and_alignment_errors():
    train, test = split(panel(), 2010)
    tr, te = train.records, test.records
    gamm = model_rows("GAMM", tr, predictions(tr, 0), te, predictions(te, 0))
    only_aut = tr[tr["country"] == "AUT"]
    ll = model_rows("LL", only_aut, predictions(only_aut, 0), te[te["country"] == "AUT"],
                    predictions(te[te["country"] == "AUT"], 0))
    with pytest.raises(JoinError):
        compare([gamm, ll])
    with pytest.raises(AlignmentError):
        model_rows("LL", tr, predictions(tr, 0), te, predictions(te.iloc[1:], 0))
