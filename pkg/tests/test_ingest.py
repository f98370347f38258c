import io

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gammort.errors import CoverageError, DuplicateKeyError, EmptyPanelError, ParseError
from gammort.ingest import (MortalityTable, SynthSpec, build_panel, load_panel, parse_hmd_mx, read_hmd_file,
                            read_panel_csv, synth_panel, write_hmd_file)

HEADER = "XYZ, Death rates (period 1x1)\n\n  Year   Age   Female   Male   Total\n"


def test_parse_plain_line():
    t = parse_hmd_mx(HEADER + "  1961  0  0.03246  0.04136  0.03703\n")
    row = t.data.iloc[0]
    assert (row["year"], row["age"], row["female"], row["male"]) == (1961, 0, 0.03246, 0.04136)
    assert t.country == "XYZ"


def test_parse_open_age_and_missing():
    t = parse_hmd_mx(HEADER + "  1961  110+  0.5  .  0.5\n")
    row = t.data.iloc[0]
    assert row["age"] == 110 and row["female"] == 0.5 and np.isnan(row["male"])


def test_parse_duplicate_key():
    with pytest.raises(DuplicateKeyError):
        parse_hmd_mx(HEADER + "1961 0 0.1 0.1 0.1\n1961 0 0.2 0.2 0.2\n")


def test_parse_malformed_token_reports_line():
    with pytest.raises(ParseError) as info:
        parse_hmd_mx(HEADER + "1961 0 0.1 0.1 0.1\n1961 1 abc 0.1 0.1\n")
    assert info.value.line == 5


def test_parse_missing_header():
    with pytest.raises(ParseError):
        parse_hmd_mx("1961 0 0.1 0.1 0.1\n")


def _table(rates, ages=(0, 1), years=(2000,)):
    rows = [(y, a) for y in years for a in ages]
    data = pd.DataFrame({"year": [r[0] for r in rows], "age": [r[1] for r in rows],
                         "female": rates[: len(rows)], "male": rates[len(rows):]})
    return MortalityTable("AUT", data)


def test_constant_panel():
    panel = build_panel([_table([0.01] * 4)], (2000, 2000), (0, 1))
    assert len(panel) == 4
    assert np.allclose(panel.records["log_rate"], np.log(0.01))
    assert abs(panel.records["log_rate"].iloc[0] - (-4.60517)) < 1e-5


def test_zero_rate_excluded():
    panel = build_panel([_table([0.01, 0.0, 0.01, 0.01])], (2000, 2000), (0, 1))
    assert len(panel) == 3 and panel.excluded == 1
    assert panel.excluded_cells == (("AUT", "female", 1, 2000),)


def test_cohort():
    panel = build_panel([_table([0.01] * 4, ages=(30, 31), years=(1990,))], (1990, 1990), (30, 31))
    r = panel.records
    assert r.loc[(r["age"] == 30) & (r["gender"] == "female"), "cohort"].item() == 1960


def test_empty_panel():
    with pytest.raises(EmptyPanelError):
        build_panel([_table([0.0] * 4)], (2000, 2000), (0, 1))


def test_coverage_error():
    with pytest.raises(CoverageError):
        build_panel([_table([0.01] * 4)], (2000, 2001), (0, 1))


def test_usa_fixture(usa_path):
    table = read_hmd_file(usa_path)
    assert table.country == "USA"
    assert table.years.min() == 1933 and table.years.max() == 2022
    assert table.ages.max() == 110
    panel = load_panel(usa_path.parent, ["USA"], (1961, 2019))
    assert panel.ages.max() == 100
    assert len(panel) + panel.excluded == 2 * 101 * 59


@settings(max_examples=30, deadline=None)
@given(st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 1.0)), min_size=8, max_size=8))
def test_round_trip_counts_and_identities(rates):
    table = _table(rates, ages=(0, 1), years=(2000, 2001))
    positive = sum(r > 0 for r in rates)
    if positive == 0:
        with pytest.raises(EmptyPanelError):
            build_panel([table], (2000, 2001), (0, 1))
        return
    panel = build_panel([table], (2000, 2001), (0, 1))
    assert len(panel) == positive and len(panel) + panel.excluded == 8
    r = panel.records
    assert np.all(np.abs(np.exp(r["log_rate"]) / r["rate"] - 1) < 1e-12)
    assert np.all(r["cohort"] + r["age"] == r["year"])


def test_synth_noiseless_and_deterministic():
    ages, years = np.arange(5), np.arange(2000, 2006)
    a, b, k = -5 + 0.1 * ages, 0.2 * ages, np.linspace(1, -1, 6)
    spec = SynthSpec(ages, years, a, b, k, 0.0)
    p = synth_panel(spec)
    r = p.records
    assert np.allclose(r["log_rate"], a[r["age"]] + b[r["age"]] * k[r["year"] - 2000], atol=1e-14)
    noisy = SynthSpec(ages, years, a, b, k, 0.1)
    assert synth_panel(noisy, 7).records.equals(synth_panel(noisy, 7).records)


def test_synth_zero_loadings_constant_over_years():
    ages, years = np.arange(4), np.arange(2000, 2005)
    p = synth_panel(SynthSpec(ages, years, -3 - ages, np.zeros(4), np.arange(5.0)))
    assert (p.records.groupby(["gender", "age"])["log_rate"].nunique() == 1).all()


def test_write_and_read_back(tmp_path):
    p = synth_panel(SynthSpec(np.arange(3), np.arange(2000, 2003), [-3, -4, -5], [1, 1, 1], [0.1, 0, -0.1]))
    write_hmd_file(p, "SYN", tmp_path / "SYN.Mx_1x1.txt")
    back = load_panel(tmp_path, ["SYN"], (2000, 2002), (0, 2))
    assert np.allclose(back.records["rate"], p.records["rate"], rtol=1e-9)
    p.to_csv(tmp_path / "panel.csv")
    again = read_panel_csv(tmp_path / "panel.csv")
    assert np.allclose(again.records["rate"], p.records["rate"], rtol=1e-9)


def test_stream_input():
    t = parse_hmd_mx(io.StringIO(HEADER + "2000 0 0.1 0.2 0.15\n"), country="ABC")
    assert t.country == "ABC"
