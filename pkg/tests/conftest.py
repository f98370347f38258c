from pathlib import Path

import numpy as np
import pytest

from gammort.covariates import attach_covariates, compute_covariates
from gammort.ingest import SynthSpec, demo_synth_spec, synth_panel

DATA = Path(__file__).parent / "data"


def rank1_panel(ages=range(0, 11), years=range(1990, 2020), countries=("SYN",), genders=("female",),
                noise=0.0, seed=0):
    """log m = a_x + b_x k_t with k_t linear in t."""
    ages = np.asarray(list(ages))
    years = np.asarray(list(years))
    a = -8.0 + 0.07 * ages
    b = 1.0 + 0.02 * ages
    k = -0.02 * (years - years[0])
    return synth_panel(SynthSpec(ages, years, a, b, k, noise, countries, genders), seed)


@pytest.fixture(scope="session")
def small_multi_panel():
    """Two countries, both genders, ages 0..20, 1990-2019 with noise."""
    return synth_panel(demo_synth_spec(("AAA", "BBB"), range(1990, 2020), 20, 0.03), seed=3)


@pytest.fixture(scope="session")
def small_multi_frame(small_multi_panel):
    cov = compute_covariates(small_multi_panel, split_age=10)
    return attach_covariates(small_multi_panel, cov)


@pytest.fixture(scope="session")
def small_multi_fit(small_multi_frame):
    from gammort.gam import fit_gam, multi_population_spec
    return fit_gam(small_multi_frame, multi_population_spec(k=6, k_fs=4))


@pytest.fixture(scope="session")
def usa_path():
    return DATA / "USA.Mx_1x1.txt"


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
