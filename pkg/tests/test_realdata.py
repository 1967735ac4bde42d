"""Regression against reference results for Piedmont Triad census tracts (diagnosed diabetes).

Skipped unless ``FOODACCESS_PIEDMONT_DIR`` names a directory holding
``neighborhoods.csv`` (cases = diagnosed diabetes), ``proximity.csv`` and
``adjacency.csv`` in the package's input formats. Reference values are
reported to two decimals, so comparisons are made after rounding.
"""

import os

import numpy as np
import pytest

from foodaccess.analyze import TwoPhaseDataset, default_spec, naive_design, run_naive
from foodaccess.regress import wald_interval
from foodaccess.spatial import AdjacencyGraph, morans_i, residuals
from foodaccess.tables import read_neighborhoods, read_proximity

DATA = os.environ.get("FOODACCESS_PIEDMONT_DIR")
pytestmark = pytest.mark.skipif(not DATA, reason="FOODACCESS_PIEDMONT_DIR not set")


@pytest.fixture(scope="module")
def diabetes():
    data = TwoPhaseDataset.from_records(read_neighborhoods(os.path.join(DATA, "neighborhoods.csv")),
                                        read_proximity(os.path.join(DATA, "proximity.csv")))
    spec = default_spec(data)
    return data, spec, run_naive(data, spec)


@pytest.mark.parametrize("term,pr,lo,hi", [
    ("x", 0.99, 0.96, 1.01),
    ("metro", 0.82, 0.74, 0.91),
    ("x:metro", 1.01, 0.98, 1.04),
])
def test_naive_prevalence_ratios(diabetes, term, pr, lo, hi):
    _, _, fit = diabetes
    ci = wald_interval(fit, term, exponentiate=True)
    assert round(float(np.exp(fit.estimate(term))), 2) == pr
    assert (round(ci[0], 2), round(ci[1], 2)) == (lo, hi)


def test_moran_on_naive_residuals(diabetes):
    data, spec, fit = diabetes
    graph = AdjacencyGraph.from_csv(os.path.join(DATA, "adjacency.csv"), data.ids)
    res = morans_i(residuals(naive_design(data, spec), fit), graph)
    assert round(res.I, 2) == 0.06
    assert round(res.p_value, 2) == 0.02
