from __future__ import annotations

import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtab.errors import SchemaError
from fedtab.fixtures import known_mixture_table
from fedtab.metrics import column_jsd, column_wd, jsd, similarity_report
from fedtab.table import CONTINUOUS, DISCRETE, Column, Schema, Table


def mp_jsd(p, q):
    """Base-2 JSD evaluated term by term in high precision."""
    m = [(mpmath.mpf(a) + b) / 2 for a, b in zip(p, q)]
    kl = lambda a: sum(mpmath.mpf(x) * mpmath.log(mpmath.mpf(x) / y, 2)
                       for x, y in zip(a, m) if x > 0)
    return float((kl(p) + kl(q)) / 2)


def test_jsd_closed_form_example():
    assert jsd([0.5, 0.5], [1.0, 0.0]) == pytest.approx(mp_jsd([0.5, 0.5], [1.0, 0.0]), rel=1e-12)
    assert jsd([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.3113, abs=1e-4)


def test_jsd_identical_and_disjoint():
    assert column_jsd(["a", "b", "b"], ["b", "a", "b"]) == 0.0
    assert column_jsd(["a", "a"], ["z", "y"]) == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=2, max_size=6), st.integers(0, 2**32 - 1))
def test_jsd_symmetric_bounded_and_matches_reference(counts, seed):
    p = np.array(counts, dtype=float) + 1e-3
    p /= p.sum()
    q = np.random.default_rng(seed).dirichlet(np.ones(len(p)))
    d = jsd(p, q)
    assert 0.0 <= d <= 1.0
    assert d == pytest.approx(jsd(q, p), abs=1e-15)
    assert d == pytest.approx(mp_jsd(p, q), abs=1e-12)
    assert jsd(p, p) == 0.0


def test_wd_identical_is_zero():
    x = np.random.default_rng(0).normal(size=100)
    assert column_wd(x, x.copy()) == 0.0


def test_wd_shift_is_scaled_by_real_range():
    # W1 of a pure shift equals the shift; scaling by the real range [0, 1] leaves 0.1
    real = np.linspace(0.0, 1.0, 1001)
    assert column_wd(real, real + 0.1) == pytest.approx(0.1, abs=1e-12)
    # on a real range of 2 the same shift scores half as much
    assert column_wd(2 * real, 2 * real + 0.1) == pytest.approx(0.05, abs=1e-12)


def test_wd_degenerate_range_is_zero_and_empty_is_error():
    assert column_wd(np.full(5, 3.0), np.arange(5.0)) == 0.0
    with pytest.raises(ValueError):
        column_wd(np.array([]), np.array([1.0]))
    with pytest.raises(ValueError):
        column_jsd([], ["a"])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_wd_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    real, a, b = rng.normal(size=(3, 40))
    assert column_wd(real, b) <= column_wd(real, a) + _wd_on(real, a, b) + 1e-12


def _wd_on(real, a, b):
    lo, hi = real.min(), real.max()
    return float(np.mean(np.abs(np.sort((a - lo) / (hi - lo)) - np.sort((b - lo) / (hi - lo)))))


def test_self_report_is_zero_and_averages_recompute():
    t = known_mixture_table(500)
    rep = similarity_report(t, t)
    assert rep.avg_jsd == 0.0 and rep.avg_wd == 0.0
    other = known_mixture_table(500, 1)
    rep = similarity_report(t, other)
    wd = [c.score for c in rep.per_column if c.kind == CONTINUOUS]
    js = [c.score for c in rep.per_column if c.kind == DISCRETE]
    assert rep.avg_wd == np.mean(wd) and rep.avg_jsd == np.mean(js)
    assert len(wd) == 2 and len(js) == 2


def test_report_without_discrete_features():
    # the label is the only discrete column here, so avg_jsd covers it alone;
    # with no discrete columns at all the average is absent
    schema = Schema([Column("x", CONTINUOUS), Column("y", DISCRETE, is_label=True)])
    t = Table(schema, {"x": np.arange(10.0), "y": ["a"] * 10})
    assert similarity_report(t, t).avg_jsd == 0.0
    from fedtab.metrics import ColumnScore, SimilarityReport
    rep = SimilarityReport((ColumnScore("x", CONTINUOUS, 0.1),))
    assert rep.avg_jsd is None and rep.to_dict()["avg_jsd"] is None


def test_unequal_sizes_are_subsampled_with_a_seed():
    real, synth = known_mixture_table(300), known_mixture_table(1000, 5)
    a = similarity_report(real, synth, seed=1)
    b = similarity_report(real, synth, seed=1)
    assert a == b
    assert a != similarity_report(real, synth, seed=2)


def test_report_serialization_layouts():
    rep = similarity_report(known_mixture_table(200), known_mixture_table(200, 1))
    obj = json.loads(rep.to_json())
    assert set(obj) == {"avg_jsd", "avg_wd", "per_column"}
    lines = rep.to_csv().splitlines()
    assert lines[0] == "column,kind,score" and len(lines) == 5


def test_schema_mismatch_is_an_error():
    t = known_mixture_table(20)
    other = Table(Schema([Column("y", DISCRETE, is_label=True)]), {"y": ["a"]})
    with pytest.raises(SchemaError):
        similarity_report(t, other)
