from __future__ import annotations

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtab.errors import ConfigError, DecodingError, EncodingError
from fedtab.fixtures import clinical_schema, clinical_table, known_mixture_table
from fedtab.gmm import fit_federated_gmm
from fedtab.table import Table
from fedtab.transforms import (ARGMAX, SAMPLE, IcdmCodec, MdtCodec, build_icdm, build_layout,
                               category_counts, decode_matrix, encode_table, icdm_decode,
                               icdm_encode, inverse_normal_cdf, mdt_decode, mdt_encode)

LAM = 1e-4


def mp_ndtri(p):
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(p) - 1))


@pytest.mark.parametrize("p", [1e-4, 1e-3, 0.025, 0.2, 0.5, 0.7, 0.975, 0.999, 1 - 1e-4])
def test_inverse_normal_cdf_matches_high_precision(p):
    expected = mp_ndtri(p)
    got = float(inverse_normal_cdf(p))
    assert got == pytest.approx(expected, rel=1e-9, abs=1e-15)


def test_inverse_cdf_of_0975():
    assert float(inverse_normal_cdf(0.975)) == pytest.approx(1.95996, abs=1e-5)


def test_interval_layout_sorted_by_frequency():
    p = {"d1": 0.2, "d2": 0.3, "d3": 0.5}
    codec = build_icdm({"d3": 0.5, "d1": 0.2, "d2": 0.3}, LAM)
    assert codec.categories == ("d1", "d2", "d3")
    # cumulative-frequency bounds, up to the O(lambda) rescaling into [lam, 1 - lam]
    expected = [LAM, p["d1"], p["d1"] + p["d2"], 1 - LAM]
    np.testing.assert_allclose(codec.bounds, expected, atol=2 * LAM)
    assert codec.bounds[0] == LAM and codec.bounds[-1] == 1 - LAM
    np.testing.assert_allclose(np.diff(codec.bounds), (1 - 2 * LAM) * np.array([0.2, 0.3, 0.5]))


def test_ties_break_on_token():
    codec = build_icdm({"b": 1, "a": 1, "c": 2})
    assert codec.categories == ("a", "b", "c")


def test_single_category_spans_whole_range():
    codec = build_icdm({"only": 7})
    np.testing.assert_array_equal(codec.bounds, [LAM, 1 - LAM])
    assert icdm_decode(icdm_encode("only", codec, np.random.default_rng(0)), codec) == "only"


def test_even_split_boundary_is_zero():
    codec = build_icdm({"A": 0.5, "B": 0.5})
    assert codec.bounds[1] == 0.5
    assert codec.z_bounds[1] == 0.0


def test_build_icdm_errors():
    with pytest.raises(ConfigError):
        build_icdm({})
    with pytest.raises(ConfigError):
        build_icdm({"a": 0.0, "b": 1.0})


def test_encoded_value_lies_in_interval_image():
    codec = IcdmCodec(("x",), [1.0], [0.025, 0.975], LAM)
    v = codec.encode_indices(np.zeros(1000, dtype=int), np.random.default_rng(0))
    assert v.min() >= -1.96 and v.max() <= 1.96


def test_unknown_category_names_column():
    codec = build_icdm({"a": 1, "b": 1})
    with pytest.raises(EncodingError, match="color"):
        codec.encode(np.array(["a", "zzz"]), np.random.default_rng(0), column="color")


def test_decode_clamps_and_locates():
    codec = build_icdm({"d1": 0.2, "d2": 0.35, "d3": 0.45})
    assert icdm_decode(-10.0, codec) == "d1"
    assert icdm_decode(10.0, codec) == "d3"
    assert icdm_decode(0.0, codec) == "d2"  # 0.2 < F(0) = 0.5 < 0.55


def test_icdm_monte_carlo_moments_and_containment():
    codec = build_icdm({"a": 0.2, "b": 0.3, "c": 0.5})
    rng = np.random.default_rng(1)
    idx = rng.choice(3, size=100_000, p=codec.frequencies)
    v = codec.encode_indices(idx, rng)
    assert np.all(v >= codec.z_bounds[idx]) and np.all(v < codec.z_bounds[idx + 1])
    assert abs(v.mean()) < 0.02 and abs(v.var() - 1) < 0.03


def test_decoding_standard_normal_recovers_frequencies():
    codec = build_icdm({"a": 0.1, "b": 0.25, "c": 0.65})
    n = 100_000
    cats = codec.decode(np.random.default_rng(2).standard_normal(n))
    for c, p in zip(codec.categories, codec.frequencies):
        assert abs(np.mean(cats == c) - p) < 3 * np.sqrt(p * (1 - p) / n)


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=5), st.integers(1, 1000), min_size=1,
                       max_size=12), st.integers(0, 2**32 - 1))
def test_icdm_roundtrip_and_tiling(counts, seed):
    codec = build_icdm(counts)
    assert np.all(np.diff(codec.bounds) > 0)
    assert codec.frequencies.sum() == pytest.approx(1.0, abs=1e-9)
    assert IcdmCodec.from_dict(codec.to_dict()).to_dict() == codec.to_dict()
    cats = np.array(list(counts), dtype=object)
    values = codec.encode(cats, np.random.default_rng(seed))
    assert list(codec.decode(values)) == list(cats)


def test_mdt_examples():
    single = MdtCodec([1.0], [0.0], [1.0])
    assert mdt_encode(1.7, single, np.random.default_rng(0)) == (1.7, 0)
    codec = MdtCodec([0.5, 0.5], [3.0, -3.0], [2.0, 2.0], policy=ARGMAX)
    assert mdt_encode(5.0, codec) == (1.0, 0)
    assert mdt_decode(1.0, 0, codec) == 5.0
    assert mdt_decode(0.0, 1, codec) == -3.0


def test_mdt_sampling_splits_symmetric_modes():
    codec = MdtCodec([0.5, 0.5], [-2.0, 2.0], [1.0, 1.0], policy=SAMPLE)
    _, t = codec.encode(np.zeros(10_000), np.random.default_rng(3))
    assert abs(np.mean(t == 0) - 0.5) < 0.02


def test_mdt_errors():
    codec = MdtCodec([1.0], [0.0], [1.0])
    with pytest.raises(EncodingError):
        codec.encode(np.array([np.inf]), np.random.default_rng(0))
    with pytest.raises(DecodingError):
        mdt_decode(0.0, 3, codec)
    with pytest.raises(ConfigError):
        MdtCodec([1.0], [0.0], [0.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50))
def test_mdt_argmax_roundtrip_exact(values):
    codec = MdtCodec([0.2, 0.5, 0.3], [-10.0, 0.0, 50.0], [1.0, 5.0, 20.0], policy=ARGMAX)
    x = np.array(values)
    a, t = codec.encode(x)
    np.testing.assert_allclose(codec.decode(a, t), x, rtol=1e-12, atol=1e-9)


def test_mode_indicator_roundtrip():
    codec = MdtCodec([0.6, 0.1, 0.3], [0.0, 1.0, 2.0], [1.0, 1.0, 1.0])
    t = np.array([0, 1, 2, 2, 1, 0])
    np.testing.assert_array_equal(codec.decode_modes(codec.encode_modes(t, np.random.default_rng(0))), t)


def _codecs(table, policy=ARGMAX):
    mdt = {c: MdtCodec.from_posterior(fit_federated_gmm([table[c]]), policy)
           for c in table.schema.continuous}
    icdm = {c: build_icdm(category_counts(table[c])) for c in table.schema.discrete}
    return mdt, icdm


def test_layout_width_for_clinical_shape():
    assert len(build_layout(clinical_schema())) == 19


def test_table_roundtrip_under_argmax():
    t = clinical_table(400, 0)
    mdt, icdm = _codecs(t)
    enc = encode_table(t, mdt, icdm, 5)
    assert enc.values.shape == (400, 19) and np.all(np.isfinite(enc.values))
    back = decode_matrix(enc.values, t.schema, mdt, icdm)
    for c in t.schema.discrete:
        np.testing.assert_array_equal(back[c], t[c])
    for c in t.schema.continuous:
        np.testing.assert_allclose(back[c], t[c], rtol=1e-12, atol=1e-9)


def test_empty_table_encodes_to_zero_rows():
    t = known_mixture_table(100)
    mdt, icdm = _codecs(t)
    enc = encode_table(Table.empty(t.schema), mdt, icdm, 0)
    assert enc.values.shape == (0, 6)


def test_encoding_is_deterministic_per_seed():
    t = known_mixture_table(200)
    mdt, icdm = _codecs(t, SAMPLE)
    a = encode_table(t, mdt, icdm, 11).values
    b = encode_table(t, mdt, icdm, 11).values
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, encode_table(t, mdt, icdm, 12).values)


def test_encoded_columns_are_near_standard_normal():
    t = known_mixture_table(100_000, 1)
    # codecs from an independent 5000-row draw keep the fit cheap
    mdt, icdm = _codecs(known_mixture_table(5000, 2), SAMPLE)
    v = encode_table(t, mdt, icdm, 0).values
    # fitted mode parameters carry O(1/sqrt(n_fit)) error, which dominates here
    tol = 4 / np.sqrt(5000)
    np.testing.assert_allclose(v.mean(axis=0), 0.0, atol=tol)
    np.testing.assert_allclose(v.var(axis=0), 1.0, atol=2 * tol)


def test_decode_rejects_wrong_width():
    t = known_mixture_table(50)
    mdt, icdm = _codecs(t)
    with pytest.raises(DecodingError):
        decode_matrix(np.zeros((3, 5)), t.schema, mdt, icdm)
