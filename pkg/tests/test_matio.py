import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfcmf.matio import (
    BoundsError,
    DuplicateEntryError,
    LowRankEstimate,
    ObservedMatrix,
    TripletParseError,
    densify,
    estimate_from_dict,
    estimate_to_dict,
    load_triplets,
    materialize,
    save_triplets,
)


def test_load_header_and_entry():
    obs = load_triplets(b"% 2 2\n0 0 1.5")
    assert obs.shape == (2, 2)
    assert obs.triplets() == [(0, 0, 1.5)]


def test_load_header_only():
    obs = load_triplets(io.StringIO("% 3 4\n"))
    assert obs.shape == (3, 4)
    assert obs.nnz == 0


def test_duplicate_is_error():
    with pytest.raises(DuplicateEntryError):
        load_triplets(b"0 0 1\n0 0 2")


def test_dims_inferred_from_max_index():
    obs = load_triplets(b"0 3 1\n2 1 -4e-3\n")
    assert obs.shape == (3, 4)


def test_malformed_line_reports_line_number():
    with pytest.raises(TripletParseError) as err:
        load_triplets(b"% 2 2\n0 0 1\n0 x 2\n")
    assert err.value.lineno == 3
    assert "line 3" in str(err.value)


def test_out_of_declared_bounds():
    with pytest.raises(BoundsError):
        load_triplets(b"% 2 2\n2 0 1\n")


def test_one_based_conversion():
    obs = load_triplets(b"1 1 5\n2 3 1\n", one_based=True)
    assert obs.shape == (2, 3)
    assert sorted(obs.triplets()) == [(0, 0, 5.0), (1, 2, 1.0)]


def test_densify_examples():
    obs = ObservedMatrix.from_triplets(2, 2, [(0, 1, 3.0)])
    np.testing.assert_array_equal(densify(obs), [[0, 3], [0, 0]])
    A = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(densify(ObservedMatrix.from_dense(A)), A)
    np.testing.assert_array_equal(densify(ObservedMatrix.from_triplets(1, 1, [])), [[0.0]])


def test_densify_is_column_major():
    assert densify(ObservedMatrix.from_triplets(3, 2, [])).flags.f_contiguous


def test_materialize_examples():
    est = LowRankEstimate(np.array([[1.0], [2.0]]), np.array([[1.0], [2.0]]))
    np.testing.assert_array_equal(materialize(est), [[1, 2], [2, 4]])
    np.testing.assert_array_equal(materialize(LowRankEstimate.zeros(3, 2)), np.zeros((3, 2)))
    np.testing.assert_array_equal(materialize(LowRankEstimate(np.eye(2), np.eye(2))), np.eye(2))


def test_estimate_rejects_inconsistent_factors():
    with pytest.raises(ValueError):
        LowRankEstimate(np.ones((3, 2)), np.ones((4, 1)))
    with pytest.raises(ValueError):
        LowRankEstimate(np.ones((2, 3)), np.ones((2, 3)))


def test_observed_matrix_is_read_only():
    obs = ObservedMatrix.from_triplets(2, 2, [(0, 0, 1.0)])
    with pytest.raises(ValueError):
        obs.vals[0] = 2.0


@st.composite
def observed(draw):
    m = draw(st.integers(1, 8))
    n = draw(st.integers(1, 8))
    cells = draw(st.lists(st.integers(0, m * n - 1), unique=True, max_size=m * n))
    vals = draw(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64),
                         min_size=len(cells), max_size=len(cells)))
    return ObservedMatrix.from_triplets(m, n, [(c // n, c % n, v) for c, v in zip(cells, vals)])


@settings(max_examples=100, deadline=None)
@given(observed())
def test_triplet_round_trip(obs):
    buf = io.StringIO()
    save_triplets(obs, buf)
    back = load_triplets(io.StringIO(buf.getvalue()))
    assert back.equals(obs)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_materialize_rank_bounded(m, n, k, seed):
    k = min(k, m, n)
    rng = np.random.default_rng(seed)
    est = LowRankEstimate(rng.standard_normal((m, k)), rng.standard_normal((n, k)))
    s = np.linalg.svd(materialize(est), compute_uv=False)
    assert np.sum(s > 1e-10 * max(s[0], 1.0) * max(m, n)) <= k


def test_estimate_json_round_trip():
    rng = np.random.default_rng(0)
    est = LowRankEstimate(rng.standard_normal((4, 2)), rng.standard_normal((3, 2)))
    d = json.loads(est.to_json())
    assert (d["m"], d["n"], d["k"]) == (4, 3, 2)
    # row-major nested lists
    assert len(d["left"]) == 4 and len(d["left"][0]) == 2
    back = estimate_from_dict(d)
    np.testing.assert_array_equal(back.left, est.left)
    np.testing.assert_array_equal(back.right, est.right)
    assert estimate_to_dict(LowRankEstimate.zeros(2, 2))["k"] == 0
    assert estimate_from_dict(estimate_to_dict(LowRankEstimate.zeros(2, 2))).k == 0


def test_compact_svd_matches_dense():
    rng = np.random.default_rng(1)
    est = LowRankEstimate(rng.standard_normal((7, 3)), rng.standard_normal((5, 3)))
    U, s, V = est.compact_svd()
    np.testing.assert_allclose(s, np.linalg.svd(materialize(est), compute_uv=False)[:3], rtol=1e-12)
    np.testing.assert_allclose((U * s) @ V.T, materialize(est), atol=1e-12)
    assert abs(est.fro_norm() - np.linalg.norm(materialize(est))) < 1e-12
