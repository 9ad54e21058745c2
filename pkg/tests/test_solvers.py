import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from dfcmf.matio import ObservedMatrix, materialize
from dfcmf.sampling import SeededRng
from dfcmf.simgen import gen_low_rank, gen_mc_instance
from dfcmf.solvers import (
    ApgConfig,
    OutlierEstimate,
    _Dense,
    _LowRankPlusSparse,
    _svt_operator,
    apg_mc,
    apg_rmf,
    default_lambda,
    soft_threshold,
    svt,
)


def _rmse(A, B):
    return float(np.sqrt(np.mean((np.asarray(A) - np.asarray(B)) ** 2)))


# -- prox operators ---------------------------------------------------------

def test_svt_diagonal():
    est = svt(np.diag([3.0, 1.0]), 2.0)
    assert est.k == 1
    np.testing.assert_allclose(materialize(est), np.diag([1.0, 0.0]), atol=1e-14)


def test_svt_zero_threshold_is_identity():
    A = np.random.default_rng(0).standard_normal((7, 5))
    assert np.abs(materialize(svt(A, 0.0)) - A).max() < 1e-10


def test_svt_total_shrinkage():
    A = np.random.default_rng(1).standard_normal((6, 6))
    s1 = np.linalg.norm(A, 2)
    assert svt(A, s1).k == 0
    assert svt(A, 2 * s1).k == 0
    np.testing.assert_array_equal(materialize(svt(A, s1)), np.zeros((6, 6)))


def test_prox_negative_threshold():
    with pytest.raises(ValueError):
        svt(np.eye(2), -1.0)
    with pytest.raises(ValueError):
        soft_threshold(np.eye(2), -1.0)


def test_soft_threshold_examples():
    np.testing.assert_array_equal(soft_threshold([2.0, -0.5], 1.0), [1.0, 0.0])
    A = np.array([[1.5, -2.0], [0.0, 3.0]])
    np.testing.assert_array_equal(soft_threshold(A, 0.0), A)
    np.testing.assert_array_equal(soft_threshold(A, 3.0), np.zeros((2, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.floats(0.0, 5.0), st.integers(0, 2**32 - 1))
def test_svt_singular_values_match_oracle(m, n, tau, seed):
    A = np.random.default_rng(seed).standard_normal((m, n))
    got = np.sort(svt(A, tau).compact_svd()[1])[::-1]
    want = np.maximum(np.linalg.svd(A, compute_uv=False) - tau, 0.0)
    want = want[want > 0]
    assert got.size == want.size
    np.testing.assert_allclose(got, want, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.floats(0.0, 3.0), st.integers(0, 2**32 - 1))
def test_soft_threshold_nonexpansive(m, n, tau, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((m, n)), rng.standard_normal((m, n))
    lhs = np.linalg.norm(soft_threshold(a, tau) - soft_threshold(b, tau))
    assert lhs <= np.linalg.norm(a - b) + 1e-12


@pytest.mark.parametrize("shape", [(600, 40), (40, 600), (500, 120)])
def test_gram_path_matches_dense_svd(shape):
    rng = np.random.default_rng(3)
    m, n = shape
    L, R = rng.standard_normal((m, 3)) * 5, rng.standard_normal((n, 3))
    S = sp.random(m, n, density=0.05, random_state=4, format="csr")
    G = _LowRankPlusSparse(L, R, S)
    dense = G.dense()
    U, s, Vt = np.linalg.svd(dense, full_matrices=False)
    for tau in (0.5, 2.0, 0.5 * s[0]):
        want = (U * np.maximum(s - tau, 0)) @ Vt
        for mat in (G, _Dense(dense)):
            x = _svt_operator(mat, tau, 5, gap_ratio=None)
            got = (x.U * x.s) @ x.V.T
            assert np.abs(got - want).max() < 1e-9 * s[0]
            np.testing.assert_allclose(x.U.T @ x.U, np.eye(x.rank), atol=1e-10)


def test_arpack_path_matches_dense_svd():
    rng = np.random.default_rng(5)
    m = n = 400
    L, R = rng.standard_normal((m, 4)) * 10, rng.standard_normal((n, 4))
    S = sp.random(m, n, density=0.02, random_state=6, format="csr")
    G = _LowRankPlusSparse(L, R, S)
    U, s, Vt = np.linalg.svd(G.dense(), full_matrices=False)
    tau = 0.5 * (s[3] + s[4])
    x = _svt_operator(G, tau, 5, gap_ratio=None)
    want = (U[:, :4] * (s[:4] - tau)) @ Vt[:4]
    assert x.rank == 4
    assert np.abs((x.U * x.s) @ x.V.T - want).max() < 1e-6 * s[0]


# -- configuration ----------------------------------------------------------

@pytest.mark.parametrize("kw", [
    {"max_iters": 0}, {"rel_tol": 0.0}, {"rel_tol": 1.0}, {"mu_decay": 1.0},
    {"mu_init": 1.0, "mu_floor": 2.0}, {"gap_ratio": 1.0},
])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        ApgConfig(**kw)


def test_default_schedule():
    mu0, floor = ApgConfig().schedule(10.0)
    assert mu0 == pytest.approx(9.9)
    assert floor == pytest.approx(9.9e-4)


# -- MC solver --------------------------------------------------------------

def _noiseless(m, n, r, frac, seed):
    return gen_mc_instance(m, n, r, int(round(frac * m * n)), 0.0, SeededRng(seed))


def test_apg_mc_full_observation():
    inst = _noiseless(20, 20, 2, 1.0, 0)
    est, rep = apg_mc(inst.obs)
    assert _rmse(materialize(est), materialize(inst.L0)) < 1e-3
    assert rep.rank == 2


def test_apg_mc_half_observed():
    # the penalized minimizer has residual of order mu_floor; the noiseless
    # regime calls for a smaller floor than the noisy default
    inst = _noiseless(20, 20, 2, 0.5, 1)
    est, rep = apg_mc(inst.obs, ApgConfig(floor_ratio=1e-5))
    assert _rmse(materialize(est), materialize(inst.L0)) < 1e-2
    assert rep.residual < 1e-3


def test_apg_mc_all_zeros():
    obs = ObservedMatrix.from_dense(np.zeros((5, 4)))
    est, rep = apg_mc(obs)
    assert est.k == 0
    assert rep.objective == 0.0
    np.testing.assert_array_equal(materialize(est), np.zeros((5, 4)))


def test_apg_mc_empty_is_error():
    with pytest.raises(ValueError):
        apg_mc(ObservedMatrix.from_triplets(3, 3, []))


def test_apg_mc_empty_columns_give_zeros():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((12, 2)) @ rng.standard_normal((2, 10))
    mask = np.ones_like(A, dtype=bool)
    mask[:, [3, 7]] = False
    est, _ = apg_mc(ObservedMatrix.from_dense(A, mask))
    np.testing.assert_array_equal(materialize(est)[:, [3, 7]], 0.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(5, 30), st.integers(5, 30), st.integers(1, 3), st.floats(0.2, 1.0), st.integers(0, 2**31))
def test_apg_mc_beats_zero_objective(m, n, r, frac, seed):
    r = min(r, m, n)
    inst = gen_mc_instance(m, n, r, max(1, int(frac * m * n)), 0.1, SeededRng(seed))
    _, rep = apg_mc(inst.obs, ApgConfig(max_iters=60))
    assert rep.objective <= 0.5 * float(np.sum(inst.obs.vals ** 2)) + 1e-9
    assert rep.residual >= 0
    assert rep.rank <= min(m, n)


def test_apg_mc_deterministic():
    inst = gen_mc_instance(40, 30, 3, 600, 0.1, SeededRng(9))
    a, ra = apg_mc(inst.obs)
    b, rb = apg_mc(inst.obs)
    np.testing.assert_array_equal(a.left, b.left)
    np.testing.assert_array_equal(a.right, b.right)
    assert (ra.iterations, ra.objective, ra.residual, ra.rank) == (rb.iterations, rb.objective, rb.residual, rb.rank)


def test_restart_flag_does_not_change_solution_quality():
    inst = gen_mc_instance(60, 60, 3, 1800, 0.0, SeededRng(4))
    truth = materialize(inst.L0)
    for restart in (False, True):
        est, rep = apg_mc(inst.obs, ApgConfig(restart=restart))
        assert _rmse(materialize(est), truth) < 1e-3
        assert rep.converged


# -- RMF solver -------------------------------------------------------------

def test_apg_rmf_no_outliers():
    L0 = materialize(gen_low_rank(30, 30, 2, SeededRng(0)))
    L, S, rep = apg_rmf(L0)
    assert np.linalg.norm(S.to_dense()) < 1e-3 * np.linalg.norm(L0)
    assert _rmse(materialize(L), L0) < 1e-3


def test_apg_rmf_single_spike():
    M = np.zeros((20, 20))
    M[3, 5] = 100.0
    L, S, _ = apg_rmf(M, lam=0.05)
    assert np.abs(materialize(L)).max() < 1e-3 * 100.0
    assert abs(S.to_dense()[3, 5] - 100.0) < 1e-3 * 100.0
    assert np.count_nonzero(np.delete(S.to_dense().ravel(), 3 * 20 + 5)) == 0


def test_apg_rmf_zero():
    L, S, rep = apg_rmf(np.zeros((6, 4)))
    assert L.k == 0 and len(S) == 0
    assert rep.residual == 0.0


def test_apg_rmf_lambda():
    assert default_lambda(100, 400) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        apg_rmf(np.ones((3, 3)), lam=0.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(8, 30), st.integers(8, 30), st.integers(0, 2**31))
def test_apg_rmf_feasibility_trend(m, n, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((m, 2)) @ rng.standard_normal((2, n))
    M[rng.random((m, n)) < 0.1] += 5.0
    L, S, rep = apg_rmf(M, cfg=ApgConfig(max_iters=80))
    assert rep.residual <= np.linalg.norm(M) + 1e-12
    assert np.all(np.isfinite(S.vals))
    assert np.all((S.rows < m) & (S.cols < n))


def test_outlier_estimate_round_trip():
    D = np.zeros((3, 4))
    D[1, 2], D[0, 3] = 2.5, -1.0
    est = OutlierEstimate.from_dense(D)
    assert len(est) == 2
    np.testing.assert_array_equal(est.to_dense(), D)
