"""Accelerated proximal gradient base solvers for noisy MC and noisy RMF.

``apg_mc`` minimizes ``mu*||L||_* + 0.5*||P_Omega(L - M)||_F^2`` and
``apg_rmf`` minimizes ``mu*(||L||_* + lam*||S||_1) + 0.5*||M - L - S||_F^2``,
both with Nesterov extrapolation and continuation on ``mu``. Defaults follow
the usual APGL / APG-RPCA settings: ``mu_0 = 0.99*||P_Omega(M)||_2``,
decay 0.7, floor ``1e-4*mu_0``, relative tolerance 1e-4, 500 iterations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, svds

from .matio import LowRankEstimate, ObservedMatrix, SvdFactors

# below this min(m, n) a dense LAPACK SVD beats ARPACK
DENSE_SVD_MAX = 200
ARPACK_TOL = 1e-8
# strongly rectangular matrices use the eigendecomposition of the small Gram
# matrix; squaring resolves singular values down to ~sqrt(eps) * s_max only,
# hence the guard on the threshold
GRAM_ASPECT = 4
GRAM_MAX = 1000
GRAM_MIN_REL = 1e-7


@dataclass(frozen=True)
class ApgConfig:
    """Knobs of the APG solvers.

    ``mu_init``/``mu_floor`` of ``None`` mean "derive from the data":
    ``mu_init = 0.99 * ||P_Omega(M)||_2`` and ``mu_floor = floor_ratio * mu_init``.
    ``gap_ratio`` truncates each prox output at the first singular value
    ratio ``s_i / s_(i+1) >= gap_ratio`` (``None`` disables it); ``restart``
    resets the momentum whenever it points uphill (gradient restart scheme).
    ``line_search`` is accepted for interface compatibility; both solvers use
    the exact Lipschitz step, so it has no effect.
    """

    max_iters: int = 500
    rel_tol: float = 1e-4
    mu_init: float | None = None
    mu_floor: float | None = None
    mu_decay: float = 0.7
    floor_ratio: float = 1e-4
    line_search: bool = False
    gap_ratio: float | None = 5.0
    restart: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")
        if not 0 < self.mu_decay < 1:
            raise ValueError("mu_decay must lie in (0, 1)")
        if not 0 < self.floor_ratio <= 1:
            raise ValueError("floor_ratio must lie in (0, 1]")
        if self.gap_ratio is not None and self.gap_ratio <= 1:
            raise ValueError("gap_ratio must exceed 1")
        if self.mu_init is not None and self.mu_floor is not None and self.mu_floor > self.mu_init:
            raise ValueError("mu_floor must not exceed mu_init")

    def schedule(self, spectral_norm: float) -> tuple[float, float]:
        mu0 = self.mu_init if self.mu_init is not None else 0.99 * spectral_norm
        floor = self.mu_floor if self.mu_floor is not None else self.floor_ratio * mu0
        return mu0, min(floor, mu0)

    def with_(self, **kw) -> "ApgConfig":
        return replace(self, **kw)


@dataclass
class SolveReport:
    iterations: int
    objective: float
    residual: float
    rank: int
    wall_ms: float
    converged: bool = True
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class OutlierEstimate:
    """Sparse outlier matrix S as coordinate triplets."""

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @classmethod
    def from_dense(cls, S: np.ndarray) -> "OutlierEstimate":
        i, j = np.nonzero(S)
        return cls(S.shape[0], S.shape[1], i.astype(np.int64), j.astype(np.int64), S[i, j].astype(float))

    def to_dense(self) -> np.ndarray:
        S = np.zeros((self.m, self.n), order="F")
        S[self.rows, self.cols] = self.vals
        return S

    def __len__(self) -> int:
        return int(self.vals.size)


def soft_threshold(A, tau: float) -> np.ndarray:
    """Entrywise ``sign(a) * max(|a| - tau, 0)``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    A = np.asarray(A, dtype=float)
    return np.sign(A) * np.maximum(np.abs(A) - tau, 0.0)


def _shrink(U, s, Vt, tau) -> SvdFactors:
    s = s - tau
    keep = s > 0
    return SvdFactors(U[:, keep], s[keep], Vt[keep].T)


def _first_gap(s: np.ndarray, gap_ratio: float | None) -> int | None:
    """Number of values before the first ratio ``s_i / s_(i+1) >= gap_ratio``."""
    if gap_ratio is None or s.size < 2:
        return None
    hits = np.nonzero(s[:-1] >= gap_ratio * s[1:])[0]
    return int(hits[0]) + 1 if hits.size else None


def _truncate_at_gap(x: SvdFactors, gap_ratio: float | None) -> SvdFactors:
    """Keep only the leading singular values above the first large gap."""
    cut = _first_gap(x.s, gap_ratio)
    if cut is None:
        return x
    return SvdFactors(x.U[:, :cut], x.s[:cut], x.V[:, :cut])


def svt(A, tau: float) -> LowRankEstimate:
    """Singular value thresholding: the prox of ``tau * ||.||_*``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    A = np.asarray(A, dtype=float)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return _shrink(U, s, Vt, tau).as_estimate()


def _svt_gram(mat, tau: float, gap_ratio: float | None = None) -> SvdFactors | None:
    """SVT of a tall or wide matrix from the eigendecomposition of its small
    Gram matrix, refined by one Rayleigh-Ritz step (a thin SVD of ``B @ V``)
    so the left factor comes out orthonormal. ``None`` when ``tau`` is too
    small relative to the top singular value for the squared problem."""
    m, n = mat.shape
    wide = n > m
    empty = SvdFactors(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)))
    G = mat.gram()
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    if w.size == 0 or w[-1] <= 0:
        return empty
    if tau < GRAM_MIN_REL * np.sqrt(w[-1]):
        return None
    # candidates slightly below tau^2 absorb eigenvalue rounding
    keep = w > 0.99 * tau * tau
    if not keep.any():
        return empty
    V = V[:, keep][:, ::-1]
    sv = np.sqrt(w[keep][::-1])
    cut = _first_gap(sv[sv > tau] - tau, gap_ratio)
    if cut is not None:
        V = V[:, :cut]
    Ub, s, Wt = np.linalg.svd(mat.apply(V), full_matrices=False)
    x = _shrink(Ub, s, Wt @ V.T, tau)
    return SvdFactors(x.V, x.s, x.U) if wide else x


def _svt_operator(mat, tau: float, sv: int, gap_ratio: float | None = None) -> SvdFactors:
    """SVT of an implicit matrix by partial SVD, growing the number of
    computed triplets until the smallest one falls below ``tau`` (or, with
    ``gap_ratio``, until the shrunk values show a large gap).

    ``mat`` exposes ``shape``, ``operator()``, ``dense()`` and, for the Gram
    path, ``gram()`` and ``apply(V)``. Strongly rectangular matrices go through
    the Gram path; small or nearly full-rank requests use a dense SVD.
    """
    m, n = mat.shape
    lo = min(m, n)
    if lo <= GRAM_MAX and max(m, n) >= GRAM_ASPECT * lo:
        x = _svt_gram(mat, tau, gap_ratio)
        if x is not None:
            return _truncate_at_gap(x, gap_ratio)
    op = mat.operator()
    v0 = np.random.default_rng(0).standard_normal(lo)
    while True:
        if lo <= DENSE_SVD_MAX or sv >= lo // 10:
            U, s, Vt = np.linalg.svd(mat.dense(), full_matrices=False)
            return _truncate_at_gap(_shrink(U, s, Vt, tau), gap_ratio)
        U, s, Vt = svds(op, k=sv, v0=v0, tol=ARPACK_TOL, solver="arpack")
        order = np.argsort(s)[::-1]
        U, s, Vt = U[:, order], s[order], Vt[order]
        if s[-1] <= tau or _first_gap(s[s > tau] - tau, gap_ratio) is not None:
            return _truncate_at_gap(_shrink(U, s, Vt, tau), gap_ratio)
        sv = sv + max(5, sv // 2)


class _Dense:
    """Explicit matrix with the interface ``_svt_operator`` expects."""

    def __init__(self, A: np.ndarray):
        self.A = A
        self.shape = A.shape

    def operator(self) -> LinearOperator:
        A = self.A
        return LinearOperator(A.shape, matvec=A.__matmul__, rmatvec=A.T.__matmul__,
                              matmat=A.__matmul__, rmatmat=A.T.__matmul__, dtype=float)

    def dense(self) -> np.ndarray:
        return self.A

    def _small(self) -> np.ndarray:
        return self.A.T if self.shape[1] > self.shape[0] else self.A

    def gram(self) -> np.ndarray:
        B = self._small()
        return B.T @ B

    def apply(self, V: np.ndarray) -> np.ndarray:
        return self._small() @ V


class _LowRankPlusSparse:
    """Implicit ``left @ right.T + S`` for the MC gradient step."""

    def __init__(self, left, right, S: sp.csr_matrix, ST: sp.csr_matrix | None = None):
        self.left, self.right, self.S = left, right, S
        self.ST = S.T.tocsr() if ST is None else ST
        self.shape = S.shape

    def operator(self) -> LinearOperator:
        m, n = self.S.shape
        L, R, S, ST = self.left, self.right, self.S, self.ST
        return LinearOperator(
            (m, n),
            matvec=lambda x: L @ (R.T @ x) + S @ x,
            rmatvec=lambda y: R @ (L.T @ y) + ST @ y,
            matmat=lambda X: L @ (R.T @ X) + S @ X,
            rmatmat=lambda Y: R @ (L.T @ Y) + ST @ Y,
            dtype=float,
        )

    def dense(self) -> np.ndarray:
        return self.left @ self.right.T + self.S.toarray()

    def _tall(self) -> np.ndarray:
        # a BLAS Gram product of the explicit block beats sparse S^T S here
        if getattr(self, "_tall_cache", None) is None:
            D = self.dense()
            self._tall_cache = D.T if self.shape[1] > self.shape[0] else D
        return self._tall_cache

    def gram(self) -> np.ndarray:
        B = self._tall()
        return B.T @ B

    def apply(self, V: np.ndarray) -> np.ndarray:
        return self._tall() @ V


def _inner(x: SvdFactors, y: SvdFactors) -> float:
    """Trace inner product of two factored matrices."""
    if x.rank == 0 or y.rank == 0:
        return 0.0
    return float(np.sum(((x.U * x.s).T @ (y.U * y.s)) * (x.V.T @ y.V)))


def _fro_diff(a: SvdFactors, b: SvdFactors) -> float:
    """||U_a S_a V_a^T - U_b S_b V_b^T||_F from small Gram matrices."""
    val = _inner(a, a) + _inner(b, b) - 2.0 * _inner(a, b)
    return float(np.sqrt(max(val, 0.0)))


def _spectral_norm(op: LinearOperator, dense) -> float:
    m, n = op.shape
    if min(m, n) <= DENSE_SVD_MAX:
        return float(np.linalg.norm(dense(), 2)) if m * n else 0.0
    v0 = np.random.default_rng(0).standard_normal(min(m, n))
    return float(svds(op, k=1, v0=v0, tol=1e-6, return_singular_vectors=False)[0])


def apg_mc(obs: ObservedMatrix, cfg: ApgConfig | None = None) -> tuple[LowRankEstimate, SolveReport]:
    """Nuclear-norm regularized matrix completion by APG with continuation."""
    cfg = cfg or ApgConfig()
    if obs.nnz == 0:
        raise ValueError("no observed entries")
    start = time.perf_counter()
    m, n = obs.shape
    rows, cols, b = obs.rows, obs.cols, obs.vals
    P = obs.to_sparse()
    # fixed sparsity pattern: map observation order onto CSR order of P and P^T
    pos = sp.csr_matrix((np.arange(1, b.size + 1, dtype=float), (rows, cols)), shape=(m, n))
    pos_t = pos.T.tocsr()
    perm, perm_t = pos.data.astype(np.int64) - 1, pos_t.data.astype(np.int64) - 1

    def sparse_pair(v: np.ndarray):
        S = sp.csr_matrix((v[perm], pos.indices, pos.indptr), shape=(m, n))
        ST = sp.csr_matrix((v[perm_t], pos_t.indices, pos_t.indptr), shape=(n, m))
        return S, ST
    empty = np.zeros((0,))
    ztri = SvdFactors(np.zeros((m, 0)), empty, np.zeros((n, 0)))
    mu0, mu_floor = cfg.schedule(
        _spectral_norm(_LowRankPlusSparse(np.zeros((m, 0)), np.zeros((n, 0)), P).operator(), P.toarray)
    )

    def values_at(x: SvdFactors) -> np.ndarray:
        if x.rank == 0:
            return np.zeros_like(b)
        return np.einsum("ij,ij->i", (x.U * x.s)[rows], x.V[cols])

    x_prev, x_cur = ztri, ztri
    t_prev = t_cur = 1.0
    mu = mu0
    sv = 5
    it = 0
    converged = False
    if mu0 == 0.0:
        converged = True
    while not converged and it < cfg.max_iters:
        it += 1
        beta = (t_prev - 1.0) / t_cur
        # extrapolated point Y = (1 + beta) X_k - beta X_{k-1}, kept factored
        left = np.hstack([x_cur.U * (x_cur.s * (1.0 + beta)), x_prev.U * (x_prev.s * -beta)])
        right = np.hstack([x_cur.V, x_prev.V])
        y_vals = np.einsum("ij,ij->i", left[rows], right[cols]) if left.shape[1] else np.zeros_like(b)
        # gradient step with unit step size (P_Omega has Lipschitz constant 1)
        G = _LowRankPlusSparse(left, right, *sparse_pair(b - y_vals))
        x_next = _svt_operator(G, mu, max(sv, x_cur.rank + 5), cfg.gap_ratio)
        sv = x_next.rank + 5
        change = _fro_diff(x_next, x_cur)
        scale = max(float(np.linalg.norm(x_next.s)), 1.0)
        t_prev, t_cur = t_cur, (1.0 + np.sqrt(1.0 + 4.0 * t_cur * t_cur)) / 2.0
        if cfg.restart:
            # <Y - X_next, X_next - X_cur> > 0 means momentum points uphill
            nn, nc, cc = _inner(x_next, x_next), _inner(x_next, x_cur), _inner(x_cur, x_cur)
            pn, pc = _inner(x_prev, x_next), _inner(x_prev, x_cur)
            y_n = (1.0 + beta) * nc - beta * pn
            y_c = (1.0 + beta) * cc - beta * pc
            if y_n - y_c - nn + nc > 0:
                t_prev = t_cur = 1.0
        x_prev, x_cur = x_cur, x_next
        at_floor = mu <= mu_floor
        mu = max(cfg.mu_decay * mu, mu_floor)
        if change / scale < cfg.rel_tol and at_floor:
            converged = True

    r = values_at(x_cur) - b
    residual = float(np.linalg.norm(r))
    objective = float(mu_floor * x_cur.s.sum() + 0.5 * residual**2)
    report = SolveReport(
        iterations=it,
        objective=objective,
        residual=residual,
        rank=x_cur.rank,
        wall_ms=(time.perf_counter() - start) * 1e3,
        converged=converged,
        extra={"mu_init": mu0, "mu_floor": mu_floor},
    )
    return x_cur.as_estimate(), report


def default_lambda(m: int, n: int) -> float:
    return 1.0 / np.sqrt(max(m, n))


def apg_rmf(
    M, lam: float | None = None, cfg: ApgConfig | None = None
) -> tuple[LowRankEstimate, OutlierEstimate, SolveReport]:
    """Robust matrix factorization (noisy principal component pursuit) by APG.

    Joint extrapolated proximal steps on (L, S) with step size 1/2, the
    reciprocal of the Lipschitz constant of the coupled quadratic.
    """
    cfg = cfg or ApgConfig()
    start = time.perf_counter()
    M = np.asarray(M, dtype=float)
    m, n = M.shape
    lam = default_lambda(m, n) if lam is None else lam
    if lam <= 0:
        raise ValueError("lambda must be positive")
    mu0, mu_floor = cfg.schedule(float(np.linalg.norm(M, 2)) if M.size else 0.0)
    empty = np.zeros((0,))
    L_cur = SvdFactors(np.zeros((m, 0)), empty, np.zeros((n, 0)))
    Ld_cur = Ld_prev = np.zeros((m, n))
    S_cur = S_prev = np.zeros((m, n))
    t_prev = t_cur = 1.0
    mu = mu0
    sv = 5
    it = 0
    converged = mu0 == 0.0
    while not converged and it < cfg.max_iters:
        it += 1
        beta = (t_prev - 1.0) / t_cur
        YL = Ld_cur + beta * (Ld_cur - Ld_prev)
        YS = S_cur + beta * (S_cur - S_prev)
        half_grad = 0.5 * (YL + YS - M)
        GL = YL - half_grad
        GS = YS - half_grad
        L_next = _svt_operator(_Dense(GL), mu / 2.0, max(sv, L_cur.rank + 5), cfg.gap_ratio)
        sv = L_next.rank + 5
        S_next = soft_threshold(GS, lam * mu / 2.0)
        Ld_next = (L_next.U * L_next.s) @ L_next.V.T if L_next.rank else np.zeros((m, n))
        dl = np.linalg.norm(Ld_next - Ld_cur)
        ds = np.linalg.norm(S_next - S_cur)
        scale = max(np.linalg.norm(Ld_next) + np.linalg.norm(S_next), 1.0)
        t_prev, t_cur = t_cur, (1.0 + np.sqrt(1.0 + 4.0 * t_cur * t_cur)) / 2.0
        if cfg.restart and (np.vdot(YL - Ld_next, Ld_next - Ld_cur) + np.vdot(YS - S_next, S_next - S_cur)) > 0:
            t_prev = t_cur = 1.0
        L_cur = L_next
        Ld_prev, Ld_cur = Ld_cur, Ld_next
        S_prev, S_cur = S_cur, S_next
        at_floor = mu <= mu_floor
        mu = max(cfg.mu_decay * mu, mu_floor)
        if (dl + ds) / scale < cfg.rel_tol and at_floor:
            converged = True

    residual = float(np.linalg.norm(M - Ld_cur - S_cur))
    objective = float(L_cur.s.sum() + lam * np.abs(S_cur).sum()
                      + residual**2 / (2.0 * mu_floor)) if mu_floor > 0 else 0.0
    report = SolveReport(
        iterations=it,
        objective=objective,
        residual=residual,
        rank=L_cur.rank,
        wall_ms=(time.perf_counter() - start) * 1e3,
        converged=converged,
        extra={"mu_init": mu0, "mu_floor": mu_floor, "lambda": lam, "outliers": int(np.count_nonzero(S_cur))},
    )
    return L_cur.as_estimate(), OutlierEstimate.from_dense(S_cur), report
