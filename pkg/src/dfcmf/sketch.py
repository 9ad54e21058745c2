"""Low-rank reconstruction kernels used in the combine step.

Everything here works on factored :class:`LowRankEstimate` inputs and keeps
results factored; the only dense products formed are small (k x k, d x l or
m x (k+p)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .matio import LowRankEstimate, ShapeError, SvdFactors
from .sampling import PartitionPlan, _as_generator


@dataclass(frozen=True)
class RankTolerance:
    """Relative cutoff below which singular values count as zero.

    With ``scale_by_dims`` the effective cutoff is ``rel_cutoff * max(m, n)``
    times the largest singular value.
    """

    rel_cutoff: float = 1e-12
    scale_by_dims: bool = True

    def __post_init__(self):
        if not 0 < self.rel_cutoff < 1:
            raise ValueError("rel_cutoff must lie in (0, 1)")

    def cutoff(self, m: int, n: int) -> float:
        c = self.rel_cutoff * (max(m, n) if self.scale_by_dims else 1)
        return min(c, 0.5)


DEFAULT_TOL = RankTolerance()


@dataclass(frozen=True)
class RpParams:
    k: int
    p: int = 5
    q: int = 2

    def __post_init__(self):
        if self.k < 1 or self.p < 0 or self.q < 0:
            raise ValueError(f"invalid random projection parameters {self}")


def _tall(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeError("expected a 2-d matrix")
    return A


def truncated_svd(A, k: int) -> SvdFactors:
    """Top-``k`` singular triplets of a dense matrix or a factored estimate."""
    if isinstance(A, LowRankEstimate):
        if not 1 <= k <= min(A.shape):
            raise ValueError(f"k={k} outside [1, {min(A.shape)}]")
        U, s, V = A.compact_svd()
        # pad with zero directions would break orthonormality guarantees; a
        # factored input of rank < k simply yields fewer triplets
        return SvdFactors(U[:, :k], s[:k], V[:, :k])
    A = _tall(A)
    if not 1 <= k <= min(A.shape):
        raise ValueError(f"k={k} outside [1, {min(A.shape)}]")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return SvdFactors(U[:, :k], s[:k], Vt[:k].T)


def pinv(A, tol: RankTolerance = DEFAULT_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with a relative singular value cutoff."""
    A = _tall(A)
    m, n = A.shape
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((n, m))
    keep = s > tol.cutoff(m, n) * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def numerical_rank(A, tol: RankTolerance = DEFAULT_TOL) -> int:
    if isinstance(A, LowRankEstimate):
        if A.k == 0:
            return 0
        s = A.compact_svd().s
        m, n = A.shape
    else:
        A = _tall(A)
        m, n = A.shape
        s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol.cutoff(m, n) * s[0]))


def column_basis(est: LowRankEstimate, tol: RankTolerance = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis U_C of the column space of ``est``."""
    if est.k == 0:
        return np.zeros((est.m, 0))
    U, s, _ = est.compact_svd()
    if s.size == 0:
        return np.zeros((est.m, 0))
    keep = s > tol.cutoff(*est.shape) * s[0]
    return U[:, keep]


def _check_blocks(blocks: Sequence[LowRankEstimate], plan: PartitionPlan) -> int:
    if len(blocks) != plan.t:
        raise ShapeError(f"{len(blocks)} blocks for a {plan.t}-group plan")
    m = blocks[0].m
    for b, g in zip(blocks, plan.groups):
        if b.m != m:
            raise ShapeError("blocks disagree on row count")
        if b.n != g.size:
            raise ShapeError(f"block width {b.n} does not match group size {g.size}")
    return m


def _scatter_rows(parts: Sequence[np.ndarray], plan: PartitionPlan, width: int) -> np.ndarray:
    out = np.zeros((plan.n, width))
    for g, part in zip(plan.groups, parts):
        out[g] = part
    return out


def column_project(
    basis: LowRankEstimate,
    blocks: Sequence[LowRankEstimate],
    plan: PartitionPlan,
    tol: RankTolerance = DEFAULT_TOL,
) -> LowRankEstimate:
    """Project ``[C_1 ... C_t]`` onto the column space of ``basis``.

    Returns ``U_B (U_B^T [C_1 ... C_t])`` with the columns put back in their
    original order.
    """
    m = _check_blocks(blocks, plan)
    if basis.m != m:
        raise ShapeError(f"basis has {basis.m} rows, blocks have {m}")
    U = column_basis(basis, tol)
    k = U.shape[1]
    # block i contributes R_i (L_i^T U) as its rows of the right factor
    parts = [b.right @ (b.left.T @ U) for b in blocks]
    return LowRankEstimate(U, _scatter_rows(parts, plan, k))


def _concat_matmul(blocks, plan, G: np.ndarray) -> np.ndarray:
    """[C_1 ... C_t] @ G where G rows are indexed by original column."""
    out = np.zeros((blocks[0].m, G.shape[1]))
    for b, g in zip(blocks, plan.groups):
        if b.k:
            out += b.left @ (b.right.T @ G[g])
    return out


def _concat_rmatmul(blocks, plan, Q: np.ndarray) -> np.ndarray:
    """[C_1 ... C_t]^T @ Q with rows in original column order."""
    parts = [b.right @ (b.left.T @ Q) for b in blocks]
    return _scatter_rows(parts, plan, Q.shape[1])


def random_project(
    blocks: Sequence[LowRankEstimate],
    plan: PartitionPlan,
    params: RpParams,
    rng,
) -> LowRankEstimate:
    """Rank-k random projection approximation of ``[C_1 ... C_t]``.

    Power iteration with a QR re-orthonormalization after every
    multiplication by M or M^T; Q holds the top-k left singular vectors of
    the final sample matrix.
    """
    m = _check_blocks(blocks, plan)
    n = plan.n
    k, p, q = params.k, params.p, params.q
    if k + p > min(m, n):
        raise ValueError(f"k + p = {k + p} exceeds min(m, n) = {min(m, n)}")
    gen = _as_generator(rng)
    G = gen.standard_normal((n, k + p))
    Y = _concat_matmul(blocks, plan, G)
    for _ in range(q):
        Q, _r = np.linalg.qr(Y)
        Z, _r = np.linalg.qr(_concat_rmatmul(blocks, plan, Q))
        Y = _concat_matmul(blocks, plan, Z)
    Uy, sy, _vt = np.linalg.svd(Y, full_matrices=False)
    Q = Uy[:, :k]
    return LowRankEstimate(Q, _concat_rmatmul(blocks, plan, Q))


def intersection_svd(C_hat: LowRankEstimate, row_idx) -> SvdFactors:
    """Full SVD of W, the rows ``row_idx`` of the column sample."""
    W = C_hat.left[np.asarray(row_idx, dtype=np.int64)] @ C_hat.right.T
    U, s, Vt = np.linalg.svd(W, full_matrices=False)
    return SvdFactors(U, s, Vt.T)


def intersection_rank(C_hat: LowRankEstimate, row_idx, tol: RankTolerance = DEFAULT_TOL) -> int:
    U, s, V = intersection_svd(C_hat, row_idx)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol.cutoff(U.shape[0], V.shape[0]) * s[0]))


def gen_nystrom(
    C_hat: LowRankEstimate,
    R_hat: LowRankEstimate,
    row_idx,
    col_idx,
    tol: RankTolerance = DEFAULT_TOL,
) -> LowRankEstimate:
    """Generalized Nystrom reconstruction ``C W^+ R``.

    ``C_hat`` is m x l (the sampled columns ``col_idx``), ``R_hat`` is d x n
    (the sampled rows ``row_idx``); W is taken from the rows of ``C_hat``.
    The result is kept as ``(C V_W S_W^+) (U_W^T R)``.
    """
    row_idx = np.asarray(row_idx, dtype=np.int64)
    col_idx = np.asarray(col_idx, dtype=np.int64)
    m, l = C_hat.shape
    d, n = R_hat.shape
    if row_idx.size != d or col_idx.size != l:
        raise ShapeError(f"index sets ({row_idx.size}, {col_idx.size}) do not match C ({m}x{l}) / R ({d}x{n})")
    if row_idx.size and (row_idx.min() < 0 or row_idx.max() >= m):
        raise ShapeError("row index outside C")
    if col_idx.size and (col_idx.min() < 0 or col_idx.max() >= n):
        raise ShapeError("column index outside R")
    Uw, s, Vw = intersection_svd(C_hat, row_idx)
    if s.size == 0 or s[0] == 0:
        return LowRankEstimate.zeros(m, n)
    keep = s > tol.cutoff(d, l) * s[0]
    Uw, s, Vw = Uw[:, keep], s[keep], Vw[:, keep]
    left = C_hat.left @ (C_hat.right.T @ Vw) / s
    right = R_hat.right @ (R_hat.left.T @ Uw)
    return LowRankEstimate(left, right)


def average_estimates(ests: Sequence[LowRankEstimate], recompress_to: int | None = None) -> LowRankEstimate:
    """Factored mean of estimates (stacked factors scaled by 1/t)."""
    if not ests:
        raise ValueError("cannot average an empty list")
    shape = ests[0].shape
    if any(e.shape != shape for e in ests):
        raise ShapeError("estimates disagree on shape")
    t = len(ests)
    left = np.hstack([e.left for e in ests]) / t
    right = np.hstack([e.right for e in ests])
    if recompress_to is None and left.shape[1] <= min(shape):
        return LowRankEstimate(left, right)
    # stacked width may exceed min(m, n); the compact SVD is exact
    return compress_factors(left, right, recompress_to)


def compress_factors(left: np.ndarray, right: np.ndarray, rank: int | None = None) -> LowRankEstimate:
    """Compact (optionally truncated) SVD form of ``left @ right.T`` for
    factors of any width."""
    m, n = left.shape[0], right.shape[0]
    if left.shape[1] == 0:
        return LowRankEstimate.zeros(m, n)
    Qa, Ra = np.linalg.qr(left)
    Qb, Rb = np.linalg.qr(right)
    u, s, vt = np.linalg.svd(Ra @ Rb.T)
    r = int(np.sum(s > 0))
    if rank is not None:
        r = min(r, rank)
    return LowRankEstimate((Qa @ u[:, :r]) * s[:r], Qb @ vt[:r].T)
