"""Coherence and spikiness statistics of low-rank matrices."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .matio import LowRankEstimate
from .sketch import DEFAULT_TOL, RankTolerance


class UndefinedStatisticError(ValueError):
    """Raised for statistics that are undefined on the zero matrix."""


class NotOrthonormalError(ValueError):
    pass


@dataclass(frozen=True)
class CoherenceProfile:
    r: int
    mu0_u: float
    mu0_v: float
    mu1: float
    alpha: float

    @property
    def mu0(self) -> float:
        return max(self.mu0_u, self.mu0_v)

    def is_coherent(self, mu: float) -> bool:
        """(mu, r)-coherence: mu0 <= mu and mu1 <= sqrt(mu)."""
        return self.mu0 <= mu and self.mu1 <= np.sqrt(mu)

    def to_dict(self) -> dict:
        return asdict(self)


def mu0(V, n: int | None = None, r: int | None = None, atol: float = 1e-8) -> float:
    """(n/r) times the largest squared row norm of an orthonormal n x r factor."""
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    n = V.shape[0] if n is None else n
    r = V.shape[1] if r is None else r
    if V.shape != (n, r) or r == 0:
        raise ValueError(f"expected an {n}x{r} factor with r >= 1, got {V.shape}")
    if np.linalg.norm(V.T @ V - np.eye(r)) > atol * max(r, 1):
        raise NotOrthonormalError("factor columns are not orthonormal")
    return float(n / r * np.max(np.sum(V * V, axis=1)))


def _dense(L) -> np.ndarray:
    if isinstance(L, LowRankEstimate):
        return L.materialize()
    return np.asarray(L, dtype=float)


def _compact_svd(A: np.ndarray, tol: RankTolerance):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise UndefinedStatisticError("statistic undefined for the zero matrix")
    r = int(np.sum(s > tol.cutoff(*A.shape) * s[0]))
    return U[:, :r], s[:r], Vt[:r].T


def mu1(L, tol: RankTolerance = DEFAULT_TOL) -> float:
    """sqrt(mn/r) * max |(U V^T)_ij| from the compact SVD."""
    A = _dense(L)
    U, _, V = _compact_svd(A, tol)
    m, n = A.shape
    r = U.shape[1]
    return float(np.sqrt(m * n / r) * np.max(np.abs(U @ V.T)))


def spikiness(A) -> float:
    """sqrt(mn) * max|a_ij| / ||A||_F."""
    A = _dense(A)
    fro = np.linalg.norm(A)
    if fro == 0:
        raise UndefinedStatisticError("spikiness undefined for the zero matrix")
    return float(np.sqrt(A.size) * np.max(np.abs(A)) / fro)


def coherence_profile(L, tol: RankTolerance = DEFAULT_TOL) -> CoherenceProfile:
    A = _dense(L)
    U, _, V = _compact_svd(A, tol)
    m, n = A.shape
    r = U.shape[1]
    return CoherenceProfile(
        r=r,
        mu0_u=float(m / r * np.max(np.sum(U * U, axis=1))),
        mu0_v=float(n / r * np.max(np.sum(V * V, axis=1))),
        mu1=float(np.sqrt(m * n / r) * np.max(np.abs(U @ V.T))),
        alpha=spikiness(A),
    )
