"""Synthetic noisy MC / RMF instances.

L0 = A B^T with A, B having i.i.d. N(0, (1/r)^(1/2)) entries (standard
deviation ``r**-0.25``), so each entry of L0 has unit variance. Gaussian
variates come from numpy's PCG64 ``standard_normal`` (ziggurat), which is
frozen per seed across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matio import LowRankEstimate, ObservedMatrix, materialize
from .sampling import SeededRng, _as_generator, sample_without_replacement
from .solvers import OutlierEstimate

DEFAULT_SIGMA = 0.1


@dataclass(frozen=True, eq=False)
class McInstance:
    L0: LowRankEstimate
    obs: ObservedMatrix
    sigma: float
    s: int


@dataclass(frozen=True, eq=False)
class RmfInstance:
    L0: LowRankEstimate
    S0: OutlierEstimate
    M: np.ndarray
    sigma: float
    s: int


def gen_low_rank(m: int, n: int, r: int, rng) -> LowRankEstimate:
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank {r} outside [1, {min(m, n)}]")
    gen = _as_generator(rng)
    std = r ** -0.25
    A = gen.standard_normal((m, r)) * std
    B = gen.standard_normal((n, r)) * std
    return LowRankEstimate(A, B)


def gen_mc_instance(m: int, n: int, r: int, s: int, sigma: float = DEFAULT_SIGMA, rng=0) -> McInstance:
    """Reveal ``s`` uniformly chosen entries of L0 + Z0, Z0 ~ N(0, sigma^2)."""
    if not 1 <= s <= m * n:
        raise ValueError(f"s={s} outside [1, {m * n}]")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    gen = _as_generator(rng)
    L0 = gen_low_rank(m, n, r, gen)
    cells = np.sort(sample_without_replacement(m * n, s, gen))
    i, j = np.divmod(cells, n)
    noise = gen.standard_normal(s) * sigma
    vals = L0.entries(i, j) + noise
    return McInstance(L0=L0, obs=ObservedMatrix(m, n, i, j, vals), sigma=sigma, s=s)


def gen_rmf_instance(m: int, n: int, r: int, s: int, sigma: float = DEFAULT_SIGMA, rng=0) -> RmfInstance:
    """M = L0 + S0 + Z0 with ``s`` outliers uniform on [0, 1] at uniform cells."""
    if not 0 <= s <= m * n:
        raise ValueError(f"s={s} outside [0, {m * n}]")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    gen = _as_generator(rng)
    L0 = gen_low_rank(m, n, r, gen)
    if s:
        cells = np.sort(sample_without_replacement(m * n, s, gen))
    else:
        cells = np.zeros(0, dtype=np.int64)
    i, j = np.divmod(cells, n)
    S0 = OutlierEstimate(m, n, i.astype(np.int64), j.astype(np.int64), gen.uniform(0.0, 1.0, size=s))
    M = materialize(L0) + S0.to_dense()
    if sigma > 0:
        M = M + gen.standard_normal((m, n)) * sigma
    return RmfInstance(L0=L0, S0=S0, M=np.asfortranarray(M), sigma=sigma, s=s)


def seeded(seed: int, stream: int = 0) -> SeededRng:
    return SeededRng(seed, stream)
