"""Seeded uniform sampling, column partitioning and submatrix extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matio import BoundsError, ObservedMatrix

# stream ids reserved for the top-level draws of one DFC run; F-step
# subproblems use their own index as stream id
STREAM_PARTITION = 1 << 32
STREAM_ROWS = (1 << 32) + 1
STREAM_COLS = (1 << 32) + 2
STREAM_SKETCH = (1 << 32) + 3


@dataclass(frozen=True)
class SeededRng:
    """A (seed, stream) pair naming one reproducible random stream.

    The draw sequence comes from PCG64 seeded through ``SeedSequence`` with
    the stream id as spawn key, so it is identical on every platform.
    Use :meth:`generator` to obtain a fresh numpy ``Generator`` positioned
    at the start of the stream.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream: int) -> "SeededRng":
        return SeededRng(self.seed, stream)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, SeededRng):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return SeededRng(int(rng)).generator()


def sample_without_replacement(n: int, l: int, rng) -> np.ndarray:
    """``l`` distinct indices drawn uniformly from ``range(n)``."""
    if not 1 <= l <= n:
        raise ValueError(f"need 1 <= l <= n, got l={l}, n={n}")
    gen = _as_generator(rng)
    if l == n:
        return gen.permutation(n)
    return gen.choice(n, size=l, replace=False, shuffle=True)


@dataclass(frozen=True)
class PartitionPlan:
    n: int
    groups: tuple[np.ndarray, ...]
    order: np.ndarray = field(repr=False)
    """Column order of the concatenated groups; ``order[p]`` is the original
    index of the p-th column of ``[C_1 ... C_t]``."""

    @property
    def t(self) -> int:
        return len(self.groups)

    @property
    def perm_inverse(self) -> np.ndarray:
        """Position of each original column inside ``[C_1 ... C_t]``."""
        inv = np.empty(self.n, dtype=np.int64)
        inv[self.order] = np.arange(self.n)
        return inv

    def original_index(self, group: int, position: int) -> int:
        return int(self.groups[group][position])

    def sizes(self) -> list[int]:
        return [g.size for g in self.groups]


def partition_columns(n: int, t: int, rng) -> PartitionPlan:
    """Uniform random partition of ``range(n)`` into ``t`` near-equal groups.

    A uniform permutation is chunked so that group sizes are ``ceil(n/t)``
    or ``floor(n/t)``; each group is then sorted.
    """
    if not 1 <= t <= n:
        raise ValueError(f"need 1 <= t <= n, got t={t}, n={n}")
    perm = _as_generator(rng).permutation(n)
    groups = tuple(np.sort(chunk).astype(np.int64) for chunk in np.array_split(perm, t))
    for g in groups:
        g.flags.writeable = False
    order = np.concatenate(groups)
    return PartitionPlan(n=n, groups=groups, order=order)


def _check_idx(idx, bound: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= bound):
        raise BoundsError(f"index outside [0, {bound})")
    if np.unique(idx).size != idx.size:
        raise ValueError("indices must be distinct")
    return idx


def extract_columns(obs: ObservedMatrix, idx) -> ObservedMatrix:
    """Observed m x len(idx) submatrix; column p is original column idx[p]."""
    idx = _check_idx(idx, obs.n)
    if idx.size == 0:
        raise ValueError("empty column selection")
    pos = np.full(obs.n, -1, dtype=np.int64)
    pos[idx] = np.arange(idx.size)
    newc = pos[obs.cols]
    keep = newc >= 0
    return ObservedMatrix(obs.m, idx.size, obs.rows[keep], newc[keep], obs.vals[keep])


def extract_rows(obs: ObservedMatrix, idx) -> ObservedMatrix:
    idx = _check_idx(idx, obs.m)
    if idx.size == 0:
        raise ValueError("empty row selection")
    pos = np.full(obs.m, -1, dtype=np.int64)
    pos[idx] = np.arange(idx.size)
    newr = pos[obs.rows]
    keep = newr >= 0
    return ObservedMatrix(idx.size, obs.n, newr[keep], obs.cols[keep], obs.vals[keep])


def reassemble_columns(blocks: list[ObservedMatrix], plan: PartitionPlan) -> ObservedMatrix:
    """Inverse of extracting every group of ``plan``."""
    rows, cols, vals = [], [], []
    for g, blk in zip(plan.groups, blocks):
        rows.append(blk.rows)
        cols.append(g[blk.cols])
        vals.append(blk.vals)
    m = blocks[0].m
    return ObservedMatrix(m, plan.n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))
