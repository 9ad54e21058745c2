"""Matrix data model: observed entries, factored low-rank estimates, triplet I/O."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import IO, NamedTuple

import numpy as np


class TripletParseError(ValueError):
    """Malformed line in a triplet file."""

    def __init__(self, lineno: int, line: str, reason: str = "expected 'i j v'"):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


class DuplicateEntryError(ValueError):
    pass


class BoundsError(IndexError, ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """Sparse set of observed entries P_Omega(M) of an m x n matrix.

    Coordinates are stored as parallel arrays (0-based). Instances are
    treated as immutable; the arrays are marked read-only on construction.
    """

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ShapeError(f"dimensions must be positive, got {self.m}x{self.n}")
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        vals = np.asarray(self.vals, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == vals.shape):
            raise ShapeError("rows, cols and vals must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.m or cols.min() < 0 or cols.max() >= self.n:
                raise BoundsError(f"observation index outside {self.m}x{self.n}")
            if not np.all(np.isfinite(vals)):
                raise ValueError("observed values must be finite")
            keys = rows * self.n + cols
            if np.unique(keys).size != keys.size:
                raise DuplicateEntryError("duplicate (i, j) coordinate")
        for a in (rows, cols, vals):
            a.flags.writeable = False
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "vals", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    def __len__(self) -> int:
        return self.nnz

    def triplets(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(v)) for i, j, v in zip(self.rows, self.cols, self.vals)]

    @classmethod
    def from_triplets(cls, m: int, n: int, obs) -> "ObservedMatrix":
        obs = list(obs)
        if not obs:
            return cls(m, n, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
        i, j, v = zip(*obs)
        return cls(m, n, np.array(i), np.array(j), np.array(v, dtype=float))

    @classmethod
    def from_dense(cls, A, mask=None) -> "ObservedMatrix":
        """Observe ``A`` on ``mask`` (all entries when mask is None)."""
        A = np.asarray(A, dtype=float)
        if mask is None:
            i, j = np.unravel_index(np.arange(A.size), A.shape)
        else:
            i, j = np.nonzero(mask)
        return cls(A.shape[0], A.shape[1], i, j, A[i, j])

    def to_sparse(self):
        import scipy.sparse as sp

        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=self.shape)

    def equals(self, other: "ObservedMatrix") -> bool:
        if self.shape != other.shape or self.nnz != other.nnz:
            return False
        a = np.lexsort((self.cols, self.rows))
        b = np.lexsort((other.cols, other.rows))
        return (
            np.array_equal(self.rows[a], other.rows[b])
            and np.array_equal(self.cols[a], other.cols[b])
            and np.array_equal(self.vals[a], other.vals[b])
        )


@dataclass(frozen=True, eq=False)
class LowRankEstimate:
    """Rank-k matrix held as ``left @ right.T`` (left is m x k, right is n x k)."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=np.float64)
        right = np.asarray(self.right, dtype=np.float64)
        if left.ndim != 2 or right.ndim != 2 or left.shape[1] != right.shape[1]:
            raise ShapeError(f"incompatible factors {left.shape} and {right.shape}")
        if left.shape[1] > min(left.shape[0], right.shape[0]):
            raise ShapeError("factor width exceeds min(m, n)")
        if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
            raise ValueError("factor entries must be finite")
        left.flags.writeable = False
        right.flags.writeable = False
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def m(self) -> int:
        return self.left.shape[0]

    @property
    def n(self) -> int:
        return self.right.shape[0]

    @property
    def k(self) -> int:
        return self.left.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    @classmethod
    def zeros(cls, m: int, n: int) -> "LowRankEstimate":
        return cls(np.zeros((m, 0)), np.zeros((n, 0)))

    @classmethod
    def from_svd(cls, U, s, V) -> "LowRankEstimate":
        return cls(np.asarray(U) * np.asarray(s), np.asarray(V))

    def materialize(self) -> np.ndarray:
        return materialize(self)

    def columns(self, idx) -> "LowRankEstimate":
        return LowRankEstimate(self.left, self.right[np.asarray(idx, dtype=np.int64)])

    def rows(self, idx) -> "LowRankEstimate":
        return LowRankEstimate(self.left[np.asarray(idx, dtype=np.int64)], self.right)

    def entries(self, rows, cols) -> np.ndarray:
        """Values at the coordinate pairs without forming the dense matrix."""
        return np.einsum("ij,ij->i", self.left[rows], self.right[cols])

    def transpose(self) -> "LowRankEstimate":
        return LowRankEstimate(self.right, self.left)

    def fro_norm(self) -> float:
        g = (self.left.T @ self.left) * (self.right.T @ self.right)
        return float(np.sqrt(max(g.sum(), 0.0)))

    def compact_svd(self, rel_cutoff: float = 0.0) -> "SvdFactors":
        """Compact SVD from the factors via two thin QRs (no m x n product)."""
        if self.k == 0:
            return SvdFactors(np.zeros((self.m, 0)), np.zeros(0), np.zeros((self.n, 0)))
        Qa, Ra = np.linalg.qr(self.left)
        Qb, Rb = np.linalg.qr(self.right)
        u, s, vt = np.linalg.svd(Ra @ Rb.T)
        keep = s > max(rel_cutoff * s[0], 0.0)
        return SvdFactors(Qa @ u[:, keep], s[keep], Qb @ vt[keep].T)

    def to_json(self) -> str:
        return json.dumps(estimate_to_dict(self))

    @classmethod
    def from_json(cls, text: str) -> "LowRankEstimate":
        return estimate_from_dict(json.loads(text))


class SvdFactors(NamedTuple):
    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.s.size)

    def as_estimate(self) -> LowRankEstimate:
        return LowRankEstimate.from_svd(self.U, self.s, self.V)


def densify(obs: ObservedMatrix) -> np.ndarray:
    """Zero-filled dense matrix P_Omega(M)."""
    A = np.zeros((obs.m, obs.n), order="F")
    A[obs.rows, obs.cols] = obs.vals
    return A


def materialize(est: LowRankEstimate) -> np.ndarray:
    if est.k == 0:
        return np.zeros((est.m, est.n), order="F")
    return np.asfortranarray(est.left @ est.right.T)


def load_triplets(source, one_based: bool = False) -> ObservedMatrix:
    """Parse ``i j v`` lines with an optional ``% m n`` header.

    ``source`` may be a path, a text/binary stream, or raw bytes. Blank lines
    and additional ``%``/``#`` comment lines are skipped.
    """
    if isinstance(source, (bytes, bytearray)):
        stream: IO = io.StringIO(source.decode())
    elif isinstance(source, str):
        stream = open(source, "r")
    else:
        stream = source
    dims = None
    seen: set[tuple[int, int]] = set()
    rows, cols, vals = [], [], []
    try:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.decode() if isinstance(raw, bytes) else raw
            text = line.strip()
            if not text:
                continue
            if text.startswith("%"):
                parts = text[1:].split()
                if dims is None and not rows and len(parts) == 2:
                    try:
                        dims = (int(parts[0]), int(parts[1]))
                    except ValueError:
                        raise TripletParseError(lineno, text, "bad header") from None
                    if dims[0] < 1 or dims[1] < 1:
                        raise TripletParseError(lineno, text, "non-positive dimension")
                continue
            if text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 3:
                raise TripletParseError(lineno, text)
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise TripletParseError(lineno, text) from None
            if one_based:
                i, j = i - 1, j - 1
            if i < 0 or j < 0:
                raise BoundsError(f"line {lineno}: negative index")
            if not np.isfinite(v):
                raise TripletParseError(lineno, text, "non-finite value")
            if dims is not None and (i >= dims[0] or j >= dims[1]):
                raise BoundsError(f"line {lineno}: ({i}, {j}) outside declared {dims[0]}x{dims[1]}")
            if (i, j) in seen:
                raise DuplicateEntryError(f"line {lineno}: duplicate coordinate ({i}, {j})")
            seen.add((i, j))
            rows.append(i)
            cols.append(j)
            vals.append(v)
    finally:
        if isinstance(source, str):
            stream.close()
    if dims is None:
        if not rows:
            raise TripletParseError(0, "", "no header and no entries")
        dims = (max(rows) + 1, max(cols) + 1)
    return ObservedMatrix(
        dims[0], dims[1],
        np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals, dtype=float),
    )


def save_triplets(obs: ObservedMatrix, dest) -> None:
    """Write ``obs`` with a ``% m n`` header; values use repr for exact round trip."""
    lines = [f"% {obs.m} {obs.n}\n"]
    lines += [f"{i} {j} {v!r}\n" for i, j, v in obs.triplets()]
    if isinstance(dest, str):
        with open(dest, "w") as fh:
            fh.writelines(lines)
    else:
        dest.writelines(lines)


def estimate_to_dict(est: LowRankEstimate) -> dict:
    return {
        "m": est.m,
        "n": est.n,
        "k": est.k,
        "left": est.left.tolist(),
        "right": est.right.tolist(),
    }


def estimate_from_dict(d: dict) -> LowRankEstimate:
    m, n, k = int(d["m"]), int(d["n"]), int(d["k"])
    left = np.array(d["left"], dtype=float).reshape(m, k)
    right = np.array(d["right"], dtype=float).reshape(n, k)
    return LowRankEstimate(left, right)
