"""Divide-Factor-Combine orchestration (column projection, random projection
and generalized Nystrom variants, plus their ensembles)."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .matio import LowRankEstimate, ObservedMatrix, densify
from .sampling import (
    STREAM_COLS,
    STREAM_PARTITION,
    STREAM_ROWS,
    STREAM_SKETCH,
    SeededRng,
    extract_columns,
    extract_rows,
    partition_columns,
    sample_without_replacement,
)
from .sketch import (
    DEFAULT_TOL,
    RankTolerance,
    RpParams,
    average_estimates,
    compress_factors,
    column_project,
    gen_nystrom,
    intersection_rank,
    random_project,
)
from .solvers import ApgConfig, SolveReport, apg_mc, apg_rmf

VARIANTS = ("proj", "rp", "nys")
TASKS = ("mc", "rmf")

Solver = Callable[[ObservedMatrix], tuple[LowRankEstimate, SolveReport]]


class BlockSolveError(RuntimeError):
    """A base solver failed on one F-step subproblem."""

    def __init__(self, block: int, cause: BaseException):
        super().__init__(f"subproblem {block} failed: {cause!r}")
        self.block = block
        self.__cause__ = cause


@dataclass(frozen=True)
class DfcConfig:
    variant: str = "proj"
    ensemble: bool = False
    t: int = 1
    l: int | None = None
    d: int | None = None
    p: int = 5
    q: int = 2
    seed: int = 0
    task: str = "mc"
    solver_cfg: ApgConfig = field(default_factory=ApgConfig)
    lam: float | None = None
    workers: int = 1
    tol: RankTolerance = DEFAULT_TOL

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.variant == "nys" and (self.l is None or self.d is None or self.l < 1 or self.d < 1):
            raise ValueError("nys needs l >= 1 and d >= 1")
        if self.p < 0 or self.q < 0:
            raise ValueError("p and q must be non-negative")


@dataclass
class DfcReport:
    subproblems: list[SolveReport]
    ms_divide: float = 0.0
    ms_factor: float = 0.0
    ms_combine: float = 0.0
    ms_total: float = 0.0
    k: int | None = None
    clamped: dict = field(default_factory=dict)
    rank: int = 0
    w_rank: int | None = None
    rank_deficient: bool = False

    @property
    def subproblem_ranks(self) -> list[int]:
        return [r.rank for r in self.subproblems]

    @property
    def ms_critical(self) -> float:
        """Divide + slowest subproblem + combine: the running time with one
        worker per subproblem on dedicated cores."""
        slowest = max((r.wall_ms for r in self.subproblems), default=0.0)
        return self.ms_divide + slowest + self.ms_combine


def base_solver(task: str = "mc", cfg: ApgConfig | None = None, lam: float | None = None) -> Solver:
    """Base MF algorithm for the F step. RMF blocks are densified first since
    every entry is observed."""
    cfg = cfg or ApgConfig()
    if task == "mc":
        return lambda obs: apg_mc(obs, cfg)
    if task == "rmf":
        def solve_rmf(obs: ObservedMatrix):
            L, _, rep = apg_rmf(densify(obs), lam, cfg)
            return L, rep
        return solve_rmf
    raise ValueError(f"unknown task {task!r}")


def median_rank(ranks: Sequence[int]) -> int:
    """Lower median of the ranks, floored at 1."""
    if len(ranks) == 0:
        raise ValueError("no ranks given")
    ordered = sorted(int(r) for r in ranks)
    return max(1, ordered[(len(ordered) - 1) // 2])


def _factor(subs: Sequence[ObservedMatrix], solver: Solver, workers: int):
    def run(i):
        try:
            return solver(subs[i])
        except Exception as exc:
            raise BlockSolveError(i, exc) from exc

    if workers == 1 or len(subs) == 1:
        results = [run(i) for i in range(len(subs))]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, len(subs))) as pool:
            results = list(pool.map(run, range(len(subs))))
    return [r[0] for r in results], [r[1] for r in results]


def _solver_for(cfg: DfcConfig, solver: Solver | None) -> Solver:
    return solver if solver is not None else base_solver(cfg.task, cfg.solver_cfg, cfg.lam)


def _ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1e3


def _divide_columns(obs: ObservedMatrix, cfg: DfcConfig):
    plan = partition_columns(obs.n, cfg.t, SeededRng(cfg.seed, STREAM_PARTITION))
    return plan, [extract_columns(obs, g) for g in plan.groups]


def dfc_proj(obs: ObservedMatrix, cfg: DfcConfig, solver: Solver | None = None):
    """Partition columns, factor blocks in parallel, project onto C_1's
    column space (or onto each C_i and average, when ensembling)."""
    solve = _solver_for(cfg, solver)
    start = time.perf_counter()
    plan, subs = _divide_columns(obs, cfg)
    ms_divide = _ms(start)
    t0 = time.perf_counter()
    ests, reports = _factor(subs, solve, cfg.workers)
    ms_factor = _ms(t0)
    t0 = time.perf_counter()
    if cfg.ensemble:
        projections = [column_project(b, ests, plan, cfg.tol) for b in ests]
        out = average_estimates(projections, recompress_to=median_rank([r.rank for r in reports]))
    else:
        out = column_project(ests[0], ests, plan, cfg.tol)
    ms_combine = _ms(t0)
    report = DfcReport(reports, ms_divide, ms_factor, ms_combine, _ms(start), rank=out.k)
    return out, report


def _rp_params(m: int, n: int, k: int, p: int, q: int) -> tuple[RpParams, dict]:
    lim = min(m, n)
    clamped = {}
    if k + p > lim:
        new_k = max(1, min(k, lim - p))
        new_p = min(p, lim - new_k)
        clamped = {"k": (k, new_k), "p": (p, new_p)}
        k, p = new_k, new_p
    return RpParams(k=k, p=p, q=q), clamped


def dfc_rp(obs: ObservedMatrix, cfg: DfcConfig, solver: Solver | None = None):
    """Partition columns, factor blocks, then a rank-k random projection of
    the concatenated estimates with k the median subproblem rank."""
    solve = _solver_for(cfg, solver)
    start = time.perf_counter()
    plan, subs = _divide_columns(obs, cfg)
    ms_divide = _ms(start)
    t0 = time.perf_counter()
    ests, reports = _factor(subs, solve, cfg.workers)
    ms_factor = _ms(t0)
    t0 = time.perf_counter()
    k = median_rank([r.rank for r in reports])
    params, clamped = _rp_params(obs.m, obs.n, k, cfg.p, cfg.q)
    draws = cfg.t if cfg.ensemble else 1
    outs = [random_project(ests, plan, params, SeededRng(cfg.seed, STREAM_SKETCH + i)) for i in range(draws)]
    out = outs[0] if draws == 1 else average_estimates(outs, recompress_to=params.k)
    ms_combine = _ms(t0)
    report = DfcReport(reports, ms_divide, ms_factor, ms_combine, _ms(start), k=params.k, clamped=clamped, rank=out.k)
    return out, report


def dfc_nys(obs: ObservedMatrix, cfg: DfcConfig, solver: Solver | None = None):
    """Sample l columns and, independently, d rows; factor both; recombine
    with the generalized Nystrom method. The ensemble partitions the columns
    into t groups and averages the reconstructions of every (C_i, R) pair."""
    m, n = obs.shape
    if not (1 <= cfg.l <= n and 1 <= cfg.d <= m):
        raise ValueError(f"need 1 <= l <= {n} and 1 <= d <= {m}")
    solve = _solver_for(cfg, solver)
    start = time.perf_counter()
    row_idx = np.sort(sample_without_replacement(m, cfg.d, SeededRng(cfg.seed, STREAM_ROWS)))
    if cfg.ensemble:
        plan = partition_columns(n, cfg.t, SeededRng(cfg.seed, STREAM_PARTITION))
        col_sets = list(plan.groups)
    else:
        col_sets = [np.sort(sample_without_replacement(n, cfg.l, SeededRng(cfg.seed, STREAM_COLS)))]
    subs = [extract_columns(obs, c) for c in col_sets] + [extract_rows(obs, row_idx)]
    ms_divide = _ms(start)
    t0 = time.perf_counter()
    ests, reports = _factor(subs, solve, cfg.workers)
    ms_factor = _ms(t0)
    t0 = time.perf_counter()
    R_hat = ests[-1]
    outs, w_ranks = [], []
    for C_hat, cols in zip(ests[:-1], col_sets):
        outs.append(gen_nystrom(C_hat, R_hat, row_idx, cols, cfg.tol))
        w_ranks.append(intersection_rank(C_hat, row_idx, cfg.tol))
    if len(outs) == 1:
        out = outs[0]
    else:
        out = average_estimates(outs, recompress_to=median_rank([r.rank for r in reports]))
    ms_combine = _ms(t0)
    w_rank = min(w_ranks)
    deficient = any(w < max(r.rank, reports[-1].rank) for w, r in zip(w_ranks, reports[:-1]))
    report = DfcReport(reports, ms_divide, ms_factor, ms_combine, _ms(start),
                       rank=out.k, w_rank=w_rank, rank_deficient=deficient)
    return out, report


def part_mf(obs: ObservedMatrix, cfg: DfcConfig, solver: Solver | None = None):
    """Baseline: factor the column blocks and concatenate them, no C step."""
    solve = _solver_for(cfg, solver)
    start = time.perf_counter()
    plan, subs = _divide_columns(obs, cfg)
    ms_divide = _ms(start)
    t0 = time.perf_counter()
    ests, reports = _factor(subs, solve, cfg.workers)
    ms_factor = _ms(t0)
    t0 = time.perf_counter()
    width = sum(e.k for e in ests)
    left = np.hstack([e.left for e in ests])
    right = np.zeros((obs.n, width))
    at = 0
    for g, e in zip(plan.groups, ests):
        right[g, at:at + e.k] = e.right
        at += e.k
    out = LowRankEstimate(left, right) if width <= min(obs.shape) else compress_factors(left, right)
    ms_combine = _ms(t0)
    return out, DfcReport(reports, ms_divide, ms_factor, ms_combine, _ms(start), rank=out.k)


def run_dfc(obs: ObservedMatrix, cfg: DfcConfig, solver: Solver | None = None):
    fn = {"proj": dfc_proj, "rp": dfc_rp, "nys": dfc_nys}[cfg.variant]
    return fn(obs, cfg, solver)


@dataclass(frozen=True)
class SamplingAdvice:
    """Sample sizes sufficient for the noisy MC guarantee of DFC."""

    c: float
    l: int
    l_bound: float
    p: float
    t: int
    m: int
    n: int
    mu: float
    r: int
    eps: float
    beta: float

    def d_bound(self, mu0_c: float) -> float:
        """Row-count lower bound once mu0 of the column estimate is known."""
        nbar = max(self.m, self.n)
        return self.c * self.l * mu0_c * (2 * self.beta - 1) * math.log(4 * nbar) ** 2 * nbar / (self.n * self.eps**2)

    def d(self, mu0_c: float) -> int:
        return int(min(max(math.ceil(self.d_bound(mu0_c)), 1), self.m))


SAMPLING_CONSTANT = 48000 / math.log(1 / 0.45)


def recommend_sampling(m: int, n: int, r: int, mu: float, s: int, eps: float, beta: float) -> SamplingAdvice:
    """Evaluate the DFC-MC sufficient sampling conditions.

    ``l >= c mu^2 r^2 (m+n) n beta log^2(m+n) / (s eps^2)`` clamped to [1, n],
    ``p >= 242 r log(14 nbar^(2 beta - 2)) / eps^2`` and the row rule of
    :meth:`SamplingAdvice.d_bound`, with ``c = 48000 / log(1/0.45)``.
    """
    if min(m, n, r, s) < 1 or mu <= 0:
        raise ValueError("m, n, r, s and mu must be positive")
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if not beta > 1:
        raise ValueError("beta must exceed 1")
    c = SAMPLING_CONSTANT
    nbar = max(m, n)
    l_bound = c * mu**2 * r**2 * (m + n) * n * beta * math.log(m + n) ** 2 / (s * eps**2)
    l = int(min(max(math.ceil(l_bound), 1), n))
    p = 242 * r * math.log(14 * nbar ** (2 * beta - 2)) / eps**2
    return SamplingAdvice(c=c, l=l, l_bound=l_bound, p=p, t=max(1, n // l), m=m, n=n,
                          mu=mu, r=r, eps=eps, beta=beta)
