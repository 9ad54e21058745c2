"""Experiment harness: run base solvers and DFC variants over seeds, score RMSE."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dfc import DfcConfig, base_solver, dfc_nys, dfc_proj, dfc_rp, part_mf
from .matio import LowRankEstimate, ObservedMatrix, ShapeError, load_triplets
from .sampling import SeededRng, sample_without_replacement
from .simgen import gen_mc_instance, gen_rmf_instance
from .solvers import ApgConfig, apg_rmf

CSV_FIELDS = ["method", "seed", "rmse", "ms_divide", "ms_factor", "ms_combine", "ms_total", "rank"]
METHODS = ("base", "part", "proj", "rp", "nys")


def rmse(truth, est, mask=None) -> float:
    """Root mean square difference over all cells or over ``mask``.

    ``truth`` and ``est`` may be dense arrays or :class:`LowRankEstimate`.
    ``truth`` may also be an :class:`ObservedMatrix` of held-out entries, in
    which case the mask is its support. ``mask`` is a boolean array or a
    ``(rows, cols)`` pair.
    """
    if isinstance(truth, ObservedMatrix):
        if mask is not None:
            raise ValueError("mask is implied by an ObservedMatrix truth")
        mask = (truth.rows, truth.cols)
        truth_vals = truth.vals
        if _shape(est) != truth.shape:
            raise ShapeError(f"shape mismatch {truth.shape} vs {_shape(est)}")
        est_vals = _values(est, *mask)
    else:
        if _shape(truth) != _shape(est):
            raise ShapeError(f"shape mismatch {_shape(truth)} vs {_shape(est)}")
        if mask is None:
            diff = _dense(truth) - _dense(est)
            return float(np.sqrt(np.mean(diff * diff)))
        if isinstance(mask, np.ndarray) and mask.dtype == bool:
            mask = np.nonzero(mask)
        rows, cols = (np.asarray(a, dtype=np.int64) for a in mask)
        mask = (rows, cols)
        truth_vals = _values(truth, rows, cols)
        est_vals = _values(est, rows, cols)
    if truth_vals.size == 0:
        raise ValueError("empty mask")
    diff = truth_vals - est_vals
    return float(np.sqrt(np.mean(diff * diff)))


def _shape(x):
    return x.shape if not isinstance(x, LowRankEstimate) else (x.m, x.n)


def _dense(x) -> np.ndarray:
    return x.materialize() if isinstance(x, LowRankEstimate) else np.asarray(x, dtype=float)


def _values(x, rows, cols) -> np.ndarray:
    if isinstance(x, LowRankEstimate):
        return x.entries(rows, cols)
    return np.asarray(x, dtype=float)[rows, cols]


@dataclass
class ExperimentSpec:
    task: str = "mc"
    m: int = 200
    n: int = 200
    r: int = 5
    frac: float = 0.25
    """MC: fraction of entries revealed. RMF: fraction of entries corrupted."""
    sigma: float = 0.1
    input_path: str | None = None
    one_based: bool = False
    test_frac: float = 0.1
    methods: list[str] = field(default_factory=lambda: ["base", "proj"])
    t: int | None = None
    l_frac: float = 0.1
    d_frac: float = 0.1
    workers: int = 1
    seeds: list[int] = field(default_factory=lambda: [0])
    p: int = 5
    q: int = 2
    solver: dict = field(default_factory=dict)
    lam: float | None = None
    output: str | None = None

    def __post_init__(self):
        if self.task not in ("mc", "rmf"):
            raise ValueError(f"unknown task {self.task!r}")
        for name in ("l_frac", "d_frac"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.input_path is None and not 0 <= self.frac <= 1:
            raise ValueError("frac must lie in [0, 1]")
        for meth in self.methods:
            parse_method(meth)

    @property
    def apg(self) -> ApgConfig:
        return ApgConfig(**self.solver)

    def column_groups(self, n: int) -> int:
        t = self.t if self.t is not None else round(1.0 / self.l_frac)
        return int(min(max(t, 1), n))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(**d)


def parse_method(label: str) -> tuple[str, bool]:
    """``'proj-ens'`` -> ``('proj', True)``."""
    name, _, suffix = label.lower().partition("-")
    if name not in METHODS or suffix not in ("", "ens") or (suffix and name in ("base", "part")):
        raise ValueError(f"unknown method {label!r}")
    return name, suffix == "ens"


@dataclass
class ResultRow:
    method: str
    seed: int | str
    rmse: float
    ms_divide: float
    ms_factor: float
    ms_combine: float
    ms_total: float
    rank: int | float
    config: dict = field(default_factory=dict)

    def csv_dict(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


def _instance(spec: ExperimentSpec, seed: int):
    """(observed input, truth for scoring, dense M for RMF base)."""
    rng = SeededRng(seed, 0)
    if spec.input_path is not None:
        full = load_triplets(spec.input_path, one_based=spec.one_based)
        n_test = int(round(spec.test_frac * full.nnz))
        if spec.task == "rmf" or n_test == 0:
            raise ValueError("loaded inputs are scored on held-out entries; need task=mc and test_frac > 0")
        test = np.zeros(full.nnz, dtype=bool)
        test[sample_without_replacement(full.nnz, n_test, rng)] = True
        train = ObservedMatrix(full.m, full.n, full.rows[~test], full.cols[~test], full.vals[~test])
        held = ObservedMatrix(full.m, full.n, full.rows[test], full.cols[test], full.vals[test])
        return train, held, None
    m, n = spec.m, spec.n
    if spec.task == "mc":
        s = max(1, int(round(spec.frac * m * n)))
        inst = gen_mc_instance(m, n, spec.r, s, spec.sigma, rng)
        return inst.obs, inst.L0, None
    s = int(round(spec.frac * m * n))
    inst = gen_rmf_instance(m, n, spec.r, s, spec.sigma, rng)
    return ObservedMatrix.from_dense(inst.M), inst.L0, inst.M


def run_method(label: str, obs: ObservedMatrix, spec: ExperimentSpec, seed: int, dense=None):
    """Run one method; returns (estimate, timings dict, rank)."""
    name, ens = parse_method(label)
    cfg_apg = spec.apg
    if name == "base":
        t0 = time.perf_counter()
        if spec.task == "mc":
            est, rep = base_solver("mc", cfg_apg)(obs)
        else:
            est, _, rep = apg_rmf(dense, spec.lam, cfg_apg)
        ms = (time.perf_counter() - t0) * 1e3
        return est, {"ms_divide": 0.0, "ms_factor": ms, "ms_combine": 0.0, "ms_total": ms}, rep.rank
    m, n = obs.shape
    t = spec.column_groups(n)
    cfg = DfcConfig(
        variant=name if name != "part" else "proj",
        ensemble=ens,
        t=t,
        l=max(1, min(n, math.ceil(spec.l_frac * n))),
        d=max(1, min(m, math.ceil(spec.d_frac * m))),
        p=spec.p,
        q=spec.q,
        seed=seed,
        task=spec.task,
        solver_cfg=cfg_apg,
        lam=spec.lam,
        workers=spec.workers,
    )
    fn = {"part": part_mf, "proj": dfc_proj, "rp": dfc_rp, "nys": dfc_nys}[name]
    est, rep = fn(obs, cfg)
    timings = {"ms_divide": rep.ms_divide, "ms_factor": rep.ms_factor,
               "ms_combine": rep.ms_combine, "ms_total": rep.ms_total}
    return est, timings, rep.rank


def run_experiment(spec: ExperimentSpec, summary: bool = True) -> list[ResultRow]:
    """Every (seed, method) pair, sorted by (method, seed), then per-method
    mean and std rows when ``summary`` is set and there are several seeds."""
    rows: list[ResultRow] = []
    for seed in spec.seeds:
        obs, truth, dense = _instance(spec, seed)
        for label in spec.methods:
            est, timings, rank = run_method(label, obs, spec, seed, dense)
            rows.append(ResultRow(method=label, seed=seed, rmse=rmse(truth, est), rank=rank,
                                  config=_echo(spec), **timings))
    rows.sort(key=lambda r: (r.method, r.seed))
    if summary and len(spec.seeds) > 1:
        rows += summarize(rows)
    return rows


def _echo(spec: ExperimentSpec) -> dict:
    d = asdict(spec)
    d.pop("output", None)
    return d


def summarize(rows: list[ResultRow]) -> list[ResultRow]:
    out = []
    for method in sorted({r.method for r in rows if isinstance(r.seed, int)}):
        group = [r for r in rows if r.method == method and isinstance(r.seed, int)]
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            vals = {k: float(fn([getattr(r, k) for r in group]))
                    for k in ("rmse", "ms_divide", "ms_factor", "ms_combine", "ms_total", "rank")}
            out.append(ResultRow(method=method, seed=stat, config=group[0].config, **vals))
    return out


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r.csv_dict())
    return buf.getvalue()


def rows_to_json(rows: list[ResultRow]) -> str:
    return json.dumps([asdict(r) for r in rows], indent=2)


def write_results(rows: list[ResultRow], path: str) -> None:
    """Write CSV to ``path`` and a JSON mirror next to it."""
    base = path[:-4] if path.endswith(".csv") else path
    with open(base + ".csv", "w") as fh:
        fh.write(rows_to_csv(rows))
    with open(base + ".json", "w") as fh:
        fh.write(rows_to_json(rows))
