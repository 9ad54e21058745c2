"""Command line entry point: ``dfcmf gen|solve|dfc|diag|bench``."""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import bench
from .dfc import DfcConfig, recommend_sampling, run_dfc
from .diagnostics import coherence_profile
from .matio import (
    LowRankEstimate,
    ObservedMatrix,
    densify,
    estimate_from_dict,
    estimate_to_dict,
    load_triplets,
    save_triplets,
)
from .sampling import SeededRng
from .simgen import gen_mc_instance, gen_rmf_instance
from .solvers import ApgConfig, apg_mc, apg_rmf


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--rel-tol", type=float, default=1e-4)
    p.add_argument("--floor-ratio", type=float, default=1e-4)
    p.add_argument("--lam", type=float, default=None, help="RMF sparsity weight (default 1/sqrt(max(m, n)))")


def _apg(args) -> ApgConfig:
    return ApgConfig(max_iters=args.max_iters, rel_tol=args.rel_tol, floor_ratio=args.floor_ratio)


def _load_truth(path: str | None) -> LowRankEstimate | None:
    if path is None:
        return None
    with open(path) as fh:
        d = json.load(fh)
    return estimate_from_dict(d["L0"] if "L0" in d else d)


def _write_estimate(est: LowRankEstimate, path: str | None, extra: dict | None = None) -> None:
    if path is None:
        return
    payload = estimate_to_dict(est)
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh)


def cmd_gen(args) -> dict:
    rng = SeededRng(args.seed, 0)
    m, n = args.m, args.n or args.m
    s = args.s if args.s is not None else int(round(args.frac * m * n))
    if args.task == "mc":
        inst = gen_mc_instance(m, n, args.r, s, args.sigma, rng)
        obs = inst.obs
        sidecar = {"task": "mc", "sigma": args.sigma, "s": s, "seed": args.seed, "L0": estimate_to_dict(inst.L0)}
    else:
        inst = gen_rmf_instance(m, n, args.r, s, args.sigma, rng)
        obs = ObservedMatrix.from_dense(inst.M)
        sidecar = {
            "task": "rmf", "sigma": args.sigma, "s": s, "seed": args.seed, "L0": estimate_to_dict(inst.L0),
            "S0": [[int(i), int(j), float(v)] for i, j, v in zip(inst.S0.rows, inst.S0.cols, inst.S0.vals)],
        }
    save_triplets(obs, args.out + ".txt")
    with open(args.out + ".json", "w") as fh:
        json.dump(sidecar, fh)
    return {"triplets": args.out + ".txt", "sidecar": args.out + ".json", "m": m, "n": n, "observed": obs.nnz}


def cmd_solve(args) -> dict:
    obs = load_triplets(args.input, one_based=args.one_based)
    if args.task == "mc":
        est, rep = apg_mc(obs, _apg(args))
    else:
        est, _, rep = apg_rmf(densify(obs), args.lam, _apg(args))
    out = {"iterations": rep.iterations, "objective": rep.objective, "residual": rep.residual,
           "rank": rep.rank, "wall_ms": rep.wall_ms}
    truth = _load_truth(args.truth)
    if truth is not None:
        out["rmse"] = bench.rmse(truth, est)
    _write_estimate(est, args.out)
    return out


def cmd_dfc(args) -> dict:
    obs = load_triplets(args.input, one_based=args.one_based)
    m, n = obs.shape
    t = args.t if args.t is not None else max(1, min(n, round(1.0 / args.l_frac)))
    cfg = DfcConfig(
        variant=args.method, ensemble=args.ensemble, t=t,
        l=max(1, min(n, math.ceil(args.l_frac * n))), d=max(1, min(m, math.ceil(args.d_frac * m))),
        p=args.p, q=args.q, seed=args.seed, task=args.task, solver_cfg=_apg(args), lam=args.lam,
        workers=args.workers,
    )
    est, rep = run_dfc(obs, cfg)
    out = {"method": args.method + ("-ens" if args.ensemble else ""), "rank": rep.rank,
           "ms_divide": rep.ms_divide, "ms_factor": rep.ms_factor, "ms_combine": rep.ms_combine,
           "ms_total": rep.ms_total, "ms_critical": rep.ms_critical,
           "subproblem_ranks": rep.subproblem_ranks}
    if rep.k is not None:
        out["k"] = rep.k
    if rep.clamped:
        out["clamped"] = {k: list(v) for k, v in rep.clamped.items()}
    if rep.w_rank is not None:
        out["w_rank"] = rep.w_rank
        out["rank_deficient"] = rep.rank_deficient
    truth = _load_truth(args.truth)
    if truth is not None:
        out["rmse"] = bench.rmse(truth, est)
    _write_estimate(est, args.out)
    return out


def cmd_diag(args) -> dict:
    out = {}
    if args.input:
        if args.input.endswith(".json"):
            with open(args.input) as fh:
                d = json.load(fh)
            L = estimate_from_dict(d["L0"] if "L0" in d else d)
        else:
            L = densify(load_triplets(args.input, one_based=args.one_based))
        out["profile"] = coherence_profile(L).to_dict()
    if args.recommend:
        m, n = args.m, args.n or args.m
        adv = recommend_sampling(m, n, args.r, args.mu, args.s, args.eps, args.beta)
        rec = {"c": adv.c, "l": adv.l, "l_bound": adv.l_bound, "t": adv.t, "p": adv.p}
        if "profile" in out:
            rec["d"] = adv.d(out["profile"]["mu0_u"])
        out["recommendation"] = rec
    if not out:
        raise ValueError("nothing to do: pass an input file and/or --recommend")
    return out


def cmd_bench(args) -> dict:
    if args.config:
        with open(args.config) as fh:
            spec = bench.ExperimentSpec.from_dict(json.load(fh))
    else:
        spec = bench.ExperimentSpec(
            task=args.task, m=args.m, n=args.n or args.m, r=args.r, frac=args.frac, sigma=args.sigma,
            input_path=args.input, one_based=args.one_based, methods=args.methods.split(","),
            t=args.t, l_frac=args.l_frac, d_frac=args.d_frac, workers=args.workers,
            seeds=_seeds(args), p=args.p, q=args.q,
            solver={"max_iters": args.max_iters, "rel_tol": args.rel_tol, "floor_ratio": args.floor_ratio},
            lam=args.lam, output=args.out,
        )
    rows = bench.run_experiment(spec)
    if spec.output:
        bench.write_results(rows, spec.output)
    else:
        sys.stdout.write(bench.rows_to_csv(rows))
    return {}


def _seeds(args) -> list[int]:
    if args.seeds:
        return [int(s) for s in args.seeds.split(",")]
    return [args.seed]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dfcmf", description="Divide-Factor-Combine matrix factorization")
    sub = ap.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="write a synthetic instance (triplets + JSON ground truth)")
    g.add_argument("--task", choices=["mc", "rmf"], default="mc")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--r", type=int, default=5)
    g.add_argument("--frac", type=float, default=0.25, help="revealed (mc) or corrupted (rmf) fraction")
    g.add_argument("--s", type=int, help="exact revealed/corrupted count; overrides --frac")
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output prefix")
    g.set_defaults(func=cmd_gen)

    for name, func, hlp in (("solve", cmd_solve, "run the base APG solver"), ("dfc", cmd_dfc, "run a DFC variant")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("input")
        p.add_argument("--task", choices=["mc", "rmf"], default="mc")
        p.add_argument("--one-based", action="store_true")
        p.add_argument("--truth", help="JSON sidecar or estimate to score against")
        p.add_argument("--out", help="write the estimate as JSON")
        _add_solver_args(p)
        p.set_defaults(func=func)
        if name == "dfc":
            p.add_argument("--method", choices=["proj", "rp", "nys"], default="proj")
            p.add_argument("--ensemble", action="store_true")
            p.add_argument("--t", type=int)
            p.add_argument("--l-frac", type=float, default=0.1)
            p.add_argument("--d-frac", type=float, default=0.1)
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--p", type=int, default=5)
            p.add_argument("--q", type=int, default=2)

    d = sub.add_parser("diag", help="coherence profile as JSON; optional sampling recommendation")
    d.add_argument("input", nargs="?")
    d.add_argument("--one-based", action="store_true")
    d.add_argument("--recommend", action="store_true")
    d.add_argument("--m", type=int)
    d.add_argument("--n", type=int)
    d.add_argument("--r", type=int)
    d.add_argument("--mu", type=float, default=1.0)
    d.add_argument("--s", type=int)
    d.add_argument("--eps", type=float, default=0.5)
    d.add_argument("--beta", type=float, default=1.5)
    d.set_defaults(func=cmd_diag)

    b = sub.add_parser("bench", help="run an experiment grid and emit CSV/JSON")
    b.add_argument("--config", help="JSON ExperimentSpec; overrides the flags below")
    b.add_argument("--input", help="triplet file scored on held-out entries instead of a synthetic instance")
    b.add_argument("--one-based", action="store_true")
    b.add_argument("--task", choices=["mc", "rmf"], default="mc")
    b.add_argument("--method", dest="methods", default="base,proj",
                   help="comma list of base,part,proj,proj-ens,rp,rp-ens,nys,nys-ens")
    b.add_argument("--m", type=int, default=200)
    b.add_argument("--n", type=int)
    b.add_argument("--r", type=int, default=5)
    b.add_argument("--frac", type=float, default=0.25)
    b.add_argument("--sigma", type=float, default=0.1)
    b.add_argument("--t", type=int)
    b.add_argument("--l-frac", type=float, default=0.1)
    b.add_argument("--d-frac", type=float, default=0.1)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--seeds", help="comma separated seed list")
    b.add_argument("--p", type=int, default=5)
    b.add_argument("--q", type=int, default=2)
    b.add_argument("--out", help="output path; writes <out>.csv and <out>.json")
    _add_solver_args(b)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "diag" and args.recommend and None in (args.m, args.r, args.s):
        print("error: --recommend needs --m, --r and --s", file=sys.stderr)
        return 2
    try:
        out = args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if out:
        print(json.dumps(out, indent=2, default=_jsonable))
    return 0


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))


if __name__ == "__main__":
    sys.exit(main())
