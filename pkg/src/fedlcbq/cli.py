"""fedlcbq command-line front end.

Exit codes: 0 success, 2 validation error, 3 invariant failure, 4 I/O or
file-format error. Errors are also printed to stderr as a JSON object.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import diagnostics
from .data import OfflineDataset, sample_agent_datasets
from .errors import ContractViolation, InvariantFailure, TraceParseError, ValidationError
from .experiments import (METRIC_COLUMNS, SWEEP_COLUMNS, ExperimentConfig, behavior_policies,
                          run_experiment, run_sweep, write_csv)
from .generators import chain_mdp, random_mdp, split_masks, split_mdp
from .mdp import (DeterministicPolicy, TabularMdp, average_concentrability,
                  clipped_concentrability, occupancy_distributions, value_iteration)
from .schedules import build_schedule, exponential_round_bound, validate_schedule
from .trace import RunTrace

EXIT_OK, EXIT_VALIDATION, EXIT_INVARIANT, EXIT_IO = 0, 2, 3, 4


def _emit(doc):
    print(json.dumps(doc, indent=1, default=_json_default))


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and x == float("inf"):
        return "inf"
    raise TypeError(f"not JSON serializable: {type(x)}")


def _finite(x):
    return x if np.isfinite(x) else "inf"


def _out_path(args, default):
    path = args.out or default
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _out_dir(args, default):
    path = args.out or default
    os.makedirs(path, exist_ok=True)
    return path


def _load_config(args):
    if not args.config:
        raise ValidationError(f"`{args.command}` needs --config <json>")
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


# --- subcommands -------------------------------------------------------------

def cmd_gen_mdp(args):
    seed = 0 if args.seed is None else args.seed
    if args.kind == "random":
        mdp = random_mdp(args.S, args.A, args.H, seed)
    elif args.kind == "chain":
        mdp = chain_mdp(args.S, args.H)
    else:
        mdp = split_mdp(args.S, args.A, args.H)
    path = _out_path(args, f"{args.kind}_mdp.json")
    mdp.save(path)
    vt, pi = value_iteration(mdp)
    info = {"path": path, "kind": args.kind, "S": mdp.S, "A": mdp.A, "H": mdp.H,
            "optimal_value": float(mdp.rho @ vt.V[0])}
    if args.kind == "split":
        d_opt = occupancy_distributions(mdp, pi)
        pols, _ = behavior_policies(mdp, [{"kind": "masked_uniform", "mask": k}
                                         for k in split_masks(mdp)], 2)
        occ = [occupancy_distributions(mdp, p) for p in pols]
        single = [clipped_concentrability(d_opt, d, mdp.S) for d in occ]
        avg = average_concentrability(d_opt, occ, mdp.S)
        if not np.isfinite(avg) or any(np.isfinite(c) for c in single):
            raise InvariantFailure("split MDP does not realize the collective-coverage regime")
        info["single_agent_concentrability"] = [_finite(c) for c in single]
        info["average_concentrability"] = avg
    _emit(info)
    return EXIT_OK


def cmd_gen_data(args):
    mdp = TabularMdp.load(args.mdp)
    spec = {"kind": args.behavior}
    if args.epsilon is not None:
        spec["epsilon"] = args.epsilon
    if args.mask:
        specs = [dict(spec, mask=m) for m in args.mask]
        if len(specs) != args.M:
            raise ValidationError(f"{len(specs)} masks given for M={args.M}")
    else:
        specs = spec
    pols, ids = behavior_policies(mdp, specs, args.M)
    seed = 0 if args.seed is None else args.seed
    datasets = sample_agent_datasets(mdp, pols, args.K, seed, ids)
    out = _out_dir(args, "data")
    paths = []
    for d in datasets:
        p = os.path.join(out, f"agent_{d.agent_id}.bin")
        d.save(p)
        paths.append(p)
    _emit({"datasets": paths, "M": args.M, "K": args.K, "master_seed": seed})
    return EXIT_OK


def cmd_run(args):
    cfg = _load_config(args)
    if args.trace:
        cfg.trace = True
    mdp = TabularMdp.load(args.mdp) if args.mdp else None
    datasets = [OfflineDataset.load(p) for p in args.data] if args.data else None
    out = _out_dir(args, cfg.out)
    rows = []
    traces = []
    for seed in cfg.seeds:
        res = run_experiment(cfg, seed, mdp=mdp, datasets=datasets)
        rows.extend(res.rows)
        if res.trace is not None:
            tpath = os.path.join(out, f"trace_s{seed}.flcqt")
            res.trace.save(tpath)
            traces.append(tpath)
        mdp_path = os.path.join(out, "mdp.json")
        res.mdp.save(mdp_path)
    write_csv(os.path.join(out, "metrics.csv"), rows, METRIC_COLUMNS)
    finals = {r["seed"]: r["value_gap"] for r in rows}
    _emit({"metrics": os.path.join(out, "metrics.csv"), "mdp": mdp_path, "traces": traces,
           "final_value_gap": finals})
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load_config(args)
    if not cfg.axes:
        raise ValidationError("sweep config defines no axes")
    out = _out_dir(args, cfg.out)
    rows, summary = run_sweep(cfg, workers=args.workers)
    write_csv(os.path.join(out, "runs.csv"), rows, METRIC_COLUMNS)
    write_csv(os.path.join(out, "sweep.csv"), summary, SWEEP_COLUMNS)
    _emit({"runs": os.path.join(out, "runs.csv"), "sweep": os.path.join(out, "sweep.csv"),
           "cells": summary})
    return EXIT_OK


def cmd_verify(args):
    trace = RunTrace.load(args.trace)
    mdp = TabularMdp.load(args.mdp)
    policy = None
    if args.policy:
        with open(args.policy) as fh:
            policy = DeterministicPolicy(np.array(json.load(fh), dtype=np.int64))
    reports = diagnostics.run_all(trace, mdp, policy)
    doc = {"passed": all(r.passed for r in reports), "checks": [r.to_dict() for r in reports]}
    if args.out:
        with open(_out_path(args, args.out), "w") as fh:
            json.dump(doc, fh, indent=1, default=_json_default)
    _emit(doc)
    return EXIT_OK if doc["passed"] else EXIT_INVARIANT


def cmd_schedule(args):
    points = [int(p) for p in args.points.split(",")] if args.points else None
    gamma = args.gamma
    if gamma is None and args.kind == "exponential" and args.H:
        gamma = 2.0 / args.H
    sched = build_schedule(args.kind, args.K, H=args.H, tau=args.tau, gamma=gamma,
                           points=points)
    taus = sched.intervals
    report = validate_schedule(sched, args.H) if args.H else None
    doc = {"schedule": sched.to_dict(), "n_rounds": len(sched), "intervals": list(taus),
           "ratios": [b / a for a, b in zip(taus, taus[1:])],
           "validation": report.to_dict() if report else None}
    if len(sched) == args.K:
        doc["warning"] = "communication-heavy: every episode is a sync point"
    code = EXIT_OK
    if args.kind == "exponential":
        bound = exponential_round_bound(args.K, args.H)
        doc["round_bound"] = bound
        doc["within_round_bound"] = len(sched) <= bound
        if len(sched) > bound:
            code = EXIT_INVARIANT
    _emit(doc)
    return code


# --- parser ------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="fedlcbq", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--config", default=None, help="experiment config JSON")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-mdp", parents=[common], help="generate an MDP file")
    g.add_argument("--kind", choices=("random", "chain", "split"), required=True)
    g.add_argument("--S", type=int, required=True)
    g.add_argument("--A", type=int, default=2)
    g.add_argument("--H", type=int, required=True)
    g.set_defaults(func=cmd_gen_mdp)

    d = sub.add_parser("gen-data", parents=[common], help="sample per-agent offline datasets")
    d.add_argument("--mdp", required=True)
    d.add_argument("--M", type=int, required=True)
    d.add_argument("--K", type=int, required=True)
    d.add_argument("--behavior", default="uniform",
                   choices=("uniform", "epsilon_optimal", "masked_uniform"))
    d.add_argument("--epsilon", type=float)
    d.add_argument("--mask", action="append", help="named split mask per agent (repeatable)")
    d.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", parents=[common], help="run one experiment per seed")
    r.add_argument("--mdp", help="MDP file overriding the config's mdp entry")
    r.add_argument("--data", nargs="+", help="pre-built dataset files, one per agent")
    r.add_argument("--trace", action="store_true", help="write a trace file per seed")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="grid sweep over config axes")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", parents=[common], help="check a trace against the analysis")
    v.add_argument("--trace", required=True)
    v.add_argument("--mdp", required=True)
    v.add_argument("--policy", help="JSON (H, S) action table; defaults to the optimal policy")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("schedule", parents=[common], help="build and validate a sync schedule")
    c.add_argument("--kind", choices=("periodic", "exponential", "explicit"), required=True)
    c.add_argument("--K", type=int, required=True)
    c.add_argument("--H", type=int)
    c.add_argument("--tau", type=int)
    c.add_argument("--gamma", type=float, help="growth rate for exponential schedules (default 2/H)")
    c.add_argument("--points", help="comma-separated sync points for explicit schedules")
    c.set_defaults(func=cmd_schedule)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ContractViolation) as exc:
        code, kind, err = EXIT_VALIDATION, "validation", exc
    except InvariantFailure as exc:
        code, kind, err = EXIT_INVARIANT, "invariant", exc
    except TraceParseError as exc:
        code, kind, err = EXIT_IO, "parse", exc
    except OSError as exc:
        code, kind, err = EXIT_IO, "io", exc
    doc = {"error": kind, "type": type(err).__name__, "message": str(err)}
    if isinstance(err, TraceParseError):
        doc["offset"] = err.offset
    print(json.dumps(doc), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
