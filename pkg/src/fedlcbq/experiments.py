"""Experiment configs, single runs with per-sync metrics, and grid sweeps."""

import copy
import csv
import io
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import make_behavior_policy, sample_agent_datasets
from .engine import HyperParams, run_fedlcbq
from .errors import FedLCBQError, ValidationError
from .generators import make_mdp, split_masks
from .mdp import evaluate_policy, value_iteration
from .schedules import build_schedule

METRIC_COLUMNS = ("run_id", "seed", "M", "K", "schedule_kind", "sync_index", "episode_k",
                  "value_gap", "V1_pess", "V1_pi_k", "comm_rounds_so_far", "payload_entries")
SWEEP_COLUMNS = ("cell", "M", "K", "schedule_kind", "c_B", "n_seeds", "n_failed",
                 "mean_final_gap", "std_final_gap", "comm_rounds", "errors")
SWEEP_AXES = ("M", "K", "schedule", "c_B", "delta", "alpha_gate", "behaviors")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run or a sweep.

    ``behaviors`` is either one spec applied to every agent or a list of M
    specs, each like ``{"kind": "epsilon_optimal", "epsilon": 0.5}`` or
    ``{"kind": "masked_uniform", "mask": "gate"}`` (named split masks).
    ``schedule`` is ``{"kind": ..., "tau" | "gamma" | "points": ...}``.
    """

    mdp: dict
    M: int = 1
    K: int = 100
    behaviors: object = field(default_factory=lambda: {"kind": "uniform"})
    schedule: dict = field(default_factory=lambda: {"kind": "periodic", "tau": 10})
    hyper: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    axes: dict = field(default_factory=dict)
    trace: bool = False
    out: str = "out"

    def __post_init__(self):
        if not self.seeds:
            raise ValidationError("seed list is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValidationError(f"seeds must be distinct: {self.seeds}")
        if int(self.M) < 1 or int(self.K) < 1:
            raise ValidationError(f"M and K must be positive, got M={self.M}, K={self.K}")
        for name, values in self.axes.items():
            if name not in SWEEP_AXES:
                raise ValidationError(f"unknown sweep axis {name!r}; known: {SWEEP_AXES}")
            if not values:
                raise ValidationError(f"sweep axis {name!r} is empty")

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        hyper = dict(doc.pop("hyper", {}))
        for key in ("delta", "c_B", "alpha_gate", "clip_q"):
            if key in doc:
                hyper[key] = doc.pop(key)
        if "datasets" in doc:
            raise ValidationError("pre-built datasets are passed to `run` with --data, not in the config")
        known = {"mdp", "M", "K", "behaviors", "schedule", "seeds", "axes", "trace", "out"}
        extra = set(doc) - known - {"seed"}
        if extra:
            raise ValidationError(f"unknown config fields: {sorted(extra)}")
        if "seed" in doc:
            doc.setdefault("seeds", [doc["seed"]])
            doc.pop("seed")
        if "mdp" not in doc:
            raise ValidationError("config needs an `mdp` entry")
        return cls(hyper=hyper, **doc)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self):
        return {"mdp": self.mdp, "M": self.M, "K": self.K, "behaviors": self.behaviors,
                "schedule": self.schedule, "hyper": self.hyper, "seeds": list(self.seeds),
                "axes": self.axes, "trace": self.trace, "out": self.out}

    def hyper_params(self):
        return HyperParams.from_dict(self.hyper)


def payload_entries(M, S, A, H):
    """Table entries exchanged per sync: local Q up, counters up, Q, N and V down."""
    return M * H * S * A + H * S * A + 2 * H * S * A + H * S


def behavior_policies(mdp, behaviors, M):
    specs = behaviors if isinstance(behaviors, list) else [behaviors] * M
    if len(specs) != M:
        raise ValidationError(f"{len(specs)} behavior specs for M={M} agents")
    out, ids = [], []
    for spec in specs:
        spec = dict(spec)
        kind = spec.get("kind")
        allowed = spec.get("allowed")
        if kind == "masked_uniform" and "mask" in spec:
            masks = split_masks(mdp)
            if spec["mask"] not in masks:
                raise ValidationError(f"unknown mask {spec['mask']!r}; known: {sorted(masks)}")
            allowed = masks[spec["mask"]]
        pol, pid = make_behavior_policy(kind, mdp, epsilon=spec.get("epsilon"),
                                        allowed=allowed, policy=spec.get("policy"))
        if "mask" in spec:
            pid = f"{pid}({spec['mask']})"
        out.append(pol)
        ids.append(pid)
    return out, ids


def make_schedule(spec, K, H):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    gamma = spec.get("gamma")
    if isinstance(gamma, str):      # "2/H" style shorthand
        gamma = 2.0 / H if gamma.replace(" ", "") == "2/H" else float(gamma)
    return build_schedule(kind, K, H=H, tau=spec.get("tau"), gamma=gamma, points=spec.get("points"))


@dataclass
class RunOutput:
    rows: list
    trace: object
    result: object
    mdp: object
    datasets: list


def run_experiment(config, seed, mdp=None, datasets=None, run_id=None):
    """Generate data, run the learner, and evaluate pi_k exactly at every sync."""
    mdp = mdp if mdp is not None else make_mdp(config.mdp)
    M, K = int(config.M), int(config.K)
    if datasets is None:
        policies, ids = behavior_policies(mdp, config.behaviors, M)
        datasets = sample_agent_datasets(mdp, policies, K, seed, ids)
    else:
        M, K = len(datasets), datasets[0].K
        for d in datasets:
            d.check_against(mdp)
    schedule = make_schedule(config.schedule, K, mdp.H)
    hyper = config.hyper_params()
    _, v_star = evaluate_policy(mdp, value_iteration(mdp)[1])
    run_id = run_id or f"s{seed}"
    payload = payload_entries(M, mdp.S, mdp.A, mdp.H)
    rows = []

    def on_sync(state):
        _, v_pi = evaluate_policy(mdp, state.policy)
        rows.append({"run_id": run_id, "seed": seed, "M": M, "K": K,
                     "schedule_kind": schedule.kind, "sync_index": state.sync_index,
                     "episode_k": state.episode, "value_gap": v_star - v_pi,
                     "V1_pess": float(mdp.rho @ state.global_V[0]), "V1_pi_k": v_pi,
                     "comm_rounds_so_far": state.sync_index, "payload_entries": payload})

    result = run_fedlcbq(mdp, datasets, schedule, hyper, trace=config.trace, on_sync=on_sync)
    return RunOutput(rows, result.trace, result, mdp, datasets)


def format_value(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path_or_fh, rows, columns):
    """CSV with a fixed column order and ``repr`` floats (byte-stable)."""
    own = isinstance(path_or_fh, (str, os.PathLike))
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c, "")) for c in columns])
    finally:
        if own:
            fh.close()


def csv_text(rows, columns=METRIC_COLUMNS):
    buf = io.StringIO()
    write_csv(buf, rows, columns)
    return buf.getvalue()


# --- sweeps ------------------------------------------------------------------

def sweep_cells(config):
    """Cross product of the sweep axes as (cell id, overrides) pairs."""
    names = sorted(config.axes)
    cells = []
    for combo in itertools.product(*(config.axes[n] for n in names)):
        overrides = dict(zip(names, combo))
        label = ",".join(f"{n}={_label(v)}" for n, v in overrides.items()) or "base"
        cells.append((label, overrides))
    return cells


def _label(v):
    if isinstance(v, dict):
        return "/".join(f"{k}:{v[k]}" for k in sorted(v))
    if isinstance(v, list):
        return "+".join(_label(x) for x in v)
    return str(v)


def apply_overrides(config, overrides):
    cfg = copy.deepcopy(config)
    cfg.axes = {}
    for name, value in overrides.items():
        if name in ("M", "K"):
            setattr(cfg, name, int(value))
        elif name == "schedule":
            cfg.schedule = dict(value)
        elif name == "behaviors":
            cfg.behaviors = value
        else:
            cfg.hyper[name] = value
    return cfg


def _sweep_job(args):
    cfg_doc, overrides, seed, cell = args
    cfg = apply_overrides(ExperimentConfig.from_dict(cfg_doc), overrides)
    try:
        out = run_experiment(cfg, seed, run_id=f"{cell}|s{seed}")
    except FedLCBQError as exc:
        return cell, seed, None, f"{type(exc).__name__}: {exc}"
    return cell, seed, out.rows, None


def run_sweep(config, workers=1):
    """Run every axis cell for every seed; failures are recorded, not raised.

    Returns (per-run rows, aggregated rows). Aggregation is keyed by cell
    id, so the result does not depend on completion order.
    """
    cells = sweep_cells(config)
    doc = config.to_dict()
    jobs = [(doc, ov, seed, cell) for cell, ov in cells for seed in config.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    by_cell = {cell: [] for cell, _ in cells}
    all_rows = []
    for cell, seed, rows, err in results:
        by_cell[cell].append((seed, rows, err))
        if rows:
            all_rows.extend(rows)
    summary = []
    for cell, ov in cells:
        cfg = apply_overrides(config, ov)
        runs = by_cell[cell]
        finals = [rows[-1]["value_gap"] for _, rows, err in runs if err is None]
        rounds = [rows[-1]["comm_rounds_so_far"] for _, rows, err in runs if err is None]
        errors = [f"s{seed}: {err}" for seed, _, err in runs if err is not None]
        summary.append({
            "cell": cell, "M": cfg.M, "K": cfg.K, "schedule_kind": cfg.schedule.get("kind"),
            "c_B": cfg.hyper_params().c_B, "n_seeds": len(runs), "n_failed": len(errors),
            "mean_final_gap": float(np.mean(finals)) if finals else float("nan"),
            "std_final_gap": float(np.std(finals)) if finals else float("nan"),
            "comm_rounds": int(max(rounds)) if rounds else 0,
            "errors": "; ".join(errors)})
    return all_rows, summary
