"""Run metrics (APE, AQD) and trace persistence (CSV per replication, JSON aggregate)."""

from __future__ import annotations

import json
import math
import os

import numpy as np

from . import __version__
from .mdp import Policy

CSV_BASE_COLUMNS = ("t", "ape", "aqd", "coordinated", "msgs_total", "est_err_m")


def ape(pi_est: Policy, pi_star: Policy, state_mask=None) -> float:
    """Fraction of states where the two policies disagree (optionally masked)."""
    a = np.asarray(pi_est.actions)
    b = np.asarray(pi_star.actions)
    if a.shape != b.shape:
        raise ValueError("policies must cover the same state space")
    diff = a != b
    if state_mask is not None:
        mask = np.asarray(state_mask, dtype=bool)
        if mask.shape != diff.shape:
            raise ValueError("state_mask must match the state space")
        diff = diff[mask]
    if diff.size == 0:
        return 0.0
    return float(np.mean(diff))


def aqd(q_est: np.ndarray, q_star: np.ndarray, mask=None) -> float:
    """Mean squared entrywise difference; optionally restricted to a validity mask."""
    q_est = np.asarray(q_est, dtype=float)
    q_star = np.asarray(q_star, dtype=float)
    if q_est.shape != q_star.shape:
        raise ValueError("Q-tables must share a shape")
    diff = (q_est - q_star) ** 2
    if mask is None:
        return float(diff.mean())
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != diff.shape:
        raise ValueError("mask must match the Q-table shape")
    return float(diff[mask].mean())


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return format(value, ".12g")
    return str(value)


def csv_columns(n_agents: int) -> list:
    return list(CSV_BASE_COLUMNS) + [f"cost_agent_{i}" for i in range(n_agents)]


def write_trace_csv(path: str, records, n_agents: int, resolved_config: dict) -> None:
    """One CSV per replication; header comments embed the resolved config."""
    lines = [f"# memqnet {__version__}"]
    for key in sorted(resolved_config):
        lines.append(f"# {key} = {resolved_config[key]}")
    lines.append(",".join(csv_columns(n_agents)))
    for r in records:
        row = [_fmt(r.t), _fmt(r.ape), _fmt(r.aqd), _fmt(r.coordinated),
               _fmt(r.msgs_total), _fmt(r.est_err_m)]
        row.extend(_fmt(c) for c in r.costs)
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace_csv(path: str) -> tuple:
    """(column -> float array with NaN for absent, config dict) from a trace CSV."""
    meta = {}
    rows = []
    header = None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            if line:
                rows.append(line.split(","))
    if header is None:
        raise ValueError(f"{path} has no header row")
    columns = {}
    for j, name in enumerate(header):
        vals = [r[j] if j < len(r) else "" for r in rows]
        columns[name] = np.array([float(v) if v != "" else math.nan for v in vals])
    return columns, meta


def summarize_run(result, runtime_s: float) -> dict:
    """Scalar summary of one replication."""
    records = result.records
    final = records[-1] if records else None
    total_steps = result.config.n_steps
    return {
        "runtime_s": runtime_s,
        "final_ape": None if final is None else final.ape,
        "final_aqd": None if final is None else final.aqd,
        "final_est_err_m": None if final is None else final.est_err_m,
        "coordinated_fraction": (result.coordinated_steps / total_steps
                                 if total_steps else 0.0),
        "uu_steps": result.uu_steps,
        "class_counts": result.class_counts,
        "messages": result.ledger.as_dict(),
        "leader": result.leader,
    }


def _mean_std(values) -> dict:
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    arr = np.asarray(vals, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": int(arr.size)}


def write_aggregate_json(path: str, summaries: list, resolved_config: dict) -> dict:
    """Aggregate JSON across replications: mean/std per scalar metric."""
    scalar_keys = ("runtime_s", "final_ape", "final_aqd", "final_est_err_m",
                   "coordinated_fraction")
    agg = {
        "version": __version__,
        "config": {k: repr(v) for k, v in sorted(resolved_config.items())},
        "replications": len(summaries),
        "metrics": {k: _mean_std([s[k] for s in summaries]) for k in scalar_keys},
        "messages_total": _mean_std([s["messages"]["total"] for s in summaries]),
        "per_replication": summaries,
    }
    with open(path, "w") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return agg
