"""Semantic and safety evaluators.

The checkers are the authority on every reported rate: they recompute
constraint satisfaction from raw geometry/dynamics rather than trusting
solver self-reports, and semantic verdicts apply the scenario's
published criteria (ROI passage and arrival windows for the free flyer;
waypoint/along-track/terminal set inclusion at tolerance q for proximity
operations).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import freeflyer as ff
from ..passive_safety import gtilde
from ..roe import LtvModel, control_matrix
from ..scp import Trajectory
from .modes import BehaviorMode, ProblemInstance
from .rpo_ocp import get_safety_context

OBSTACLE_TOL = 2e-6     # m
THRUST_TOL = 1e-8       # m/s allocation residual


@dataclass
class SemanticVerdict:
    correct: bool
    q: float | None = None
    checks: dict = field(default_factory=dict)


@dataclass
class CommandMeta:
    """What a command asked for, as numbers: placeholder values (orbits
    for epochs, signed meters for along-track separations)."""

    behavior: int
    values: dict
    instance: ProblemInstance


def arrival_time(traj: Trajectory, goal_p: np.ndarray, eps: float) -> float:
    """Epoch of the first node after which the position stays within eps
    of the goal; inf when the trajectory never settles."""
    dist = np.linalg.norm(traj.states[:, :2] - goal_p, axis=1)
    inside = dist <= eps
    if not inside[-1]:
        return float("inf")
    j = len(inside) - 1
    while j > 0 and inside[j - 1]:
        j -= 1
    return float(traj.times[j])


def semantic_eval_freeflyer(traj: Trajectory, inst: ProblemInstance, cfg) -> SemanticVerdict:
    ffc = cfg["freeflyer"]
    mode = BehaviorMode.get("freeflyer", inst.behavior)
    checks = {}
    if mode.passage in ("left", "right"):
        d = np.linalg.norm(traj.states[:, :2] - inst.waypoint, axis=1)
        checks["roi_passage"] = bool(np.min(d) <= ffc["wyp_radius"])
    t_arr = arrival_time(traj, np.asarray(inst.x_goal[:2]), ffc["goal_tol"])
    checks["arrival_time_s"] = t_arr
    if mode.tempo == "fast":
        checks["terminal_time"] = bool(t_arr < 30.0)
    else:
        checks["terminal_time"] = bool(35.0 <= t_arr <= 40.0)
    correct = checks["terminal_time"] and checks.get("roi_passage", True)
    return SemanticVerdict(correct=bool(correct), checks=checks)


def _effective_delta(delta: np.ndarray) -> np.ndarray:
    # strictly fixed components carry a +/-2 m auxiliary margin
    return np.where(delta > 0, delta, 2.0)


def _box_ok(x: np.ndarray, center: np.ndarray, delta: np.ndarray, q: float) -> bool:
    return bool(np.all(np.abs(x - center) <= q * _effective_delta(delta)))


def semantic_eval_rpo(traj: Trajectory, meta: CommandMeta, q: float, cfg) -> SemanticVerdict:
    """Terminal-state consistency AND the commanded waypoint / along-track
    quantity at each commanded epoch."""
    inst = meta.instance
    model = LtvModel.from_config(cfg["orbit"])
    gamma_n = control_matrix(model, inst.times[-1])
    x_term = traj.states[-1] + gamma_n @ traj.controls[-1]
    checks = {
        "terminal_state": _box_ok(x_term, inst.terminal.value, inst.terminal.delta, q)
    }
    wyp_checks = []
    for w in inst.waypoints:
        epoch_ph = w.epoch_placeholder
        if epoch_ph is not None and epoch_ph in meta.values:
            k_cmd = int(round(10.0 * meta.values[epoch_ph])) - 1
        else:
            k_cmd = w.idx
        k_cmd = min(max(k_cmd, 0), traj.horizon - 1)
        dlam_ph = w.dlambda_placeholder
        if dlam_ph is not None and dlam_ph in meta.values:
            dlam_cmd = meta.values[dlam_ph]
            tol = q * max(abs(w.delta[1]), 1e-12)
            ok = bool(abs(traj.states[k_cmd, 1] - dlam_cmd) <= tol)
            checks[f"dlambda@{k_cmd + 1}"] = ok
            wyp_checks.append(ok)
        elif epoch_ph is not None and epoch_ph in meta.values:
            ok = _box_ok(traj.states[k_cmd], w.value, w.delta, q)
            checks[f"waypoint@{k_cmd + 1}"] = ok
            wyp_checks.append(ok)
    correct = checks["terminal_state"] and all(wyp_checks)
    return SemanticVerdict(correct=bool(correct), q=q, checks=checks)


def node_violations(traj: Trajectory, inst: ProblemInstance, cfg) -> np.ndarray:
    """Per-node violation indicators against the full nonconvex
    constraint set (independent re-check from raw constraints)."""
    n = traj.horizon
    out = np.zeros(n, dtype=int)
    if inst.scenario == "freeflyer":
        ffc = cfg["freeflyer"]
        ws = ff.FFWorkspace.from_config(ffc)
        thrusters = ff.ThrusterModel.from_config(ffc)
        p = traj.states[:, :2]
        bad = np.zeros(n, dtype=bool)
        for b in range(3):
            dist = np.linalg.norm(p - ws.centers[b], axis=1)
            bad |= dist < ws.koz_radii[b] - OBSTACLE_TOL
        lo, hi = ws.table_bounds
        bad |= np.any(p < lo - OBSTACLE_TOL, axis=1) | np.any(p > hi + OBSTACLE_TOL, axis=1)
        for k in range(n):
            if bad[k]:
                continue
            _, resid = ff.allocate_thrusters(thrusters, traj.controls[k], traj.states[k, 2])
            bad[k] = resid > THRUST_TOL
        out[:] = bad.astype(int)
        return out
    if inst.scenario == "rpo":
        ctx = get_safety_context(cfg, "nominal")
        tol = cfg["rpo"]["gtilde_tol"]
        for k in range(n):
            g = gtilde(ctx, k, traj.states[k], traj.controls[k]) / ctx.tau_s
            out[k] = int(g > tol)
        return out
    raise ValueError(f"unknown scenario {inst.scenario!r}")


def safety_eval(traj: Trajectory, inst: ProblemInstance, cfg) -> int:
    """Cumulative violation count c_1 (number of violating nodes)."""
    return int(node_violations(traj, inst, cfg).sum())
