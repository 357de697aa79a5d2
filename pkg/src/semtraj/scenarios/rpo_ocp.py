"""Proximity-operation trajectory problems.

The dataset-generation problem minimizes the sum of impulsive maneuver
magnitudes subject to the LTV dynamics, sampled waypoint equalities, the
terminal corrective-burn condition, and the continuous-time passive
safety rows.  Its convex relaxation (everything except the safety rows)
is the waypoint-hopping warm start.  Refinement tracks a warm start
with the safety rows active, the terminal state frozen to the warm
start's post-burn endpoint, and no waypoint equalities.

Safety is enforced against a slightly inflated keep-out radius
(``koz_enforce_margin``) so converged trajectories clear the nominal
sphere strictly; verification always uses the nominal radius.
"""

from __future__ import annotations

import math

import numpy as np

from ..passive_safety import (
    KozShape,
    SafetyContext,
    gtilde_batch,
    linearize_ct_safety_batch,
)
from ..roe import LtvModel, control_matrix, stm
from ..scp import L2FuelObjective, NonconvexBlock, ScpConfig, ScpProblem, TrackObjective, Trajectory, scp_solve
from .. import conic
from .modes import ProblemInstance

_CTX_CACHE: dict = {}


def get_safety_context(cfg, which: str = "nominal") -> SafetyContext:
    """Shared immutable context on the scenario's node grid.

    ``which`` selects the nominal keep-out radius (verification,
    violation counting) or the margin-inflated enforcement radius (SCP
    rows).
    """
    rpo = cfg["rpo"]
    orbit = cfg["orbit"]
    radius = rpo["koz_radius"]
    if which == "enforce":
        radius *= 1.0 + rpo["koz_enforce_margin"]
    elif which != "nominal":
        raise ValueError("which must be 'nominal' or 'enforce'")
    key = (
        orbit["a"], orbit["e"], orbit["i_deg"], orbit["raan_deg"], orbit["argp_deg"],
        orbit["mean_anom_deg"], bool(orbit["j2"]), radius, rpo["tau_s_orbits"],
        rpo["nq"], rpo["n_panels"], rpo["n_nodes"], rpo["t_f_orbits"],
    )
    if key not in _CTX_CACHE:
        model = LtvModel.from_config(orbit)
        period = model.period
        times = np.linspace(0.0, rpo["t_f_orbits"] * period, rpo["n_nodes"])
        _CTX_CACHE[key] = SafetyContext(
            model, KozShape(radius), times,
            tau_s=rpo["tau_s_orbits"] * period,
            nq=rpo["nq"], n_panels=rpo["n_panels"],
        )
    return _CTX_CACHE[key]


class PassiveSafetyBlock(NonconvexBlock):
    """One hinge-integral row per node, normalized by the drift horizon."""

    kind = "ineq"
    name = "passive_safety"
    unit = 1.0

    def __init__(self, ctx: SafetyContext):
        self.ctx = ctx
        self.n_rows = ctx.n_nodes

    def violation(self, traj):
        return gtilde_batch(self.ctx, traj.states, traj.controls) / self.ctx.tau_s

    def linearize(self, traj):
        g0, gx, gu = linearize_ct_safety_batch(self.ctx, traj.states, traj.controls)
        cx = gx / self.ctx.tau_s
        cu = gu / self.ctx.tau_s
        rhs = (
            np.einsum("kj,kj->k", gx, traj.states)
            + np.einsum("kj,kj->k", gu, traj.controls)
            - g0
        ) / self.ctx.tau_s
        return np.arange(self.n_rows), cx, cu, None, rhs


def _ltv_matrices(cfg, times):
    model = LtvModel.from_config(cfg["orbit"])
    n = len(times)
    A = np.empty((n - 1, 6, 6))
    B = np.empty((n - 1, 6, 3))
    for k in range(n - 1):
        phi = stm(model, times[k], times[k + 1])
        A[k] = phi
        B[k] = phi @ control_matrix(model, times[k])
    gamma_n = control_matrix(model, times[-1])
    return A, B, gamma_n


def build_rpo_ocp(inst: ProblemInstance, cfg, with_safety: bool = True) -> ScpProblem:
    """Fuel-minimal problem; ``with_safety=False`` is the convex
    waypoint-hopping relaxation used as the dataset warm start."""
    times = inst.times
    A, B, gamma_n = _ltv_matrices(cfg, times)
    node_eqs = [(w.idx, np.eye(6), w.value) for w in inst.waypoints]
    nonconvex = []
    if with_safety:
        nonconvex.append(PassiveSafetyBlock(get_safety_context(cfg, "enforce")))
    return ScpProblem(
        N=inst.horizon, nx=6, nu=3, times=times,
        A=A, B=B, d=np.zeros((inst.horizon - 1, 6)),
        x_init=inst.x_init,
        objective=L2FuelObjective(),
        terminal=(np.eye(6), gamma_n, inst.terminal.value),
        node_eqs=node_eqs,
        nonconvex=nonconvex,
    )


def build_rpo_refinement(inst: ProblemInstance, warm: Trajectory, lam: float, cfg) -> ScpProblem:
    """Feasibility projection onto the passively safe set.

    The terminal condition is taken from the warm start's own post-burn
    endpoint and the waypoint equalities are dropped.
    """
    if warm.horizon != inst.horizon:
        raise ValueError(f"warm-start horizon {warm.horizon} != instance horizon {inst.horizon}")
    times = inst.times
    A, B, gamma_n = _ltv_matrices(cfg, times)
    x_f = warm.states[-1] + gamma_n @ warm.controls[-1]
    return ScpProblem(
        N=inst.horizon, nx=6, nu=3, times=times,
        A=A, B=B, d=np.zeros((inst.horizon - 1, 6)),
        x_init=inst.x_init,
        objective=TrackObjective(x_ref=warm.states.copy(), u_ref=warm.controls.copy(), lam=lam),
        terminal=(np.eye(6), gamma_n, x_f),
        nonconvex=[PassiveSafetyBlock(get_safety_context(cfg, "enforce"))],
    )


def rpo_cvx_warm_start(inst: ProblemInstance, cfg, scp_cfg: ScpConfig | None = None):
    """Convex waypoint-hopping solution (no safety rows)."""
    scp_cfg = scp_cfg or ScpConfig.from_config(cfg["scp"])
    prob = build_rpo_ocp(inst, cfg, with_safety=False)
    n = inst.horizon
    warm = Trajectory(times=inst.times, states=np.tile(inst.x_init, (n, 1)), controls=np.zeros((n, 3)))
    return scp_solve(prob, warm, scp_cfg)
