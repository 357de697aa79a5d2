"""Free-flyer trajectory problems: dataset generation and refinement.

Dataset generation runs a two-stage scheme: stage one solves the problem
without the collision-avoidance rows (this is also the convex baseline
whose solutions are stored alongside), stage two solves the full problem
warm-started by stage one.  Refinement keeps every hard constraint
except the waypoint machinery and tracks a supplied warm start.
"""

from __future__ import annotations

import numpy as np

from .. import freeflyer as ff
from ..scp import (
    L1FuelObjective,
    NonconvexBlock,
    ScpConfig,
    ScpProblem,
    TrackObjective,
    Trajectory,
    scp_solve,
)
from .modes import ProblemInstance

POS = np.array([[1.0, 0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0, 0]])


class ObstacleBlock(NonconvexBlock):
    """Keep-out rows: koz_radius - ||p_k - center|| <= 0 per node/body."""

    kind = "ineq"
    name = "obstacles"
    unit = 1.0

    def __init__(self, workspace: ff.FFWorkspace, n: int):
        self.ws = workspace
        self.n = n
        self.n_rows = 3 * n

    def violation(self, traj):
        p = traj.states[:, :2]
        out = np.empty(self.n_rows)
        for b in range(3):
            dist = np.linalg.norm(p - self.ws.centers[b], axis=1)
            out[b * self.n : (b + 1) * self.n] = self.ws.koz_radii[b] - dist
        return out

    def linearize(self, traj):
        n, nx = self.n, traj.states.shape[1]
        ks = np.tile(np.arange(n), 3)
        cx = np.zeros((self.n_rows, nx))
        rhs = np.empty(self.n_rows)
        p = traj.states[:, :2]
        for b in range(3):
            rows = slice(b * n, (b + 1) * n)
            d = p - self.ws.centers[b]
            dist = np.linalg.norm(d, axis=1)
            safe = dist > 1e-12
            grad = np.zeros_like(d)
            grad[safe] = d[safe] / dist[safe, None]
            # -grad . p <= dist - koz - grad . p_ref  (degenerate center
            # point keeps a zero gradient: maximally violated row)
            cx[rows, 0] = -grad[:, 0]
            cx[rows, 1] = -grad[:, 1]
            rhs[rows] = dist - self.ws.koz_radii[b] - np.einsum("kj,kj->k", grad, p)
        return ks, cx, None, None, rhs


class AllocationBlock(NonconvexBlock):
    """Thruster allocation rows u_k = R(psi_k) Lambda dv_k, three per node.

    The extras of the trajectory are the per-thruster impulses; the
    bearing coupling is the only nonlinearity and is linearized about
    the reference.
    """

    kind = "eq"
    name = "allocation"

    def __init__(self, thrusters: ff.ThrusterModel, n: int):
        self.model = thrusters
        self.n = n
        self.n_rows = 3 * n
        self.unit = thrusters.dv_max

    def violation(self, traj):
        out = np.empty(self.n_rows)
        for k in range(self.n):
            psi = traj.states[k, 2]
            res = traj.controls[k] - ff.rotation_body_to_global(psi) @ self.model.lam @ traj.extras[k]
            out[3 * k : 3 * k + 3] = res
        return out

    def linearize(self, traj):
        nx, nu, ne = traj.states.shape[1], 3, 8
        ks = np.repeat(np.arange(self.n), 3)
        cx = np.zeros((self.n_rows, nx))
        cu = np.zeros((self.n_rows, nu))
        ce = np.zeros((self.n_rows, ne))
        rhs = np.empty(self.n_rows)
        for k in range(self.n):
            psi = traj.states[k, 2]
            r = ff.rotation_body_to_global(psi)
            jpsi = ff._drotation_dpsi(psi) @ self.model.lam @ traj.extras[k]
            rows = slice(3 * k, 3 * k + 3)
            cu[rows] = np.eye(3)
            ce[rows] = -(r @ self.model.lam)
            cx[rows, 2] = -jpsi
            rhs[rows] = -jpsi * psi
        return ks, cx, cu, ce, rhs


def _base_problem(inst: ProblemInstance, cfg, objective, include_obstacles: bool,
                  include_waypoint: bool) -> ScpProblem:
    ffc = cfg["freeflyer"]
    n = inst.horizon
    a, b = ff.step_matrices(inst.dt)
    thrusters = ff.ThrusterModel.from_config(ffc)
    ws = ff.FFWorkspace.from_config(ffc)
    kappa = ffc["mass"] * ffc["thruster_arm"] / ffc["inertia"]
    dv = thrusters.dv_max
    x_lb = np.array([ws.table_bounds[0][0], ws.table_bounds[0][1], -np.inf, -np.inf, -np.inf, -np.inf])
    x_ub = np.array([ws.table_bounds[1][0], ws.table_bounds[1][1], np.inf, np.inf, np.inf, np.inf])
    # loose outer box on the global wrench (valid for any bearing)
    u_lb = np.array([-3.0 * dv, -3.0 * dv, -4.0 * kappa * dv])
    u_ub = -u_lb

    nonconvex = [AllocationBlock(thrusters, n)]
    if include_obstacles:
        nonconvex.append(ObstacleBlock(ws, n))
    node_balls = []
    if include_waypoint and inst.waypoint is not None:
        node_balls.append((inst.k_wyp, POS, inst.waypoint, ffc["wyp_radius"]))

    def extras_from(X, U):
        E = np.empty((n, 8))
        for k in range(n):
            E[k], _ = ff.allocate_thrusters(thrusters, U[k], X[k, 2])
        return E

    return ScpProblem(
        N=n, nx=6, nu=3, times=inst.times,
        A=np.repeat(a[None], n - 1, axis=0),
        B=np.repeat(b[None], n - 1, axis=0),
        d=np.zeros((n - 1, 6)),
        x_init=inst.x_init,
        objective=objective,
        terminal=(np.eye(6), np.zeros((6, 3)), inst.x_goal),
        n_extra=8,
        x_lb=x_lb, x_ub=x_ub, u_lb=u_lb, u_ub=u_ub,
        e_lb=np.zeros(8), e_ub=np.full(8, dv),
        node_balls=node_balls,
        nonconvex=nonconvex,
        extras_from=extras_from,
    )


def build_freeflyer_ocp(inst: ProblemInstance, cfg, include_obstacles: bool = True) -> ScpProblem:
    """Dataset-generation problem: impulse-L1 cost, waypoint ball and
    loitering penalty for passage modes, all workspace constraints."""
    ffc = cfg["freeflyer"]
    if inst.waypoint is not None:
        nodes = np.arange(max(inst.k_wyp - 3, 0), min(inst.k_wyp + 4, inst.horizon))
        objective = L1FuelObjective(
            loiter_nodes=nodes,
            loiter_select=POS,
            loiter_center=inst.waypoint,
            loiter_radius=ffc["wyp_radius"],
            loiter_weight=ffc["loiter_weight"],
        )
    else:
        objective = L1FuelObjective()
    return _base_problem(inst, cfg, objective, include_obstacles, include_waypoint=True)


def build_freeflyer_refinement(inst: ProblemInstance, warm: Trajectory, lam: float, cfg) -> ScpProblem:
    """Feasibility projection: track the warm start, no waypoint rows."""
    if warm.horizon != inst.horizon:
        raise ValueError(f"warm-start horizon {warm.horizon} != instance horizon {inst.horizon}")
    objective = TrackObjective(x_ref=warm.states.copy(), u_ref=warm.controls.copy(), lam=lam)
    return _base_problem(inst, cfg, objective, include_obstacles=True, include_waypoint=False)


def freeflyer_coast_warm(inst: ProblemInstance) -> Trajectory:
    n = inst.horizon
    states = np.tile(inst.x_init, (n, 1))
    return Trajectory(times=inst.times, states=states, controls=np.zeros((n, 3)))


def freeflyer_two_stage(inst: ProblemInstance, cfg, scp_cfg: ScpConfig | None = None):
    """Stage one without obstacles (the convex baseline), stage two full."""
    scp_cfg = scp_cfg or ScpConfig.from_config(cfg["scp"])
    stage1 = scp_solve(build_freeflyer_ocp(inst, cfg, include_obstacles=False),
                       freeflyer_coast_warm(inst), scp_cfg)
    stage2 = scp_solve(build_freeflyer_ocp(inst, cfg, include_obstacles=True),
                       stage1.trajectory, scp_cfg)
    return stage1, stage2
