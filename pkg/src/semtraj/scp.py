"""Augmented-Lagrangian sequential convex programming.

The engine solves trajectory problems with exactly linear dynamics and a
mix of convex rows (boundary conditions, waypoint sets, boxes) and
nonconvex constraint blocks supplied as linearization callbacks.  Convex
structure is enforced hard in every subproblem (the warm start must
satisfy it, or is first repaired by a convex projection, so subproblems
stay feasible by construction); nonconvex rows enter through slack
variables weighted by an augmented-Lagrangian penalty.

One iteration solves the convex subproblem about the reference inside a
box trust region (in per-channel normalized variables), evaluates the
predicted versus actual reduction of the merit

    M(Z) = J0(Z) + sum_eq [lam g + w/2 g^2]
                 + sum_ineq 1/(2w) (max(0, mu + w h)^2 - mu^2),

and accepts or rejects the step with the ratio test.  The trust radius
contracts by alpha1 below rho1, expands by alpha2 above rho2; multipliers
and the penalty weight w (grown by beta, capped at w_max) are updated on
accepted steps whose actual reduction has fallen below a trigger level
that itself decays by gamma after every update.  Convergence is declared
when the subproblem can no longer improve the merit (predicted reduction
below eps) and the reference satisfies every constraint: dynamics defect
within defect_tol and nonconvex violations within violation_tol, both in
normalized units.  All decisions are deterministic.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import conic
from .solver_backends import resolve_backend


@dataclass
class Trajectory:
    """Timestamped state/control sequence; the currency between the
    solver, the sequence model, and the evaluators."""

    times: np.ndarray                 # (N,)
    states: np.ndarray                # (N, nx)
    controls: np.ndarray              # (N, nu)
    extras: np.ndarray | None = None  # (N, ne) auxiliary per-node variables
    ctg: np.ndarray | None = None     # (N,) constraint-to-go, optional

    @property
    def horizon(self) -> int:
        return len(self.times)

    def copy(self) -> "Trajectory":
        return Trajectory(
            times=self.times.copy(),
            states=self.states.copy(),
            controls=self.controls.copy(),
            extras=None if self.extras is None else self.extras.copy(),
            ctg=None if self.ctg is None else self.ctg.copy(),
        )


@dataclass
class ScpConfig:
    eps: float = 1e-3
    rho0: float = 0.0
    rho1: float = 0.25
    rho2: float = 0.7
    alpha1: float = 2.0
    alpha2: float = 2.0
    beta: float = 1.5
    gamma: float = 0.9
    r_init: float = 0.5
    r_min: float = 1e-6
    r_max: float = 10.0
    w_init: float = 10.0
    w_max: float = 1e9
    max_iter: int = 100
    backend: str = "auto"
    defect_tol: float = 1e-8
    violation_tol: float = 1e-6
    solver_abs_tol: float = 1e-8
    solver_rel_tol: float = 1e-9

    def __post_init__(self):
        if not (0.0 <= self.rho0 < self.rho1 < self.rho2 < 1.0):
            raise ValueError("require 0 <= rho0 < rho1 < rho2 < 1")
        if not (self.r_min <= self.r_init <= self.r_max):
            raise ValueError("require r_min <= r_init <= r_max")

    @classmethod
    def from_config(cls, scp_cfg: dict) -> "ScpConfig":
        return cls(**{k: scp_cfg[k] for k in cls.__dataclass_fields__ if k in scp_cfg})


class NonconvexBlock:
    """One family of nonconvex constraint rows.

    ``kind`` is 'eq' (rows must vanish) or 'ineq' (rows must be <= 0).
    ``unit`` converts physical row values to normalized ones for the
    penalty and the convergence test.
    """

    name: str = "block"
    kind: str = "ineq"
    n_rows: int = 0
    unit: float | np.ndarray = 1.0

    def violation(self, traj: Trajectory) -> np.ndarray:
        raise NotImplementedError

    def linearize(self, traj: Trajectory):
        """Returns (ks, Cx, Cu, Ce, rhs): row i reads
        Cx[i] x_{ks[i]} + Cu[i] u_{ks[i]} + Ce[i] e_{ks[i]} (<=|=) rhs[i].
        Unused coefficient groups may be None."""
        raise NotImplementedError


@dataclass
class TrackObjective:
    """sum ||u - u_ref||^2 + lam ||x - x_ref||^2 (physical units)."""

    x_ref: np.ndarray
    u_ref: np.ndarray
    lam: float

    def true_value(self, traj: Trajectory) -> float:
        du = traj.controls - self.u_ref
        dx = traj.states - self.x_ref
        return float(np.sum(du * du) + self.lam * np.sum(dx * dx))

    lin_value = true_value


@dataclass
class L2FuelObjective:
    """sum_k ||u_k||_2 (impulsive maneuver magnitudes)."""

    def true_value(self, traj: Trajectory) -> float:
        return float(np.linalg.norm(traj.controls, axis=1).sum())

    lin_value = true_value


@dataclass
class L1FuelObjective:
    """sum_k ||u_k||_1 plus optional soft loitering penalties.

    Each loiter term is w * max(0, ||Sx - c|| - r)^2 summed over the
    given nodes; the distance is linearized about the reference inside
    subproblems, the true value uses the exact distance.
    """

    loiter_nodes: np.ndarray | None = None      # (L,)
    loiter_select: np.ndarray | None = None     # (2, nx) position selector
    loiter_center: np.ndarray | None = None     # (2,)
    loiter_radius: float = 0.0
    loiter_weight: float = 0.0

    def _loiter_dists(self, states):
        d = states[self.loiter_nodes] @ self.loiter_select.T - self.loiter_center
        return np.linalg.norm(d, axis=1)

    def true_value(self, traj: Trajectory) -> float:
        val = float(np.abs(traj.controls).sum())
        if self.loiter_nodes is not None and len(self.loiter_nodes):
            hinge = np.clip(self._loiter_dists(traj.states) - self.loiter_radius, 0.0, None)
            val += self.loiter_weight * float(np.sum(hinge**2))
        return val

    def lin_value(self, traj: Trajectory, ref: Trajectory) -> float:
        val = float(np.abs(traj.controls).sum())
        if self.loiter_nodes is not None and len(self.loiter_nodes):
            d_ref = ref.states[self.loiter_nodes] @ self.loiter_select.T - self.loiter_center
            dist_ref = np.linalg.norm(d_ref, axis=1)
            dist_ref = np.maximum(dist_ref, 1e-12)
            grads = (d_ref / dist_ref[:, None]) @ self.loiter_select
            lin = dist_ref + np.einsum(
                "lj,lj->l", grads, traj.states[self.loiter_nodes] - ref.states[self.loiter_nodes]
            )
            hinge = np.clip(lin - self.loiter_radius, 0.0, None)
            val += self.loiter_weight * float(np.sum(hinge**2))
        return val


@dataclass
class ScpProblem:
    """Trajectory problem with exact linear dynamics.

    Dynamics: x_{k+1} = A[k] x_k + B[k] u_k + d[k], k = 0..N-2.
    Terminal rows: Ex x_{N-1} + Eu u_{N-1} = b.  ``node_eqs`` are hard
    per-node equality rows on the state (waypoints); ``node_balls`` are
    hard per-node Euclidean balls ||S x_k - c|| <= r.
    """

    N: int
    nx: int
    nu: int
    times: np.ndarray
    A: np.ndarray
    B: np.ndarray
    d: np.ndarray
    x_init: np.ndarray
    objective: object
    terminal: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    # with exactly linear dynamics every candidate is re-propagated, so
    # stored trajectories satisfy the dynamics to machine precision
    exact_dynamics: bool = True
    n_extra: int = 0
    x_lb: np.ndarray | None = None   # (nx,)
    x_ub: np.ndarray | None = None
    u_lb: np.ndarray | None = None
    u_ub: np.ndarray | None = None
    e_lb: np.ndarray | None = None   # (ne,)
    e_ub: np.ndarray | None = None
    node_eqs: list = field(default_factory=list)     # (k, C (m, nx), rhs (m,))
    node_balls: list = field(default_factory=list)   # (k, S (ms, nx), c, r)
    nonconvex: list = field(default_factory=list)
    extras_from: Callable | None = None              # (X, U) -> (N, ne)

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("horizon must be at least 2")

    def propagate_controls(self, x0: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Exact rollout of the linear dynamics under the given controls."""
        X = np.empty((self.N, self.nx))
        X[0] = x0
        for k in range(self.N - 1):
            X[k + 1] = self.A[k] @ X[k] + self.B[k] @ U[k] + self.d[k]
        return X

    def dynamics_defects(self, traj: Trajectory) -> np.ndarray:
        X, U = traj.states, traj.controls
        pred = np.einsum("kij,kj->ki", self.A, X[:-1]) + np.einsum(
            "kij,kj->ki", self.B, U[:-1]
        ) + self.d
        return X[1:] - pred


@dataclass
class NormScales:
    """Per-channel magnitudes of the warm start; zero-range channels get
    unit scale.  Round trip normalize -> denormalize is exact."""

    x: np.ndarray
    u: np.ndarray
    e: np.ndarray | None

    def normalize(self, traj: Trajectory) -> Trajectory:
        out = traj.copy()
        out.states = traj.states / self.x
        out.controls = traj.controls / self.u
        if traj.extras is not None and self.e is not None:
            out.extras = traj.extras / self.e
        return out

    def denormalize(self, traj: Trajectory) -> Trajectory:
        out = traj.copy()
        out.states = traj.states * self.x
        out.controls = traj.controls * self.u
        if traj.extras is not None and self.e is not None:
            out.extras = traj.extras * self.e
        return out


def normalize(prob: ScpProblem, warm: Trajectory) -> NormScales:
    """Channel scales from the initial guess (max absolute value)."""
    xs = np.abs(warm.states).max(axis=0)
    us = np.abs(warm.controls).max(axis=0)
    xs[xs == 0.0] = 1.0
    us[us == 0.0] = 1.0
    es = None
    if prob.n_extra:
        if warm.extras is not None:
            es = np.abs(warm.extras).max(axis=0)
            es[es == 0.0] = 1.0
        else:
            es = np.ones(prob.n_extra)
        if prob.e_ub is not None:
            es = np.maximum(es, np.abs(prob.e_ub))
    return NormScales(x=xs, u=us, e=es)


@dataclass
class ScpResult:
    converged: bool
    status: str
    iterations: int
    trajectory: Trajectory
    objective: float
    max_defect: float
    max_violation: float
    history: list
    wall_time: float
    multipliers: dict | None = None


class _Builder:
    """Incremental ConicProgram assembly."""

    def __init__(self):
        self.n = 0
        self.q = []
        self.p_diag = []           # (idx, val) for diagonal quadratic cost
        self.lb = []
        self.ub = []
        self.eq_rows = []          # (cols, vals, rhs)
        self.in_rows = []
        self.socs = []

    def add_vars(self, count, lb=-np.inf, ub=np.inf):
        sl = slice(self.n, self.n + count)
        self.n += count
        self.q.extend([0.0] * count)
        self.lb.extend(np.broadcast_to(lb, (count,)).tolist())
        self.ub.extend(np.broadcast_to(ub, (count,)).tolist())
        return sl

    def set_linear(self, idx, vals):
        for i, v in zip(np.atleast_1d(idx), np.atleast_1d(vals)):
            self.q[int(i)] += float(v)

    def set_quad_diag(self, idx, vals):
        for i, v in zip(np.atleast_1d(idx), np.atleast_1d(np.broadcast_to(vals, np.atleast_1d(idx).shape))):
            self.p_diag.append((int(i), float(v)))

    def add_row(self, cols, vals, rhs, sense):
        row = (np.asarray(cols, dtype=int), np.asarray(vals, dtype=float), float(rhs))
        (self.eq_rows if sense == "eq" else self.in_rows).append(row)

    def add_soc(self, head, tail):
        self.socs.append((int(head), np.asarray(tail, dtype=int)))

    def tighten_bounds(self, sl, lo, up):
        lo = np.broadcast_to(lo, (sl.stop - sl.start,))
        up = np.broadcast_to(up, (sl.stop - sl.start,))
        for i, (a, b) in enumerate(zip(lo, up)):
            j = sl.start + i
            self.lb[j] = max(self.lb[j], float(a))
            self.ub[j] = min(self.ub[j], float(b))

    def build(self) -> conic.ConicProgram:
        def stack(rows):
            if not rows:
                return None, None
            data, ri, ci, rhs = [], [], [], []
            for r, (cols, vals, b) in enumerate(rows):
                ri.extend([r] * len(cols))
                ci.extend(cols.tolist())
                data.extend(vals.tolist())
                rhs.append(b)
            a = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), self.n))
            return a, np.asarray(rhs)

        a_eq, b_eq = stack(self.eq_rows)
        a_in, b_in = stack(self.in_rows)
        p = None
        if self.p_diag:
            idx = np.array([i for i, _ in self.p_diag])
            val = np.array([v for _, v in self.p_diag])
            diag = np.zeros(self.n)
            np.add.at(diag, idx, val)
            p = sp.diags(diag).tocsc()
        return conic.ConicProgram(
            n=self.n, P=p, q=np.asarray(self.q), A_eq=a_eq, b_eq=b_eq,
            A_in=a_in, b_in=b_in, lb=np.asarray(self.lb), ub=np.asarray(self.ub),
            socs=self.socs,
        )


@dataclass
class _Multipliers:
    lam: list          # per eq block arrays
    mu: list           # per ineq block arrays
    w: float
    trigger: float | None = None


def _normalized_violations(prob: ScpProblem, traj: Trajectory) -> list[np.ndarray]:
    out = []
    for blk in prob.nonconvex:
        out.append(np.asarray(blk.violation(traj), dtype=float) / blk.unit)
    return out


def _merit(prob: ScpProblem, traj: Trajectory, mults: _Multipliers, obj_scale: float = 1.0):
    j0 = prob.objective.true_value(traj)
    val = j0 / obj_scale
    viols = _normalized_violations(prob, traj)
    li = ii = 0
    w = mults.w
    for blk, v in zip(prob.nonconvex, viols):
        if blk.kind == "eq":
            lam = mults.lam[li]
            li += 1
            val += float(lam @ v) + 0.5 * w * float(v @ v)
        else:
            mu = mults.mu[ii]
            ii += 1
            t = np.maximum(0.0, mu + w * v)
            val += float(np.sum(t * t - mu * mu)) / (2.0 * w)
    return val, j0, viols


def _lin_merit(prob, cand, ref, mults, lin_cache, obj_scale: float = 1.0):
    try:
        j0 = prob.objective.lin_value(cand, ref)
    except TypeError:
        j0 = prob.objective.lin_value(cand)
    val = j0 / obj_scale
    w = mults.w
    li = ii = 0
    for blk, (ks, cx, cu, ce, rhs) in zip(prob.nonconvex, lin_cache):
        v = rhs.copy() * 0.0
        v -= rhs
        if cx is not None:
            v += np.einsum("rj,rj->r", cx, cand.states[ks])
        if cu is not None:
            v += np.einsum("rj,rj->r", cu, cand.controls[ks])
        if ce is not None:
            v += np.einsum("rj,rj->r", ce, cand.extras[ks])
        v = v / blk.unit
        if blk.kind == "eq":
            lam = mults.lam[li]
            li += 1
            val += float(lam @ v) + 0.5 * w * float(v @ v)
        else:
            mu = mults.mu[ii]
            ii += 1
            t = np.maximum(0.0, mu + w * v)
            val += float(np.sum(t * t - mu * mu)) / (2.0 * w)
    return val


def _objective_scale(prob: ScpProblem, scales: NormScales) -> float:
    """Natural magnitude of the objective over one full-scale step.

    Dividing the merit's objective term by this scale keeps it O(1)
    against the normalized constraint penalties regardless of physical
    units.
    """
    obj = prob.objective
    n = prob.N
    if isinstance(obj, TrackObjective):
        return max(n * (float(np.sum(scales.u**2)) + obj.lam * float(np.sum(scales.x**2))), 1e-12)
    if isinstance(obj, L2FuelObjective):
        return max(n * float(scales.u.max()), 1e-12)
    if isinstance(obj, L1FuelObjective):
        s = n * float(np.sum(scales.u))
        if obj.loiter_nodes is not None and len(obj.loiter_nodes):
            s += obj.loiter_weight * len(obj.loiter_nodes) * float(scales.x[:2].max()) ** 2
        return max(s, 1e-12)
    raise TypeError(f"unsupported objective {type(obj)!r}")


def _harmonized_scales(prob: ScpProblem, scales: NormScales) -> NormScales:
    """Uniform scale inside every cone-coupled channel group.

    The fuel cone couples all control channels; a waypoint ball couples
    the selected state channels.  Channels in one group must share a
    scale so the scaled constraint stays a second-order cone.
    """
    xs = scales.x.copy()
    us = scales.u.copy()
    if isinstance(prob.objective, L2FuelObjective):
        us[:] = us.max()
    for _, s, _, _ in prob.node_balls:
        chans = np.where(np.abs(s).sum(axis=0) > 0)[0]
        xs[chans] = xs[chans].max()
    return NormScales(x=xs, u=us, e=None if scales.e is None else scales.e.copy())


def build_subproblem(
    prob: ScpProblem,
    ref: Trajectory,
    radius: float,
    mults: _Multipliers | None = None,
    scales: NormScales | None = None,
    obj_scale: float = 1.0,
):
    """Convex subproblem about the reference inside a box trust region.

    The program is posed in normalized variables (each channel divided
    by its warm-start scale) so every coefficient is O(1) regardless of
    physical units.  With radius -> 0 the feasible set collapses to the
    reference; with a feasible reference the subproblem is feasible by
    construction (slack variables absorb every nonconvex row).  Returns
    (program, meta) with variable slices and the linearized-row cache.
    """
    if mults is None:
        mults = _Multipliers(
            lam=[np.zeros(b.n_rows) for b in prob.nonconvex if b.kind == "eq"],
            mu=[np.zeros(b.n_rows) for b in prob.nonconvex if b.kind == "ineq"],
            w=10.0,
        )
    if scales is None:
        scales = _harmonized_scales(prob, normalize(prob, ref))
    N, nx, nu, ne = prob.N, prob.nx, prob.nu, prob.n_extra
    sx, su = scales.x, scales.u
    se = scales.e if scales.e is not None else (np.ones(ne) if ne else None)
    b = _Builder()
    xs = b.add_vars(N * nx)
    us = b.add_vars(N * nu)
    es = b.add_vars(N * ne) if ne else None

    def xsl(k):
        return np.arange(xs.start + k * nx, xs.start + (k + 1) * nx)

    def usl(k):
        return np.arange(us.start + k * nu, us.start + (k + 1) * nu)

    def esl(k):
        return np.arange(es.start + k * ne, es.start + (k + 1) * ne)

    # trust region (a plain box in normalized variables) intersected with
    # the hard state/control boxes
    x_lo = (ref.states / sx - radius).ravel()
    x_hi = (ref.states / sx + radius).ravel()
    if prob.x_lb is not None:
        x_lo = np.maximum(x_lo, np.tile(prob.x_lb / sx, N))
    if prob.x_ub is not None:
        x_hi = np.minimum(x_hi, np.tile(prob.x_ub / sx, N))
    b.tighten_bounds(xs, x_lo, x_hi)
    u_lo = (ref.controls / su - radius).ravel()
    u_hi = (ref.controls / su + radius).ravel()
    if prob.u_lb is not None:
        u_lo = np.maximum(u_lo, np.tile(prob.u_lb / su, N))
    if prob.u_ub is not None:
        u_hi = np.minimum(u_hi, np.tile(prob.u_ub / su, N))
    b.tighten_bounds(us, u_lo, u_hi)
    if ne:
        ref_e = ref.extras if ref.extras is not None else np.zeros((N, ne))
        e_lo = (ref_e / se - radius).ravel()
        e_hi = (ref_e / se + radius).ravel()
        if prob.e_lb is not None:
            e_lo = np.maximum(e_lo, np.tile(prob.e_lb / se, N))
        if prob.e_ub is not None:
            e_hi = np.minimum(e_hi, np.tile(prob.e_ub / se, N))
        b.tighten_bounds(es, e_lo, e_hi)

    # dynamics and boundary conditions, always hard; each row in units of
    # its own state channel
    for k in range(N - 1):
        ak, bk = prob.A[k], prob.B[k]
        for i in range(nx):
            cols = np.concatenate([xsl(k + 1)[i : i + 1], xsl(k), usl(k)])
            vals = np.concatenate([[1.0], -ak[i] * sx / sx[i], -bk[i] * su / sx[i]])
            b.add_row(cols, vals, prob.d[k][i] / sx[i], "eq")
    for i in range(nx):
        b.add_row([xsl(0)[i]], [1.0], prob.x_init[i] / sx[i], "eq")

    def scaled_row(cols, vals, rhs, sense):
        mag = max(np.abs(vals).max(), 1e-12)
        b.add_row(cols, np.asarray(vals) / mag, rhs / mag, sense)

    if prob.terminal is not None:
        ex, eu, rhs = prob.terminal
        for i in range(len(rhs)):
            cols = np.concatenate([xsl(N - 1), usl(N - 1)])
            vals = np.concatenate([ex[i] * sx, eu[i] * su])
            scaled_row(cols, vals, rhs[i], "eq")
    for k, c, rhs in prob.node_eqs:
        for i in range(len(rhs)):
            scaled_row(xsl(k), c[i] * sx, rhs[i], "eq")
    for k, s, center, r in prob.node_balls:
        m = len(center)
        dv = b.add_vars(m)
        hv = b.add_vars(1, lb=r, ub=r)
        for i in range(m):
            cols = np.concatenate([[dv.start + i], xsl(k)])
            vals = np.concatenate([[1.0], -s[i] * sx])
            b.add_row(cols, vals, -center[i], "eq")
        b.add_soc(hv.start, np.arange(dv.start, dv.stop))

    # objective (values stay in physical units)
    obj = prob.objective
    sj = obj_scale
    if isinstance(obj, TrackObjective):
        for k in range(N):
            b.set_quad_diag(xsl(k), 2.0 * obj.lam * sx**2 / sj)
            b.set_linear(xsl(k), -2.0 * obj.lam * obj.x_ref[k] * sx / sj)
            b.set_quad_diag(usl(k), 2.0 * su**2 / sj)
            b.set_linear(usl(k), -2.0 * obj.u_ref[k] * su / sj)
    elif isinstance(obj, L2FuelObjective):
        ts = b.add_vars(N, lb=0.0)
        b.set_linear(np.arange(ts.start, ts.stop), np.full(N, su[0] / sj))
        for k in range(N):
            b.add_soc(ts.start + k, usl(k))
    elif isinstance(obj, L1FuelObjective):
        ts = b.add_vars(N * nu, lb=0.0)
        b.set_linear(np.arange(ts.start, ts.stop), np.tile(su, N) / sj)
        for k in range(N):
            for i in range(nu):
                t = ts.start + k * nu + i
                b.add_row([usl(k)[i], t], [1.0, -1.0], 0.0, "ineq")
                b.add_row([usl(k)[i], t], [-1.0, -1.0], 0.0, "ineq")
        if obj.loiter_nodes is not None and len(obj.loiter_nodes):
            sel = obj.loiter_select
            d_ref = ref.states[obj.loiter_nodes] @ sel.T - obj.loiter_center
            dist = np.maximum(np.linalg.norm(d_ref, axis=1), 1e-12)
            grads = (d_ref / dist[:, None]) @ sel
            sv = b.add_vars(len(obj.loiter_nodes), lb=0.0)
            b.set_quad_diag(np.arange(sv.start, sv.stop), 2.0 * obj.loiter_weight / sj)
            for i, k in enumerate(obj.loiter_nodes):
                # linearized distance - radius <= s
                rhs = obj.loiter_radius - dist[i] + grads[i] @ ref.states[k]
                cols = np.concatenate([xsl(k), [sv.start + i]])
                vals = np.concatenate([grads[i] * sx, [-1.0]])
                b.add_row(cols, vals, rhs, "ineq")
    else:
        raise TypeError(f"unsupported objective {type(obj)!r}")

    # nonconvex rows with augmented-Lagrangian slacks (normalized by the
    # block's unit, coefficients on normalized variables)
    lin_cache = []
    li = ii = 0
    w = mults.w
    for blk in prob.nonconvex:
        ks, cx, cu, ce, rhs = blk.linearize(ref)
        lin_cache.append((ks, cx, cu, ce, rhs))
        unit = np.broadcast_to(np.asarray(blk.unit, dtype=float), (blk.n_rows,))
        if blk.kind == "eq":
            lam = mults.lam[li]
            li += 1
            xi = b.add_vars(blk.n_rows)
            b.set_linear(np.arange(xi.start, xi.stop), lam)
            b.set_quad_diag(np.arange(xi.start, xi.stop), w)
            for i in range(blk.n_rows):
                cols, vals = [xi.start + i], [-unit[i]]
                if cx is not None:
                    cols.extend(xsl(ks[i]).tolist())
                    vals.extend((cx[i] * sx).tolist())
                if cu is not None:
                    cols.extend(usl(ks[i]).tolist())
                    vals.extend((cu[i] * su).tolist())
                if ce is not None:
                    cols.extend(esl(ks[i]).tolist())
                    vals.extend((ce[i] * se).tolist())
                scaled_row(cols, np.asarray(vals), rhs[i], "eq")
        else:
            mu = mults.mu[ii]
            ii += 1
            sv = b.add_vars(blk.n_rows, lb=0.0)
            b.set_quad_diag(np.arange(sv.start, sv.stop), w)
            for i in range(blk.n_rows):
                # hhat_normalized - s <= -mu/w  (s >= mu/w + hhat), cost w/2 s^2:
                # identical optimum to the shifted-hinge penalty, with rows
                # independent of the penalty weight
                scale = 1.0 / unit[i]
                cols, vals = [sv.start + i], [-1.0]
                if cx is not None:
                    cols.extend(xsl(ks[i]).tolist())
                    vals.extend((scale * cx[i] * sx).tolist())
                if cu is not None:
                    cols.extend(usl(ks[i]).tolist())
                    vals.extend((scale * cu[i] * su).tolist())
                if ce is not None:
                    cols.extend(esl(ks[i]).tolist())
                    vals.extend((scale * ce[i] * se).tolist())
                b.add_row(cols, np.asarray(vals), scale * rhs[i] - mu[i] / w, "ineq")

    prog = b.build()
    rho_hints = {"bar": 0.4, "in": 5.0, "bnd": 5.0} if isinstance(obj, L1FuelObjective) else None
    meta = {
        "xs": xs, "us": us, "es": es, "lin": lin_cache,
        "N": N, "nx": nx, "nu": nu, "ne": ne, "scales": (sx, su, se),
        "rho_hints": rho_hints,
    }
    return prog, meta


def _extract(prob: ScpProblem, ref: Trajectory, sol, meta) -> Trajectory:
    N, nx, nu, ne = meta["N"], meta["nx"], meta["nu"], meta["ne"]
    sx, su, se = meta["scales"]
    X = sol.x[meta["xs"]].reshape(N, nx) * sx
    U = sol.x[meta["us"]].reshape(N, nu) * su
    E = sol.x[meta["es"]].reshape(N, ne) * se if ne else None
    if prob.exact_dynamics:
        X = prob.propagate_controls(X[0], U)
    return Trajectory(times=ref.times.copy(), states=X, controls=U, extras=E)


def _convex_feasible(prob: ScpProblem, traj: Trajectory, tol: float = 1e-7) -> bool:
    if np.abs(prob.dynamics_defects(traj)).max(initial=0.0) > tol:
        return False
    if np.abs(traj.states[0] - prob.x_init).max() > tol:
        return False
    if prob.terminal is not None:
        ex, eu, rhs = prob.terminal
        if np.abs(ex @ traj.states[-1] + eu @ traj.controls[-1] - rhs).max() > tol:
            return False
    for k, c, rhs in prob.node_eqs:
        if np.abs(c @ traj.states[k] - rhs).max() > tol:
            return False
    for k, s, center, r in prob.node_balls:
        if np.linalg.norm(s @ traj.states[k] - center) > r + tol:
            return False
    for lo, hi, arr in (
        (prob.x_lb, prob.x_ub, traj.states),
        (prob.u_lb, prob.u_ub, traj.controls),
    ):
        if lo is not None and np.min(arr - lo) < -tol:
            return False
        if hi is not None and np.min(hi - arr) < -tol:
            return False
    return True


def repair_reference(prob: ScpProblem, warm: Trajectory, cfg: ScpConfig) -> Trajectory:
    """Convex projection of the warm start onto the hard constraint set.

    Minimizes the tracking distance to the warm start subject to every
    convex row (no nonconvex blocks), with a wide-open trust region.
    """
    proj = ScpProblem(
        N=prob.N, nx=prob.nx, nu=prob.nu, times=prob.times,
        A=prob.A, B=prob.B, d=prob.d, x_init=prob.x_init,
        objective=TrackObjective(x_ref=warm.states, u_ref=warm.controls, lam=1.0),
        terminal=prob.terminal, n_extra=0,
        x_lb=prob.x_lb, x_ub=prob.x_ub, u_lb=prob.u_lb, u_ub=prob.u_ub,
        node_eqs=prob.node_eqs, node_balls=prob.node_balls,
    )
    scales = _harmonized_scales(proj, normalize(proj, warm))
    prog, meta = build_subproblem(proj, warm, radius=1e6, mults=None, scales=scales)
    sol = resolve_backend(cfg.backend)(prog, abs_tol=cfg.solver_abs_tol, rel_tol=cfg.solver_rel_tol)
    if sol.status != "optimal":
        raise RuntimeError(f"warm-start repair failed: solver status {sol.status}")
    out = _extract(proj, warm, sol, meta)
    if prob.n_extra and prob.extras_from is not None:
        out.extras = prob.extras_from(out.states, out.controls)
    return out


def scp_solve(
    prob: ScpProblem,
    warm: Trajectory,
    cfg: ScpConfig | None = None,
    telemetry_path: str | None = None,
) -> ScpResult:
    """Run the augmented-Lagrangian SCP loop from a warm start."""
    cfg = cfg or ScpConfig()
    t_start = time.perf_counter()

    ref = warm.copy()
    if prob.n_extra and ref.extras is None:
        if prob.extras_from is None:
            ref.extras = np.zeros((prob.N, prob.n_extra))
        else:
            ref.extras = prob.extras_from(ref.states, ref.controls)
    repaired = False
    if not _convex_feasible(prob, ref):
        ref = repair_reference(prob, ref, cfg)
        repaired = True

    scales = _harmonized_scales(prob, normalize(prob, ref))
    obj_scale = _objective_scale(prob, scales)
    mults = _Multipliers(
        lam=[np.zeros(b.n_rows) for b in prob.nonconvex if b.kind == "eq"],
        mu=[np.zeros(b.n_rows) for b in prob.nonconvex if b.kind == "ineq"],
        w=cfg.w_init,
    )
    radius = cfg.r_init
    history: list[dict] = []
    tele = open(telemetry_path, "w") if telemetry_path else None

    def feasibility(traj):
        defect = np.abs(prob.dynamics_defects(traj) / scales.x).max(initial=0.0)
        viols = _normalized_violations(prob, traj)
        worst = 0.0
        for blk, v in zip(prob.nonconvex, viols):
            mag = np.abs(v) if blk.kind == "eq" else np.maximum(v, 0.0)
            if len(mag):
                worst = max(worst, float(mag.max()))
        return defect, worst

    def update_multipliers(traj):
        viols = _normalized_violations(prob, traj)
        li = ii = 0
        for blk, v in zip(prob.nonconvex, viols):
            if blk.kind == "eq":
                mults.lam[li] += mults.w * v
                li += 1
            else:
                mults.mu[ii] = np.maximum(0.0, mults.mu[ii] + mults.w * v)
                ii += 1
        mults.w = min(mults.w * cfg.beta, cfg.w_max)
        if mults.trigger is not None:
            mults.trigger *= cfg.gamma

    backend_solve = resolve_backend(cfg.backend)
    status = "max_iter"
    converged = False
    m_ref, j0_ref, _ = _merit(prob, ref, mults, obj_scale)
    it = 0
    solver_warm = None
    # loose subproblem accuracy early, tightened once steps become small;
    # candidate quality is judged on true violations of re-propagated
    # trajectories, so the subproblems never need more than ~1e-7
    loose_tol = max(1e-5, cfg.solver_abs_tol)
    endgame_tol = max(1e-7, cfg.solver_abs_tol)
    sub_tol = loose_tol
    while it < cfg.max_iter:
        it += 1
        prog, meta = build_subproblem(prob, ref, radius, mults, scales, obj_scale)
        sol = backend_solve(
            prog, abs_tol=sub_tol, rel_tol=0.1 * sub_tol,
            warm=solver_warm, max_iter=15_000, rho_hints=meta["rho_hints"],
        )
        if sol.status == "max_iter" and max(sol.r_prim, sol.r_dual) <= 50.0 * sub_tol:
            sol.status = "optimal"  # usable approximate step; the ratio test judges it
        if sol.status != "optimal":
            radius = max(radius / cfg.alpha1, cfg.r_min)
            history.append({"iter": it, "event": "solver_" + sol.status, "radius": radius})
            if radius <= cfg.r_min * (1 + 1e-12):
                status = "solver_failure"
                break
            continue
        solver_warm = (sol.x, sol.y_stack)
        cand = _extract(prob, ref, sol, meta)
        m_hat = _lin_merit(prob, cand, ref, mults, meta["lin"], obj_scale)
        m_cand, j0_cand, _ = _merit(prob, cand, mults, obj_scale)
        dl = m_ref - m_hat
        dj = m_ref - m_cand
        defect, viol = feasibility(ref)
        stationary = dl <= cfg.eps * max(1.0, abs(m_ref))
        if stationary and sub_tol > endgame_tol * 1.01:
            # endgame: re-solve the same subproblem at full accuracy
            sub_tol = endgame_tol
            rec = {"iter": it, "event": "tighten", "radius": radius}
            history.append(rec)
            if tele:
                tele.write(json.dumps(rec) + "\n")
            continue

        rec = {
            "iter": it, "cost": j0_ref, "merit": m_ref, "pred_red": dl, "act_red": dj,
            "radius": radius, "penalty": mults.w, "defect": defect, "violation": viol,
        }

        if stationary:
            if defect <= cfg.defect_tol and viol <= cfg.violation_tol:
                converged = True
                status = "converged"
                rec["event"] = "converged"
                history.append(rec)
                if tele:
                    tele.write(json.dumps(rec) + "\n")
                break
            # a stationary iterate that stays infeasible while the penalty
            # has grown far beyond the merit scale will not recover
            if mults.w >= cfg.w_max or (mults.w >= 1e6 and viol > 100 * cfg.violation_tol):
                status = "infeasible_stall"
                rec["event"] = "stalled"
                history.append(rec)
                if tele:
                    tele.write(json.dumps(rec) + "\n")
                break
            update_multipliers(ref)
            m_ref, j0_ref, _ = _merit(prob, ref, mults, obj_scale)
            rec["event"] = "multiplier_update"
            # the candidate solved the previous subproblem; under the new
            # multipliers it is usually still a descent step, so reuse it
            m_cand, j0_cand, _ = _merit(prob, cand, mults, obj_scale)
            m_hat = _lin_merit(prob, cand, ref, mults, meta["lin"], obj_scale)
            dl, dj = m_ref - m_hat, m_ref - m_cand
            if dl > cfg.eps * max(1.0, abs(m_ref)) and dj / dl >= cfg.rho0:
                ref = cand
                m_ref, j0_ref = m_cand, j0_cand
                rec["reused_candidate"] = True
            history.append(rec)
            if tele:
                tele.write(json.dumps(rec) + "\n")
            continue

        rho = dj / dl
        accepted = rho >= cfg.rho0
        rec["ratio"] = rho
        rec["accepted"] = bool(accepted)
        if accepted:
            ref = cand
            m_ref, j0_ref = m_cand, j0_cand
            if mults.trigger is None:
                mults.trigger = max(abs(dj), cfg.eps)
            elif dj <= mults.trigger:
                update_multipliers(ref)
                m_ref, j0_ref, _ = _merit(prob, ref, mults, obj_scale)
                rec["event"] = "multiplier_update"
        if rho < cfg.rho1:
            radius = max(radius / cfg.alpha1, cfg.r_min)
        elif rho >= cfg.rho2:
            radius = min(radius * cfg.alpha2, cfg.r_max)
        history.append(rec)
        if tele:
            tele.write(json.dumps(rec) + "\n")

    if tele:
        tele.close()
    defect, viol = feasibility(ref)
    return ScpResult(
        converged=converged,
        status=status if not repaired else status + "+repaired",
        iterations=it,
        trajectory=ref,
        objective=prob.objective.true_value(ref),
        max_defect=defect,
        max_violation=viol,
        history=history,
        wall_time=time.perf_counter() - t_start,
        multipliers={"w": mults.w},
    )
