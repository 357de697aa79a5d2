"""Planar free-flyer dynamics, thruster actuation, and workspace geometry.

State vector storage order is [p_x, p_y, psi, v_x, v_y, omega] so that an
impulsive velocity change u = [dv_x, dv_y, domega] (global frame) enters
through the block matrix [I3*dt; I3]: the burn is applied at the start of
the step and the post-burn rates drift the pose over dt.

The vehicle is actuated by eight on-off thrusters, two per face of a
square body; each thruster produces a body-frame translational impulse
along its face normal and a torque of alternating sign.  The thruster
configuration matrix maps per-thruster impulses dv in [0, dv_max]^8 to
the body-frame wrench; the global wrench is obtained through the planar
rotation by the bearing angle.  Feasibility of a commanded global wrench
is the existence of an in-bounds allocation, checked with a bounded
least-squares oracle, and is the only nonconvex control-input coupling
(through the bearing angle).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

NX = 6
NU = 3


@dataclass
class FFState:
    """Pose and rates: position p [m], velocity v [m/s], bearing psi [rad],
    angular rate omega [rad/s]."""

    p: np.ndarray
    v: np.ndarray
    psi: float
    omega: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.p[0], self.p[1], self.psi, self.v[0], self.v[1], self.omega])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "FFState":
        x = np.asarray(x, dtype=float)
        return cls(p=x[:2].copy(), v=x[3:5].copy(), psi=float(x[2]), omega=float(x[5]))


@dataclass(frozen=True)
class FFWorkspace:
    """Table box for the position, three circular bodies, and the margins
    folded into each keep-out radius."""

    table_bounds: np.ndarray        # (2, 2): [[xmin, ymin], [xmax, ymax]]
    centers: np.ndarray             # (3, 2)
    radii: np.ndarray               # (3,)
    koz_margin: float
    ff_radius: float

    def __post_init__(self):
        if len(self.centers) != 3 or len(self.radii) != 3:
            raise ValueError("the testbed scenario uses exactly three bodies")
        if np.any(self.radii <= 0) or self.koz_margin < 1.0:
            raise ValueError("radii must be positive and koz_margin >= 1")

    @property
    def koz_radii(self) -> np.ndarray:
        return self.koz_margin * (self.radii + self.ff_radius)

    @classmethod
    def from_config(cls, ff_cfg: dict) -> "FFWorkspace":
        return cls(
            table_bounds=np.asarray(ff_cfg["table_bounds"], dtype=float),
            centers=np.asarray([b["center"] for b in ff_cfg["bodies"]], dtype=float),
            radii=np.asarray([b["radius"] for b in ff_cfg["bodies"]], dtype=float),
            koz_margin=float(ff_cfg["koz_margin"]),
            ff_radius=float(ff_cfg["ff_radius"]),
        )


def step_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Impulsive double-integrator pair (A, B) for one step of length dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = np.eye(NX)
    a[:3, 3:] = dt * np.eye(3)
    b = np.vstack([dt * np.eye(3), np.eye(3)])
    return a, b


def ff_step(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """One impulsive step: burn u at the node, then drift for dt."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite state or control")
    a, b = step_matrices(dt)
    return a @ x + b @ u


def rotation_body_to_global(psi: float) -> np.ndarray:
    """Planar rotation on the translational block, identity on the angular
    channel."""
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drotation_dpsi(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def thruster_matrix(mass: float, inertia: float, arm: float) -> np.ndarray:
    """3x8 thruster configuration matrix (body frame).

    Columns are per-unit-impulse wrenches [dv_x, dv_y, domega]: two
    opposing-torque thrusters per face of the square body.  Full row
    rank, and the nonnegative span covers R^2 x R.
    """
    kappa = mass * arm / inertia
    cols = []
    for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        for sign in (1.0, -1.0):
            cols.append([d[0], d[1], sign * kappa])
    return np.array(cols).T


@dataclass(frozen=True)
class ThrusterModel:
    """Thruster geometry plus the per-node impulse bound dv_max = T/m * dt."""

    lam: np.ndarray             # (3, 8)
    dv_max: float

    @classmethod
    def from_config(cls, ff_cfg: dict) -> "ThrusterModel":
        lam = thruster_matrix(ff_cfg["mass"], ff_cfg["inertia"], ff_cfg["thruster_arm"])
        return cls(lam=lam, dv_max=float(ff_cfg["thrust_accel"] * ff_cfg["dt"]))


def wrench_from_thrusters(model: ThrusterModel, dv: np.ndarray, psi: float) -> np.ndarray:
    """Global-frame impulse u = R(psi) Lambda dv; dv must be in bounds."""
    dv = np.asarray(dv, dtype=float)
    if dv.shape != (8,):
        raise ValueError("expected eight thruster impulses")
    if np.any(dv < -1e-12) or np.any(dv > model.dv_max + 1e-12):
        raise ValueError(f"thruster impulses must lie in [0, {model.dv_max}]")
    return rotation_body_to_global(psi) @ model.lam @ dv


def allocate_thrusters(model: ThrusterModel, u: np.ndarray, psi: float) -> tuple[np.ndarray, float]:
    """Bounded least-squares allocation oracle.

    Returns (dv, residual): the best in-bounds thruster vector
    reproducing the global wrench u at bearing psi, and the norm of the
    unmet wrench.  residual ~ 0 iff u is realizable.
    """
    a = rotation_body_to_global(psi) @ model.lam
    res = lsq_linear(
        a, np.asarray(u, dtype=float), bounds=(0.0, model.dv_max), method="bvls", tol=1e-15
    )
    return res.x, float(np.linalg.norm(a @ res.x - np.asarray(u, dtype=float)))


def thruster_feasible(model: ThrusterModel, u: np.ndarray, psi: float, tol: float = 1e-9) -> bool:
    _, resid = allocate_thrusters(model, u, psi)
    return resid <= tol


@dataclass(frozen=True)
class ThrusterLinearization:
    """Affine inequality set on (psi, u) about a reference.

    The exact condition is the existence of dv in [0, dv_max]^8 with
    u = R(psi) Lambda dv.  With dv kept as auxiliary decision variables
    the set is

        u - R(psi_ref) Lambda dv - j_psi (psi - psi_ref) = resid_ref,
        0 <= dv <= dv_max,

    where j_psi = R'(psi_ref) Lambda dv_ref is the bearing sensitivity at
    the reference allocation.  At (psi_ref, u_ref, dv_ref) the equality
    holds with slack resid_ref, which is ~0 exactly when the reference
    wrench is realizable.
    """

    psi_ref: float
    u_ref: np.ndarray
    dv_ref: np.ndarray
    resid_ref: np.ndarray       # u_ref - R(psi_ref) Lambda dv_ref, (3,)
    coeff_dv: np.ndarray        # R(psi_ref) Lambda, (3, 8)
    coeff_psi: np.ndarray       # (3,)
    dv_max: float

    def residual(self, psi: float, u: np.ndarray, dv: np.ndarray) -> np.ndarray:
        """Value of the linearized equality rows at (psi, u, dv)."""
        return (
            np.asarray(u, dtype=float)
            - self.coeff_dv @ np.asarray(dv, dtype=float)
            - self.coeff_psi * (psi - self.psi_ref)
        )


def linearize_thruster_constraint(
    model: ThrusterModel, psi_ref: float, u_ref: np.ndarray
) -> ThrusterLinearization:
    """First-order expansion of the allocation feasibility about a reference."""
    if not (np.isfinite(psi_ref) and np.all(np.isfinite(u_ref))):
        raise ValueError("non-finite reference")
    dv_ref, _ = allocate_thrusters(model, u_ref, psi_ref)
    coeff_dv = rotation_body_to_global(psi_ref) @ model.lam
    coeff_psi = _drotation_dpsi(psi_ref) @ model.lam @ dv_ref
    resid = np.asarray(u_ref, dtype=float) - coeff_dv @ dv_ref
    return ThrusterLinearization(
        psi_ref=float(psi_ref),
        u_ref=np.asarray(u_ref, dtype=float),
        dv_ref=dv_ref,
        resid_ref=resid,
        coeff_dv=coeff_dv,
        coeff_psi=coeff_psi,
        dv_max=model.dv_max,
    )


def koz_gap_circle(
    p: np.ndarray, center: np.ndarray, radius: float
) -> tuple[float, np.ndarray, bool]:
    """Signed clearance ||p - center|| - radius, its gradient, and a
    degeneracy flag.

    At p == center the gradient direction is undefined: a zero gradient
    is returned with the flag set, and callers treat the point as
    maximally violated.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    d = np.asarray(p, dtype=float) - np.asarray(center, dtype=float)
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        return -radius, np.zeros(2), True
    return dist - radius, d / dist, False
