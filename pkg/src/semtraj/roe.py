"""Relative orbital-element dynamics for proximity operations.

State convention: quasi-nonsingular relative orbital elements (qnsROE),
scaled by the chief semimajor axis so every component is in meters,
ordered as

    x = a * [d_a, d_lambda, d_ex, d_ey, d_ix, d_iy]

Impulses are expressed in the chief's RTN frame (radial, along-track,
normal), in m/s.  The RTN sign convention used throughout: R is the
outward radial, T completes the orbital velocity direction, N is along
the angular-momentum vector.  Under this convention a positive a*d_a
maps to a positive (outward) radial offset.

The propagation model is linear time-varying: a closed-form state
transition matrix carrying the secular J2 drift (mean elements,
near-circular chief), the first-order impulsive control matrix, and the
first-order map from qnsROE to the RTN Cartesian state.  A Keplerian
mode (``j2_enabled=False``) retains only the -1.5 n d_a along-track
drift and is analytically trivial, which makes it the reference for
oracle tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import J2_EARTH, MU_EARTH, R_EARTH


@dataclass(frozen=True)
class OrbitElements:
    """Keplerian elements of the chief: a [m], e, angles [rad]."""

    a: float
    e: float
    i: float
    raan: float
    argp: float
    M: float

    def __post_init__(self):
        if not (self.a > R_EARTH):
            raise ValueError("semimajor axis must exceed the Earth radius")
        if not (0.0 <= self.e < 1.0):
            raise ValueError("eccentricity must lie in [0, 1)")

    @classmethod
    def from_config(cls, orbit_cfg: dict) -> "OrbitElements":
        d = math.radians
        return cls(
            a=float(orbit_cfg["a"]),
            e=float(orbit_cfg["e"]),
            i=d(orbit_cfg["i_deg"]),
            raan=d(orbit_cfg["raan_deg"]),
            argp=d(orbit_cfg["argp_deg"]),
            M=d(orbit_cfg["mean_anom_deg"]),
        )


@dataclass(frozen=True)
class LtvModel:
    """Chief orbit plus the secular rates that define the LTV system.

    Times are seconds past the epoch of ``elements0``.
    """

    elements0: OrbitElements
    j2_enabled: bool = True

    @property
    def n(self) -> float:
        return math.sqrt(MU_EARTH / self.elements0.a**3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.n

    @property
    def _kappa(self) -> float:
        if not self.j2_enabled:
            return 0.0
        el = self.elements0
        eta4 = (1.0 - el.e**2) ** 2
        return 0.75 * J2_EARTH * R_EARTH**2 * math.sqrt(MU_EARTH) / (el.a**3.5 * eta4)

    def secular_rates(self) -> tuple[float, float, float]:
        """(Mdot, argpdot, raandot) of the chief mean elements, rad/s."""
        el = self.elements0
        k = self._kappa
        eta = math.sqrt(1.0 - el.e**2)
        c2 = math.cos(el.i) ** 2
        mdot = self.n + k * eta * (3.0 * c2 - 1.0)
        argpdot = k * (5.0 * c2 - 1.0)
        raandot = -2.0 * k * math.cos(el.i)
        return mdot, argpdot, raandot

    def arg_latitude(self, t: float) -> float:
        """Mean argument of latitude u = argp + M at time t."""
        el = self.elements0
        mdot, argpdot, _ = self.secular_rates()
        return el.argp + el.M + (mdot + argpdot) * t

    @classmethod
    def from_config(cls, orbit_cfg: dict) -> "LtvModel":
        return cls(OrbitElements.from_config(orbit_cfg), j2_enabled=bool(orbit_cfg.get("j2", True)))


def stm(model: LtvModel, t0: float, t1: float) -> np.ndarray:
    """State transition matrix Phi(t1, t0) of the scaled qnsROE.

    Closed form from the secular mean-element rates: d_a and d_ix are
    constants of unforced motion, d_lambda and d_iy accumulate secular
    drift driven by (d_a, d_ix), and the relative eccentricity vector
    rotates at the chief perigee precession rate.  Keplerian mode keeps
    only the d_lambda drift at -1.5 n d_a.
    """
    if t1 < t0:
        raise ValueError("require t1 >= t0")
    tau = t1 - t0
    el = model.elements0
    k = model._kappa
    n = model.n
    eta = math.sqrt(1.0 - el.e**2)
    c, s = math.cos(el.i), math.sin(el.i)

    phi = np.eye(6)
    # d_lambda drift from d_a and d_ix
    c_la = -(1.5 * n + 3.5 * k * (eta + 1.0) * (3.0 * c**2 - 1.0))
    c_li = -k * c * s * (6.0 * eta + 8.0)
    phi[1, 0] = c_la * tau
    phi[1, 4] = c_li * tau
    # relative eccentricity vector rotates at the perigee precession rate
    w = k * (5.0 * c**2 - 1.0) * tau
    cw, sw = math.cos(w), math.sin(w)
    phi[2, 2], phi[2, 3] = cw, -sw
    phi[3, 2], phi[3, 3] = sw, cw
    # d_iy drift from the differential RAAN rate
    phi[5, 0] = 7.0 * k * c * s * tau
    phi[5, 4] = 2.0 * k * s**2 * tau
    return phi


def control_matrix(model: LtvModel, t: float) -> np.ndarray:
    """First-order impulsive control matrix Gamma(t), (6 x 3).

    Maps an RTN impulse [m/s] to the instantaneous jump of the scaled
    qnsROE [m].  Near-circular Gauss variational equations evaluated at
    the mean argument of latitude.
    """
    u = model.arg_latitude(t)
    n = model.n
    su, cu = math.sin(u), math.cos(u)
    return (1.0 / n) * np.array(
        [
            [0.0, 2.0, 0.0],
            [-2.0, 0.0, 0.0],
            [su, 2.0 * cu, 0.0],
            [-cu, 2.0 * su, 0.0],
            [0.0, 0.0, cu],
            [0.0, 0.0, su],
        ]
    )


def roe_to_rtn(model: LtvModel, t: float) -> np.ndarray:
    """First-order linear map Psi(t) from scaled qnsROE to the RTN state.

    Output ordering [r_R, r_T, r_N, v_R, v_T, v_N] with positions in m
    and velocities in m/s.  Sign convention: +a*d_a gives +r_R (outward
    radial bias), +a*d_lambda gives +r_T (ahead along-track).
    """
    u = model.arg_latitude(t)
    n = model.n
    su, cu = math.sin(u), math.cos(u)
    return np.array(
        [
            [1.0, 0.0, -cu, -su, 0.0, 0.0],
            [0.0, 1.0, 2.0 * su, -2.0 * cu, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, su, -cu],
            [0.0, 0.0, n * su, -n * cu, 0.0, 0.0],
            [-1.5 * n, 0.0, 2.0 * n * cu, 2.0 * n * su, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, n * cu, n * su],
        ]
    )


def stm_batch(model: LtvModel, t0: float, t1: np.ndarray) -> np.ndarray:
    """Vectorized ``stm`` over an array of arrival times, (T, 6, 6)."""
    t1 = np.asarray(t1, dtype=float)
    if np.any(t1 < t0):
        raise ValueError("require t1 >= t0")
    tau = t1 - t0
    el = model.elements0
    k = model._kappa
    n = model.n
    eta = math.sqrt(1.0 - el.e**2)
    c, s = math.cos(el.i), math.sin(el.i)

    phi = np.broadcast_to(np.eye(6), (len(tau), 6, 6)).copy()
    phi[:, 1, 0] = -(1.5 * n + 3.5 * k * (eta + 1.0) * (3.0 * c**2 - 1.0)) * tau
    phi[:, 1, 4] = -k * c * s * (6.0 * eta + 8.0) * tau
    w = k * (5.0 * c**2 - 1.0) * tau
    cw, sw = np.cos(w), np.sin(w)
    phi[:, 2, 2], phi[:, 2, 3] = cw, -sw
    phi[:, 3, 2], phi[:, 3, 3] = sw, cw
    phi[:, 5, 0] = 7.0 * k * c * s * tau
    phi[:, 5, 4] = 2.0 * k * s**2 * tau
    return phi


def roe_to_rtn_batch(model: LtvModel, t: np.ndarray) -> np.ndarray:
    """Vectorized ``roe_to_rtn`` over an array of times, (T, 6, 6)."""
    t = np.asarray(t, dtype=float)
    el = model.elements0
    mdot, argpdot, _ = model.secular_rates()
    u = el.argp + el.M + (mdot + argpdot) * t
    n = model.n
    su, cu = np.sin(u), np.cos(u)
    psi = np.zeros((len(t), 6, 6))
    psi[:, 0, 0] = 1.0
    psi[:, 0, 2], psi[:, 0, 3] = -cu, -su
    psi[:, 1, 1] = 1.0
    psi[:, 1, 2], psi[:, 1, 3] = 2.0 * su, -2.0 * cu
    psi[:, 2, 4], psi[:, 2, 5] = su, -cu
    psi[:, 3, 2], psi[:, 3, 3] = n * su, -n * cu
    psi[:, 4, 0] = -1.5 * n
    psi[:, 4, 2], psi[:, 4, 3] = 2.0 * n * cu, 2.0 * n * su
    psi[:, 5, 4], psi[:, 5, 5] = n * cu, n * su
    return psi


def propagate_impulsive(
    model: LtvModel,
    x0: np.ndarray,
    schedule: list[tuple[float, np.ndarray]],
    t_query: float,
) -> np.ndarray:
    """Propagate x0 from t=0 through impulses (t_k, u_k RTN) to t_query.

    Exact under the LTV model and linear in (x0, impulses).  Burns with
    t_k <= t_query are applied; the schedule must be time-sorted.
    """
    times = [tk for tk, _ in schedule]
    if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
        raise ValueError("impulse schedule must be sorted by time")
    x = np.asarray(x0, dtype=float).copy()
    t = 0.0
    for tk, uk in schedule:
        if tk > t_query:
            break
        x = stm(model, t, tk) @ x
        x = x + control_matrix(model, tk) @ np.asarray(uk, dtype=float)
        t = tk
    return stm(model, t, t_query) @ x
