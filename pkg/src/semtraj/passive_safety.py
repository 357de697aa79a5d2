"""Continuous-time passive safety under partially completed burns.

At every trajectory node k a commanded impulse u_k may be executed only
partially (completion factor alpha in [0, 1]).  The post-burn state must
then coast safely for a drift horizon tau in [0, tau_s]: the drifted
state has to remain outside an ellipsoidal keep-out zone around the
target for every (tau, alpha) pair.

The pointwise gap is

    g(k; tau, alpha) = 1 - x_d' S(t_k + tau) x_d,
    x_d = Phi(t_k + tau, t_k) (x_k + alpha * Gamma_k u_k),
    S(t)  = Psi(t)' P Psi(t),

so g <= 0 exactly when the drifted state is outside the zone.  The
continuous-time requirement is collapsed into the scalar

    gtilde(x_k, u_k) = Int_0^1 Int_0^{tau_s} max(g, 0)^2 dtau dalpha,

which is zero iff the constraint holds on the whole rectangle.  Because
the dynamics are linear, g is a concave quadratic in alpha with
coefficients a(tau), b(tau), c(tau); the alpha integral of the squared
hinge is available in closed form over the active interval where g >= 0,
and only the tau integral needs quadrature.  A composite Gauss-Legendre
rule (``nq`` nodes on each of ``n_panels`` panels) is used: the
alpha-exact integrand is only C^1 in tau at active-set transitions, and
panel subdivision keeps the fixed-node rule accurate there while
preserving a reference-independent cache of Theta matrices.

Gradients of gtilde are exact gradients of the quadrature value, so they
match finite differences of ``gtilde`` itself to the accuracy of the
difference scheme.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .roe import LtvModel, control_matrix, roe_to_rtn, roe_to_rtn_batch, stm, stm_batch


@dataclass(frozen=True)
class KozShape:
    """Spherical keep-out zone of the given radius [m].

    ``P`` is the diagonal shape matrix: 1/radius^2 on the three RTN
    position channels, zero on the velocity channels.
    """

    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("keep-out radius must be positive")

    @property
    def P(self) -> np.ndarray:
        p = np.zeros((6, 6))
        p[0, 0] = p[1, 1] = p[2, 2] = 1.0 / self.radius**2
        return p


@dataclass(frozen=True)
class AlphaQuadratic:
    """Coefficients of the burn-fraction quadratic.

    gbar(alpha) = 1 - a - 2 b alpha - c alpha^2, with c >= 0 (the shape
    matrix is PSD) so gbar is concave and its superlevel set is a single
    interval.
    """

    a: float
    b: float
    c: float


class SafetyContext:
    """Precomputed quadrature grid and Theta caches for one node grid.

    Immutable after construction; evaluations are pure and can run
    concurrently.
    """

    def __init__(
        self,
        model: LtvModel,
        koz: KozShape,
        node_times: np.ndarray,
        tau_s: float,
        nq: int = 30,
        n_panels: int = 8,
    ):
        if nq < 1 or n_panels < 1:
            raise ValueError("quadrature settings must be positive")
        self.model = model
        self.koz = koz
        self.node_times = np.asarray(node_times, dtype=float)
        self.tau_s = float(tau_s)
        self.nq = int(nq)
        self.n_panels = int(n_panels)

        xi, wt = np.polynomial.legendre.leggauss(self.nq)
        h = self.tau_s / self.n_panels
        taus, weights = [], []
        for p in range(self.n_panels):
            taus.append(0.5 * h * (xi + 1.0) + p * h)
            weights.append(0.5 * h * wt)
        self.taus = np.concatenate(taus)          # (J,)
        self.weights = np.concatenate(weights)    # (J,)

        n_nodes = len(self.node_times)
        J = len(self.taus)
        diag = np.diag(koz.P)
        self.theta = np.empty((n_nodes, J, 6, 6))
        self.gamma = np.empty((n_nodes, 6, 3))
        for k, tk in enumerate(self.node_times):
            self.gamma[k] = control_matrix(model, tk)
            phi = stm_batch(model, tk, tk + self.taus)
            psi = roe_to_rtn_batch(model, tk + self.taus)
            s = np.einsum("jip,i,jiq->jpq", psi, diag, psi)
            self.theta[k] = np.einsum("jpa,jpq,jqb->jab", phi, s, phi)

    @property
    def n_nodes(self) -> int:
        return len(self.node_times)


def koz_gap(ctx: SafetyContext, k: int, x_k, u_k, tau: float, alpha: float) -> float:
    """Pointwise gap g(k; tau, alpha); g <= 0 means outside the zone."""
    if not (0.0 <= tau <= ctx.tau_s and 0.0 <= alpha <= 1.0):
        raise ValueError("require 0 <= tau <= tau_s and 0 <= alpha <= 1")
    tk = ctx.node_times[k]
    x0 = np.asarray(x_k, float) + alpha * (ctx.gamma[k] @ np.asarray(u_k, float))
    xd = stm(ctx.model, tk, tk + tau) @ x0
    psi = roe_to_rtn(ctx.model, tk + tau)
    s = psi.T @ ctx.koz.P @ psi
    return 1.0 - float(xd @ s @ xd)


def alpha_quadratic(ctx: SafetyContext, k: int, j: int, x_ref, u_ref) -> AlphaQuadratic:
    """Coefficients (a, b, c) at node k, quadrature point j."""
    th = ctx.theta[k, j]
    x = np.asarray(x_ref, float)
    v = ctx.gamma[k] @ np.asarray(u_ref, float)
    return AlphaQuadratic(a=float(x @ th @ x), b=float(x @ th @ v), c=float(v @ th @ v))


def _active_interval_arrays(a, b, c, tol=0.0):
    """Vectorized superlevel set of gbar = (1-a) - 2 b al - c al^2 on [0,1].

    Returns (al1, al2, nonempty).  Where empty, al1 = al2 = 0.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    A = 1.0 - a
    al1 = np.zeros_like(A)
    al2 = np.zeros_like(A)
    nonempty = np.zeros_like(A, dtype=bool)

    tiny = 1e-300
    quad = c > tiny
    lin = (~quad) & (np.abs(b) > tiny)
    const = (~quad) & (~lin)

    # constant gbar = A
    nonempty |= const & (A >= tol)
    al2 = np.where(const & (A >= tol), 1.0, al2)

    # linear gbar = A - 2 b alpha, root at A / (2 b)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = A / (2.0 * b)
    dec = lin & (b > 0)   # decreasing: active on [0, root]
    inc = lin & (b < 0)   # increasing: active on [root, 1]
    ok = dec & (root >= 0.0)
    nonempty |= ok
    al2 = np.where(ok, np.minimum(root, 1.0), al2)
    ok = inc & (root <= 1.0)
    nonempty |= ok
    al1 = np.where(ok, np.maximum(root, 0.0), al1)
    al2 = np.where(ok, 1.0, al2)

    # concave quadratic: roots of c al^2 + 2 b al - A = 0
    with np.errstate(invalid="ignore"):
        disc = b * b + c * A
        r = np.sqrt(np.where(disc >= 0.0, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(quad, (-b - r) / np.where(quad, c, 1.0), 0.0)
        hi = np.where(quad, (-b + r) / np.where(quad, c, 1.0), 0.0)
    lo_c = np.clip(lo, 0.0, 1.0)
    hi_c = np.clip(hi, 0.0, 1.0)
    ok = quad & (disc >= 0.0) & (hi >= 0.0) & (lo <= 1.0)
    nonempty |= ok
    al1 = np.where(ok, lo_c, al1)
    al2 = np.where(ok, hi_c, al2)

    al1 = np.where(nonempty, al1, 0.0)
    al2 = np.where(nonempty, al2, 0.0)
    return al1, al2, nonempty


def active_alpha_interval(q: AlphaQuadratic) -> tuple[float, float] | None:
    """Interval of alpha in [0, 1] where gbar >= 0, or None if empty."""
    if q.c < -1e-12:
        raise ValueError("c must be nonnegative (PSD shape matrix)")
    al1, al2, ok = _active_interval_arrays(
        np.array([q.a]), np.array([q.b]), np.array([max(q.c, 0.0)])
    )
    if not ok[0]:
        return None
    return float(al1[0]), float(al2[0])


def _moments_arrays(a, b, c, al1, al2):
    """Closed-form moments I_m = Int alpha^m gbar dалpha over [al1, al2]."""
    A = 1.0 - np.asarray(a, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    d = [None] + [al2**m - al1**m for m in range(1, 6)]
    i0 = A * d[1] - b * d[2] - c / 3.0 * d[3]
    i1 = A / 2.0 * d[2] - 2.0 * b / 3.0 * d[3] - c / 4.0 * d[4]
    i2 = A / 3.0 * d[3] - b / 2.0 * d[4] - c / 5.0 * d[5]
    return i0, i1, i2


def _gbar_sq_integral_arrays(a, b, c, al1, al2):
    """Closed-form Int gbar^2 dalpha over [al1, al2]."""
    A = 1.0 - np.asarray(a, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    d = [None] + [al2**m - al1**m for m in range(1, 6)]
    return (
        A**2 * d[1]
        - 2.0 * A * b * d[2]
        + (4.0 * b**2 - 2.0 * A * c) / 3.0 * d[3]
        + b * c * d[4]
        + c**2 / 5.0 * d[5]
    )


def alpha_moments(q: AlphaQuadratic, interval: tuple[float, float]) -> tuple[float, float, float]:
    """Moments of gbar over a (sub)interval of its active set."""
    al1, al2 = interval
    i0, i1, i2 = _moments_arrays(
        np.array([q.a]), np.array([q.b]), np.array([q.c]), np.array([al1]), np.array([al2])
    )
    return float(i0[0]), float(i1[0]), float(i2[0])


def _abc(ctx: SafetyContext, k: int, x_ref, u_ref):
    """(a, b, c) arrays over the quadrature grid at node k."""
    x = np.asarray(x_ref, float)
    v = ctx.gamma[k] @ np.asarray(u_ref, float)
    th = ctx.theta[k]                      # (J, 6, 6)
    tx = th @ x                            # (J, 6)
    tv = th @ v
    return tx @ x, tx @ v, tv @ v, v


def gtilde(ctx: SafetyContext, k: int, x_ref, u_ref) -> float:
    """Hinge-squared safety integral at node k; zero iff safe."""
    a, b, c, _ = _abc(ctx, k, x_ref, u_ref)
    al1, al2, ok = _active_interval_arrays(a, b, c)
    vals = np.where(ok, _gbar_sq_integral_arrays(a, b, c, al1, al2), 0.0)
    return float(ctx.weights @ vals)


def gtilde_gradients(ctx: SafetyContext, k: int, x_ref, u_ref) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of gtilde with respect to (x_k, u_k)."""
    x = np.asarray(x_ref, float)
    a, b, c, v = _abc(ctx, k, x_ref, u_ref)
    al1, al2, ok = _active_interval_arrays(a, b, c)
    i0, i1, i2 = _moments_arrays(a, b, c, al1, al2)
    i0 = np.where(ok, i0, 0.0)
    i1 = np.where(ok, i1, 0.0)
    i2 = np.where(ok, i2, 0.0)
    th = ctx.theta[k]
    w = ctx.weights
    gx = -4.0 * np.einsum("j,jpq,jq->p", w, th, np.outer(i0, x) + np.outer(i1, v))
    vec = np.einsum("j,jpq,jq->p", w, th, np.outer(i1, x) + np.outer(i2, v))
    gu = -4.0 * ctx.gamma[k].T @ vec
    return gx, gu


def linearize_ct_safety(ctx: SafetyContext, k: int, x_ref, u_ref):
    """First-order model G_x'(x - xb) + G_u'(u - ub) + gtilde(xb, ub) <= 0.

    Value and gradients come from one pass over the quadrature grid.
    """
    x = np.asarray(x_ref, float)
    a, b, c, v = _abc(ctx, k, x_ref, u_ref)
    al1, al2, ok = _active_interval_arrays(a, b, c)
    g0 = float(ctx.weights @ np.where(ok, _gbar_sq_integral_arrays(a, b, c, al1, al2), 0.0))
    i0, i1, i2 = _moments_arrays(a, b, c, al1, al2)
    i0 = np.where(ok, i0, 0.0)
    i1 = np.where(ok, i1, 0.0)
    i2 = np.where(ok, i2, 0.0)
    th = ctx.theta[k]
    w = ctx.weights
    gx = -4.0 * np.einsum("j,jpq,jq->p", w, th, np.outer(i0, x) + np.outer(i1, v))
    gu = -4.0 * ctx.gamma[k].T @ np.einsum("j,jpq,jq->p", w, th, np.outer(i1, x) + np.outer(i2, v))
    return gx, gu, g0


def gtilde_batch(ctx: SafetyContext, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """gtilde at every node of a trajectory, one vectorized pass."""
    X = np.asarray(states, float)
    V = np.einsum("kij,kj->ki", ctx.gamma, np.asarray(controls, float))
    tx = np.einsum("kjpq,kq->kjp", ctx.theta, X)
    tv = np.einsum("kjpq,kq->kjp", ctx.theta, V)
    a = np.einsum("kjp,kp->kj", tx, X)
    b = np.einsum("kjp,kp->kj", tx, V)
    c = np.einsum("kjp,kp->kj", tv, V)
    al1, al2, ok = _active_interval_arrays(a, b, c)
    vals = np.where(ok, _gbar_sq_integral_arrays(a, b, c, al1, al2), 0.0)
    return vals @ ctx.weights


def linearize_ct_safety_batch(ctx: SafetyContext, states: np.ndarray, controls: np.ndarray):
    """Values and gradients of gtilde at every node, one vectorized pass.

    Returns (g0 (N,), Gx (N, 6), Gu (N, 3)).
    """
    X = np.asarray(states, float)
    U = np.asarray(controls, float)
    V = np.einsum("kij,kj->ki", ctx.gamma, U)
    tx = np.einsum("kjpq,kq->kjp", ctx.theta, X)
    tv = np.einsum("kjpq,kq->kjp", ctx.theta, V)
    a = np.einsum("kjp,kp->kj", tx, X)
    b = np.einsum("kjp,kp->kj", tx, V)
    c = np.einsum("kjp,kp->kj", tv, V)
    al1, al2, ok = _active_interval_arrays(a, b, c)
    g0 = np.where(ok, _gbar_sq_integral_arrays(a, b, c, al1, al2), 0.0) @ ctx.weights
    i0, i1, i2 = _moments_arrays(a, b, c, al1, al2)
    i0 = np.where(ok, i0, 0.0)
    i1 = np.where(ok, i1, 0.0)
    i2 = np.where(ok, i2, 0.0)
    w = ctx.weights
    # gradients assemble from the same Theta contractions
    gx = -4.0 * np.einsum("j,kjp->kp", w, tx * i0[:, :, None] + tv * i1[:, :, None])
    vec = np.einsum("j,kjp->kp", w, tx * i1[:, :, None] + tv * i2[:, :, None])
    gu = -4.0 * np.einsum("kpi,kp->ki", ctx.gamma, vec)
    return g0, gx, gu


@dataclass(frozen=True)
class SafetyReport:
    passed: bool
    min_range: float
    worst_node: int
    worst_tau: float
    worst_alpha: float


def verify_passive_safety(
    ctx: SafetyContext,
    states: np.ndarray,
    controls: np.ndarray,
    grid: tuple[int, int] = (200, 21),
) -> SafetyReport:
    """Independent a-posteriori checker on a dense (tau, alpha) grid.

    Samples every drift trajectory (all nodes, all burn fractions) and
    reports the minimum target range against the keep-out radius.  This
    path deliberately avoids the quadrature/closed-form machinery.
    """
    n_tau, n_alpha = grid
    if n_tau < 100 or n_alpha < 21:
        raise ValueError("grid must be at least (100, 21)")
    X = np.asarray(states, float)
    U = np.asarray(controls, float)
    taus = np.linspace(0.0, ctx.tau_s, n_tau)
    alphas = np.linspace(0.0, 1.0, n_alpha)

    best = np.inf
    worst = (0, 0.0, 0.0)
    for k, tk in enumerate(ctx.node_times):
        post = X[k][None, :] + alphas[:, None] * (ctx.gamma[k] @ U[k])[None, :]  # (na, 6)
        phi = stm_batch(ctx.model, tk, tk + taus)
        psi = roe_to_rtn_batch(ctx.model, tk + taus)
        maps = np.einsum("tpq,tqr->tpr", psi[:, :3], phi)
        pos = np.einsum("tpq,aq->tap", maps, post)
        rng = np.linalg.norm(pos, axis=2)       # (n_tau, n_alpha)
        idx = np.unravel_index(np.argmin(rng), rng.shape)
        if rng[idx] < best:
            best = float(rng[idx])
            worst = (k, float(taus[idx[0]]), float(alphas[idx[1]]))
    return SafetyReport(
        passed=bool(best >= ctx.koz.radius),
        min_range=best,
        worst_node=worst[0],
        worst_tau=worst[1],
        worst_alpha=worst[2],
    )
