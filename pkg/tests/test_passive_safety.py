import numpy as np
import pytest
from scipy.integrate import simpson

from semtraj.passive_safety import (
    AlphaQuadratic,
    KozShape,
    SafetyContext,
    active_alpha_interval,
    alpha_moments,
    alpha_quadratic,
    gtilde,
    gtilde_gradients,
    koz_gap,
    linearize_ct_safety,
    verify_passive_safety,
)
from semtraj.roe import control_matrix, roe_to_rtn, roe_to_rtn_batch, stm_batch

from conftest import random_roe_state


@pytest.fixture(scope="module")
def ctx(model, cfg):
    rpo = cfg["rpo"]
    period = model.period
    times = np.linspace(0.0, rpo["t_f_orbits"] * period, rpo["n_nodes"])
    return SafetyContext(
        model,
        KozShape(rpo["koz_radius"]),
        times,
        tau_s=rpo["tau_s_orbits"] * period,
        nq=rpo["nq"],
        n_panels=rpo["n_panels"],
    )


def gtilde_bruteforce(ctx, k, x, u, n=400):
    """Dense 400x400 (tau, alpha) grid double integral of the squared hinge.

    Evaluates the gap directly through the drift maps (no (a, b, c)
    machinery).  Per tau row, the hinge boundary is located by bisection
    on the raw gap samples and the smooth part is integrated with
    composite Simpson inside the violated band; rows are then combined
    with Simpson in tau.  Entirely independent of the closed-form /
    Gauss-Legendre production path.
    """
    tk = ctx.node_times[k]
    v = control_matrix(ctx.model, tk) @ u
    s_unit = np.linspace(0.0, 1.0, n + 1)
    simp_w = np.ones(n + 1)
    simp_w[1:-1:2], simp_w[2:-1:2] = 4.0, 2.0
    simp_w /= 3.0 * n

    def rows_at(taus):
        """Per-tau alpha-integral of the squared hinge, plus violation flags."""
        taus = np.asarray(taus, float)
        m = len(taus)
        phi = stm_batch(ctx.model, tk, tk + taus)
        psi = roe_to_rtn_batch(ctx.model, tk + taus)
        maps = np.einsum("tpq,tqr->tpr", psi[:, :3], phi)
        p, q = maps @ x, maps @ v

        def g_of(al):
            al = np.asarray(al)
            shape = (-1,) + (1,) * (al.ndim - 1)
            pos2 = (
                (p**2).sum(1).reshape(shape)
                + 2.0 * (p * q).sum(1).reshape(shape) * al
                + (q**2).sum(1).reshape(shape) * al**2
            )
            return 1.0 - pos2 / ctx.koz.radius**2

        # row maximum by ternary search (g is concave in alpha per row)
        lo, hi = np.zeros(m), np.ones(m)
        for _ in range(80):
            m1 = lo + (hi - lo) / 3.0
            m2 = hi - (hi - lo) / 3.0
            takes_left = g_of(m1) >= g_of(m2)
            hi = np.where(takes_left, m2, hi)
            lo = np.where(~takes_left, m1, lo)
        peak = 0.5 * (lo + hi)
        active = g_of(peak) > 0.0

        def bisect(neg, pos, mask):
            neg, pos = neg.astype(float).copy(), pos.astype(float).copy()
            for _ in range(60):
                mid = 0.5 * (neg + pos)
                gm = g_of(mid)
                neg = np.where(mask & (gm <= 0), mid, neg)
                pos = np.where(mask & (gm > 0), mid, pos)
            return 0.5 * (neg + pos)

        left = active & (g_of(np.zeros(m)) <= 0)
        r1 = np.where(left, bisect(np.zeros(m), peak, left), 0.0)
        right = active & (g_of(np.ones(m)) <= 0)
        r2 = np.where(right, bisect(np.ones(m), peak, right), 1.0)
        r2 = np.maximum(r2, r1)
        al_grid = r1[:, None] + (r2 - r1)[:, None] * s_unit[None, :]
        vals = np.clip(g_of(al_grid), 0.0, None) ** 2
        inner = (vals * simp_w[None, :]).sum(axis=1) * (r2 - r1)
        return np.where(active, inner, 0.0), active

    # locate tau where the violation band is born or dies, then integrate
    # each smooth segment with Simpson on the dense grid
    taus = np.linspace(0.0, ctx.tau_s, n + 1)
    _, flags = rows_at(taus)
    cuts = [0.0]
    for i in np.nonzero(flags[:-1] != flags[1:])[0]:
        lo_t, hi_t = taus[i], taus[i + 1]
        lo_f = flags[i]
        for _ in range(60):
            mid = 0.5 * (lo_t + hi_t)
            _, f = rows_at([mid])
            if f[0] == lo_f:
                lo_t = mid
            else:
                hi_t = mid
        cuts.append(0.5 * (lo_t + hi_t))
    cuts.append(ctx.tau_s)

    total = 0.0
    for a0, a1 in zip(cuts[:-1], cuts[1:]):
        if a1 - a0 <= 0:
            continue
        seg = np.linspace(a0, a1, n + 1)
        inner, seg_flags = rows_at(seg)
        if not seg_flags[n // 2]:
            continue
        total += float(simpson(inner, x=seg))
    return total


def test_koz_gap_on_sphere(ctx, model):
    # place the state exactly on / at twice the keep-out radius via the map
    psi = roe_to_rtn(model, ctx.node_times[4])
    x_on = np.linalg.solve(psi, np.array([25.0, 0, 0, 0, 0, 0]))
    assert abs(koz_gap(ctx, 4, x_on, np.zeros(3), 0.0, 0.0)) < 1e-10
    x_far = np.linalg.solve(psi, np.array([0.0, 50.0, 0, 0, 0, 0]))
    assert np.isclose(koz_gap(ctx, 4, x_far, np.zeros(3), 0.0, 0.5), -3.0, atol=1e-10)


def test_koz_gap_matches_quadratic_reconstruction(ctx):
    rng = np.random.default_rng(7)
    for _ in range(20):
        k = int(rng.integers(0, ctx.n_nodes))
        j = int(rng.integers(0, len(ctx.taus)))
        x, u = random_roe_state(rng), rng.normal(size=3) * 5e-3
        q = alpha_quadratic(ctx, k, j, x, u)
        for alpha in (0.0, 0.3, 1.0):
            direct = koz_gap(ctx, k, x, u, float(ctx.taus[j]), alpha)
            recon = 1.0 - (q.a + 2 * q.b * alpha + q.c * alpha**2)
            assert abs(direct - recon) <= 1e-12 * max(1.0, abs(direct))


def test_alpha_quadratic_degenerate(ctx):
    rng = np.random.default_rng(1)
    x = random_roe_state(rng)
    q = alpha_quadratic(ctx, 3, 10, x, np.zeros(3))
    assert q.b == 0.0 and q.c == 0.0
    q = alpha_quadratic(ctx, 3, 10, np.zeros(6), rng.normal(size=3) * 1e-3)
    assert q.a == 0.0 and q.b == 0.0 and q.c >= 0.0


def test_alpha_quadratic_three_point_fit(ctx):
    # a, b, c recovered from the quadratic form at alpha in {0, 1/2, 1}
    rng = np.random.default_rng(11)
    k, j = 7, 33
    x, u = random_roe_state(rng), rng.normal(size=3) * 5e-3
    q = alpha_quadratic(ctx, k, j, x, u)
    f = [1.0 - koz_gap(ctx, k, x, u, float(ctx.taus[j]), al) for al in (0.0, 0.5, 1.0)]
    a_fit = f[0]
    c_fit = 2 * (f[0] - 2 * f[1] + f[2])
    b_fit = (f[2] - f[0] - c_fit) / 2.0
    scale = max(1.0, abs(q.a), abs(q.b), abs(q.c))
    assert abs(q.a - a_fit) / scale < 1e-9
    assert abs(q.b - b_fit) / scale < 1e-9
    assert abs(q.c - c_fit) / scale < 1e-9


def test_active_interval_examples():
    assert active_alpha_interval(AlphaQuadratic(4.0, 0.0, 0.0)) is None
    assert active_alpha_interval(AlphaQuadratic(0.0, 0.0, 0.0)) == (0.0, 1.0)
    got = active_alpha_interval(AlphaQuadratic(0.0, 0.0, 4.0))
    assert np.allclose(got, (0.0, 0.5))


def test_active_interval_is_superlevel_set():
    rng = np.random.default_rng(5)
    alphas = np.linspace(0, 1, 2001)
    for _ in range(1000):
        kind = rng.integers(0, 4)
        a = rng.normal() * 2
        b = 0.0 if kind == 1 else rng.normal()
        c = 0.0 if kind <= 1 else abs(rng.normal()) * 2
        q = AlphaQuadratic(a, b, c)
        gbar = (1 - a) - 2 * b * alphas - c * alphas**2
        ival = active_alpha_interval(q)
        if ival is None:
            assert np.all(gbar < 1e-10)
            continue
        inside = (alphas >= ival[0]) & (alphas <= ival[1])
        assert np.all(gbar[inside] >= -1e-10)
        assert np.all(gbar[~inside] <= 1e-10)
        # endpoints either touch a root or are clipped at the box edge
        for endpoint in ival:
            gval = (1 - a) - 2 * b * endpoint - c * endpoint**2
            assert gval >= -1e-10
            if endpoint not in (0.0, 1.0):
                assert abs(gval) < 1e-8 * max(1.0, abs(a), abs(b), abs(c))


def test_alpha_moments_examples():
    q = AlphaQuadratic(0.0, 0.0, 0.0)
    assert np.allclose(alpha_moments(q, (0.0, 1.0)), (1.0, 0.5, 1.0 / 3.0))
    q = AlphaQuadratic(0.0, 0.0, 4.0)
    i0, _, _ = alpha_moments(q, (0.0, 0.5))
    assert np.isclose(i0, 1.0 / 3.0)  # Int_0^{1/2} (1 - 4 al^2) dal


def test_alpha_moments_vs_dense_1d():
    # 1e5-point numerical integration over the active interval
    rng = np.random.default_rng(9)
    s = np.linspace(0.0, 1.0, 100_001)
    for _ in range(250):
        kind = rng.integers(0, 3)
        a = rng.normal()
        b = 0.0 if kind == 0 else rng.normal()
        c = 0.0 if kind <= 1 else abs(rng.normal()) * 3
        q = AlphaQuadratic(a, b, c)
        ival = active_alpha_interval(q)
        if ival is None or ival[1] - ival[0] == 0.0:
            continue
        alphas = ival[0] + (ival[1] - ival[0]) * s
        gbar = (1 - a) - 2 * b * alphas - c * alphas**2
        for m, got in enumerate(alpha_moments(q, ival)):
            want = np.trapezoid(alphas**m * gbar, alphas)
            assert abs(got - want) <= 1e-8 * max(abs(want), 1e-9)


def test_gtilde_trivial(ctx):
    rng = np.random.default_rng(2)
    psi = roe_to_rtn(ctx.model, ctx.node_times[0])
    x_far = np.linalg.solve(psi, np.array([0.0, 400.0, 0, 0, 0, 0]))
    # far outside and essentially drift-free: no violation anywhere
    assert gtilde(ctx, 0, x_far * 0 + np.array([0, 400.0, 0, 0, 0, 0]), np.zeros(3)) == 0.0
    # parked at the zone center: unit integrand over the whole rectangle
    assert np.isclose(gtilde(ctx, 5, np.zeros(6), np.zeros(3)), ctx.tau_s, rtol=1e-12)
    del rng


def test_gtilde_vs_bruteforce(ctx):
    rng = np.random.default_rng(21)
    checked = 0
    for _ in range(12):
        k = int(rng.integers(0, ctx.n_nodes))
        x, u = random_roe_state(rng), rng.normal(size=3) * 4e-3
        got = gtilde(ctx, k, x, u)
        want = gtilde_bruteforce(ctx, k, x, u)
        if want == 0.0:
            assert got <= 1e-12
        else:
            assert abs(got - want) / want <= 1e-6
            checked += 1
    assert checked >= 4  # the draw really mixes safe and unsafe states


def test_gtilde_quadrature_convergence(ctx, model, cfg):
    rng = np.random.default_rng(33)
    rpo = cfg["rpo"]
    period = model.period
    times = ctx.node_times
    refs = []
    for nq in (20, 30, 50):
        c = SafetyContext(model, KozShape(rpo["koz_radius"]), times[:4], ctx.tau_s, nq=nq, n_panels=rpo["n_panels"])
        rng_i = np.random.default_rng(33)
        vals = []
        for _ in range(6):
            x, u = random_roe_state(rng_i), rng_i.normal(size=3) * 4e-3
            vals.append(gtilde(c, 2, x, u))
        refs.append(np.array(vals))
    for other in refs[1:]:
        mask = refs[0] > 1e-9
        assert np.all(np.abs(other[mask] - refs[0][mask]) / refs[0][mask] <= 1e-5)


def test_gtilde_scaling_invariance(ctx, model):
    # P -> s^2 P (radius / s) combined with state/control / s leaves gtilde unchanged
    rng = np.random.default_rng(8)
    x, u = random_roe_state(rng), rng.normal(size=3) * 4e-3
    s = 2.0
    scaled = SafetyContext(
        model, KozShape(ctx.koz.radius / s), ctx.node_times[:6], ctx.tau_s, nq=ctx.nq, n_panels=ctx.n_panels
    )
    assert np.isclose(gtilde(ctx, 3, x, u), gtilde(scaled, 3, x / s, u / s), rtol=1e-12)


def test_gradients_vs_finite_differences(ctx):
    rng = np.random.default_rng(13)
    done = 0
    while done < 25:
        k = int(rng.integers(0, ctx.n_nodes))
        x, u = random_roe_state(rng), rng.normal(size=3) * 4e-3
        if gtilde(ctx, k, x, u) < 1e-10:
            continue
        gx, gu = gtilde_gradients(ctx, k, x, u)
        hx = 1e-6 * np.maximum(1.0, np.abs(x))
        hu = 1e-6 * np.maximum(1e-3, np.abs(u))
        fd_x = np.array(
            [
                (gtilde(ctx, k, x + hx[i] * np.eye(6)[i], u) - gtilde(ctx, k, x - hx[i] * np.eye(6)[i], u))
                / (2 * hx[i])
                for i in range(6)
            ]
        )
        fd_u = np.array(
            [
                (gtilde(ctx, k, x, u + hu[i] * np.eye(3)[i]) - gtilde(ctx, k, x, u - hu[i] * np.eye(3)[i]))
                / (2 * hu[i])
                for i in range(3)
            ]
        )
        assert np.linalg.norm(gx - fd_x) <= 1e-4 * max(np.linalg.norm(fd_x), 1e-12)
        assert np.linalg.norm(gu - fd_u) <= 1e-4 * max(np.linalg.norm(fd_u), 1e-9)
        done += 1


def test_gradients_zero_when_safe(ctx):
    x = np.array([0.0, 300.0, 0, 0, 0, 0])
    gx, gu = gtilde_gradients(ctx, 2, x, np.zeros(3))
    assert np.allclose(gx, 0.0) and np.allclose(gu, 0.0)
    # zone-center fixed point with no burn: gradient in u vanishes by symmetry
    _, gu = gtilde_gradients(ctx, 2, np.zeros(6), np.zeros(3))
    assert np.allclose(gu, 0.0, atol=1e-12)


def test_linearize_ct_safety(ctx):
    x_safe = np.array([0.0, 300.0, 0, 0, 0, 0])
    gx, gu, g0 = linearize_ct_safety(ctx, 1, x_safe, np.zeros(3))
    assert g0 == 0.0 and np.allclose(gx, 0.0) and np.allclose(gu, 0.0)
    rng = np.random.default_rng(17)
    x, u = random_roe_state(rng) * 0.3, rng.normal(size=3) * 2e-3
    gx, gu, g0 = linearize_ct_safety(ctx, 1, x, u)
    assert np.isclose(g0, gtilde(ctx, 1, x, u))


def test_linear_model_descent_direction(ctx):
    # small steps along the negative gradient reduce the true integral
    rng = np.random.default_rng(19)
    done = 0
    while done < 100:
        k = int(rng.integers(0, ctx.n_nodes))
        x, u = random_roe_state(rng) * 0.6, rng.normal(size=3) * 3e-3
        g0 = gtilde(ctx, k, x, u)
        if g0 < 1e-8:
            continue
        gx, gu = gtilde_gradients(ctx, k, x, u)
        scale = np.linalg.norm(gx) ** 2 + np.linalg.norm(gu) ** 2
        step = 1e-3 * g0 / scale
        assert gtilde(ctx, k, x - step * gx, u - step * gu) < g0
        done += 1


def test_verify_passive_safety(ctx, model):
    n = ctx.n_nodes
    # stationary hold far down the along-track axis: safe everywhere
    X = np.tile(np.array([0.0, -300.0, 0, 0, 0, 0]), (n, 1))
    U = np.zeros((n, 3))
    rep = verify_passive_safety(ctx, X, U)
    assert rep.passed and rep.min_range >= ctx.koz.radius
    # trajectory through the origin: fails with zero worst range
    X0 = np.zeros((n, 6))
    rep0 = verify_passive_safety(ctx, X0, U)
    assert not rep0.passed and rep0.min_range < 1e-9
    # cross-oracle agreement with gtilde at every node
    for k in range(0, n, 7):
        assert gtilde(ctx, k, X[k], U[k]) == 0.0
        assert gtilde(ctx, k, X0[k], U[k]) > 0.0


def test_verify_grid_minimum(ctx):
    with pytest.raises(ValueError):
        verify_passive_safety(ctx, np.zeros((ctx.n_nodes, 6)), np.zeros((ctx.n_nodes, 3)), grid=(50, 21))


def test_koz_shape_validation():
    with pytest.raises(ValueError):
        KozShape(0.0)
    p = KozShape(25.0).P
    assert np.allclose(np.diag(p)[:3], 1 / 625.0) and np.allclose(np.diag(p)[3:], 0.0)
