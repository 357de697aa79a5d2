import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog

from semtraj.conic import ConicProgram, ConicSolution, ProgramError, kkt_residuals, solve


def random_program(rng: np.random.Generator, n: int = 30, with_soc: bool = True) -> ConicProgram:
    """Feasible random program: strictly feasible interior point plus a few
    назад-tight rows, optional SOC blocks on disjoint variable groups."""
    x0 = rng.normal(size=n)
    socs = []
    if with_soc and n >= 8 and rng.random() < 0.7:
        perm = rng.permutation(n)
        head, tail = int(perm[0]), perm[1:4]
        x0[head] = np.linalg.norm(x0[tail]) * (1.0 + rng.uniform(0.1, 1.0))
        socs.append((head, tail))
    L = rng.normal(size=(n, n)) / np.sqrt(n)
    P = sp.csc_matrix(L.T @ L + 1e-3 * np.eye(n)) if rng.random() < 0.8 else None
    q = rng.normal(size=n)
    m_eq = rng.integers(0, n // 3 + 1)
    A_eq = rng.normal(size=(m_eq, n)) if m_eq else None
    b_eq = A_eq @ x0 if m_eq else None
    m_in = rng.integers(1, n)
    A_in = rng.normal(size=(m_in, n))
    margin = np.where(rng.random(m_in) < 0.3, 0.0, rng.uniform(0.05, 1.0, m_in))
    b_in = A_in @ x0 + margin
    if P is None:
        # an LP must be boxed to stay bounded
        lb = x0 - rng.uniform(0.5, 3.0, n)
        ub = x0 + rng.uniform(0.5, 3.0, n)
    else:
        lb = np.where(rng.random(n) < 0.4, x0 - rng.uniform(0.1, 2.0, n), -np.inf)
        ub = np.where(rng.random(n) < 0.4, x0 + rng.uniform(0.1, 2.0, n), np.inf)
    return ConicProgram(n=n, P=P, q=q, A_eq=sp.csc_matrix(A_eq) if m_eq else None, b_eq=b_eq,
                        A_in=sp.csc_matrix(A_in), b_in=b_in, lb=lb, ub=ub, socs=socs)


def test_unconstrained_norm_min():
    prog = ConicProgram(n=5, P=sp.eye(5, format="csc"), q=np.zeros(5))
    sol = solve(prog)
    assert sol.status == "optimal"
    assert np.allclose(sol.x, 0.0, atol=1e-9)


def test_clipped_quadratic():
    # min 1/2 (x - 3)^2 s.t. x <= 1
    prog = ConicProgram(
        n=1, P=sp.eye(1, format="csc"), q=np.array([-3.0]),
        A_in=sp.csc_matrix(np.array([[1.0]])), b_in=np.array([1.0]),
    )
    sol = solve(prog)
    assert sol.status == "optimal"
    assert abs(sol.x[0] - 1.0) <= 1e-8
    rp, rd, gap = kkt_residuals(prog, sol)
    assert rp <= 1e-8 and rd <= 1e-8 and gap <= 1e-7


def test_random_qp_vs_dense_kkt():
    # equality-constrained QP solved by a direct dense KKT factorization
    rng = np.random.default_rng(0)
    for _ in range(10):
        n, m = 30, 8
        L = rng.normal(size=(n, n))
        P = L.T @ L + 0.5 * np.eye(n)
        q = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        kkt = np.block([[P, A.T], [A, np.zeros((m, m))]])
        ref = np.linalg.solve(kkt, np.concatenate([-q, b]))[:n]
        prog = ConicProgram(n=n, P=sp.csc_matrix(P), q=q, A_eq=sp.csc_matrix(A), b_eq=b)
        sol = solve(prog)
        assert sol.status == "optimal"
        assert np.linalg.norm(sol.x - ref) / np.linalg.norm(ref) <= 1e-6


def test_zero_program_residuals():
    prog = ConicProgram(n=4)
    sol = solve(prog)
    rp, rd, gap = kkt_residuals(prog, sol)
    assert np.allclose(sol.x, 0.0) and rp == 0.0 and rd == 0.0 and gap == 0.0


def test_residuals_grow_with_perturbation():
    prog = ConicProgram(
        n=2, P=sp.eye(2, format="csc"), q=np.array([-1.0, 0.0]),
        A_eq=sp.csc_matrix(np.array([[1.0, 2.0]])), b_eq=np.array([0.5]),
    )
    sol = solve(prog)
    rp0, _, _ = kkt_residuals(prog, sol)
    pert = ConicSolution(
        x=sol.x + np.array([1e-2, 0.0]), status="optimal", obj=0.0, iterations=0,
        r_prim=0, r_dual=0, gap=0, y_eq=sol.y_eq, y_in=sol.y_in,
        y_bounds=sol.y_bounds, y_socs=sol.y_socs,
    )
    rp1, _, _ = kkt_residuals(prog, pert)
    assert np.isclose(rp1 - rp0, 1e-2 * 1.0, atol=1e-6)  # row coefficient on x0 is 1


def test_duality_gap_small_on_random(cfg):
    rng = np.random.default_rng(42)
    for _ in range(20):
        prog = random_program(rng, n=24)
        sol = solve(prog)
        assert sol.status == "optimal"
        rp, rd, gap = kkt_residuals(prog, sol)
        assert rp <= 1e-6 and rd <= 1e-6
        assert gap <= 1e-5 * max(1.0, abs(sol.obj))


def test_l1_splitting_matches_linprog():
    # min ||x||_1 s.t. A x = b encoded by splitting x = xp - xm, against
    # the same LP solved by an independent simplex/IPM implementation
    rng = np.random.default_rng(7)
    for _ in range(20):
        n, m = 12, 5
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        # splitting formulation in our solver
        n2 = 2 * n
        q = np.ones(n2)
        A_eq = sp.csc_matrix(np.hstack([A, -A]))
        prog = ConicProgram(n=n2, q=q, A_eq=A_eq, b_eq=b, lb=np.zeros(n2))
        sol = solve(prog)
        assert sol.status == "optimal"
        ref = linprog(q, A_eq=np.hstack([A, -A]), b_eq=b, bounds=[(0, None)] * n2, method="highs")
        assert ref.status == 0
        assert abs(sol.obj - ref.fun) <= 1e-6 * max(1.0, abs(ref.fun))


def test_soc_epigraph_vs_enumeration():
    # 2-node fuel problem: min ||u1|| + ||u2|| s.t. u1 + M u2 = b,
    # enumerated on a refining grid over u1
    rng = np.random.default_rng(3)
    for _ in range(5):
        M = np.eye(2) + 0.3 * rng.normal(size=(2, 2))
        b = rng.normal(size=2)
        # variables [u1 (2), u2 (2), t1, t2]
        A_eq = np.zeros((2, 6))
        A_eq[:, :2] = np.eye(2)
        A_eq[:, 2:4] = M
        prog = ConicProgram(
            n=6, q=np.array([0, 0, 0, 0, 1.0, 1.0]),
            A_eq=sp.csc_matrix(A_eq), b_eq=b,
            socs=[(4, np.array([0, 1])), (5, np.array([2, 3]))],
        )
        sol = solve(prog)
        assert sol.status == "optimal"

        Minv = np.linalg.inv(M)
        center = np.zeros(2)
        width = 4.0 * (1 + np.linalg.norm(b))
        best = np.inf
        for _ in range(8):
            g = np.linspace(-width / 2, width / 2, 41)
            xs = center[0] + g
            ys = center[1] + g
            X, Y = np.meshgrid(xs, ys)
            U1 = np.stack([X.ravel(), Y.ravel()], axis=1)
            U2 = (b[None, :] - U1) @ Minv.T
            obj = np.linalg.norm(U1, axis=1) + np.linalg.norm(U2, axis=1)
            i = int(np.argmin(obj))
            best = obj[i]
            center = U1[i]
            width /= 10.0
        assert abs(sol.obj - best) <= 1e-6 * max(1.0, best)


def test_validation_errors():
    with pytest.raises(ProgramError):
        ConicProgram(n=3, q=np.zeros(2)).finalized()
    with pytest.raises(ProgramError):
        ConicProgram(n=2, P=sp.csc_matrix(np.array([[1.0, 0], [0, -2.0]]))).finalized()
    with pytest.raises(ProgramError):
        ConicProgram(n=2, A_eq=sp.csc_matrix(np.ones((1, 3))), b_eq=np.ones(1)).finalized()
    with pytest.raises(ProgramError):
        ConicProgram(n=2, socs=[(0, np.array([5]))]).finalized()


def test_infeasible_program_reported():
    # x >= 1 and x <= -1
    prog = ConicProgram(
        n=1, q=np.array([1.0]),
        A_in=sp.csc_matrix(np.array([[1.0], [-1.0]])), b_in=np.array([-1.0, -1.0]),
    )
    sol = solve(prog, max_iter=20000)
    assert sol.status in ("infeasible", "max_iter")
    assert sol.status != "optimal"


def test_determinism():
    rng = np.random.default_rng(5)
    prog = random_program(rng, n=20)
    s1 = solve(prog)
    s2 = solve(prog)
    assert np.array_equal(s1.x, s2.x) and s1.iterations == s2.iterations


def test_warm_start_accepted():
    rng = np.random.default_rng(8)
    prog = random_program(rng, n=20, with_soc=False)
    cold = solve(prog)
    y_full = cold.y_eq
    warm = solve(prog, warm=(cold.x, np.zeros(0)))
    assert warm.status == "optimal"
    assert np.linalg.norm(warm.x - cold.x) <= 1e-5 * max(1.0, np.linalg.norm(cold.x))
    del y_full
