"""Pluggable conic solver backends.

The in-process interface is one function per backend: a finalized
``ConicProgram`` in, a ``ConicSolution`` out.  The operator-splitting
solver in :mod:`semtraj.conic` is the self-contained default; when the
Clarabel interior-point solver is importable it can be selected for
throughput-critical batch work (identical programs, the same solution
object, deterministic).  ``resolve_backend("auto")`` prefers Clarabel
and falls back to the built-in solver.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import conic

try:
    import clarabel as _clarabel

    HAVE_CLARABEL = True
except ImportError:  # pragma: no cover - environment without the wheel
    _clarabel = None
    HAVE_CLARABEL = False


def admm_solve(prog: conic.ConicProgram, abs_tol=1e-8, rel_tol=1e-9, warm=None, rho_hints=None,
               max_iter=100_000) -> conic.ConicSolution:
    return conic.solve(
        prog, abs_tol=abs_tol, rel_tol=rel_tol, warm=warm, rho_hints=rho_hints, max_iter=max_iter
    )


def clarabel_solve(prog: conic.ConicProgram, abs_tol=1e-8, rel_tol=1e-9, warm=None,
                   rho_hints=None, max_iter=100_000) -> conic.ConicSolution:
    """Interior-point backend; warm starts and rho hints are ignored."""
    prog.finalized()
    n = prog.n
    rows = []
    rhs = []
    cones = []
    if prog.m_eq:
        rows.append(prog.A_eq)
        rhs.append(prog.b_eq)
        cones.append(_clarabel.ZeroConeT(prog.m_eq))
    nonneg = 0
    if prog.m_in:
        rows.append(prog.A_in)
        rhs.append(prog.b_in)
        nonneg += prog.m_in
    ub_idx = np.where(np.isfinite(prog.ub))[0]
    lb_idx = np.where(np.isfinite(prog.lb))[0]
    if len(ub_idx):
        e = sp.csr_matrix((np.ones(len(ub_idx)), (np.arange(len(ub_idx)), ub_idx)), shape=(len(ub_idx), n))
        rows.append(e)
        rhs.append(prog.ub[ub_idx])
        nonneg += len(ub_idx)
    if len(lb_idx):
        e = sp.csr_matrix((-np.ones(len(lb_idx)), (np.arange(len(lb_idx)), lb_idx)), shape=(len(lb_idx), n))
        rows.append(e)
        rhs.append(-prog.lb[lb_idx])
        nonneg += len(lb_idx)
    if nonneg:
        cones.append(_clarabel.NonnegativeConeT(nonneg))
    for head, tail in prog.socs:
        idx = np.concatenate(([head], np.asarray(tail)))
        e = sp.csr_matrix((-np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), n))
        rows.append(e)
        rhs.append(np.zeros(len(idx)))
        cones.append(_clarabel.SecondOrderConeT(len(idx)))

    A = sp.vstack(rows, format="csc") if rows else sp.csc_matrix((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    P = sp.csc_matrix(prog.P) if prog.P is not None else sp.csc_matrix((n, n))
    P = sp.triu(P, format="csc")
    settings = _clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = abs_tol
    settings.tol_gap_rel = rel_tol
    settings.tol_feas = abs_tol
    settings.max_iter = 200
    solver = _clarabel.DefaultSolver(P, prog.q, A, b, cones, settings)
    out = solver.solve()
    status = str(out.status)
    ok = status in ("Solved", "SolverStatus.Solved", "AlmostSolved", "SolverStatus.AlmostSolved")
    x = np.asarray(out.x) if ok else np.zeros(n)
    z = np.asarray(out.z) if ok else np.zeros(A.shape[0])

    y_eq = z[: prog.m_eq] if prog.m_eq else np.zeros(0)
    pos = prog.m_eq
    y_in = z[pos : pos + prog.m_in] if prog.m_in else np.zeros(0)
    pos += prog.m_in
    y_bounds = np.zeros(n)
    if len(ub_idx):
        y_bounds[ub_idx] += z[pos : pos + len(ub_idx)]
        pos += len(ub_idx)
    if len(lb_idx):
        y_bounds[lb_idx] -= z[pos : pos + len(lb_idx)]
        pos += len(lb_idx)
    y_socs = []
    for head, tail in prog.socs:
        blk = z[pos : pos + 1 + len(tail)]
        pos += 1 + len(tail)
        y_socs.append(-blk)
    sol = conic.ConicSolution(
        x=x, status="optimal" if ok else ("infeasible" if "Infeasible" in status else "max_iter"),
        obj=prog.objective(x), iterations=int(out.iterations),
        r_prim=0.0, r_dual=0.0, gap=0.0,
        y_eq=y_eq, y_in=np.maximum(y_in, 0.0), y_bounds=y_bounds, y_socs=y_socs,
    )
    if ok:
        sol.r_prim, sol.r_dual, sol.gap = conic.kkt_residuals(prog, sol)
    return sol


def auto_solve(prog, **kw):
    """Clarabel first, operator-splitting fallback on failure."""
    sol = clarabel_solve(prog, **kw)
    if sol.status == "optimal":
        return sol
    return admm_solve(prog, **kw)


BACKENDS = {"admm": admm_solve, "clarabel": clarabel_solve, "auto": None}


def resolve_backend(name: str = "auto"):
    """Backend lookup: 'admm', 'clarabel', or 'auto' (prefer Clarabel with
    fallback to the built-in solver)."""
    if name == "auto":
        return auto_solve if HAVE_CLARABEL else admm_solve
    if name not in BACKENDS:
        raise ValueError(f"unknown solver backend {name!r}")
    if name == "clarabel" and not HAVE_CLARABEL:
        raise RuntimeError("clarabel backend requested but the package is not importable")
    return BACKENDS[name]
