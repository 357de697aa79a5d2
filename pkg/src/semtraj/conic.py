"""Convex subproblem solver: QP cost, linear rows, boxes, second-order cones.

First-order operator-splitting (ADMM with over-relaxation) on the
standard splitting

    minimize 1/2 z'Pz + q'z   subject to  A z = w,  w in C,

where C is the product of interval rows (equalities are degenerate
intervals, inequalities one-sided, variable bounds identity rows) and
second-order cone blocks on selected variables.  Ruiz equilibration
conditions the data, a diagonal rho with heavier weight on equality rows
speeds convergence, and an active-set polish step (KKT solve on the
identified active rows with iterative refinement) delivers residuals far
below the ADMM tolerance whenever the active set is identified
correctly; otherwise iteration continues to the requested tolerance.

The solver is deterministic: fixed initialization (zero unless a warm
start is supplied) and a fixed iteration order.  A solve owns its
workspace, so disjoint programs can be solved concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ProgramError(ValueError):
    pass


@dataclass
class ConicProgram:
    """min 1/2 z'Pz + q'z  s.t.  A_eq z = b_eq, A_in z <= b_in,
    lb <= z <= ub, and ||z[tail]|| <= z[head] per SOC block."""

    n: int
    P: sp.spmatrix | None = None
    q: np.ndarray | None = None
    A_eq: sp.spmatrix | None = None
    b_eq: np.ndarray | None = None
    A_in: sp.spmatrix | None = None
    b_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    socs: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def finalized(self) -> "ConicProgram":
        n = self.n
        if self.q is None:
            self.q = np.zeros(n)
        self.q = np.asarray(self.q, dtype=float)
        if self.q.shape != (n,):
            raise ProgramError(f"q has shape {self.q.shape}, expected ({n},)")
        if self.P is not None:
            self.P = sp.csc_matrix(self.P)
            if self.P.shape != (n, n):
                raise ProgramError(f"P has shape {self.P.shape}, expected ({n}, {n})")
            sym_err = abs(self.P - self.P.T).max()
            if sym_err > 1e-10 * max(1.0, abs(self.P).max()):
                raise ProgramError("cost matrix must be symmetric")
            self._check_psd()
        for name in ("A_eq", "A_in"):
            a = getattr(self, name)
            b = getattr(self, "b" + name[1:])
            if (a is None) != (b is None):
                raise ProgramError(f"{name} and its rhs must be supplied together")
            if a is not None:
                a = sp.csr_matrix(a)
                b = np.asarray(b, dtype=float)
                if a.shape[1] != n or a.shape[0] != len(b):
                    raise ProgramError(f"{name} dimensions {a.shape} inconsistent with rhs {b.shape}")
                setattr(self, name, a)
                setattr(self, "b" + name[1:], b)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ProgramError("bound vectors must have length n")
        if np.any(self.lb > self.ub + 1e-15):
            raise ProgramError("lb must not exceed ub")
        cleaned = []
        for head, tail in self.socs:
            tail = np.asarray(tail, dtype=int)
            idx = np.concatenate(([head], tail))
            if np.any(idx < 0) or np.any(idx >= n):
                raise ProgramError("SOC indices out of range")
            cleaned.append((int(head), tail))
        self.socs = cleaned
        return self

    def _check_psd(self):
        p = self.P
        if p.nnz == 0:
            return
        if self.n <= 400:
            w = np.linalg.eigvalsh(p.toarray())
            lo = w[0]
        else:
            try:
                lo = spla.eigsh(p.tocsc(), k=1, which="SA", return_eigenvectors=False, tol=1e-6)[0]
            except Exception:
                return
        scale = max(1.0, abs(p).max())
        if lo < -1e-8 * scale:
            raise ProgramError(f"cost matrix is not PSD (smallest eigenvalue {lo:.3e})")

    @property
    def m_eq(self) -> int:
        return 0 if self.A_eq is None else self.A_eq.shape[0]

    @property
    def m_in(self) -> int:
        return 0 if self.A_in is None else self.A_in.shape[0]

    def objective(self, z: np.ndarray) -> float:
        val = float(self.q @ z)
        if self.P is not None:
            val += 0.5 * float(z @ (self.P @ z))
        return val


@dataclass
class ConicSolution:
    x: np.ndarray
    status: str                      # optimal | infeasible | max_iter
    obj: float
    iterations: int
    r_prim: float
    r_dual: float
    gap: float
    y_eq: np.ndarray
    y_in: np.ndarray
    y_bounds: np.ndarray             # one multiplier per variable (ub side +, lb side -)
    y_socs: list[np.ndarray]
    polished: bool = False
    y_stack: np.ndarray | None = None  # raw row-stack duals, reusable as a warm start


def _project_soc(block: np.ndarray) -> np.ndarray:
    t, v = block[0], block[1:]
    nv = np.linalg.norm(v)
    if nv <= t:
        return block
    if nv <= -t:
        return np.zeros_like(block)
    coef = 0.5 * (1.0 + t / nv)
    out = np.empty_like(block)
    out[0] = coef * nv
    out[1:] = coef * v
    return out


class _Stack:
    """Row stack [A_eq; A_in; bound rows; SOC rows] with projection data."""

    def __init__(self, prog: ConicProgram):
        n = prog.n
        blocks, lo, hi = [], [], []
        if prog.m_eq:
            blocks.append(prog.A_eq)
            lo.append(prog.b_eq)
            hi.append(prog.b_eq)
        if prog.m_in:
            blocks.append(prog.A_in)
            lo.append(np.full(prog.m_in, -np.inf))
            hi.append(prog.b_in)
        self.bound_vars = np.where(np.isfinite(prog.lb) | np.isfinite(prog.ub))[0]
        if len(self.bound_vars):
            e = sp.csr_matrix(
                (np.ones(len(self.bound_vars)), (np.arange(len(self.bound_vars)), self.bound_vars)),
                shape=(len(self.bound_vars), n),
            )
            blocks.append(e)
            lo.append(prog.lb[self.bound_vars])
            hi.append(prog.ub[self.bound_vars])
        self.soc_slices = []
        m_box = sum(b.shape[0] for b in blocks)
        offset = m_box
        for head, tail in prog.socs:
            idx = np.concatenate(([head], tail))
            e = sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), n))
            blocks.append(e)
            self.soc_slices.append(slice(offset, offset + len(idx)))
            offset += len(idx)
        self.m_box = m_box
        self.m = offset
        self.A = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, n))
        self.lo = np.concatenate(lo) if lo else np.zeros(0)
        self.hi = np.concatenate(hi) if hi else np.zeros(0)
        self.sl_eq = slice(0, prog.m_eq)
        self.sl_in = slice(prog.m_eq, prog.m_eq + prog.m_in)
        self.sl_bnd = slice(prog.m_eq + prog.m_in, m_box)

    def project(self, w: np.ndarray) -> np.ndarray:
        out = w.copy()
        out[: self.m_box] = np.clip(w[: self.m_box], self.lo, self.hi)
        for sl in self.soc_slices:
            out[sl] = _project_soc(w[sl])
        return out


def _ruiz(P, q, A, stack: _Stack, iters: int = 10):
    """Ruiz equilibration with uniform scaling inside each SOC row block."""
    n, m = A.shape[1], A.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    c = 1.0
    Ps = P.copy() if P is not None else sp.csc_matrix((n, n))
    As = A.copy()
    qs = q.copy()
    for _ in range(iters):
        # column norms over [P; A], row norms over A
        cn = np.maximum(
            np.abs(Ps).max(axis=0).toarray().ravel() if Ps.nnz else np.zeros(n),
            np.abs(As).max(axis=0).toarray().ravel() if As.nnz else np.zeros(n),
        )
        rn = np.abs(As).max(axis=1).toarray().ravel() if As.nnz else np.zeros(m)
        cn[cn == 0] = 1.0
        rn[rn == 0] = 1.0
        dd = 1.0 / np.sqrt(cn)
        ee = 1.0 / np.sqrt(rn)
        for sl in stack.soc_slices:
            g = np.exp(np.mean(np.log(ee[sl])))
            ee[sl] = g
        Dm = sp.diags(dd)
        Em = sp.diags(ee)
        Ps = Dm @ Ps @ Dm
        As = Em @ As @ Dm
        qs = dd * qs
        d *= dd
        e *= ee
        # cost scaling
        pc = np.abs(Ps).max(axis=0).toarray().ravel() if Ps.nnz else np.zeros(n)
        denom = max(np.mean(pc), np.linalg.norm(qs, np.inf), 1e-12)
        cc = 1.0 / denom if denom > 1e-8 else 1.0
        cc = min(max(cc, 1e-6), 1e6)
        Ps = Ps * cc
        qs = qs * cc
        c *= cc
    return Ps.tocsc(), qs, As.tocsc(), d, e, c


def solve(
    prog: ConicProgram,
    abs_tol: float = 1e-8,
    rel_tol: float = 1e-9,
    max_iter: int = 100_000,
    warm: tuple[np.ndarray, np.ndarray] | None = None,
    polish: bool = True,
    sigma: float = 1e-6,
    rho_hints: dict | None = None,
) -> ConicSolution:
    """Solve the program to the requested KKT residual tolerances.

    Deterministic given identical inputs; ``warm`` optionally seeds the
    primal/dual iterates (e.g. from the previous SCP iteration), and
    ``rho_hints`` overrides the per-row-class step weights (keys
    ``bar``, ``eq``, ``in``, ``bnd``, ``soc``) for callers that know
    their problem family.
    """
    prog.finalized()
    n = prog.n
    stack = _Stack(prog)
    m = stack.m

    if m == 0:
        # unconstrained quadratic: least-norm stationary point
        if prog.P is None or prog.P.nnz == 0:
            x = np.zeros(n)
        else:
            x = spla.spsolve(sp.csc_matrix(prog.P + sigma * sp.eye(n)), -prog.q)
        sol = ConicSolution(
            x=x, status="optimal", obj=prog.objective(x), iterations=0,
            r_prim=0.0, r_dual=0.0, gap=0.0,
            y_eq=np.zeros(0), y_in=np.zeros(0), y_bounds=np.zeros(n), y_socs=[],
        )
        sol.r_prim, sol.r_dual, sol.gap = kkt_residuals(prog, sol)
        return sol

    P = prog.P if prog.P is not None else sp.csc_matrix((n, n))
    Ps, qs, As, d, e, c = _ruiz(P, prog.q, stack.A, stack)
    lo_s = stack.lo * e[: stack.m_box]
    hi_s = stack.hi * e[: stack.m_box]

    def project_scaled(w):
        out = w.copy()
        out[: stack.m_box] = np.clip(w[: stack.m_box], lo_s, hi_s)
        for sl in stack.soc_slices:
            out[sl] = _project_soc(w[sl])
        return out

    hints = {"bar": 0.1, "eq": 1e3, "in": 1.0, "bnd": 1.0, "soc": 1e2}
    if rho_hints:
        hints.update(rho_hints)
    rho_bar = hints["bar"]
    rho = np.full(m, rho_bar)
    rho[stack.sl_eq] = rho_bar * hints["eq"]
    rho[stack.sl_in] = rho_bar * hints["in"]
    rho[stack.sl_bnd] = rho_bar * hints["bnd"]
    # cone rows converge far faster under a stiff step weight
    for sl in stack.soc_slices:
        rho[sl] = rho_bar * hints["soc"]

    def factorize(rho_vec):
        kkt = sp.bmat(
            [[Ps + sigma * sp.eye(n), As.T], [As, -sp.diags(1.0 / rho_vec)]], format="csc"
        )
        return spla.splu(kkt)

    lu = factorize(rho)
    alpha = 1.6

    if warm is not None:
        x = warm[0] / d
        wy = warm[1]
        y = (wy * c / e) if (wy is not None and len(wy) == m) else np.zeros(m)
        w = project_scaled(As @ x)
    else:
        x = np.zeros(n)
        y = np.zeros(m)
        w = project_scaled(np.zeros(m))

    def unscaled(xs, ys, ws):
        return d * xs, e * ws / 1.0, ys * e / c

    def residuals(xs, ys, ws):
        xu = d * xs
        yu = ys * e / c
        ax = stack.A @ xu
        wu = ws / e
        rp = np.linalg.norm(ax - wu, np.inf) if m else 0.0
        rp_ref = max(np.linalg.norm(ax, np.inf), np.linalg.norm(wu, np.inf), 1.0)
        dual_vec = P @ xu + prog.q + stack.A.T @ yu
        rd = np.linalg.norm(dual_vec, np.inf)
        rd_ref = max(
            np.linalg.norm(P @ xu, np.inf),
            np.linalg.norm(prog.q, np.inf),
            np.linalg.norm(stack.A.T @ yu, np.inf),
            1.0,
        )
        return rp, rd, rp_ref, rd_ref

    status = "max_iter"
    it = 0
    check_every = 25
    last_rho_update = 0
    last_polish = 0
    while it < max_iter:
        it += 1
        rhs = np.concatenate([sigma * x - qs, w - y / rho])
        sol_v = lu.solve(rhs)
        x_t, nu = sol_v[:n], sol_v[n:]
        w_t = w + (nu - y) / rho
        x = alpha * x_t + (1 - alpha) * x
        w_r = alpha * w_t + (1 - alpha) * w
        w_new = project_scaled(w_r + y / rho)
        y = y + rho * (w_r - w_new)
        w = w_new

        if it % check_every == 0 or it == max_iter:
            rp, rd, rp_ref, rd_ref = residuals(x, y, w)
            if rp <= abs_tol + rel_tol * rp_ref and rd <= abs_tol + rel_tol * rd_ref:
                status = "optimal"
                break
            # from moderate accuracy the active set is usually right, and
            # the polish is cheap: try it periodically, scanning a few
            # activity thresholds (degenerate LPs need the looser ones)
            if (
                polish
                and it - last_polish >= 250
                and rp <= 1e-3 * rp_ref
                and rd <= 1e-3 * rd_ref
            ):
                last_polish = it
                xu, yu = d * x, y * e / c
                for act_tol in (1e-7, 1e-5, 1e-3):
                    pol = _polish(prog, stack, xu, yu, act_tol=act_tol)
                    if pol is None:
                        continue
                    solp = _assemble(prog, stack, pol[0], pol[1], it, polished=True)
                    if solp.r_prim <= abs_tol and solp.r_dual <= abs_tol:
                        solp.status = "optimal"
                        return solp
            if it > 200 and it % 100 == 0 and _primal_infeasible(prog, stack, y, e, c):
                status = "infeasible"
                break
            if it - last_rho_update >= 1000:
                ratio = np.sqrt((rp / max(rp_ref, 1e-12)) / max(rd / max(rd_ref, 1e-12), 1e-12))
                ratio = min(max(ratio, 1e-3), 1e3)
                if ratio > 10.0 or ratio < 0.1:
                    rho = np.clip(rho * ratio, 1e-6, 1e6)
                    lu = factorize(rho)
                    last_rho_update = it

    xu, wu, yu = d * x, w / e, y * e / c
    if status == "optimal" and polish:
        pol = _polish(prog, stack, xu, yu)
        if pol is not None:
            xp, yp = pol
            solp = _assemble(prog, stack, xp, yp, it, polished=True)
            sol0 = _assemble(prog, stack, xu, yu, it)
            if max(solp.r_prim, solp.r_dual) <= max(sol0.r_prim, sol0.r_dual):
                solp.status = "optimal"
                return solp
    sol = _assemble(prog, stack, xu, yu, it)
    sol.status = status
    return sol


def _primal_infeasible(prog, stack, y_s, e, c, tol=1e-10) -> bool:
    y = y_s * e / c
    ny = np.linalg.norm(y, np.inf)
    if ny < 1e-8:
        return False
    dy = y / ny
    if np.linalg.norm(stack.A.T @ dy, np.inf) > 1e-6:
        return False
    # support function of C at dy must be negative for a certificate
    val = 0.0
    box = dy[: stack.m_box]
    val += np.sum(np.where(box > 0, box * np.minimum(stack.hi, 1e20), box * np.maximum(stack.lo, -1e20)))
    for sl in stack.soc_slices:
        blk = dy[sl]
        # support over the cone is 0 if -blk in dual cone else +inf
        if np.linalg.norm(blk[1:]) > -blk[0] + 1e-9:
            return False
    return val < -1e-6


def _split_duals(prog: ConicProgram, stack: _Stack, y: np.ndarray):
    y_eq = y[stack.sl_eq].copy()
    y_in = y[stack.sl_in].copy()
    y_bounds = np.zeros(prog.n)
    y_bounds[stack.bound_vars] = y[stack.sl_bnd]
    y_socs = [y[sl].copy() for sl in stack.soc_slices]
    return y_eq, y_in, y_bounds, y_socs


def _assemble(prog, stack, x, y, iterations, polished=False) -> ConicSolution:
    y_eq, y_in, y_bounds, y_socs = _split_duals(prog, stack, y)
    sol = ConicSolution(
        x=x, status="optimal", obj=prog.objective(x), iterations=iterations,
        r_prim=0.0, r_dual=0.0, gap=0.0,
        y_eq=y_eq, y_in=np.maximum(y_in, 0.0), y_bounds=y_bounds, y_socs=y_socs,
        polished=polished, y_stack=y.copy(),
    )
    sol.r_prim, sol.r_dual, sol.gap = kkt_residuals(prog, sol)
    return sol


def _polish(prog: ConicProgram, stack: _Stack, x: np.ndarray, y: np.ndarray, act_tol: float = 1e-7):
    """Active-set KKT refinement in the original (unscaled) data.

    Builds the equality system from rows identified as active, solves the
    regularized KKT system with iterative refinement, and re-linearizes
    active cone rows a few times.  Returns None when the refinement is
    not usable (caller keeps the ADMM iterate).
    """
    n = prog.n
    rows = []
    rhs = []
    meta = []  # (kind, index) to scatter duals back

    if prog.m_eq:
        rows.append(prog.A_eq)
        rhs.append(prog.b_eq)
        meta.extend(("eq", i) for i in range(prog.m_eq))
    if prog.m_in:
        slack = prog.b_in - prog.A_in @ x
        y_in = y[stack.sl_in]
        act = (y_in > act_tol * max(1.0, np.abs(y_in).max())) | (slack < act_tol)
        idx = np.where(act)[0]
        if len(idx):
            rows.append(prog.A_in[idx])
            rhs.append(prog.b_in[idx])
            meta.extend(("in", int(i)) for i in idx)
    # variables pinned by apex-active cones; their bound rows would be redundant
    xscale = max(1.0, np.linalg.norm(x, np.inf))
    apex_pinned: set[int] = set()
    for bi, (head, tail) in enumerate(prog.socs):
        t = x[head]
        v = x[np.asarray(tail)]
        if max(abs(t), np.linalg.norm(v)) <= np.sqrt(act_tol) * xscale:
            apex_pinned.add(head)
            apex_pinned.update(int(j) for j in np.asarray(tail))
    if len(stack.bound_vars):
        yb = y[stack.sl_bnd]
        zb = x[stack.bound_vars]
        lo = stack.lo[stack.sl_bnd]
        hi = stack.hi[stack.sl_bnd]
        at_lo = (zb - lo < act_tol) & (yb < -act_tol)
        at_hi = (hi - zb < act_tol) & (yb > act_tol)
        tie = (zb - lo < act_tol) & (hi - zb < act_tol)  # pinned variables
        not_apex = np.array([v not in apex_pinned for v in stack.bound_vars])
        sel = np.where((at_lo | at_hi | tie) & not_apex)[0]
        if len(sel):
            vars_sel = stack.bound_vars[sel]
            e = sp.csr_matrix(
                (np.ones(len(sel)), (np.arange(len(sel)), vars_sel)), shape=(len(sel), n)
            )
            rows.append(e)
            rhs.append(np.where(at_hi[sel], hi[sel], lo[sel]))
            meta.extend(("bnd", int(v)) for v in vars_sel)

    soc_active = []
    for bi, (head, tail) in enumerate(prog.socs):
        t = x[head]
        v = x[np.asarray(tail)]
        nv = np.linalg.norm(v)
        dual_blk = y[stack.soc_slices[bi]]
        if head in apex_pinned:
            # apex-active cone: the whole block is pinned to zero
            idx = np.concatenate(([head], np.asarray(tail)))
            e = sp.csr_matrix(
                (np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), n)
            )
            rows.append(e)
            rhs.append(np.zeros(len(idx)))
            meta.extend(("socpin", (bi, r)) for r in range(len(idx)))
        elif nv - t > -act_tol * max(1.0, nv) and np.linalg.norm(dual_blk) > act_tol:
            soc_active.append(bi)
    # boundary-active cone rows are re-linearized inside the Newton loop below

    P = prog.P if prog.P is not None else sp.csc_matrix((n, n))
    xp = x.copy()
    for _ in range(3 if soc_active else 1):
        all_rows = list(rows)
        all_rhs = list(rhs)
        soc_meta = []
        for bi in soc_active:
            head, tail = prog.socs[bi]
            v = xp[np.asarray(tail)]
            nv = np.linalg.norm(v)
            if nv < 1e-12:
                continue
            grad = np.zeros(n)
            grad[np.asarray(tail)] = v / nv
            grad[head] = -1.0
            all_rows.append(sp.csr_matrix(grad))
            # first-order model of ||v|| - t = 0 about xp
            all_rhs.append(np.array([grad @ xp - (nv - xp[head])]))
            soc_meta.append(bi)
        if not all_rows:
            return None
        G = sp.vstack(all_rows, format="csc")
        h = np.concatenate(all_rhs)
        mg = G.shape[0]
        # regularized factorization, refined against the unregularized
        # system so redundant active rows stay harmless
        scale = max(1.0, abs(P).max() if P.nnz else 0.0)
        reg = 1e-8 * scale
        K = sp.bmat([[P + reg * sp.eye(n), G.T], [G, -reg * sp.eye(mg)]], format="csc")
        try:
            lu = spla.splu(K)
        except RuntimeError:
            return None
        sol_v = np.concatenate([xp, np.zeros(mg)])
        target = np.concatenate([-prog.q, h])
        tscale = max(1.0, np.linalg.norm(target, np.inf))
        best_v, best_rn = sol_v, np.inf
        for _ in range(12):
            resid = target - _kkt_apply(P, G, sol_v, n)
            rn = np.linalg.norm(resid, np.inf)
            if not np.isfinite(rn):
                break
            if rn < best_rn:
                best_v, best_rn = sol_v.copy(), rn
            if rn < 1e-13 * tscale:
                break
            sol_v = sol_v + lu.solve(resid)
        # inconsistent system: the active-set guess was wrong
        if best_rn > 1e-9 * tscale:
            return None
        xp = best_v[:n]
        nu = best_v[n:]

    if not np.all(np.isfinite(xp)):
        return None
    # scatter duals back; inactive rows get zero
    y_new = np.zeros(stack.m)
    pos = 0
    for kind, i in meta:
        if kind == "eq":
            y_new[stack.sl_eq.start + i] = nu[pos]
        elif kind == "in":
            y_new[stack.sl_in.start + i] = nu[pos]
        elif kind == "socpin":
            bi, r = i
            y_new[stack.soc_slices[bi].start + r] = nu[pos]
        else:
            local = np.where(stack.bound_vars == i)[0][0]
            y_new[stack.sl_bnd.start + local] = nu[pos]
        pos += 1
    for bi in soc_meta:
        head, tail = prog.socs[bi]
        v = xp[np.asarray(tail)]
        nv = max(np.linalg.norm(v), 1e-15)
        lam = nu[pos]
        pos += 1
        blk = np.zeros(1 + len(tail))
        blk[0] = -lam * (-1.0)
        blk[1:] = lam * (v / nv)
        # dual block of the cone row stack: y = lam * grad with grad=[-1, v/nv]
        y_new[stack.soc_slices[bi]] = np.concatenate(([-lam], lam * v / nv))
    # negative inequality duals indicate a wrong active set
    if prog.m_in:
        yin = y_new[stack.sl_in]
        if np.any(yin < -1e-9):
            return None
    return xp, y_new


def _kkt_apply(P, G, v, n):
    x, nu = v[:n], v[n:]
    return np.concatenate([P @ x + G.T @ nu, G @ x])


def kkt_residuals(prog: ConicProgram, sol: ConicSolution) -> tuple[float, float, float]:
    """Exact stationarity / feasibility / complementarity norms."""
    prog.finalized()
    n = prog.n
    z = sol.x
    P = prog.P if prog.P is not None else sp.csc_matrix((n, n))

    stat = P @ z + prog.q
    r_prim = 0.0
    gap = 0.0
    if prog.m_eq:
        stat = stat + prog.A_eq.T @ sol.y_eq
        resid = prog.A_eq @ z - prog.b_eq
        r_prim = max(r_prim, np.linalg.norm(resid, np.inf))
        gap += float(sol.y_eq @ resid)
    if prog.m_in:
        stat = stat + prog.A_in.T @ sol.y_in
        slack = prog.b_in - prog.A_in @ z
        r_prim = max(r_prim, float(np.max(np.maximum(-slack, 0.0), initial=0.0)))
        gap += float(sol.y_in @ slack)
    stat = stat + sol.y_bounds
    lbv = np.where(np.isfinite(prog.lb), prog.lb, -np.inf)
    ubv = np.where(np.isfinite(prog.ub), prog.ub, np.inf)
    r_prim = max(r_prim, float(np.max(np.maximum(lbv - z, 0.0), initial=0.0)))
    r_prim = max(r_prim, float(np.max(np.maximum(z - ubv, 0.0), initial=0.0)))
    ybp = np.maximum(sol.y_bounds, 0.0)
    ybm = np.minimum(sol.y_bounds, 0.0)
    with np.errstate(invalid="ignore"):
        gap += float(np.nansum(np.where(np.isfinite(ubv), ybp * (ubv - z), 0.0)))
        gap += float(np.nansum(np.where(np.isfinite(lbv), -ybm * (z - lbv), 0.0)))
    for (head, tail), yb in zip(prog.socs, sol.y_socs):
        idx = np.concatenate(([head], np.asarray(tail)))
        blk = z[idx]
        r_prim = max(r_prim, max(np.linalg.norm(blk[1:]) - blk[0], 0.0))
        s = np.zeros(n)
        s[idx] = yb
        stat = stat + s
        gap += float(yb @ blk)
    return r_prim, float(np.linalg.norm(stat, np.inf)), abs(gap)
