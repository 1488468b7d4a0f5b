"""Dense bounded-variable revised simplex.

Two-phase primal simplex over rows `a.x (<=|=|>=) rhs` plus per-variable
bounds. Dantzig pricing with a Bland fallback once degenerate pivots pile up,
an explicit basis inverse with periodic refactorization, and phase-1 duals
exposed as a Farkas-style certificate on infeasible systems.

Dual sign convention on the returned multipliers: with lam the row duals and
mu_lo/mu_hi the bound duals,

    c + A^T lam - mu_lo + mu_hi = 0,   lam_i >= 0 for <= rows,
                                       lam_i <= 0 for >= rows,
                                       lam_i free for = rows,

so the duals of constraints written as g <= 0 are the nonnegative KKT
multipliers used everywhere else in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LE = "<="
EQ = "="
GE = ">="

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL = "numerical"


@dataclass
class LpOptions:
    feas_tol: float = 1e-9
    pivot_tol: float = 1e-10
    # consecutive degenerate pivots before switching to Bland's rule
    bland_after: int = 1000
    refactor_every: int = 64
    max_iters: int = 0  # 0 means scale with problem size


@dataclass
class LpProblem:
    c: np.ndarray
    rows: list
    lo: np.ndarray
    hi: np.ndarray

    @property
    def num_vars(self):
        return len(self.c)


def lp_problem(c, rows, lo=None, hi=None):
    """Normalize inputs into an LpProblem."""
    c = np.asarray(c, dtype=float)
    n = len(c)
    norm_rows = []
    for a, rel, rhs in rows:
        a = np.asarray(a, dtype=float)
        if a.shape != (n,):
            raise ValueError("row length does not match variable count")
        if rel not in (LE, EQ, GE):
            raise ValueError(f"unknown relation {rel!r}")
        norm_rows.append((a, rel, float(rhs)))
    lo = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float).copy()
    hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float).copy()
    if lo.shape != (n,) or hi.shape != (n,):
        raise ValueError("bound length does not match variable count")
    if np.any(lo > hi):
        raise ValueError("lower bound exceeds upper bound")
    return LpProblem(c, norm_rows, lo, hi)


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    duals: np.ndarray | None = None
    bound_duals_lo: np.ndarray | None = None
    bound_duals_hi: np.ndarray | None = None
    iterations: int = 0
    phase1_gap: float = 0.0
    farkas: np.ndarray | None = None


@dataclass
class FeasibilityResult:
    feasible: bool
    point: np.ndarray | None = None
    gap: float = 0.0
    farkas: np.ndarray | None = None


_BASIC, _AT_LO, _AT_HI, _FREE = 0, 1, 2, 3


class _Simplex:
    def __init__(self, p: LpProblem, options: LpOptions):
        self.opt = options
        self.n_struct = p.num_vars
        self.m = len(p.rows)
        m, n = self.m, self.n_struct
        # columns: structural | slack per row | artificial per row
        self.n_total = n + 2 * m
        A = np.zeros((m, self.n_total))
        b = np.zeros(m)
        lo = np.full(self.n_total, -np.inf)
        hi = np.full(self.n_total, np.inf)
        lo[:n] = p.lo
        hi[:n] = p.hi
        self.rels = []
        for i, (a, rel, rhs) in enumerate(p.rows):
            A[i, :n] = a
            b[i] = rhs
            s = n + i
            if rel == LE:
                lo[s], hi[s] = 0.0, np.inf
            elif rel == GE:
                lo[s], hi[s] = -np.inf, 0.0
            else:
                lo[s], hi[s] = 0.0, 0.0
            A[i, s] = 1.0
            self.rels.append(rel)
        self.A, self.b, self.lo, self.hi = A, b, lo, hi
        self.c_struct = p.c
        self.iterations = 0
        self.degenerate_run = 0

    def _initial_state(self):
        m, n = self.m, self.n_struct
        self.state = np.full(self.n_total, _AT_LO, dtype=np.int8)
        self.x = np.zeros(self.n_total)
        for j in range(n + m):
            if np.isfinite(self.lo[j]):
                self.state[j] = _AT_LO
                self.x[j] = self.lo[j]
            elif np.isfinite(self.hi[j]):
                self.state[j] = _AT_HI
                self.x[j] = self.hi[j]
            else:
                self.state[j] = _FREE
                self.x[j] = 0.0
        # residuals absorbed by artificials with matching column sign
        r = self.b - self.A[:, : n + m] @ self.x[: n + m]
        self.basis = np.arange(n + m, n + 2 * m)
        for i in range(m):
            col = n + m + i
            self.A[i, col] = 1.0 if r[i] >= 0 else -1.0
            self.lo[col], self.hi[col] = 0.0, np.inf
            self.x[col] = abs(r[i])
            self.state[col] = _BASIC
        self.B_inv = np.diag(self.A[np.arange(m), self.basis]) if m else np.zeros((0, 0))
        self.since_refactor = 0

    def _refactor(self):
        m = self.m
        if m == 0:
            return True
        B = self.A[:, self.basis]
        try:
            self.B_inv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            return False
        nb = self.state != _BASIC
        rhs = self.b - self.A[:, nb] @ self.x[nb]
        self.x[self.basis] = self.B_inv @ rhs
        self.since_refactor = 0
        return True

    def _run(self, c, max_iters, bland_after):
        m = self.m
        tol = self.opt.pivot_tol
        while True:
            if self.iterations >= max_iters:
                return NUMERICAL
            self.iterations += 1
            if self.since_refactor >= self.opt.refactor_every:
                if not self._refactor():
                    return NUMERICAL
            y = c[self.basis] @ self.B_inv
            d = c - y @ self.A
            bland = self.degenerate_run >= bland_after
            q, sigma = self._entering(d, tol, bland)
            if q is None:
                return OPTIMAL
            w = self.B_inv @ self.A[:, q]
            step, leave_pos, leave_to = self._ratio(q, sigma, w, tol, bland)
            if step is None:
                return UNBOUNDED
            if step <= self.opt.feas_tol:
                self.degenerate_run += 1
            else:
                self.degenerate_run = 0
            # move entering variable, update basics
            self.x[q] += sigma * step
            if m:
                self.x[self.basis] -= sigma * step * w
            if leave_pos is None:
                # bound flip: entering hops to its other bound, basis unchanged
                self.state[q] = _AT_HI if sigma > 0 else _AT_LO
                continue
            p_col = self.basis[leave_pos]
            self.state[p_col] = leave_to
            self.x[p_col] = self.lo[p_col] if leave_to == _AT_LO else self.hi[p_col]
            self.basis[leave_pos] = q
            self.state[q] = _BASIC
            piv = w[leave_pos]
            if abs(piv) < tol:
                if not self._refactor():
                    return NUMERICAL
                continue
            # product-form update of the explicit inverse
            self.B_inv[leave_pos] /= piv
            others = np.arange(m) != leave_pos
            self.B_inv[others] -= np.outer(w[others], self.B_inv[leave_pos])
            self.since_refactor += 1

    def _entering(self, d, tol, bland):
        st = self.state
        score = np.full(self.n_total, np.inf)
        movable = (st != _BASIC) & (self.lo != self.hi)
        at_lo = movable & (st == _AT_LO)
        at_hi = movable & (st == _AT_HI)
        free = movable & (st == _FREE)
        score[at_lo] = d[at_lo]
        score[at_hi] = -d[at_hi]
        score[free] = -np.abs(d[free])
        if bland:
            eligible = np.flatnonzero(score < -tol)
            if len(eligible) == 0:
                return None, 0.0
            q = int(eligible[0])
        else:
            q = int(np.argmin(score))
            if score[q] >= -tol:
                return None, 0.0
        if st[q] == _AT_LO:
            sigma = 1.0
        elif st[q] == _AT_HI:
            sigma = -1.0
        else:
            sigma = 1.0 if d[q] < 0 else -1.0
        return q, sigma

    def _ratio(self, q, sigma, w, tol, bland):
        ws = sigma * w
        xb = self.x[self.basis]
        room = np.full(self.m, np.inf)
        dn = ws > tol  # basic moves toward its lower bound
        up = ws < -tol
        room[dn] = (xb[dn] - self.lo[self.basis[dn]]) / ws[dn]
        room[up] = (xb[up] - self.hi[self.basis[up]]) / ws[up]
        room = np.maximum(room, 0.0)
        own = self.hi[q] - self.lo[q]
        rmin = room.min(initial=np.inf)
        if not np.isfinite(min(own, rmin)):
            return None, None, None
        if rmin > own:
            return own, None, None  # bound flip
        cands = np.flatnonzero(room <= rmin + self.opt.feas_tol)
        if bland:
            leave_pos = int(cands[np.argmin(self.basis[cands])])
        else:
            # stability: largest pivot magnitude among tied rows
            leave_pos = int(cands[np.argmax(np.abs(ws[cands]))])
        leave_to = _AT_LO if ws[leave_pos] > 0 else _AT_HI
        return rmin, leave_pos, leave_to

    def solve(self, want_duals=True):
        self._initial_state()
        m, n = self.m, self.n_struct
        max_iters = self.opt.max_iters or (2000 + 200 * (m + self.n_total))
        if m == 0:
            return self._solve_unconstrained()
        # phase 1: drive artificials to zero
        c1 = np.zeros(self.n_total)
        c1[n + m:] = 1.0
        status = self._run(c1, max_iters, self.opt.bland_after)
        if status != OPTIMAL:  # phase 1 is bounded below, so anything else is numerical
            return LpSolution(NUMERICAL, iterations=self.iterations)
        gap = float(self.x[n + m:].sum())
        scale = 1.0 + abs(self.b).max(initial=0.0)
        if gap > self.opt.feas_tol * scale:
            y1 = c1[self.basis] @ self.B_inv
            return LpSolution(
                INFEASIBLE,
                iterations=self.iterations,
                phase1_gap=gap,
                farkas=-y1,
            )
        # artificials pinned at zero for phase 2
        self.lo[n + m:] = 0.0
        self.hi[n + m:] = 0.0
        self.x[n + m:] = np.clip(self.x[n + m:], 0.0, None)
        c2 = np.zeros(self.n_total)
        c2[:n] = self.c_struct
        self.degenerate_run = 0
        status = self._run(c2, max_iters, self.opt.bland_after)
        if status == NUMERICAL:
            return LpSolution(NUMERICAL, iterations=self.iterations)
        if status == UNBOUNDED:
            return LpSolution(UNBOUNDED, iterations=self.iterations)
        self._refactor()
        x = self.x[:n].copy()
        obj = float(self.c_struct @ x)
        sol = LpSolution(OPTIMAL, x=x, objective=obj, iterations=self.iterations)
        if want_duals:
            y = c2[self.basis] @ self.B_inv
            d = c2 - y @ self.A
            sol.duals = -y
            mu_lo = np.zeros(n)
            mu_hi = np.zeros(n)
            for j in range(n):
                if self.state[j] == _AT_LO:
                    mu_lo[j] = max(d[j], 0.0)
                elif self.state[j] == _AT_HI:
                    mu_hi[j] = max(-d[j], 0.0)
            sol.bound_duals_lo = mu_lo
            sol.bound_duals_hi = mu_hi
        return sol

    def _solve_unconstrained(self):
        n = self.n_struct
        x = np.zeros(n)
        for j in range(n):
            c = self.c_struct[j]
            if c > 0:
                if not np.isfinite(self.lo[j]):
                    return LpSolution(UNBOUNDED)
                x[j] = self.lo[j]
            elif c < 0:
                if not np.isfinite(self.hi[j]):
                    return LpSolution(UNBOUNDED)
                x[j] = self.hi[j]
            else:
                if np.isfinite(self.lo[j]):
                    x[j] = self.lo[j]
                elif np.isfinite(self.hi[j]):
                    x[j] = self.hi[j]
        mu_lo = np.maximum(self.c_struct, 0.0)
        mu_hi = np.maximum(-self.c_struct, 0.0)
        return LpSolution(
            OPTIMAL,
            x=x,
            objective=float(self.c_struct @ x),
            duals=np.zeros(0),
            bound_duals_lo=mu_lo,
            bound_duals_hi=mu_hi,
        )


def solve_lp(p: LpProblem, options: LpOptions | None = None) -> LpSolution:
    return _Simplex(p, options or LpOptions()).solve()


def feasible_point(rows, lo=None, hi=None, num_vars=None, options=None) -> FeasibilityResult:
    """Find any point satisfying the rows and bounds, or certify none exists.

    On failure the result carries the phase-1 optimum (`gap`, the minimal
    total constraint violation) and the phase-1 row duals as a Farkas-style
    certificate.
    """
    if num_vars is None:
        if rows:
            num_vars = len(np.asarray(rows[0][0]))
        elif lo is not None:
            num_vars = len(np.asarray(lo))
        else:
            raise ValueError("cannot infer variable count")
    p = lp_problem(np.zeros(num_vars), rows, lo, hi)
    sol = solve_lp(p, options)
    if sol.status == OPTIMAL:
        return FeasibilityResult(True, point=sol.x)
    if sol.status == INFEASIBLE:
        return FeasibilityResult(False, gap=sol.phase1_gap, farkas=sol.farkas)
    raise ArithmeticError(f"feasibility solve ended with status {sol.status}")
