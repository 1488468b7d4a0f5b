"""Single-level reformulations of bilevel programs.

Three routes from a bilevel program to a block-structured polynomial NLP:

* ``build_mpcc``: replace the lower level by its KKT system. Variables
  (x, y, u, v); the complementarity coupling u.g(x, y) = 0 is kept as one
  aggregated equality row.
* ``build_wdp``: replace the lower level by its Wolfe dual, adding a copy z
  of the lower variables. One inequality row compares f(x, y) against the
  dual objective f(x, z) + u.g(x, z) + v.h(x, z).
* ``build_mdp``: replace the lower level by its Mond-Weir dual. The single
  Wolfe comparison splits into an objective comparison row and a dual-value
  row; z is constrained through dual stationarity only.

``build_relaxed`` loosens the coupling row(s) of a chosen reformulation by a
slack t >= 0, which restores constraint qualifications in the interior of
the relaxation. ``build_mond_weir_dual`` is the same dual construction
applied to a plain NLP, used to cross-check dual bounds.

Every row carries a kind tag such as ("g", 3) or ("wolfe",) so downstream
code (termination tests, stationarity certificates, multiplier transfer)
can locate structural rows without guessing at indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import BilevelProgram
from .poly import PolyFunction

SCHEME_MDP1 = "mdp1"
SCHEME_MDP2 = "mdp2"
SCHEME_MDP3 = "mdp3"
SCHEME_WDP = "wdp"
SCHEME_MPCC = "mpcc"
SCHEMES = (SCHEME_MDP1, SCHEME_MDP2, SCHEME_MDP3, SCHEME_WDP, SCHEME_MPCC)


class _RowSet:
    """Compiled constraint rows: affine rows share one stacked matrix, the
    rest are evaluated polynomial by polynomial."""

    def __init__(self, rows, num_vars):
        self.rows = list(rows)
        self.num_vars = num_vars
        aff, gen = [], []
        for i, p in enumerate(self.rows):
            (aff if p.is_affine else gen).append(i)
        self.aff_idx = np.array(aff, dtype=np.intp)
        self.gen_idx = gen
        if aff:
            self.aff_const = np.array([self.rows[i].affine_parts()[0] for i in aff])
            self.aff_mat = np.array([self.rows[i].affine_parts()[1] for i in aff])
        else:
            self.aff_const = np.zeros(0)
            self.aff_mat = np.zeros((0, num_vars))

    def values(self, w):
        out = np.empty(len(self.rows))
        if len(self.aff_idx):
            out[self.aff_idx] = self.aff_const + self.aff_mat @ w
        for i in self.gen_idx:
            out[i] = self.rows[i].eval(w)
        return out

    def jacobian(self, w):
        J = np.zeros((len(self.rows), self.num_vars))
        if len(self.aff_idx):
            J[self.aff_idx] = self.aff_mat
        for i in self.gen_idx:
            J[i] = self.rows[i].grad(w)
        return J


@dataclass
class Nlp:
    """min objective(w) s.t. ineq(w) <= 0, eq(w) = 0, lo <= w <= hi.

    `blocks` names contiguous variable spans (e.g. "x", "y", "u") that
    together cover [0, num_vars). Row kind tags live in ineq_kinds/eq_kinds.
    """

    num_vars: int
    blocks: dict
    objective: PolyFunction
    ineq: list = field(default_factory=list)
    eq: list = field(default_factory=list)
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    ineq_kinds: list | None = None
    eq_kinds: list | None = None
    source: BilevelProgram | None = None

    def __post_init__(self):
        nv = self.num_vars
        if self.lo is None:
            self.lo = np.full(nv, -np.inf)
        if self.hi is None:
            self.hi = np.full(nv, np.inf)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != (nv,) or self.hi.shape != (nv,):
            raise ValueError("bound arrays must match num_vars")
        if self.ineq_kinds is None:
            self.ineq_kinds = [("ineq", i) for i in range(len(self.ineq))]
        if self.eq_kinds is None:
            self.eq_kinds = [("eq", i) for i in range(len(self.eq))]
        if len(self.ineq_kinds) != len(self.ineq) or len(self.eq_kinds) != len(self.eq):
            raise ValueError("kind tags must match row counts")
        spans = sorted(self.blocks.values())
        cursor = 0
        for start, stop in spans:
            if start != cursor or stop < start:
                raise ValueError("blocks must partition the variable range")
            cursor = stop
        if cursor != nv:
            raise ValueError("blocks must partition the variable range")
        for p in [self.objective, *self.ineq, *self.eq]:
            if p.num_vars != nv:
                raise ValueError("row variable count mismatch")
        self._ineq_c = None
        self._eq_c = None

    def block(self, name):
        return self.blocks[name]

    def split(self, w):
        w = np.asarray(w, dtype=float)
        return {name: w[start:stop] for name, (start, stop) in self.blocks.items()}

    def _compiled(self):
        if self._ineq_c is None:
            self._ineq_c = _RowSet(self.ineq, self.num_vars)
            self._eq_c = _RowSet(self.eq, self.num_vars)
        return self._ineq_c, self._eq_c

    def eval_ineq(self, w):
        return self._compiled()[0].values(np.asarray(w, dtype=float))

    def eval_eq(self, w):
        return self._compiled()[1].values(np.asarray(w, dtype=float))

    def jac_ineq(self, w):
        return self._compiled()[0].jacobian(np.asarray(w, dtype=float))

    def jac_eq(self, w):
        return self._compiled()[1].jacobian(np.asarray(w, dtype=float))

    def lagrangian_hessian(self, w, lam_ineq, lam_eq):
        w = np.asarray(w, dtype=float)
        H = np.zeros((self.num_vars, self.num_vars))
        if self.objective.degree > 1:
            H += self.objective.hess(w)
        for lam, rows in ((lam_ineq, self.ineq), (lam_eq, self.eq)):
            for li, p in zip(lam, rows):
                if li != 0.0 and p.degree > 1:
                    H += li * p.hess(w)
        return H

    def max_violation(self, w):
        """Largest constraint or bound violation at w."""
        w = np.asarray(w, dtype=float)
        worst = 0.0
        if self.ineq:
            worst = max(worst, float(np.max(self.eval_ineq(w))))
        if self.eq:
            worst = max(worst, float(np.max(np.abs(self.eval_eq(w)))))
        worst = max(worst, float(np.max(np.r_[0.0, self.lo - w, w - self.hi])))
        return worst

    def row_index(self, kind, among="ineq"):
        kinds = self.ineq_kinds if among == "ineq" else self.eq_kinds
        for i, k in enumerate(kinds):
            if k == kind:
                return i
        raise KeyError(f"no {among} row tagged {kind!r}")


def _embedded_data(bp: BilevelProgram, num_vars, var_map):
    emb = lambda p: p.embed(num_vars, var_map)
    return (
        emb(bp.F), [emb(p) for p in bp.omega_ineq], [emb(p) for p in bp.omega_eq],
        emb(bp.f), [emb(p) for p in bp.g], [emb(p) for p in bp.h],
    )


def _stationarity_rows(f_e, g_e, h_e, wrt, iu, iv):
    """Rows d/dw_j [f + u.g + v.h] = 0 for each j in wrt, with u, v symbolic."""
    rows = []
    for j in wrt:
        row = f_e.differentiate(j)
        for i, gi in enumerate(g_e):
            row = row + gi.differentiate(j).mul_var(iu + i)
        for k, hk in enumerate(h_e):
            row = row + hk.differentiate(j).mul_var(iv + k)
        rows.append(row)
    return rows


def _weighted_sum(rows, first_var, num_vars):
    total = PolyFunction(num_vars)
    for i, p in enumerate(rows):
        total = total + p.mul_var(first_var + i)
    return total


def build_mpcc(bp: BilevelProgram) -> Nlp:
    """KKT reformulation over (x, y, u, v) with aggregated complementarity."""
    n, m, p, q = bp.n, bp.m, bp.p, bp.q
    N = n + m + p + q
    iu, iv = n + m, n + m + p
    xy = list(range(n + m))
    F, omega_i, omega_e, f, g, h = _embedded_data(bp, N, xy)
    compl = _weighted_sum(g, iu, N)
    stat = _stationarity_rows(f, g, h, range(n, n + m), iu, iv)
    lo = np.full(N, -np.inf)
    lo[iu:iu + p] = 0.0
    return Nlp(
        num_vars=N,
        blocks={"x": (0, n), "y": (n, n + m), "u": (iu, iu + p), "v": (iv, iv + q)},
        objective=F,
        ineq=omega_i + g,
        eq=omega_e + h + [compl] + stat,
        lo=lo,
        ineq_kinds=[("omega_ineq", i) for i in range(len(omega_i))]
        + [("g", i) for i in range(p)],
        eq_kinds=[("omega_eq", i) for i in range(len(omega_e))]
        + [("h", j) for j in range(q)]
        + [("compl",)]
        + [("stationarity", j) for j in range(m)],
        source=bp,
    )


def _dual_parts(bp: BilevelProgram):
    """Shared (x, y, z, u, v) assembly for the Wolfe and Mond-Weir builds."""
    n, m, p, q = bp.n, bp.m, bp.p, bp.q
    N = n + 2 * m + p + q
    iz, iu, iv = n + m, n + 2 * m, n + 2 * m + p
    xy = list(range(n + m))
    xz = list(range(n)) + [iz + j for j in range(m)]
    F, omega_i, omega_e, f_xy, g_xy, h_xy = _embedded_data(bp, N, xy)
    f_xz = bp.f.embed(N, xz)
    g_xz = [p_.embed(N, xz) for p_ in bp.g]
    h_xz = [p_.embed(N, xz) for p_ in bp.h]
    dual_value = _weighted_sum(g_xz, iu, N) + _weighted_sum(h_xz, iv, N)
    dual_stat = _stationarity_rows(f_xz, g_xz, h_xz, range(iz, iz + m), iu, iv)
    lo = np.full(N, -np.inf)
    lo[iu:iu + p] = 0.0
    blocks = {
        "x": (0, n), "y": (n, n + m), "z": (iz, iz + m),
        "u": (iu, iu + p), "v": (iv, iv + q),
    }
    base_ineq = omega_i + g_xy
    base_ineq_kinds = [("omega_ineq", i) for i in range(len(omega_i))] + [
        ("g", i) for i in range(p)
    ]
    eq = omega_e + h_xy + dual_stat
    eq_kinds = (
        [("omega_eq", i) for i in range(len(omega_e))]
        + [("h", j) for j in range(q)]
        + [("dual_stationarity", j) for j in range(m)]
    )
    return N, blocks, lo, F, f_xy, f_xz, dual_value, base_ineq, base_ineq_kinds, eq, eq_kinds


def build_wdp(bp: BilevelProgram) -> Nlp:
    """Wolfe-dual reformulation: one row bounds f(x, y) by the dual objective."""
    (N, blocks, lo, F, f_xy, f_xz, dual_value,
     ineq, ineq_kinds, eq, eq_kinds) = _dual_parts(bp)
    wolfe = f_xy - f_xz - dual_value
    return Nlp(
        num_vars=N, blocks=blocks, objective=F,
        ineq=ineq + [wolfe], eq=eq, lo=lo,
        ineq_kinds=ineq_kinds + [("wolfe",)], eq_kinds=eq_kinds,
        source=bp,
    )


def build_mdp(bp: BilevelProgram) -> Nlp:
    """Mond-Weir-dual reformulation: the Wolfe row split into an objective
    comparison f(x, y) - f(x, z) <= 0 and a dual-value row
    u.g(x, z) + v.h(x, z) >= 0 (stored negated)."""
    (N, blocks, lo, F, f_xy, f_xz, dual_value,
     ineq, ineq_kinds, eq, eq_kinds) = _dual_parts(bp)
    return Nlp(
        num_vars=N, blocks=blocks, objective=F,
        ineq=ineq + [f_xy - f_xz, -dual_value], eq=eq, lo=lo,
        ineq_kinds=ineq_kinds + [("mdp_objcmp",), ("mdp_dualval",)],
        eq_kinds=eq_kinds,
        source=bp,
    )


def build_relaxed(bp: BilevelProgram, scheme: str, t: float) -> Nlp:
    """Reformulation with coupling rows loosened by t >= 0.

    mdp1 relaxes the objective comparison, mdp2 the dual-value row, mdp3
    both; wdp relaxes the Wolfe row. mpcc drops the aggregated equality
    u.g(x, y) = 0 in favour of -u.g(x, y) <= t (the product is sign-fixed by
    the g and u rows, so one side suffices).
    """
    if not np.isfinite(t) or t < 0:
        raise ValueError("relaxation slack t must be finite and nonnegative")
    if scheme in (SCHEME_MDP1, SCHEME_MDP2, SCHEME_MDP3):
        nlp = build_mdp(bp)
        if scheme in (SCHEME_MDP1, SCHEME_MDP3):
            i = nlp.row_index(("mdp_objcmp",))
            nlp.ineq[i] = nlp.ineq[i] - t
        if scheme in (SCHEME_MDP2, SCHEME_MDP3):
            i = nlp.row_index(("mdp_dualval",))
            nlp.ineq[i] = nlp.ineq[i] - t
    elif scheme == SCHEME_WDP:
        nlp = build_wdp(bp)
        i = nlp.row_index(("wolfe",))
        nlp.ineq[i] = nlp.ineq[i] - t
    elif scheme == SCHEME_MPCC:
        nlp = build_mpcc(bp)
        i = nlp.row_index(("compl",), among="eq")
        compl = nlp.eq.pop(i)
        nlp.eq_kinds.pop(i)
        nlp.ineq.append(-compl - t)
        nlp.ineq_kinds.append(("compl_relaxed",))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    nlp._ineq_c = nlp._eq_c = None  # rows changed after construction
    return nlp


def build_mond_weir_dual(p: Nlp) -> Nlp:
    """Mond-Weir dual of a plain NLP min f(w) s.t. g(w) <= 0, h(w) = 0.

    Finite bounds are first folded into g. Variables are (z, u, v) with z a
    copy of w; the objective is -f(z) (so minimizing it maximizes the dual
    value), subject to dual stationarity grad f + grad g.u + grad h.v = 0
    and the dual-value row u.g(z) + v.h(z) >= 0 (stored negated), u >= 0.
    """
    for name in ("z", "u", "v"):
        if name in p.blocks:
            raise ValueError("input already looks like a dual program")
    nv = p.num_vars
    g_rows = list(p.ineq)
    for j in range(nv):
        if np.isfinite(p.hi[j]):
            g_rows.append(PolyFunction.variable(nv, j) - p.hi[j])
        if np.isfinite(p.lo[j]):
            g_rows.append(p.lo[j] - PolyFunction.variable(nv, j))
    h_rows = list(p.eq)
    pt, qt = len(g_rows), len(h_rows)
    N = nv + pt + qt
    iu, iv = nv, nv + pt
    zmap = list(range(nv))
    f_z = p.objective.embed(N, zmap)
    g_z = [r.embed(N, zmap) for r in g_rows]
    h_z = [r.embed(N, zmap) for r in h_rows]
    dual_value = _weighted_sum(g_z, iu, N) + _weighted_sum(h_z, iv, N)
    dual_stat = _stationarity_rows(f_z, g_z, h_z, range(nv), iu, iv)
    lo = np.full(N, -np.inf)
    lo[iu:iu + pt] = 0.0
    return Nlp(
        num_vars=N,
        blocks={"z": (0, nv), "u": (iu, iu + pt), "v": (iv, iv + qt)},
        objective=-f_z,
        ineq=[-dual_value],
        eq=dual_stat,
        lo=lo,
        ineq_kinds=[("dual_value",)],
        eq_kinds=[("dual_stationarity", j) for j in range(nv)],
    )
