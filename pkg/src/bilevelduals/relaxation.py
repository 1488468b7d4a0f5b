"""Outer relaxation loop around the reformulation solvers.

Drives a shrinking-slack homotopy: warm-start from the lower-level
solution at the current x, solve the relaxed reformulation, test the
scheme's coupling residual, then shrink the slack geometrically until
the residual or the slack reaches its floor. The loop is the same for
every scheme; only the relaxed row and the residual read differ.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import lp, nlp
from .diagnostics import InfeasibilityReport, infeasibility
from .model import (
    LOWER_INFEASIBLE,
    LOWER_OPTIMAL,
    BilevelProgram,
    LinearBilevel,
    lower_solve,
    to_general,
)
from .reformulate import (
    SCHEME_MDP1,
    SCHEME_MDP2,
    SCHEME_MDP3,
    SCHEME_MPCC,
    SCHEME_WDP,
    SCHEMES,
    Nlp,
    build_relaxed,
)

CRITERION_MET = "CriterionMet"
T_MIN = "TMin"
UNBOUNDED = "Unbounded"
ITER_LIMIT = "IterLimit"


@dataclass
class RelaxationParams:
    t0: float = 0.1
    sigma: float = 0.5
    eps_r: float = 1e-8
    eps_sqp: float = 1e-16
    max_outer: int = 40

    def __post_init__(self):
        if not (np.isfinite(self.t0) and self.t0 > 0):
            raise ValueError("t0 must be positive and finite")
        if not (0.0 < self.sigma < 1.0):
            raise ValueError("sigma must lie strictly between 0 and 1")
        if not (np.isfinite(self.eps_r) and self.eps_r > 0):
            raise ValueError("eps_r must be positive and finite")
        if not (np.isfinite(self.eps_sqp) and self.eps_sqp > 0):
            raise ValueError("eps_sqp must be positive and finite")
        if int(self.max_outer) < 1:
            raise ValueError("max_outer must be at least 1")


@dataclass
class SolveReport:
    scheme: str
    point: np.ndarray
    blocks: dict
    objective: float
    infeasibility: InfeasibilityReport | None
    kkt_residual: float
    trace: list = field(default_factory=list)
    terminal_reason: str = ITER_LIMIT

    def to_json(self):
        return {
            "scheme": self.scheme,
            "point": np.asarray(self.point).tolist(),
            "blocks": {k: np.asarray(v).tolist() for k, v in self.blocks.items()},
            "objective": self.objective,
            "infeasibility": None
            if self.infeasibility is None
            else self.infeasibility.to_json(),
            "kkt_residual": self.kkt_residual,
            "trace": self.trace,
            "terminal_reason": self.terminal_reason,
        }


def criterion_residual(scheme: str, prob: Nlp, iterate) -> float:
    """Coupling residual of the unrelaxed reformulation at a point.

    `prob` must be the scheme's build at slack zero. The dual schemes
    read the comparison rows by tag; the complementarity scheme reads
    the aggregated product. The Wolfe residual is signed (its row is
    one-sided), the others are magnitudes.
    """
    w = np.asarray(iterate, dtype=float)
    vals = prob.eval_ineq(w)
    if scheme == SCHEME_MDP1:
        return abs(float(vals[prob.row_index(("mdp_objcmp",))]))
    if scheme == SCHEME_MDP2:
        return abs(float(vals[prob.row_index(("mdp_dualval",))]))
    if scheme == SCHEME_MDP3:
        return max(
            abs(float(vals[prob.row_index(("mdp_objcmp",))])),
            abs(float(vals[prob.row_index(("mdp_dualval",))])),
        )
    if scheme == SCHEME_WDP:
        return float(vals[prob.row_index(("wolfe",))])
    if scheme == SCHEME_MPCC:
        return abs(float(vals[prob.row_index(("compl_relaxed",))]))
    raise ValueError(f"unknown scheme {scheme!r}")


def termination_met(scheme: str, prob: Nlp, iterate, t: float, eps_r: float) -> bool:
    """Stop test: the slack hit its floor or the coupling residual did."""
    return t <= eps_r or criterion_residual(scheme, prob, iterate) <= eps_r


def warm_start(prob: Nlp, x, low) -> np.ndarray:
    """Assemble the inner starting point from a lower-level solution.

    The dual copy starts at the lower solution itself, which satisfies
    every comparison row with equality; a lower-level failure zeroes the
    non-x blocks instead.
    """
    w = np.zeros(prob.num_vars)
    s, e = prob.block("x")
    w[s:e] = x
    if low is not None and low.status == LOWER_OPTIMAL:
        s, e = prob.block("y")
        w[s:e] = low.y
        if "z" in prob.blocks:
            s, e = prob.block("z")
            w[s:e] = low.y
        s, e = prob.block("u")
        w[s:e] = low.u
        s, e = prob.block("v")
        w[s:e] = low.v
    return w


def _initial_x(bp: BilevelProgram):
    """Any point satisfying the upper-level rows, which must be affine
    in x alone for the search to be posed over x."""
    rows = []
    for group, rel in ((bp.omega_ineq, lp.LE), (bp.omega_eq, lp.EQ)):
        for r in group:
            if not r.is_affine:
                raise ValueError(
                    "provide x0: an upper-level constraint is not affine"
                )
            const, vec = r.affine_parts()
            if np.any(vec[bp.n:] != 0.0):
                raise ValueError(
                    "provide x0: an upper-level constraint couples x and y"
                )
            rows.append((vec[:bp.n], rel, -const))
    if not rows:
        return np.zeros(bp.n)
    res = lp.feasible_point(rows, num_vars=bp.n)
    if not res.feasible:
        raise ValueError("upper-level constraints are infeasible")
    return res.point


def _check_x0(bp: BilevelProgram, x0):
    """x0 must satisfy every upper-level row that constrains x alone."""
    for group, is_eq in ((bp.omega_ineq, False), (bp.omega_eq, True)):
        for r in group:
            if not r.is_affine:
                continue
            const, vec = r.affine_parts()
            if np.any(vec[bp.n:] != 0.0):
                continue
            val = const + float(vec[:bp.n] @ x0)
            if (abs(val) if is_eq else val) > 1e-8:
                raise ValueError("x0 violates the upper-level constraints")


def run(prog, scheme: str, params: RelaxationParams | None = None, x0=None) -> SolveReport:
    """Shrinking-slack solve of one reformulation scheme.

    Accepts a linear instance (bounds are lifted into rows; the report
    then carries the feasibility breakdown) or a general program. When
    x0 is omitted it is found by a feasibility solve over the upper
    rows. Inner unboundedness stops the loop immediately and is the
    terminal reason.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    par = params or RelaxationParams()
    lin = prog if isinstance(prog, LinearBilevel) else None
    bp = to_general(lin) if lin is not None else prog
    if x0 is None:
        x_cur = _initial_x(bp)
    else:
        x_cur = np.asarray(x0, dtype=float).copy()
        if x_cur.shape != (bp.n,):
            raise ValueError("x0 has wrong length")
        _check_x0(bp, x_cur)
    base = build_relaxed(bp, scheme, 0.0)
    t = par.t0
    prev_w = None
    trace: list = []
    reason = ITER_LIMIT
    res = None
    for k in range(par.max_outer):
        tick = time.monotonic()
        low = lower_solve(bp, x_cur)
        if low.status == LOWER_OPTIMAL or low.status == LOWER_INFEASIBLE:
            w0 = warm_start(base, x_cur, low if low.status == LOWER_OPTIMAL else None)
        else:
            w0 = prev_w if prev_w is not None else warm_start(base, x_cur, None)
        res = nlp.solve_nlp(build_relaxed(bp, scheme, t), w0, tol=par.eps_sqp)
        trace.append(
            {
                "k": k,
                "t": t,
                "status": res.status,
                "objective": res.objective,
                "wall": time.monotonic() - tick,
            }
        )
        prev_w = res.x.copy()
        s, e = base.block("x")
        x_cur = res.x[s:e].copy()
        if res.status == nlp.UNBOUNDED:
            reason = UNBOUNDED
            break
        if criterion_residual(scheme, base, res.x) <= par.eps_r:
            reason = CRITERION_MET
            break
        if t <= par.eps_r:
            reason = T_MIN
            break
        t = max(par.sigma * t, par.eps_r)
    blocks = base.split(res.x)
    report_infeas = None
    if lin is not None:
        report_infeas = infeasibility(lin, blocks["x"], blocks["y"])
    return SolveReport(
        scheme=scheme,
        point=res.x,
        blocks=blocks,
        objective=res.objective,
        infeasibility=report_infeas,
        kkt_residual=res.kkt_residual,
        trace=trace,
        terminal_reason=reason,
    )
