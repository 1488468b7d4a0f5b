"""Verification machinery for reformulation outputs.

Measures how far a candidate pair is from bilevel feasibility, certifies
or refutes the Mangasarian-Fromovitz constraint qualification at a point,
and searches for stationarity multipliers: plain KKT multipliers for any
reformulation, strong-stationarity multipliers for the complementarity
form, and the multiplier transfer that turns a dual-reformulation KKT
point with z = y into a strong-stationarity certificate.

Everything here is a pure function of its inputs, and every certificate
carries the residuals of its defining system so callers can re-verify it
without trusting this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lp
from .model import LinearBilevel, value_function
from .poly import compose_lagrangian
from .reformulate import Nlp

MFCQ_DIRECTION = "MfcqDirection"
MFCQ_FAIL_ABNORMAL = "MfcqFailAbnormal"
S_STATIONARY = "SStationary"
KKT_MULTIPLIERS = "KktMultipliers"
NOT_KKT = "NotKkt"

# width of the band around zero used to classify a row or a multiplier
# as active when index sets are formed
ACTIVE_TOL = 1e-6

_CERT_TOL = 1e-7
_MARGIN_TOL = 1e-8


@dataclass
class InfeasibilityReport:
    """Distance of (x, y) from bilevel feasibility, split by cause.

    `optimality_gap` compares the lower objective at y with the best
    attainable value at x; it is infinite when no y is feasible at x,
    in which case `lower_infeasible` is set and `total` is infinite.
    """

    upper_violation: float
    lower_feasibility_violation: float
    bound_violation: float
    optimality_gap: float
    total: float
    lower_infeasible: bool = False

    def to_json(self):
        return {
            "upper_violation": self.upper_violation,
            "lower_feasibility_violation": self.lower_feasibility_violation,
            "bound_violation": self.bound_violation,
            "optimality_gap": self.optimality_gap,
            "total": self.total,
            "lower_infeasible": self.lower_infeasible,
        }


def infeasibility(lin: LinearBilevel, x, y) -> InfeasibilityReport:
    """Feasibility measure for a candidate (x, y) of a linear instance.

    Euclidean norms of the clipped constraint residuals plus the gap
    between d2.y and the optimal lower-level value at x. The total is
    zero exactly when (x, y) is bilevel-feasible.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (lin.n,) or y.shape != (lin.m,):
        raise ValueError("point dimensions do not match the instance")
    upper = float(np.linalg.norm(np.maximum(0.0, lin.A1 @ x - lin.b1)))
    lower = float(np.linalg.norm(np.maximum(0.0, lin.A2 @ x + lin.B2 @ y - lin.b2)))
    bound = float(np.linalg.norm(np.maximum(0.0, y - lin.bu))) + float(
        np.linalg.norm(np.maximum(0.0, lin.bl - y))
    )
    v_x = value_function(lin, x)
    if not np.isfinite(v_x):
        return InfeasibilityReport(upper, lower, bound, np.inf, np.inf, True)
    gap = abs(float(lin.d2 @ y) - v_x)
    return InfeasibilityReport(upper, lower, bound, gap, upper + lower + bound + gap)


@dataclass
class Certificate:
    """A verifiable claim about a point: a CQ direction, an abnormal
    multiplier, a stationarity multiplier tuple, or a refutation."""

    kind: str
    vectors: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    gap: float | None = None

    def to_json(self):
        return {
            "kind": self.kind,
            "vectors": {k: np.asarray(v).tolist() for k, v in self.vectors.items()},
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "gap": None if self.gap is None else float(self.gap),
        }


def _row_rank(A, drop=1e-8):
    """Rank by elimination with column pivoting; pivots below
    drop * max|initial entry| count as zero."""
    A = np.array(A, dtype=float)
    if A.size == 0:
        return 0
    tol = drop * max(1.0, float(np.max(np.abs(A))))
    rank = 0
    for _ in range(min(A.shape)):
        sub = np.abs(A[rank:, :])
        if sub.max() <= tol:
            break
        r, c = np.unravel_index(int(np.argmax(sub)), sub.shape)
        r += rank
        A[[rank, r]] = A[[r, rank]]
        A[rank + 1:] -= np.outer(A[rank + 1:, c] / A[rank, c], A[rank])
        rank += 1
    return rank


def _active_gradients(p: Nlp, w, tol=ACTIVE_TOL):
    """Gradients of the active inequality rows (structural rows first,
    then lower and upper bounds) and of every equality row."""
    ci = p.eval_ineq(w) if p.ineq else np.zeros(0)
    Ji = p.jac_ineq(w) if p.ineq else np.zeros((0, p.num_vars))
    act = []
    labels = []
    for i in range(len(p.ineq)):
        if ci[i] >= -tol:
            act.append(Ji[i])
            labels.append(("ineq", i))
    for j in range(p.num_vars):
        if np.isfinite(p.lo[j]) and w[j] - p.lo[j] <= tol:
            e = np.zeros(p.num_vars)
            e[j] = -1.0
            act.append(e)
            labels.append(("lo", j))
        if np.isfinite(p.hi[j]) and p.hi[j] - w[j] <= tol:
            e = np.zeros(p.num_vars)
            e[j] = 1.0
            act.append(e)
            labels.append(("hi", j))
    B = np.array(act) if act else np.zeros((0, p.num_vars))
    E = p.jac_eq(w) if p.eq else np.zeros((0, p.num_vars))
    return B, E, labels


def _spread(labels, values, p: Nlp):
    """Scatter multipliers on active rows back to full-length arrays."""
    lam = np.zeros(len(p.ineq))
    lam_lo = np.zeros(p.num_vars)
    lam_hi = np.zeros(p.num_vars)
    for (which, j), v in zip(labels, values):
        if which == "ineq":
            lam[j] = v
        elif which == "lo":
            lam_lo[j] = v
        else:
            lam_hi[j] = v
    return lam, lam_lo, lam_hi


def _l1_system_solve(A, b, lo, hi, exact=()):
    """Minimize the total violation of A z = b over box-bounded z.

    Rows listed in `exact` carry no slack and must hold as stated. At a
    numerically computed point the stationarity system is consistent only
    up to the solver's own tolerance, so the multiplier search minimizes
    the violation instead of demanding exact feasibility; the optimum is
    the refutation gap when no acceptable multipliers exist.

    Returns (z, gap), with z None when the exact rows themselves conflict.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n_rows, n_z = A.shape
    soft = [r for r in range(n_rows) if r not in set(exact)]
    slack_of = {r: j for j, r in enumerate(soft)}
    nv = n_z + 2 * len(soft)
    c = np.r_[np.zeros(n_z), np.ones(2 * len(soft))]
    rows = []
    for r in range(n_rows):
        coeffs = np.zeros(nv)
        coeffs[:n_z] = A[r]
        if r in slack_of:
            j = n_z + 2 * slack_of[r]
            coeffs[j] = 1.0
            coeffs[j + 1] = -1.0
        rows.append((coeffs, lp.EQ, b[r]))
    lo_full = np.r_[lo, np.zeros(2 * len(soft))]
    hi_full = np.r_[hi, np.full(2 * len(soft), np.inf)]
    sol = lp.solve_lp(lp.lp_problem(c, rows, lo=lo_full, hi=hi_full))
    if sol.status == lp.INFEASIBLE:
        return None, np.inf
    if sol.status != lp.OPTIMAL:
        raise ArithmeticError(f"multiplier search ended with {sol.status}")
    return sol.x[:n_z], float(sol.objective)


def check_mfcq(p: Nlp, point, tol=ACTIVE_TOL) -> Certificate:
    """Decide the Mangasarian-Fromovitz constraint qualification at a point.

    Holds when the equality gradients have full row rank and some
    direction d is tangent to every equality row while strictly
    decreasing every active inequality row (bounds included). The search
    is a linear program maximizing the decrease margin s over the box
    |d| <= 1; the CQ holds exactly when the optimum exceeds 1e-8.

    On failure the certificate carries a nonzero multiplier pair
    (lam >= 0 on active inequality rows, mu on equality rows) whose
    weighted gradient sum vanishes.
    """
    w = np.asarray(point, dtype=float)
    if p.max_violation(w) > tol:
        raise ValueError("point is not feasible for the problem")
    B, E, labels = _active_gradients(p, w, tol)
    nv = p.num_vars
    k, me = B.shape[0], E.shape[0]
    if k == 0 and me == 0:
        return Certificate(
            MFCQ_DIRECTION,
            vectors={"d": np.zeros(nv)},
            residuals={"equality": 0.0, "decrease": 0.0, "margin": 1.0},
        )
    rank_fail = me > 0 and _row_rank(E) < me
    if not rank_fail:
        # maximize s subject to E d = 0, B d + s <= 0, |d| <= 1, s <= 1
        rows = [(np.append(E[j], 0.0), lp.EQ, 0.0) for j in range(me)]
        rows += [(np.append(B[i], 1.0), lp.LE, 0.0) for i in range(k)]
        c = np.zeros(nv + 1)
        c[nv] = -1.0
        lo = np.append(np.full(nv, -1.0), 0.0)
        hi = np.append(np.full(nv, 1.0), 1.0)
        sol = lp.solve_lp(lp.lp_problem(c, rows, lo=lo, hi=hi))
        if sol.status != lp.OPTIMAL:
            raise ArithmeticError(f"direction search ended with {sol.status}")
        margin = float(sol.x[nv])
        if margin > _MARGIN_TOL:
            d = sol.x[:nv]
            eq_res = float(np.max(np.abs(E @ d), initial=0.0))
            dec = float(np.max(B @ d + margin, initial=0.0))
            return Certificate(
                MFCQ_DIRECTION,
                vectors={"d": d},
                residuals={
                    "equality": eq_res,
                    "decrease": max(0.0, dec),
                    "margin": margin,
                },
            )
    # the CQ fails; produce the positive-linear-dependence witness, first
    # with weight on the inequality side, else on the equality gradients
    if k:
        G = np.vstack([B, E]).T  # columns are the active gradients
        A = np.vstack([G, np.r_[np.ones(k), np.zeros(me)]])
        b = np.r_[np.zeros(nv), 1.0]
        zz, gap = _l1_system_solve(
            A, b, lo=np.r_[np.zeros(k), np.full(me, -np.inf)],
            hi=np.full(k + me, np.inf), exact=(nv,),
        )
        if zz is not None and gap <= _CERT_TOL:
            lam_act = zz[:k]
            mu = zz[k:]
            lam, lam_lo, lam_hi = _spread(labels, lam_act, p)
            dep = B.T @ lam_act + (E.T @ mu if me else 0.0)
            return Certificate(
                MFCQ_FAIL_ABNORMAL,
                vectors={"ineq": lam, "lo": lam_lo, "hi": lam_hi, "eq": mu},
                residuals={
                    "dependence": float(np.max(np.abs(dep))),
                    "size": float(np.sum(lam_act)),
                },
            )
    # weights on the equality gradients alone: a null vector of E^T
    sv = np.linalg.svd(E.T, compute_uv=False) if me else np.zeros(0)
    if me == 0 or sv[-1] > 1e-8 * max(1.0, sv[0]):
        raise ArithmeticError("constraint qualification status is numerically ambiguous")
    mu = np.linalg.svd(E.T, full_matrices=True)[2][-1]
    mu = mu / np.max(np.abs(mu))
    lam, lam_lo, lam_hi = _spread(labels, np.zeros(k), p)
    return Certificate(
        MFCQ_FAIL_ABNORMAL,
        vectors={"ineq": lam, "lo": lam_lo, "hi": lam_hi, "eq": mu},
        residuals={
            "dependence": float(np.max(np.abs(E.T @ mu))),
            "size": float(np.sum(np.abs(mu))),
        },
    )


def check_kkt(p: Nlp, point, tol=ACTIVE_TOL) -> Certificate:
    """Search for KKT multipliers at a feasible point.

    The active set is fixed by the point's row values, which makes the
    complementarity conditions linear; the remaining system is a
    feasibility LP. Returns the multipliers or the refutation with the
    phase-1 gap, the minimal total violation of the stationarity system.
    """
    w = np.asarray(point, dtype=float)
    if p.max_violation(w) > tol:
        raise ValueError("point is not feasible for the problem")
    B, E, labels = _active_gradients(p, w, tol)
    k, me, nv = B.shape[0], E.shape[0], p.num_vars
    gobj = p.objective.grad(w)
    G = np.vstack([B, E]).T if (k or me) else np.zeros((nv, 0))
    z, gap = _l1_system_solve(
        G, -gobj, lo=np.r_[np.zeros(k), np.full(me, -np.inf)],
        hi=np.full(k + me, np.inf),
    )
    if z is None or gap > _CERT_TOL:
        return Certificate(NOT_KKT, gap=gap)
    lam_act, mu = z[:k], z[k:]
    lam, lam_lo, lam_hi = _spread(labels, lam_act, p)
    stat = gobj.copy()
    if len(p.ineq):
        stat += p.jac_ineq(w).T @ lam
    if me:
        stat += E.T @ mu
    stat += -lam_lo + lam_hi
    ci = p.eval_ineq(w) if p.ineq else np.zeros(0)
    return Certificate(
        KKT_MULTIPLIERS,
        vectors={"ineq": lam, "eq": mu, "lo": lam_lo, "hi": lam_hi},
        residuals={
            "stationarity": float(np.max(np.abs(stat), initial=0.0)),
            "complementarity": float(np.max(np.abs(lam * ci), initial=0.0)),
            "sign": float(max(0.0, -np.min(lam_act, initial=0.0))),
        },
    )


def _index_sets(g_vals, u, tol=ACTIVE_TOL):
    """Split lower-inequality indices by activity pattern: (g=0, u>0),
    (g<0, u=0), and biactive (g=0, u=0)."""
    zero_plus, minus_zero, zero_zero = [], [], []
    for i, (gi, ui) in enumerate(zip(g_vals, u)):
        if gi >= -tol and ui > tol:
            zero_plus.append(i)
        elif gi < -tol:
            minus_zero.append(i)
        else:
            zero_zero.append(i)
    return zero_plus, minus_zero, zero_zero


def _strong_system(bp, xy, u, v):
    """Coefficient matrix and right side of the strong-stationarity
    equations at fixed (u, v).

    Row order: stationarity in (x, y), then one row per lower inequality
    pairing its y-gradient with lambda_L against lambda_u, then one row
    per lower equality. Unknown order: lambda_g, lambda_h, lambda_u,
    lambda_L, then one multiplier per upper-constraint row (inequality
    rows first).
    """
    n, m, p, q = bp.n, bp.m, bp.p, bp.q
    HL = compose_lagrangian(bp.f, bp.g, bp.h, u, v).hess(xy)
    Jg = np.array([gi.grad(xy) for gi in bp.g]) if p else np.zeros((0, n + m))
    Jh = np.array([hj.grad(xy) for hj in bp.h]) if q else np.zeros((0, n + m))
    Jo_i = (
        np.array([r.grad(xy) for r in bp.omega_ineq])
        if bp.omega_ineq
        else np.zeros((0, n + m))
    )
    Jo_e = (
        np.array([r.grad(xy) for r in bp.omega_eq])
        if bp.omega_eq
        else np.zeros((0, n + m))
    )
    no = Jo_i.shape[0] + Jo_e.shape[0]
    nun = p + q + p + m + no
    top = np.zeros((n + m, nun))
    top[:, :p] = Jg.T
    top[:, p:p + q] = Jh.T
    top[:, p + q + p:p + q + p + m] = HL[:, n:]
    if no:
        top[:, p + q + p + m:] = np.vstack([Jo_i, Jo_e]).T
    mid = np.zeros((p, nun))
    mid[:, p + q:p + q + p] = -np.eye(p)
    mid[:, p + q + p:p + q + p + m] = Jg[:, n:]
    bot = np.zeros((q, nun))
    bot[:, p + q + p:p + q + p + m] = Jh[:, n:]
    A = np.vstack([top, mid, bot])
    rhs = np.concatenate([-bp.F.grad(xy), np.zeros(p + q)])
    return A, rhs


def _strong_residuals(lam_g, lam_h, lam_u, lam_L, omega_mult, A, rhs, sets):
    zero_plus, minus_zero, zero_zero = sets
    z = np.concatenate([lam_g, lam_h, lam_u, lam_L, omega_mult])
    system = float(np.max(np.abs(A @ z - rhs), initial=0.0))
    pinned = 0.0
    for i in minus_zero:
        pinned = max(pinned, abs(lam_g[i]))
    for i in zero_plus:
        pinned = max(pinned, abs(lam_u[i]))
    sign = 0.0
    for i in zero_zero:
        sign = max(sign, -lam_g[i], -lam_u[i])
    return {"system": system, "pinned": pinned, "sign": max(0.0, sign)}


def check_s_stationary(mpcc: Nlp, point, tol=ACTIVE_TOL) -> Certificate:
    """Search for strong-stationarity multipliers at a feasible point of
    the complementarity reformulation.

    Classifies each lower inequality by its activity pattern, pins or
    signs the (lambda_g, lambda_u) entries accordingly, and solves the
    remaining linear system as a feasibility LP. Upper constraint rows
    carry their own multipliers, signed on active inequality rows and
    pinned to zero on inactive ones.
    """
    if mpcc.source is None:
        raise ValueError("problem does not carry its bilevel source data")
    bp = mpcc.source
    w = np.asarray(point, dtype=float)
    if mpcc.max_violation(w) > tol:
        raise ValueError("point is not feasible for the problem")
    parts = mpcc.split(w)
    xy = np.concatenate([parts["x"], parts["y"]])
    u, v = parts["u"], parts["v"]
    p, q, m = bp.p, bp.q, bp.m
    g_vals = np.array([gi.eval(xy) for gi in bp.g])
    sets = _index_sets(g_vals, u, tol)
    zero_plus, minus_zero, zero_zero = sets
    A, rhs = _strong_system(bp, xy, u, v)
    nun = A.shape[1]
    lo = np.full(nun, -np.inf)
    hi = np.full(nun, np.inf)
    for i in minus_zero:  # lambda_g pinned off the active set
        lo[i] = hi[i] = 0.0
    for i in zero_plus:  # lambda_u pinned where u is strictly positive
        lo[p + q + i] = hi[p + q + i] = 0.0
    for i in zero_zero:  # biactive rows need both signs nonnegative
        lo[i] = 0.0
        lo[p + q + i] = 0.0
    off = p + q + p + m
    for j, row in enumerate(bp.omega_ineq):
        if row.eval(xy) >= -tol:
            lo[off + j] = 0.0
        else:
            lo[off + j] = hi[off + j] = 0.0
    z, gap = _l1_system_solve(A, rhs, lo=lo, hi=hi)
    if z is None or gap > _CERT_TOL:
        return Certificate(NOT_KKT, gap=gap)
    lam_g, lam_h = z[:p], z[p:p + q]
    lam_u, lam_L = z[p + q:p + q + p], z[p + q + p:off]
    omega_mult = z[off:]
    return Certificate(
        S_STATIONARY,
        vectors={
            "lambda_g": lam_g,
            "lambda_h": lam_h,
            "lambda_u": lam_u,
            "lambda_L": lam_L,
            "omega": omega_mult,
        },
        residuals=_strong_residuals(lam_g, lam_h, lam_u, lam_L, omega_mult, A, rhs, sets),
    )


def _structured_mdp_multipliers(mdp: Nlp, cert: Certificate):
    """Read the named multiplier groups out of a flat KKT certificate."""
    bp = mdp.source
    lam = np.asarray(cert.vectors["ineq"], dtype=float)
    mu = np.asarray(cert.vectors["eq"], dtype=float)
    lam_lo = np.asarray(cert.vectors["lo"], dtype=float)
    eta_g = np.array([lam[mdp.row_index(("g", i))] for i in range(bp.p)])
    eta_h = np.array([mu[mdp.row_index(("h", j), among="eq")] for j in range(bp.q)])
    gamma = float(lam[mdp.row_index(("mdp_dualval",))])
    beta = np.array(
        [mu[mdp.row_index(("dual_stationarity", j), among="eq")] for j in range(bp.m)]
    )
    iu0, iu1 = mdp.block("u")
    eta_u = lam_lo[iu0:iu1].copy()
    omega_i = np.array(
        [lam[mdp.row_index(("omega_ineq", j))] for j in range(len(bp.omega_ineq))]
    )
    omega_e = np.array(
        [mu[mdp.row_index(("omega_eq", j), among="eq")] for j in range(len(bp.omega_eq))]
    )
    return eta_g, eta_h, eta_u, beta, gamma, np.concatenate([omega_i, omega_e])


def check_thm52_transfer(mdp: Nlp, point, cert: Certificate, tol=ACTIVE_TOL) -> Certificate:
    """Convert a dual-reformulation KKT certificate at a point with z = y
    into a strong-stationarity certificate for the complementarity form.

    The mapping is lambda_g = eta_g - gamma u, lambda_h = eta_h - gamma v,
    lambda_u = eta_u + gamma g(x, y), lambda_L = beta; upper-row
    multipliers carry over unchanged. A residual above 1e-7 after the
    mapping means the certificate or the mapping itself is wrong, so it
    raises instead of returning.
    """
    if cert.kind != KKT_MULTIPLIERS:
        raise ValueError("need a KKT multiplier certificate")
    if mdp.source is None:
        raise ValueError("problem does not carry its bilevel source data")
    bp = mdp.source
    w = np.asarray(point, dtype=float)
    parts = mdp.split(w)
    if float(np.max(np.abs(parts["y"] - parts["z"]), initial=0.0)) > 1e-8:
        raise ValueError("transfer requires z = y")
    xy = np.concatenate([parts["x"], parts["y"]])
    u, v = parts["u"], parts["v"]
    eta_g, eta_h, eta_u, beta, gamma, omega_mult = _structured_mdp_multipliers(mdp, cert)
    g_vals = np.array([gi.eval(xy) for gi in bp.g])
    lam_g = eta_g - gamma * u
    lam_h = eta_h - gamma * v
    lam_u = eta_u + gamma * g_vals
    lam_L = beta
    A, rhs = _strong_system(bp, xy, u, v)
    sets = _index_sets(g_vals, u, tol)
    residuals = _strong_residuals(lam_g, lam_h, lam_u, lam_L, omega_mult, A, rhs, sets)
    worst = max(residuals.values())
    if worst > _CERT_TOL:
        raise ArithmeticError(
            f"multiplier transfer residual {worst:.3e} exceeds {_CERT_TOL:g}"
        )
    return Certificate(
        S_STATIONARY,
        vectors={
            "lambda_g": lam_g,
            "lambda_h": lam_h,
            "lambda_u": lam_u,
            "lambda_L": lam_L,
            "omega": omega_mult,
        },
        residuals=residuals,
    )


def abnormal_witness(mdp: Nlp, point) -> Certificate:
    """The closed-form abnormal multiplier at a dual-reformulation
    feasible point with z = y: (alpha, beta, gamma, eta_g, eta_h, eta_u)
    = (1, 0, 1, u, v, -g(x, y)).

    Its existence shows the constraint qualification cannot hold there.
    The residuals cover the gradient equations of the abnormal system
    together with its sign and complementarity conditions.
    """
    if mdp.source is None:
        raise ValueError("problem does not carry its bilevel source data")
    bp = mdp.source
    w = np.asarray(point, dtype=float)
    if mdp.max_violation(w) > ACTIVE_TOL:
        raise ValueError("point is not feasible for the problem")
    parts = mdp.split(w)
    if float(np.max(np.abs(parts["y"] - parts["z"]), initial=0.0)) > 1e-8:
        raise ValueError("the witness requires z = y")
    x, z = parts["x"], parts["z"]
    u, v = parts["u"], parts["v"]
    xy = np.concatenate([x, parts["y"]])
    xz = np.concatenate([x, z])
    n, m, p, q = bp.n, bp.m, bp.p, bp.q
    alpha, gamma = 1.0, 1.0
    beta = np.zeros(m)
    g_y = np.array([gi.eval(xy) for gi in bp.g])
    g_z = np.array([gi.eval(xz) for gi in bp.g])
    h_z = np.array([hj.eval(xz) for hj in bp.h])
    eta_g, eta_h, eta_u = u.copy(), v.copy(), -g_y
    Jg_y = np.array([gi.grad(xy) for gi in bp.g]) if p else np.zeros((0, n + m))
    Jh_y = np.array([hj.grad(xy) for hj in bp.h]) if q else np.zeros((0, n + m))
    Jg_z = np.array([gi.grad(xz) for gi in bp.g]) if p else np.zeros((0, n + m))
    Jh_z = np.array([hj.grad(xz) for hj in bp.h]) if q else np.zeros((0, n + m))
    gf_y = bp.f.grad(xy)
    gf_z = bp.f.grad(xz)
    HL = compose_lagrangian(bp.f, bp.g, bp.h, u, v).hess(xz)
    # x-stationarity: the comparison-row and copied-constraint gradients
    # cancel pairwise at z = y
    e1 = (
        alpha * (gf_y[:n] - gf_z[:n])
        + HL[:n, n:] @ beta
        + Jg_y[:, :n].T @ (eta_g - gamma * u)
        + Jh_y[:, :n].T @ (eta_h - gamma * v)
    )
    # y-stationarity against the copied constraints
    e2 = alpha * gf_y[n:] + Jg_y[:, n:].T @ eta_g + Jh_y[:, n:].T @ eta_h
    # z-stationarity through the dual rows
    e3 = (
        -alpha * gf_z[n:]
        + HL[n:, n:] @ beta
        - gamma * (Jg_z[:, n:].T @ u)
        - gamma * (Jh_z[:, n:].T @ v)
    )
    # u- and v-stationarity
    e4 = Jg_z[:, n:] @ beta - gamma * g_z - eta_u
    e5 = Jh_z[:, n:] @ beta - gamma * h_z
    comp = max(
        abs(alpha * (float(bp.f.eval(xy)) - float(bp.f.eval(xz)))),
        abs(float(u @ eta_u)),
        abs(gamma * (float(u @ g_z) + float(v @ h_z))),
        abs(float(g_y @ eta_g)),
    )
    sign = max(
        0.0,
        -alpha,
        -gamma,
        float(np.max(-eta_u, initial=0.0)),
        float(np.max(-eta_g, initial=0.0)),
    )
    grad_res = max(
        float(np.max(np.abs(e), initial=0.0)) for e in (e1, e2, e3, e4, e5)
    )
    return Certificate(
        MFCQ_FAIL_ABNORMAL,
        vectors={
            "alpha": np.array([alpha]),
            "beta": beta,
            "gamma": np.array([gamma]),
            "eta_g": eta_g,
            "eta_h": eta_h,
            "eta_u": eta_u,
        },
        residuals={"gradients": grad_res, "complementarity": comp, "sign": sign},
    )
