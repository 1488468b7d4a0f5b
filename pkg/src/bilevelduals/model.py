"""Bilevel program data types.

A bilevel program minimizes an upper objective F(x, y) over upper-level
constraints, where y must solve the lower-level problem

    min_y f(x, y)   s.t.  g(x, y) <= 0,  h(x, y) = 0.

All functions are PolyFunction instances over the stacked variables (x | y).
`LinearBilevel` is the dense linear special case used by the random
benchmark; `to_general` lifts its box bounds into ordinary lower-level rows
so one code path handles both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import lp
from .poly import PolyFunction

LOWER_OPTIMAL = "optimal"
LOWER_INFEASIBLE = "infeasible"
LOWER_UNBOUNDED = "unbounded"
LOWER_FAILED = "failed"


@dataclass
class BilevelProgram:
    n: int  # upper variables x
    m: int  # lower variables y
    F: PolyFunction
    f: PolyFunction
    omega_ineq: list = field(default_factory=list)
    omega_eq: list = field(default_factory=list)
    g: list = field(default_factory=list)
    h: list = field(default_factory=list)

    def __post_init__(self):
        nv = self.n + self.m
        for p in [self.F, self.f, *self.omega_ineq, *self.omega_eq, *self.g, *self.h]:
            if p.num_vars != nv:
                raise ValueError("every function must be over the stacked (x|y) variables")

    @property
    def p(self):
        return len(self.g)

    @property
    def q(self):
        return len(self.h)

    def to_json(self):
        return {
            "type": "general",
            "n": self.n,
            "m": self.m,
            "F": self.F.to_json(),
            "omega_ineq": [p.to_json() for p in self.omega_ineq],
            "omega_eq": [p.to_json() for p in self.omega_eq],
            "f": self.f.to_json(),
            "g": [p.to_json() for p in self.g],
            "h": [p.to_json() for p in self.h],
        }


@dataclass
class LinearBilevel:
    """min c1.x + c2.y over A1 x <= b1, with y solving
    min d2.y s.t. A2 x + B2 y <= b2, bl <= y <= bu."""

    c1: np.ndarray
    c2: np.ndarray
    A1: np.ndarray
    b1: np.ndarray
    d2: np.ndarray
    A2: np.ndarray
    B2: np.ndarray
    b2: np.ndarray
    bl: np.ndarray
    bu: np.ndarray

    def __post_init__(self):
        for name in ("c1", "c2", "A1", "b1", "d2", "A2", "B2", "b2", "bl", "bu"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n, m = len(self.c1), len(self.c2)
        l, p = self.A1.shape[0] if self.A1.size else len(self.b1), len(self.b2)
        self.A1 = self.A1.reshape(l, n)
        self.A2 = self.A2.reshape(p, n)
        self.B2 = self.B2.reshape(p, m)
        if len(self.d2) != m or len(self.b1) != l:
            raise ValueError("inconsistent dimensions")
        if len(self.bl) != m or len(self.bu) != m or np.any(self.bl > self.bu):
            raise ValueError("bad bounds")

    @property
    def n(self):
        return len(self.c1)

    @property
    def m(self):
        return len(self.c2)

    @property
    def l(self):
        return len(self.b1)

    @property
    def p(self):
        return len(self.b2)

    @property
    def p_general(self):
        # lifted row count once bounds become rows
        return self.p + 2 * self.m

    def to_json(self):
        return {
            "type": "linear",
            "c1": self.c1.tolist(),
            "c2": self.c2.tolist(),
            "A1": self.A1.tolist(),
            "b1": self.b1.tolist(),
            "d2": self.d2.tolist(),
            "A2": self.A2.tolist(),
            "B2": self.B2.tolist(),
            "b2": self.b2.tolist(),
            "bl": self.bl.tolist(),
            "bu": self.bu.tolist(),
        }


def to_general(lin: LinearBilevel) -> BilevelProgram:
    """Lift a linear instance: bounds become 2m extra lower-level rows.

    Row order in g: the p structural rows, then y - bu <= 0, then bl - y <= 0.
    """
    n, m = lin.n, lin.m
    nv = n + m
    F = PolyFunction.affine(nv, np.concatenate([lin.c1, lin.c2]))
    f = PolyFunction.affine(nv, np.concatenate([np.zeros(n), lin.d2]))
    omega = [
        PolyFunction.affine(nv, np.concatenate([lin.A1[i], np.zeros(m)]), -lin.b1[i])
        for i in range(lin.l)
    ]
    g = [
        PolyFunction.affine(nv, np.concatenate([lin.A2[i], lin.B2[i]]), -lin.b2[i])
        for i in range(lin.p)
    ]
    for j in range(m):
        e = np.zeros(nv)
        e[n + j] = 1.0
        g.append(PolyFunction.affine(nv, e, -lin.bu[j]))
    for j in range(m):
        e = np.zeros(nv)
        e[n + j] = -1.0
        g.append(PolyFunction.affine(nv, e, lin.bl[j]))
    return BilevelProgram(n, m, F, f, omega_ineq=omega, g=g)


@dataclass
class LowerSolution:
    status: str
    y: np.ndarray | None = None
    u: np.ndarray | None = None  # multipliers of g rows
    v: np.ndarray | None = None  # multipliers of h rows
    value: float = np.inf


def lower_solve(bp: BilevelProgram, x) -> LowerSolution:
    """Solve the lower-level problem at fixed x.

    Affine-in-y data goes through the LP solver (exact multipliers from the
    simplex basis); anything else is handed to the SQP solver from a zero
    start. Multipliers follow the g <= 0 / h = 0 convention, so on success
    grad_y f + grad_y g.u + grad_y h.v vanishes to solver tolerance.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (bp.n,):
        raise ValueError("x has wrong length")
    keep = list(range(bp.n, bp.n + bp.m))
    assign = {i: x[i] for i in range(bp.n)}
    f_y = bp.f.restrict(assign, keep)
    g_y = [p.restrict(assign, keep) for p in bp.g]
    h_y = [p.restrict(assign, keep) for p in bp.h]
    if f_y.is_affine and all(p.is_affine for p in g_y + h_y):
        rows = []
        for p in g_y:
            const, vec = p.affine_parts()
            rows.append((vec, lp.LE, -const))
        for p in h_y:
            const, vec = p.affine_parts()
            rows.append((vec, lp.EQ, -const))
        _, cvec = f_y.affine_parts()
        sol = lp.solve_lp(lp.lp_problem(cvec, rows))
        if sol.status == lp.OPTIMAL:
            return LowerSolution(
                LOWER_OPTIMAL,
                y=sol.x,
                u=sol.duals[: len(g_y)].copy(),
                v=sol.duals[len(g_y):].copy(),
                value=float(f_y.eval(sol.x)),
            )
        if sol.status == lp.INFEASIBLE:
            return LowerSolution(LOWER_INFEASIBLE)
        if sol.status == lp.UNBOUNDED:
            return LowerSolution(LOWER_UNBOUNDED, value=-np.inf)
        return LowerSolution(LOWER_FAILED)
    # nonlinear lower level: local solve from the origin
    from .nlp import KKT_POINT, solve_nlp
    from .reformulate import Nlp

    sub = Nlp(
        num_vars=bp.m,
        blocks={"y": (0, bp.m)},
        objective=f_y,
        ineq=list(g_y),
        eq=list(h_y),
        lo=np.full(bp.m, -np.inf),
        hi=np.full(bp.m, np.inf),
    )
    res = solve_nlp(sub, np.zeros(bp.m), tol=1e-8)
    if res.status == KKT_POINT:
        return LowerSolution(
            LOWER_OPTIMAL,
            y=res.x,
            u=res.ineq_duals.copy(),
            v=res.eq_duals.copy(),
            value=res.objective,
        )
    return LowerSolution(LOWER_FAILED, y=res.x, value=res.objective)


def value_function(lin: LinearBilevel, x) -> float:
    """Optimal lower-level value at x; +inf when the lower level is infeasible."""
    x = np.asarray(x, dtype=float)
    rows = [(lin.B2[i], lp.LE, float(lin.b2[i] - lin.A2[i] @ x)) for i in range(lin.p)]
    sol = lp.solve_lp(lp.lp_problem(lin.d2, rows, lo=lin.bl, hi=lin.bu))
    if sol.status == lp.OPTIMAL:
        return float(sol.objective)
    if sol.status == lp.INFEASIBLE:
        return np.inf
    raise ArithmeticError(f"lower-level value solve: {sol.status}")


def instance_to_json(inst) -> str:
    return json.dumps(inst.to_json(), indent=1)


def instance_from_json(text: str):
    data = json.loads(text) if isinstance(text, str) else text
    kind = data.get("type")
    if kind == "linear":
        return LinearBilevel(
            c1=data["c1"], c2=data["c2"], A1=data["A1"], b1=data["b1"],
            d2=data["d2"], A2=data["A2"], B2=data["B2"], b2=data["b2"],
            bl=data["bl"], bu=data["bu"],
        )
    if kind == "general":
        n, m = int(data["n"]), int(data["m"])
        nv = n + m
        load = lambda d: PolyFunction.from_json(nv, d)
        return BilevelProgram(
            n, m,
            F=load(data["F"]),
            f=load(data["f"]),
            omega_ineq=[load(d) for d in data.get("omega_ineq", [])],
            omega_eq=[load(d) for d in data.get("omega_eq", [])],
            g=[load(d) for d in data.get("g", [])],
            h=[load(d) for d in data.get("h", [])],
        )
    raise ValueError(f"unknown instance type {kind!r}")


def save_instance(inst, path):
    with open(path, "w") as fh:
        fh.write(instance_to_json(inst))


def load_instance(path):
    with open(path) as fh:
        return instance_from_json(fh.read())
