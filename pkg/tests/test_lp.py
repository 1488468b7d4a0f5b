import numpy as np
import pytest

from bilevelduals.lp import (
    EQ,
    GE,
    INFEASIBLE,
    LE,
    OPTIMAL,
    UNBOUNDED,
    LpOptions,
    feasible_point,
    lp_problem,
    solve_lp,
)


def kkt_gaps(p, sol):
    """Max primal, dual and complementarity violations of an optimal solution."""
    x = sol.x
    primal = 0.0
    comp = 0.0
    for (a, rel, rhs), lam in zip(p.rows, sol.duals):
        v = float(a @ x) - rhs
        if rel == LE:
            primal = max(primal, v)
            comp = max(comp, abs(lam * v))
            dualsign = -min(lam, 0.0)
        elif rel == GE:
            primal = max(primal, -v)
            comp = max(comp, abs(lam * v))
            dualsign = max(lam, 0.0)
        else:
            primal = max(primal, abs(v))
            dualsign = 0.0
        comp = max(comp, dualsign)
    primal = max(primal, np.max(p.lo - x, initial=0.0), np.max(x - p.hi, initial=0.0))
    A = np.array([r[0] for r in p.rows]) if p.rows else np.zeros((0, p.num_vars))
    stat = p.c + A.T @ sol.duals - sol.bound_duals_lo + sol.bound_duals_hi
    lo_gap = np.where(np.isfinite(p.lo), x - p.lo, np.inf)
    hi_gap = np.where(np.isfinite(p.hi), p.hi - x, np.inf)
    comp = max(
        comp,
        np.max(np.abs(sol.bound_duals_lo * np.minimum(lo_gap, 1e6)), initial=0.0),
        np.max(np.abs(sol.bound_duals_hi * np.minimum(hi_gap, 1e6)), initial=0.0),
    )
    return primal, float(np.max(np.abs(stat), initial=0.0)), comp


def test_small_box_lp():
    p = lp_problem([-1.0, -1.0], [([1.0, 2.0], LE, 4.0)], lo=[0, 0], hi=[3, 3])
    sol = solve_lp(p)
    assert sol.status == OPTIMAL
    assert np.isclose(sol.objective, -3.5)  # x=3, y=0.5
    assert np.allclose(sol.x, [3.0, 0.5])


def test_equality_and_ge_rows():
    # min x + y s.t. x + y = 2, x - y >= -1, free vars
    p = lp_problem([1.0, 1.0], [([1, 1], EQ, 2.0), ([1, -1], GE, -1.0)])
    sol = solve_lp(p)
    assert sol.status == OPTIMAL
    assert np.isclose(sol.objective, 2.0)
    pr, st, co = kkt_gaps(p, sol)
    assert max(pr, st, co) <= 1e-9


def test_unbounded_free_variable():
    p = lp_problem([-1.0], [])
    assert solve_lp(p).status == UNBOUNDED
    p2 = lp_problem([-1.0, 0.0], [([0.0, 1.0], LE, 1.0)])
    assert solve_lp(p2).status == UNBOUNDED


def test_infeasible_with_certificate():
    # x <= -1 and x >= 1 cannot both hold
    p = lp_problem([0.0], [([1.0], LE, -1.0), ([1.0], GE, 1.0)])
    sol = solve_lp(p)
    assert sol.status == INFEASIBLE
    assert sol.phase1_gap > 1e-9
    lam = sol.farkas
    assert lam is not None
    # aggregated row: lam1 >= 0 for <=, lam2 <= 0 for >=
    assert lam[0] >= -1e-12 and lam[1] <= 1e-12


def box_min(cbar, lo, hi):
    total = 0.0
    for cj, l, h in zip(cbar, lo, hi):
        if cj > 0:
            total += cj * l
        elif cj < 0:
            total += cj * h
    return total


def certificate_is_valid(rows, lo, hi, lam, tol=1e-7):
    """Farkas check: aggregated row minimum over the box exceeds aggregated rhs."""
    n = len(lo)
    cbar = np.zeros(n)
    agg_rhs = 0.0
    for (a, rel, rhs), l in zip(rows, lam):
        if rel == LE and l < -tol:
            return False
        if rel == GE and l > tol:
            return False
        cbar += l * np.asarray(a, dtype=float)
        agg_rhs += l * rhs
    return box_min(cbar, lo, hi) > agg_rhs + tol


def test_random_infeasible_certificates():
    rng = np.random.default_rng(7)
    found = 0
    for _ in range(40):
        n = int(rng.integers(1, 5))
        k = int(rng.integers(2, 6))
        rows = []
        for _ in range(k):
            a = rng.uniform(-1, 1, n)
            rel = (LE, GE, EQ)[int(rng.integers(0, 3))]
            rows.append((a, rel, float(rng.uniform(-0.5, 0.5))))
        lo, hi = np.full(n, -1.0), np.full(n, 1.0)
        res = feasible_point(rows, lo, hi)
        if res.feasible:
            for a, rel, rhs in rows:
                v = float(a @ res.point) - rhs
                if rel == LE:
                    assert v <= 1e-8
                elif rel == GE:
                    assert v >= -1e-8
                else:
                    assert abs(v) <= 1e-8
        else:
            found += 1
            assert res.gap > 1e-9
            assert certificate_is_valid(rows, lo, hi, res.farkas)
    assert found >= 3  # the draw must actually exercise the certificate path


def test_random_lps_satisfy_kkt():
    rng = np.random.default_rng(42)
    for _ in range(60):
        n = int(rng.integers(1, 6))
        k = int(rng.integers(0, 7))
        rows = []
        for _ in range(k):
            rel = (LE, GE, EQ)[int(rng.integers(0, 3))]
            rows.append((rng.uniform(-2, 2, n), rel, float(rng.uniform(-1, 1))))
        p = lp_problem(rng.uniform(-1, 1, n), rows, lo=np.full(n, -5.0), hi=np.full(n, 5.0))
        sol = solve_lp(p)
        assert sol.status in (OPTIMAL, INFEASIBLE)
        if sol.status == OPTIMAL:
            pr, st, co = kkt_gaps(p, sol)
            assert pr <= 1e-8
            assert st <= 1e-7
            assert co <= 1e-6


def test_degenerate_lp_terminates():
    # many redundant rows through the optimum force degenerate pivots
    n = 4
    rows = [(np.ones(n), LE, 1.0)]
    for i in range(n):
        a = np.zeros(n)
        a[i] = 1.0
        rows.append((a, LE, 1.0))
        rows.append((a.copy(), LE, 1.0))
    p = lp_problem(-np.ones(n), rows, lo=np.zeros(n), hi=None)
    sol = solve_lp(p)
    assert sol.status == OPTIMAL
    assert np.isclose(sol.objective, -1.0)


def test_bland_threshold_configurable():
    p = lp_problem([-1.0, -1.0], [([1, 1], LE, 1.0)], lo=[0, 0])
    sol = solve_lp(p, LpOptions(bland_after=0))  # Bland from the first pivot
    assert sol.status == OPTIMAL
    assert np.isclose(sol.objective, -1.0)


def test_deterministic_bitwise():
    rng = np.random.default_rng(3)
    n, k = 6, 8
    rows = [(rng.uniform(-1, 1, n), LE, float(rng.uniform(0.5, 1))) for _ in range(k)]
    c = rng.uniform(-1, 1, n)
    a = solve_lp(lp_problem(c, rows, lo=np.full(n, -2.0), hi=np.full(n, 2.0)))
    b = solve_lp(lp_problem(c, rows, lo=np.full(n, -2.0), hi=np.full(n, 2.0)))
    assert a.objective == b.objective
    assert (a.x == b.x).all()
    assert (a.duals == b.duals).all()


def test_fixed_variables():
    p = lp_problem([1.0, 1.0], [([1, 1], GE, 1.0)], lo=[0.5, 0.0], hi=[0.5, 10.0])
    sol = solve_lp(p)
    assert sol.status == OPTIMAL
    assert np.allclose(sol.x, [0.5, 0.5])


def test_feasible_point_no_rows():
    res = feasible_point([], lo=np.array([1.0]), hi=np.array([2.0]))
    assert res.feasible and 1.0 <= res.point[0] <= 2.0


def test_bad_inputs():
    with pytest.raises(ValueError):
        lp_problem([1.0], [([1.0, 2.0], LE, 0.0)])
    with pytest.raises(ValueError):
        lp_problem([1.0], [([1.0], "<", 0.0)])
    with pytest.raises(ValueError):
        lp_problem([1.0], [], lo=[2.0], hi=[1.0])
