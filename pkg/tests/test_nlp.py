import itertools

import numpy as np

from bilevelduals.bench import paper_examples
from bilevelduals.nlp import (
    ITER_LIMIT,
    KKT_POINT,
    LINE_SEARCH_FAIL,
    UNBOUNDED,
    SqpOptions,
    solve_nlp,
    solve_qp,
)
from bilevelduals.poly import PolyFunction
from bilevelduals.reformulate import Nlp, build_mdp, build_wdp


def qp_by_enumeration(H, c, A_eq, b_eq, A_in, b_in):
    """Global QP minimizer by trying every candidate active set.

    Only usable for tiny instances; the cost is binomial in the row count.
    """
    n = len(c)
    qe, mi = len(b_eq), len(b_in)
    best_x, best_f = None, np.inf
    for size in range(0, min(mi, n) + 1):
        for S in itertools.combinations(range(mi), size):
            A = np.vstack([A_eq, A_in[list(S)]]) if (qe or S) else np.zeros((0, n))
            b = np.concatenate([b_eq, b_in[list(S)]])
            k = A.shape[0]
            K = np.zeros((n + k, n + k))
            K[:n, :n] = H
            K[:n, n:] = A.T
            K[n:, :n] = A
            rhs = np.concatenate([-c, b])
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            if np.linalg.norm(K @ sol - rhs, np.inf) > 1e-8:
                continue
            x, lam = sol[:n], sol[n + qe:]
            if mi and np.max(A_in @ x - b_in) > 1e-9:
                continue
            if size and np.min(lam) < -1e-9:
                continue
            f = 0.5 * float(x @ H @ x) + float(c @ x)
            if f < best_f - 1e-12:
                best_x, best_f = x, f
    return best_x, best_f


def random_feasible_qp(rng):
    n = int(rng.integers(2, 6))
    qe = int(rng.integers(0, min(2, n - 1) + 1))
    mi = int(rng.integers(1, 7))
    M = rng.uniform(-1, 1, (n, n))
    H = M @ M.T + (0.5 + rng.uniform()) * np.eye(n)
    c = rng.uniform(-2, 2, n)
    x0 = rng.uniform(-1, 1, n)
    A_eq = rng.uniform(-1, 1, (qe, n))
    b_eq = A_eq @ x0
    A_in = rng.uniform(-1, 1, (mi, n))
    slack = rng.uniform(0, 1, mi)
    slack[rng.uniform(size=mi) < 0.3] = 0.0  # some rows start active
    b_in = A_in @ x0 + slack
    return H, c, A_eq, b_eq, A_in, b_in


def test_qp_matches_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(30):
        H, c, A_eq, b_eq, A_in, b_in = random_feasible_qp(rng)
        res = solve_qp(H, c, A_eq, b_eq, A_in, b_in)
        assert res.status == "optimal"
        x_ref, f_ref = qp_by_enumeration(H, c, A_eq, b_eq, A_in, b_in)
        assert x_ref is not None
        f = 0.5 * float(res.p @ H @ res.p) + float(c @ res.p)
        assert abs(f - f_ref) <= 1e-8 * max(1.0, abs(f_ref))
        assert np.allclose(res.p, x_ref, atol=1e-6)
        # multipliers certify the point
        stat = H @ res.p + c + A_eq.T @ res.lam_eq + A_in.T @ res.lam_in
        assert np.linalg.norm(stat, np.inf) <= 1e-7
        assert np.min(res.lam_in, initial=0.0) >= -1e-9


def test_qp_warm_start_agrees():
    rng = np.random.default_rng(5)
    H, c, A_eq, b_eq, A_in, b_in = random_feasible_qp(rng)
    cold = solve_qp(H, c, A_eq, b_eq, A_in, b_in)
    warm = solve_qp(H, c, A_eq, b_eq, A_in, b_in, working=cold.working)
    assert np.allclose(cold.p, warm.p, atol=1e-9)


def quadratic_distance_nlp():
    # min (w0-1)^2 + (w1-2)^2  s.t.  w0 + w1 = 1
    obj = PolyFunction(
        2,
        [(1.0, ((0, 2),)), (-2.0, ((0, 1),)), (1.0, ((1, 2),)), (-4.0, ((1, 1),)), (5.0, ())],
    )
    return Nlp(
        num_vars=2,
        blocks={"w": (0, 2)},
        objective=obj,
        eq=[PolyFunction.affine(2, [1.0, 1.0], -1.0)],
    )


def test_equality_constrained_minimum():
    res = solve_nlp(quadratic_distance_nlp(), np.array([5.0, -3.0]), tol=1e-10)
    assert res.status == KKT_POINT
    assert np.allclose(res.x, [0.0, 1.0], atol=1e-8)
    assert np.isclose(res.objective, 2.0, atol=1e-9)
    assert np.isclose(res.eq_duals[0], 2.0, atol=1e-7)


def test_bound_multiplier_reported():
    # min (w0+2)^2 with w0 >= 0 pins the bound; its multiplier is f'(0) = 4
    obj = PolyFunction(1, [(1.0, ((0, 2),)), (4.0, ((0, 1),)), (4.0, ())])
    p = Nlp(num_vars=1, blocks={"w": (0, 1)}, objective=obj, lo=np.array([0.0]))
    res = solve_nlp(p, np.array([3.0]), tol=1e-10)
    assert res.status == KKT_POINT
    assert np.allclose(res.x, [0.0], atol=1e-9)
    assert np.isclose(res.lo_duals[0], 4.0, atol=1e-6)
    stat, feas, comp, sign = res.kkt_residual
    assert max(stat, feas, comp, sign) <= 1e-8


def test_merit_never_increases_on_clean_steps():
    res = solve_nlp(quadratic_distance_nlp(), np.array([8.0, 9.0]), tol=1e-10)
    steps = [e for e in res.trace if e["kind"] == "step"]
    assert steps
    for e in steps:
        assert e["merit_after"] <= e["merit_before"] + 1e-9 * max(1.0, abs(e["merit_before"]))


def relative_violation(p, w):
    """Row violations scaled by each row's evaluation magnitude at w."""
    worst = 0.0
    for row in p.ineq:
        worst = max(worst, float(row.eval(w)) / max(1.0, row.eval_abs(w)))
    for row in p.eq:
        worst = max(worst, abs(float(row.eval(w))) / max(1.0, row.eval_abs(w)))
    worst = max(worst, float(np.max(np.r_[0.0, p.lo - w, w - p.hi])))
    return worst


def test_dual_program_descent_ray_is_detected():
    bp = paper_examples()["cubic_strict"].bp
    wdp = build_wdp(bp)
    k = 2.0
    w0 = np.array([0.0, k, -k, 3 * k * k + 1.0])
    res = solve_nlp(wdp, w0, tol=1e-8)
    assert res.status == UNBOUNDED
    assert res.objective <= -1e6
    assert relative_violation(wdp, res.x) <= 1e-3


def test_flat_lower_objective_keeps_origin():
    bp = paper_examples()["cubic_flat"].bp
    mdp = build_mdp(bp)
    res = solve_nlp(mdp, np.zeros(4), tol=1e-8)
    assert np.allclose(res.x, 0.0, atol=1e-6)
    assert abs(res.objective) <= 1e-8
    assert mdp.max_violation(res.x) <= 1e-8


def test_iteration_cap_returns_finite_point():
    bp = paper_examples()["cubic_strict"].bp
    wdp = build_wdp(bp)
    res = solve_nlp(wdp, np.zeros(4), tol=1e-8, options=SqpOptions(max_iters=2))
    assert res.status in (ITER_LIMIT, KKT_POINT, LINE_SEARCH_FAIL, UNBOUNDED)
    assert res.iterations <= 2
    assert np.all(np.isfinite(res.x))
    assert np.isfinite(res.objective)


def test_deterministic_resolve():
    bp = paper_examples()["quadratic_corner"].bp
    mdp = build_mdp(bp)
    w0 = np.full(mdp.num_vars, 0.25)
    a = solve_nlp(mdp, w0, tol=1e-8)
    b = solve_nlp(mdp, w0, tol=1e-8)
    assert a.status == b.status
    assert (a.x == b.x).all()
    assert a.objective == b.objective
