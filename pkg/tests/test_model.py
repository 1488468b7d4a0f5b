import itertools

import numpy as np
import pytest

from bilevelduals import model
from bilevelduals.poly import PolyFunction


def small_linear(rng, n=2, m=2, l=2, p=3):
    def mat(r, c):
        return rng.uniform(-1.0, 1.0, size=(r, c))

    return model.LinearBilevel(
        c1=rng.uniform(-1, 1, n), c2=rng.uniform(-1, 1, m),
        A1=mat(l, n), b1=rng.uniform(0.2, 1.0, l),
        d2=rng.uniform(-1, 1, m),
        A2=mat(p, n), B2=mat(p, m), b2=rng.uniform(-0.5, 1.0, p),
        bl=np.full(m, -10.0), bu=np.full(m, 10.0),
    )


def enum_lower(c, A, b):
    """Vertex-enumeration oracle for min c.y s.t. A y <= b over a polytope.

    Only valid when the feasible set is bounded (box rows included).
    """
    m = len(c)
    best = None
    for combo in itertools.combinations(range(len(b)), m):
        Ab = A[list(combo)]
        if abs(np.linalg.det(Ab)) < 1e-10:
            continue
        y = np.linalg.solve(Ab, b[list(combo)])
        if np.all(A @ y <= b + 1e-9):
            val = float(c @ y)
            if best is None or val < best[0] - 1e-12:
                best = (val, y)
    return best


def lower_rows_at(lin, x):
    A = np.vstack([lin.B2, np.eye(lin.m), -np.eye(lin.m)])
    b = np.concatenate([lin.b2 - lin.A2 @ x, lin.bu, -lin.bl])
    return A, b


def test_to_general_row_order():
    rng = np.random.default_rng(7)
    lin = small_linear(rng)
    bp = model.to_general(lin)
    assert (bp.n, bp.m) == (lin.n, lin.m)
    assert bp.p == lin.p_general == lin.p + 2 * lin.m
    assert len(bp.omega_ineq) == lin.l and not bp.omega_eq and not bp.h
    w = rng.uniform(-2, 2, bp.n + bp.m)
    x, y = w[: bp.n], w[bp.n:]
    structural = lin.A2 @ x + lin.B2 @ y - lin.b2
    lifted = np.array([row.eval(w) for row in bp.g])
    assert np.allclose(lifted[: lin.p], structural, atol=1e-12)
    assert np.allclose(lifted[lin.p: lin.p + lin.m], y - lin.bu, atol=1e-12)
    assert np.allclose(lifted[lin.p + lin.m:], lin.bl - y, atol=1e-12)
    assert np.allclose(bp.F.grad(w), np.concatenate([lin.c1, lin.c2]), atol=1e-12)
    assert np.allclose(bp.f.grad(w), np.concatenate([np.zeros(lin.n), lin.d2]), atol=1e-12)


def test_lower_solve_matches_vertex_enumeration():
    rng = np.random.default_rng(20240813)
    solved = 0
    for _ in range(40):
        lin = small_linear(rng)
        bp = model.to_general(lin)
        x = rng.uniform(-1.5, 1.5, lin.n)
        res = model.lower_solve(bp, x)
        A, b = lower_rows_at(lin, x)
        oracle = enum_lower(lin.d2, A, b)
        if oracle is None:
            assert res.status == model.LOWER_INFEASIBLE
            assert model.value_function(lin, x) == np.inf
            continue
        assert res.status == model.LOWER_OPTIMAL
        assert res.value == pytest.approx(oracle[0], abs=1e-7)
        assert model.value_function(lin, x) == pytest.approx(oracle[0], abs=1e-7)
        solved += 1
    assert solved >= 10


def test_lower_solve_multipliers_are_kkt():
    rng = np.random.default_rng(99)
    checked = 0
    for _ in range(25):
        lin = small_linear(rng)
        bp = model.to_general(lin)
        x = rng.uniform(-1.0, 1.0, lin.n)
        res = model.lower_solve(bp, x)
        if res.status != model.LOWER_OPTIMAL:
            continue
        w = np.concatenate([x, res.y])
        gvals = np.array([row.eval(w) for row in bp.g])
        grads = np.array([row.grad(w)[bp.n:] for row in bp.g])
        stat = bp.f.grad(w)[bp.n:] + grads.T @ res.u
        assert np.all(res.u >= -1e-9)
        assert np.linalg.norm(stat, np.inf) <= 1e-8
        assert np.max(np.abs(res.u * gvals)) <= 1e-7
        assert np.all(gvals <= 1e-9)
        checked += 1
    assert checked >= 10


def test_lower_solve_unbounded_without_box():
    F = PolyFunction.affine(2, [1.0, 1.0])
    f = PolyFunction.affine(2, [0.0, -1.0])
    g = [PolyFunction.affine(2, [-1.0, -1.0])]  # y >= -x only
    bp = model.BilevelProgram(1, 1, F, f, g=g)
    res = model.lower_solve(bp, [0.0])
    assert res.status == model.LOWER_UNBOUNDED
    assert res.value == -np.inf


def test_lower_solve_rejects_bad_x():
    rng = np.random.default_rng(3)
    bp = model.to_general(small_linear(rng))
    with pytest.raises(ValueError):
        model.lower_solve(bp, [0.0])


def test_linear_validation():
    rng = np.random.default_rng(5)
    lin = small_linear(rng)
    with pytest.raises(ValueError):
        model.LinearBilevel(
            c1=lin.c1, c2=lin.c2, A1=lin.A1, b1=lin.b1, d2=lin.d2,
            A2=lin.A2, B2=lin.B2, b2=lin.b2, bl=lin.bu, bu=lin.bl,
        )
    with pytest.raises(ValueError):
        model.LinearBilevel(
            c1=lin.c1, c2=lin.c2, A1=lin.A1, b1=lin.b1, d2=lin.d2[:-1],
            A2=lin.A2, B2=lin.B2, b2=lin.b2, bl=lin.bl, bu=lin.bu,
        )


def test_linear_json_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    lin = small_linear(rng)
    path = tmp_path / "inst.json"
    model.save_instance(lin, path)
    back = model.load_instance(path)
    assert isinstance(back, model.LinearBilevel)
    for name in ("c1", "c2", "A1", "b1", "d2", "A2", "B2", "b2", "bl", "bu"):
        assert np.array_equal(getattr(back, name), getattr(lin, name))


def test_general_json_roundtrip(tmp_path):
    F = PolyFunction(2, [(1.0, ((0, 2),)), (-4.0, ((1, 2),)), (-4.0, ((1, 1),)), (-1.0, ())])
    f = PolyFunction(2, [(1.0, ((1, 2),)), (-2.0, ((1, 1),)), (1.0, ())])
    g = [PolyFunction.affine(2, [3.0, -1.0], -3.0), PolyFunction.affine(2, [1.0, 1.0], -1.0)]
    omega = [PolyFunction.affine(2, [1.0, 0.0])]
    bp = model.BilevelProgram(1, 1, F, f, omega_ineq=omega, g=g)
    path = tmp_path / "general.json"
    model.save_instance(bp, path)
    back = model.load_instance(path)
    assert isinstance(back, model.BilevelProgram)
    assert back.F.terms == bp.F.terms
    assert back.f.terms == bp.f.terms
    assert [p.terms for p in back.g] == [p.terms for p in bp.g]
    assert [p.terms for p in back.omega_ineq] == [p.terms for p in bp.omega_ineq]


def test_unknown_instance_type():
    with pytest.raises(ValueError):
        model.instance_from_json('{"type": "mystery"}')
