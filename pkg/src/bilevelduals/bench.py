"""Experiment orchestration and the worked-example fixture corpus.

`paper_examples` bundles four small bilevel programs with documented optima
and certificate data; they double as integration fixtures for the solvers
and diagnostics. `run_suite` drives the random linear benchmark across
relaxation schemes and `summarize` reduces its rows to feasible/dominant
counts per scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import BilevelProgram
from .poly import PolyFunction


@dataclass(frozen=True)
class ExampleCase:
    name: str
    description: str
    bp: BilevelProgram
    expected: dict = field(default_factory=dict)


def _cubic_strict() -> ExampleCase:
    # min -x - y  s.t. x <= 1,  y solving  min y^3 + y  s.t. y >= x
    F = PolyFunction.affine(2, [-1.0, -1.0])
    omega = [PolyFunction.affine(2, [1.0, 0.0], -1.0)]
    f = PolyFunction(2, [(1.0, ((1, 3),)), (1.0, ((1, 1),))])
    g = [PolyFunction.affine(2, [1.0, -1.0])]
    bp = BilevelProgram(1, 1, F, f, omega_ineq=omega, g=g)
    return ExampleCase(
        "cubic_strict",
        "strictly increasing cubic lower level; unique optimum on the boundary",
        bp,
        expected={
            "objective": -2.0,
            "point_xy": (1.0, 1.0),
            "mdp_point": (1.0, 1.0, 1.0, 4.0),  # (x, y, z, u)
            "wdp_unbounded": True,
        },
    )


def _cubic_flat() -> ExampleCase:
    # min 2x - y  s.t. x >= 0,  y solving  min y^3  s.t. y >= x
    F = PolyFunction.affine(2, [2.0, -1.0])
    omega = [PolyFunction.affine(2, [-1.0, 0.0])]
    f = PolyFunction(2, [(1.0, ((1, 3),))])
    g = [PolyFunction.affine(2, [1.0, -1.0])]
    bp = BilevelProgram(1, 1, F, f, omega_ineq=omega, g=g)
    return ExampleCase(
        "cubic_flat",
        "vanishing lower-level curvature at the optimum; no KKT point upstairs",
        bp,
        expected={
            "objective": 0.0,
            "point_xy": (0.0, 0.0),
            "mdp_point": (0.0, 0.0, 0.0, 0.0),
        },
    )


def _cubic_wells() -> ExampleCase:
    # min (x + y)^2  s.t. -1 <= x <= 1,  y solving  min y^3 - 3y  s.t. y >= x
    F = PolyFunction(2, [(1.0, ((0, 2),)), (2.0, ((0, 1), (1, 1))), (1.0, ((1, 2),))])
    omega = [
        PolyFunction.affine(2, [1.0, 0.0], -1.0),
        PolyFunction.affine(2, [-1.0, 0.0], -1.0),
    ]
    f = PolyFunction(2, [(1.0, ((1, 3),)), (-3.0, ((1, 1),))])
    g = [PolyFunction.affine(2, [1.0, -1.0])]
    bp = BilevelProgram(1, 1, F, f, omega_ineq=omega, g=g)
    return ExampleCase(
        "cubic_wells",
        "two lower-level wells; dual copy settles in the other well",
        bp,
        expected={
            "objective": 0.0,
            "point_xy": (-1.0, 1.0),
            "mdp_point": (-1.0, 1.0, -2.0, 9.0),
            "mfcq_direction": (1.0, 0.0, 1.0, -12.0),
        },
    )


def _quadratic_corner() -> ExampleCase:
    # min x^2 - (2y + 1)^2  s.t. x <= 0,
    # y solving  min (y - 1)^2  s.t. 3x - y - 3 <= 0, x + y - 1 <= 0
    F = PolyFunction(2, [(1.0, ((0, 2),)), (-4.0, ((1, 2),)), (-4.0, ((1, 1),)), (-1.0, ())])
    omega = [PolyFunction.affine(2, [1.0, 0.0])]
    f = PolyFunction(2, [(1.0, ((1, 2),)), (-2.0, ((1, 1),)), (1.0, ())])
    g = [
        PolyFunction.affine(2, [3.0, -1.0], -3.0),
        PolyFunction.affine(2, [1.0, 1.0], -1.0),
    ]
    bp = BilevelProgram(1, 1, F, f, omega_ineq=omega, g=g)
    return ExampleCase(
        "quadratic_corner",
        "strongly stationary corner with a degenerate active constraint",
        bp,
        expected={
            "objective": -9.0,
            "point_xy": (0.0, 1.0),
            "s_point": (0.0, 1.0, 0.0, 0.0),  # (x, y, u1, u2)
            "mdp_not_kkt_point": (0.0, 1.0, 1.0, 0.0, 0.0),  # (x, y, z, u1, u2)
        },
    )


def paper_examples() -> dict:
    """Fixture corpus: four worked examples with documented optima."""
    cases = [_cubic_strict(), _cubic_flat(), _cubic_wells(), _quadratic_corner()]
    return {c.name: c for c in cases}
