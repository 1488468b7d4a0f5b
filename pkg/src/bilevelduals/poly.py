"""Exact multivariate polynomials with analytic derivatives.

Every objective and constraint handled by this package is a polynomial of
total degree at most four. That class is closed under all constructions used
here: Lagrangian assembly, dual stationarity rows, and complementarity
products of multipliers with affine constraints. Keeping the representation
exact means gradients and Hessians carry no discretization error, which the
optimality certificates rely on.

A polynomial is stored as a canonical term list: (coefficient, exponents)
pairs where exponents is a sorted tuple of (variable index, power) entries,
duplicates merged and zero coefficients dropped.
"""

from __future__ import annotations

import numpy as np

MAX_DEGREE = 4


def _canonical_terms(num_vars, terms):
    merged = {}
    for coef, exps in terms:
        coef = float(coef)
        if not np.isfinite(coef):
            raise ValueError("polynomial coefficient must be finite")
        if isinstance(exps, dict):
            items = exps.items()
        else:
            items = exps
        acc = {}
        for var, exp in items:
            var = int(var)
            exp = int(exp)
            if exp == 0:
                continue
            if exp < 0:
                raise ValueError("negative exponent")
            if not 0 <= var < num_vars:
                raise ValueError(f"variable index {var} out of range for {num_vars} variables")
            acc[var] = acc.get(var, 0) + exp
        total = sum(acc.values())
        if total > MAX_DEGREE:
            raise ValueError(f"total degree {total} exceeds the supported maximum {MAX_DEGREE}")
        key = tuple(sorted(acc.items()))
        merged[key] = merged.get(key, 0.0) + coef
    out = [(c, k) for k, c in merged.items() if c != 0.0]
    out.sort(key=lambda t: t[1])
    return tuple(out)


class _Bundle:
    """Vectorized evaluator for a batch of monomial terms.

    Terms are flattened into numpy arrays once; evaluation is a power, a
    segmented product and a weighted bincount. `out` maps each term to a slot
    of the result vector (None collapses everything to a scalar).
    """

    __slots__ = ("size", "coefs", "out", "pair_var", "pair_exp", "seg_starts", "seg_term")

    def __init__(self, entries, size):
        # entries: list of (coef, pairs, out_index)
        self.size = size
        self.coefs = np.array([e[0] for e in entries], dtype=float)
        self.out = np.array([e[2] for e in entries], dtype=np.intp) if size else None
        pair_var, pair_exp, seg_starts, seg_term = [], [], [], []
        pos = 0
        for tid, (_, pairs, _) in enumerate(entries):
            if pairs:
                seg_starts.append(pos)
                seg_term.append(tid)
                for var, exp in pairs:
                    pair_var.append(var)
                    pair_exp.append(exp)
                    pos += 1
        self.pair_var = np.array(pair_var, dtype=np.intp)
        self.pair_exp = np.array(pair_exp, dtype=float)
        self.seg_starts = np.array(seg_starts, dtype=np.intp)
        self.seg_term = np.array(seg_term, dtype=np.intp)

    def values(self, point, absolute=False):
        vals = self.coefs.copy()
        if len(self.seg_starts):
            factors = point[self.pair_var] ** self.pair_exp
            prods = np.multiply.reduceat(factors, self.seg_starts)
            vals[self.seg_term] *= prods
        if absolute:
            vals = np.abs(vals)
        if self.size == 0:
            return float(vals.sum())
        return np.bincount(self.out, weights=vals, minlength=self.size)


class PolyFunction:
    """Immutable polynomial in `num_vars` real variables, total degree <= 4."""

    __slots__ = ("num_vars", "terms", "_eval_b", "_grad_b", "_hess_b", "_affine")

    def __init__(self, num_vars, terms=()):
        if num_vars < 0:
            raise ValueError("num_vars must be nonnegative")
        object.__setattr__(self, "num_vars", int(num_vars))
        object.__setattr__(self, "terms", _canonical_terms(num_vars, terms))
        object.__setattr__(self, "_eval_b", None)
        object.__setattr__(self, "_grad_b", None)
        object.__setattr__(self, "_hess_b", None)
        object.__setattr__(self, "_affine", None)

    def __setattr__(self, name, value):
        raise AttributeError("PolyFunction is immutable")

    def _set(self, name, value):
        object.__setattr__(self, name, value)

    # ------------------------------------------------------------------
    # construction helpers

    @classmethod
    def constant(cls, num_vars, value):
        return cls(num_vars, [(value, ())])

    @classmethod
    def affine(cls, num_vars, coeffs, const=0.0):
        """Build coeffs . w + const."""
        terms = [(const, ())]
        for i, c in enumerate(np.asarray(coeffs, dtype=float)):
            if c != 0.0:
                terms.append((c, ((i, 1),)))
        return cls(num_vars, terms)

    @classmethod
    def variable(cls, num_vars, index):
        return cls(num_vars, [(1.0, ((index, 1),))])

    # ------------------------------------------------------------------
    # basic queries

    @property
    def degree(self):
        if not self.terms:
            return 0
        return max(sum(e for _, e in pairs) for _, pairs in self.terms)

    @property
    def is_affine(self):
        return self.degree <= 1

    def affine_parts(self):
        """Return (const, coefficient vector); requires an affine polynomial."""
        if self._affine is None:
            if not self.is_affine:
                raise ValueError("polynomial is not affine")
            const = 0.0
            vec = np.zeros(self.num_vars)
            for coef, pairs in self.terms:
                if not pairs:
                    const += coef
                else:
                    vec[pairs[0][0]] += coef
            self._set("_affine", (const, vec))
        return self._affine

    # ------------------------------------------------------------------
    # evaluation

    def _check_point(self, point):
        point = np.asarray(point, dtype=float)
        if point.shape != (self.num_vars,):
            raise ValueError(f"point has shape {point.shape}, expected ({self.num_vars},)")
        return point

    def eval(self, point):
        point = self._check_point(point)
        if self._eval_b is None:
            self._set("_eval_b", _Bundle([(c, p, 0) for c, p in self.terms], 0))
        return self._eval_b.values(point)

    def eval_abs(self, point):
        """Sum of absolute term values: the cancellation scale of eval at this point."""
        point = self._check_point(point)
        if self._eval_b is None:
            self._set("_eval_b", _Bundle([(c, p, 0) for c, p in self.terms], 0))
        return self._eval_b.values(point, absolute=True)

    def grad(self, point):
        point = self._check_point(point)
        if self._grad_b is None:
            entries = []
            for coef, pairs in self.terms:
                for k, (var, exp) in enumerate(pairs):
                    rest = pairs[:k] + ((var, exp - 1),) + pairs[k + 1:]
                    rest = tuple(p for p in rest if p[1] > 0)
                    entries.append((coef * exp, rest, var))
            self._set("_grad_b", _Bundle(entries, self.num_vars))
        return self._grad_b.values(point)

    def hess(self, point):
        point = self._check_point(point)
        n = self.num_vars
        if self._hess_b is None:
            entries = []
            for coef, pairs in self.terms:
                for k, (v, ev) in enumerate(pairs):
                    # diagonal block
                    if ev >= 2:
                        rest = pairs[:k] + ((v, ev - 2),) + pairs[k + 1:]
                        rest = tuple(p for p in rest if p[1] > 0)
                        entries.append((coef * ev * (ev - 1), rest, v * n + v))
                    # mixed blocks, emitted into both symmetric slots
                    for j in range(k + 1, len(pairs)):
                        w, ew = pairs[j]
                        rest = list(pairs)
                        rest[k] = (v, ev - 1)
                        rest[j] = (w, ew - 1)
                        rest = tuple(p for p in rest if p[1] > 0)
                        c = coef * ev * ew
                        entries.append((c, rest, v * n + w))
                        entries.append((c, rest, w * n + v))
            self._set("_hess_b", _Bundle(entries, n * n))
        return self._hess_b.values(point).reshape(n, n)

    # ------------------------------------------------------------------
    # algebra

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = PolyFunction.constant(self.num_vars, other)
        if other.num_vars != self.num_vars:
            raise ValueError("variable count mismatch")
        return PolyFunction(self.num_vars, list(self.terms) + list(other.terms))

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-other)
        return self + other.scale(-1.0)

    def __rsub__(self, other):
        return self.scale(-1.0) + other

    def scale(self, s):
        s = float(s)
        return PolyFunction(self.num_vars, [(c * s, p) for c, p in self.terms])

    def mul_var(self, var):
        """Multiply by the variable with the given index (degree cap enforced)."""
        terms = []
        for coef, pairs in self.terms:
            acc = dict(pairs)
            acc[var] = acc.get(var, 0) + 1
            terms.append((coef, tuple(sorted(acc.items()))))
        return PolyFunction(self.num_vars, terms)

    def differentiate(self, var):
        entries = []
        for coef, pairs in self.terms:
            for k, (v, e) in enumerate(pairs):
                if v == var:
                    rest = pairs[:k] + ((v, e - 1),) + pairs[k + 1:]
                    rest = tuple(p for p in rest if p[1] > 0)
                    entries.append((coef * e, rest))
        return PolyFunction(self.num_vars, entries)

    def embed(self, num_vars, var_map):
        """Renumber variables into a larger space: old index i -> var_map[i]."""
        terms = []
        for coef, pairs in self.terms:
            terms.append((coef, tuple((var_map[v], e) for v, e in pairs)))
        return PolyFunction(num_vars, terms)

    def restrict(self, assignments, keep):
        """Substitute fixed values and project onto the `keep` variables.

        assignments maps variable index to value; keep is the ordered list of
        surviving old indices, which become 0..len(keep)-1 in the result.
        """
        pos = {old: new for new, old in enumerate(keep)}
        terms = []
        for coef, pairs in self.terms:
            c = coef
            out = []
            for v, e in pairs:
                if v in assignments:
                    c *= float(assignments[v]) ** e
                else:
                    out.append((pos[v], e))
            terms.append((c, tuple(out)))
        return PolyFunction(len(keep), terms)

    def to_json(self):
        return [[c, {str(v): e for v, e in pairs}] for c, pairs in self.terms]

    @classmethod
    def from_json(cls, num_vars, data):
        return cls(num_vars, [(c, {int(v): e for v, e in exps.items()}) for c, exps in data])

    def __repr__(self):
        if not self.terms:
            return f"PolyFunction({self.num_vars}, 0)"
        bits = []
        for coef, pairs in self.terms[:6]:
            mono = "*".join(f"w{v}^{e}" if e > 1 else f"w{v}" for v, e in pairs)
            bits.append(f"{coef:+g}" + (f"*{mono}" if mono else ""))
        tail = "..." if len(self.terms) > 6 else ""
        return f"PolyFunction({self.num_vars}, {' '.join(bits)}{tail})"


def compose_lagrangian(f, g, h, u, v):
    """Return f + sum_i u_i g_i + sum_j v_j h_j for numeric multipliers u, v."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if len(u) != len(g) or len(v) != len(h):
        raise ValueError("multiplier length does not match constraint count")
    terms = list(f.terms)
    for ui, gi in zip(u, g):
        if gi.num_vars != f.num_vars:
            raise ValueError("variable count mismatch")
        terms.extend((ui * c, p) for c, p in gi.terms)
    for vj, hj in zip(v, h):
        if hj.num_vars != f.num_vars:
            raise ValueError("variable count mismatch")
        terms.extend((vj * c, p) for c, p in hj.terms)
    return PolyFunction(f.num_vars, terms)
