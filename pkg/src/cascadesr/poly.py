"""Sparse multivariate polynomials with real coefficients.

A :class:`Polynomial` maps exponent tuples to float coefficients.  Values are
immutable; every operation returns a new polynomial with tiny coefficients
pruned away.
"""
from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

PRUNE_TOL = 1e-14

Monomial = tuple[int, ...]


def grlex_key(mono: Monomial) -> tuple:
    """Sort key: total degree first, then lexicographic with x1 most significant."""
    return (sum(mono), tuple(-a for a in mono))


class Polynomial:
    """Sparse polynomial in ``nvars`` variables."""

    __slots__ = ("nvars", "_terms", "_hash")

    def __init__(self, nvars: int, terms: Mapping[Monomial, float] | None = None,
                 prune: float = PRUNE_TOL):
        if nvars < 0:
            raise ValueError("nvars must be nonnegative")
        clean: dict[Monomial, float] = {}
        for mono, coef in (terms or {}).items():
            mono = tuple(int(a) for a in mono)
            if len(mono) != nvars:
                raise ValueError(f"exponent {mono} has length {len(mono)}, expected {nvars}")
            if any(a < 0 for a in mono):
                raise ValueError(f"negative exponent in {mono}")
            coef = float(coef)
            if abs(coef) > prune:
                clean[mono] = clean.get(mono, 0.0) + coef
        self.nvars = nvars
        self._terms = {m: c for m, c in clean.items() if abs(c) > prune}
        self._hash = None

    # -- constructors -------------------------------------------------------
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def var(cls, nvars: int, index: int, coef: float = 1.0) -> "Polynomial":
        mono = [0] * nvars
        mono[index] = 1
        return cls(nvars, {tuple(mono): coef})

    @classmethod
    def variables(cls, nvars: int) -> list["Polynomial"]:
        return [cls.var(nvars, i) for i in range(nvars)]

    @classmethod
    def linear(cls, coeffs: Sequence[float], const: float = 0.0) -> "Polynomial":
        n = len(coeffs)
        terms = {(0,) * n: const}
        for i, a in enumerate(coeffs):
            mono = [0] * n
            mono[i] = 1
            terms[tuple(mono)] = a
        return cls(n, terms)

    @classmethod
    def quadratic_form(cls, P: np.ndarray, vars_idx: Sequence[int] | None = None,
                       nvars: int | None = None) -> "Polynomial":
        """x^T P x where x are the variables listed in ``vars_idx``."""
        P = np.asarray(P, dtype=float)
        k = P.shape[0]
        idx = list(range(k)) if vars_idx is None else list(vars_idx)
        n = k if nvars is None else nvars
        terms: dict[Monomial, float] = {}
        for a in range(k):
            for b in range(k):
                mono = [0] * n
                mono[idx[a]] += 1
                mono[idx[b]] += 1
                m = tuple(mono)
                terms[m] = terms.get(m, 0.0) + P[a, b]
        return cls(n, terms)

    # -- basic protocol -----------------------------------------------------
    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coeff(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self._terms), default=-1)

    def min_degree(self) -> int:
        return min((sum(m) for m in self._terms), default=-1)

    def monomials(self) -> list[Monomial]:
        return sorted(self._terms, key=grlex_key)

    def _check(self, other: "Polynomial") -> None:
        if self.nvars != other.nvars:
            raise ValueError(f"dimension mismatch: {self.nvars} vs {other.nvars} variables")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        return NotImplemented

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self._terms)
        for m, c in other._terms.items():
            terms[m] = terms.get(m, 0.0) + c
        return Polynomial(self.nvars, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial(self.nvars, {m: c * float(other) for m, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: dict[Monomial, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                terms[m] = terms.get(m, 0.0) + c1 * c2
        return Polynomial(self.nvars, terms)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float, np.floating, np.integer)):
            return NotImplemented
        return self * (1.0 / float(other))

    def __pow__(self, k: int):
        if k < 0 or int(k) != k:
            raise ValueError("only nonnegative integer powers")
        result = Polynomial.constant(self.nvars, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.nvars, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        return (self - other).max_abs_coeff() <= tol

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # -- evaluation ---------------------------------------------------------
    def __call__(self, point) -> float:
        return self.eval(point)

    def eval(self, point) -> float:
        x = np.asarray(point, dtype=float)
        if x.shape != (self.nvars,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.nvars},)")
        total = 0.0
        for mono, c in self._terms.items():
            term = c
            for xi, a in zip(x, mono):
                if a:
                    term *= xi ** a
            total += term
        return total

    def eval_many(self, points) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape (N, nvars))."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        if X.shape[1] != self.nvars:
            raise ValueError(f"points have {X.shape[1]} columns, expected {self.nvars}")
        if not self._terms:
            return np.zeros(X.shape[0])
        monos = np.array(list(self._terms), dtype=int).reshape(len(self._terms), self.nvars)
        coefs = np.array(list(self._terms.values()))
        out = np.zeros(X.shape[0])
        for mono, c in zip(monos, coefs):
            term = np.full(X.shape[0], c)
            for j in np.nonzero(mono)[0]:
                term = term * X[:, j] ** mono[j]
            out += term
        return out

    # -- calculus / substitution -------------------------------------------
    def diff(self, index: int) -> "Polynomial":
        terms: dict[Monomial, float] = {}
        for mono, c in self._terms.items():
            a = mono[index]
            if a:
                m = list(mono)
                m[index] -= 1
                terms[tuple(m)] = c * a
        return Polynomial(self.nvars, terms)

    def grad(self) -> list["Polynomial"]:
        return [self.diff(i) for i in range(self.nvars)]

    def compose_affine(self, A, b=None) -> "Polynomial":
        """Substitute z = A z' + b, returning a polynomial in z'."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != self.nvars:
            raise ValueError(f"A has {A.shape[0]} rows, expected {self.nvars}")
        b = np.zeros(self.nvars) if b is None else np.asarray(b, dtype=float)
        if b.shape != (self.nvars,):
            raise ValueError(f"b has shape {b.shape}, expected ({self.nvars},)")
        m = A.shape[1]
        lin = [Polynomial.linear(A[i], b[i]) for i in range(self.nvars)]
        powers: dict[tuple[int, int], Polynomial] = {}

        def power(i: int, a: int) -> Polynomial:
            key = (i, a)
            if key not in powers:
                powers[key] = lin[i] ** a
            return powers[key]

        out = Polynomial.zero(m)
        for mono, c in self._terms.items():
            term = Polynomial.constant(m, c)
            for i, a in enumerate(mono):
                if a:
                    term = term * power(i, a)
            out = out + term
        return out

    def substitute(self, polys: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute polynomial ``polys[i]`` for variable i."""
        if len(polys) != self.nvars:
            raise ValueError("need one polynomial per variable")
        m = polys[0].nvars
        out = Polynomial.zero(m)
        for mono, c in self._terms.items():
            term = Polynomial.constant(m, c)
            for i, a in enumerate(mono):
                if a:
                    term = term * polys[i] ** a
            out = out + term
        return out

    # -- text form ----------------------------------------------------------
    def to_text(self) -> str:
        """Canonical ``c * x1^a1 x2^a2`` terms joined by `` + ``, graded-lex order."""
        if not self._terms:
            return "0"
        parts = []
        for mono in self.monomials():
            c = repr(self._terms[mono])
            factors = [f"x{i + 1}^{a}" for i, a in enumerate(mono) if a]
            parts.append(c if not factors else f"{c} * {' '.join(factors)}")
        return " + ".join(parts)

    @classmethod
    def from_text(cls, text: str, nvars: int) -> "Polynomial":
        text = text.strip()
        if text == "0":
            return cls.zero(nvars)
        terms: dict[Monomial, float] = {}
        for part in text.split(" + "):
            coef_str, _, rest = part.partition(" * ")
            mono = [0] * nvars
            for factor in rest.split():
                name, _, exp = factor.partition("^")
                mono[int(name[1:]) - 1] += int(exp)
            m = tuple(mono)
            terms[m] = terms.get(m, 0.0) + float(coef_str)
        return cls(nvars, terms, prune=0.0)

    def __repr__(self) -> str:
        return f"Polynomial({self.nvars}, {self.to_text()})"


def add(a: Polynomial, b: Polynomial) -> Polynomial:
    return a + b


def mul(a: Polynomial, b: Polynomial) -> Polynomial:
    return a * b


def evaluate(p: Polynomial, point) -> float:
    return p.eval(point)


def grad(p: Polynomial) -> list[Polynomial]:
    return p.grad()


def compose_affine(p: Polynomial, A, b=None) -> Polynomial:
    return p.compose_affine(A, b)


def lie_derivative(V: Polynomial, field: Sequence[Polynomial]) -> Polynomial:
    """dV/dt = grad(V) . f along the polynomial vector field ``field``."""
    if len(field) != V.nvars:
        raise ValueError("vector field length must equal nvars")
    out = Polynomial.zero(V.nvars)
    for dv, fi in zip(V.grad(), field):
        if not dv.is_zero() and not fi.is_zero():
            out = out + dv * fi
    return out


def monomials_up_to(nvars: int, max_deg: int, min_deg: int = 0) -> list[Monomial]:
    """All exponent vectors with min_deg <= total degree <= max_deg, graded-lex."""
    out: list[Monomial] = []

    def rec(prefix: list[int], remaining: int, left: int):
        if left == 0:
            if sum(prefix) >= min_deg:
                out.append(tuple(prefix))
            return
        for a in range(remaining + 1):
            rec(prefix + [a], remaining - a, left - 1)

    if max_deg >= 0:
        rec([], max_deg, nvars)
    return sorted(out, key=grlex_key)


def sum_polys(polys: Iterable[Polynomial], nvars: int) -> Polynomial:
    terms: dict[Monomial, float] = {}
    for p in polys:
        for m, c in p.items():
            terms[m] = terms.get(m, 0.0) + c
    return Polynomial(nvars, terms)
