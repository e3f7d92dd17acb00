"""Sum-of-squares programs compiled to SDPs.

Decision polynomials carry unknown coefficients.  An :class:`AffinePoly` is a
polynomial whose coefficients are affine in those unknowns; every constraint
handed to :class:`SOSProgram` must stay affine (products of two unknown
polynomials are rejected, the caller resolves them by bisection or
alternation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import sdp
from .poly import Monomial, Polynomial, grlex_key, monomials_up_to

FORCING_EPS = 1e-6


class BilinearError(ValueError):
    """Raised when an expression would be quadratic in decision variables."""


class SOSNumericalError(RuntimeError):
    """The SDP solver failed numerically; says nothing about SOS membership."""


# variable keys inside an AffinePoly:
#   None              -> constant part
#   ("y", i)          -> free scalar i
#   ("G", b, i, j)    -> entry (i <= j) of multiplier Gram block b
Key = tuple | None


class AffinePoly:
    """Polynomial with coefficients affine in decision variables."""

    __slots__ = ("nvars", "coeffs", "label")

    def __init__(self, nvars: int, coeffs: dict[Monomial, dict[Key, float]] | None = None,
                 label: str = "expr"):
        self.nvars = nvars
        self.coeffs = coeffs or {}
        self.label = label

    @classmethod
    def const(cls, p: Polynomial, label: str | None = None) -> "AffinePoly":
        return cls(p.nvars, {m: {None: c} for m, c in p.items()}, label or "const")

    def is_constant(self) -> bool:
        return all(set(d) <= {None} for d in self.coeffs.values())

    def variables(self) -> set:
        out = set()
        for d in self.coeffs.values():
            out.update(k for k in d if k is not None)
        return out

    def support(self) -> list[Monomial]:
        return [m for m, d in self.coeffs.items() if any(abs(v) > 0 for v in d.values())]

    @staticmethod
    def _lift(other, nvars: int) -> "AffinePoly":
        if isinstance(other, AffinePoly):
            if other.nvars != nvars:
                raise ValueError(f"dimension mismatch: {other.nvars} vs {nvars}")
            return other
        if isinstance(other, Polynomial):
            if other.nvars != nvars:
                raise ValueError(f"dimension mismatch: {other.nvars} vs {nvars}")
            return AffinePoly.const(other)
        if isinstance(other, (int, float, np.floating, np.integer)):
            return AffinePoly.const(Polynomial.constant(nvars, float(other)))
        raise TypeError(f"cannot combine AffinePoly with {type(other).__name__}")

    def __add__(self, other):
        other = self._lift(other, self.nvars)
        out = {m: dict(d) for m, d in self.coeffs.items()}
        for m, d in other.coeffs.items():
            tgt = out.setdefault(m, {})
            for k, v in d.items():
                tgt[k] = tgt.get(k, 0.0) + v
        return AffinePoly(self.nvars, out, f"({self.label} + {other.label})")

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        other = self._lift(other, self.nvars)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            s = float(other)
            return AffinePoly(self.nvars,
                              {m: {k: v * s for k, v in d.items()} for m, d in self.coeffs.items()},
                              self.label)
        other = self._lift(other, self.nvars)
        if not self.is_constant() and not other.is_constant():
            raise BilinearError(f"product of unknowns: ({self.label}) * ({other.label})")
        if other.is_constant():
            var_side, fixed = self, other
        else:
            var_side, fixed = other, self
        fixed_terms = [(m, d.get(None, 0.0)) for m, d in fixed.coeffs.items()]
        out: dict[Monomial, dict[Key, float]] = {}
        for m1, d1 in var_side.coeffs.items():
            for m2, c2 in fixed_terms:
                if c2 == 0.0:
                    continue
                m = tuple(a + b for a, b in zip(m1, m2))
                tgt = out.setdefault(m, {})
                for k, v in d1.items():
                    tgt[k] = tgt.get(k, 0.0) + v * c2
        return AffinePoly(self.nvars, out, f"{self.label}*{other.label}")

    __rmul__ = __mul__

    def degree(self) -> int:
        return max((sum(m) for m in self.support()), default=-1)

    def evaluate(self, values: dict) -> Polynomial:
        """Substitute numeric values for every decision variable."""
        terms = {}
        for m, d in self.coeffs.items():
            terms[m] = sum(v * (1.0 if k is None else values[k]) for k, v in d.items())
        return Polynomial(self.nvars, terms)


def monomial_basis(nvars: int, max_deg: int, no_constant: bool = False,
                   min_deg: int = 0) -> list[Monomial]:
    """Monomials of degree <= max_deg; ``no_constant`` drops the monomial 1."""
    lo = max(min_deg, 1 if no_constant else 0)
    return monomials_up_to(nvars, max_deg, lo)


def gram_basis_for(support: Sequence[Monomial], nvars: int) -> list[Monomial]:
    """Degree-bounded basis for an SOS representation of a polynomial with this support.

    Lowest-degree terms of a sum of squares come from squares of the lowest
    degree part of the basis, so monomials below half the minimum degree are
    dropped as well.
    """
    if not support:
        return []
    degs = [sum(m) for m in support]
    hi = max(degs) // 2
    lo = min(degs) // 2 + (min(degs) % 2)
    lo = min(lo, hi)
    return monomials_up_to(nvars, hi, lo)


@dataclass
class GramBlock:
    name: str
    basis: list[Monomial]
    role: str  # "multiplier" or "constraint"


@dataclass
class SOSCertificate:
    gram_matrices: list[np.ndarray]
    bases: list[list[Monomial]]
    names: list[str]
    decision_values: dict
    reconstruction_residual: float

    def to_text(self) -> str:
        lines = []
        for name, basis, G in zip(self.names, self.bases, self.gram_matrices):
            lines.append(f"constraint {name}")
            lines.append("basis " + " ".join(".".join(map(str, m)) for m in basis))
            for i in range(len(basis)):
                lines.append("gram " + " ".join(repr(float(G[i, j])) for j in range(i + 1)))
        lines.append(f"residual {self.reconstruction_residual!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SOSCertificate":
        names, bases, grams = [], [], []
        rows: list[list[float]] = []
        residual = math.nan

        def flush():
            if rows:
                n = len(rows)
                G = np.zeros((n, n))
                for i, r in enumerate(rows):
                    for j, v in enumerate(r):
                        G[i, j] = G[j, i] = v
                grams.append(G)
                rows.clear()

        for line in text.splitlines():
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "constraint":
                flush()
                names.append(line.split(" ", 1)[1])
            elif tok[0] == "basis":
                bases.append([tuple(int(a) for a in t.split(".")) for t in tok[1:]])
            elif tok[0] == "gram":
                rows.append([float(t) for t in tok[1:]])
            elif tok[0] == "residual":
                flush()
                residual = float(tok[1])
        flush()
        return cls(grams, bases, names, {}, residual)


@dataclass
class SOSResult:
    status: sdp.Status
    values: dict
    certificate: SOSCertificate | None
    objective: float
    sdp_solution: sdp.SDPSolution | None = None
    instance: sdp.SDPInstance | None = None

    @property
    def feasible(self) -> bool:
        return self.status is sdp.Status.OPTIMAL

    def value(self, expr: AffinePoly) -> Polynomial:
        return expr.evaluate(self.values)

    def scalar(self, expr: AffinePoly) -> float:
        return self.value(expr).coeff((0,) * expr.nvars)


@dataclass
class SOSProgram:
    nvars: int
    n_free: int = 0
    free_names: list[str] = field(default_factory=list)
    blocks: list[GramBlock] = field(default_factory=list)
    sos_constraints: list[tuple[str, AffinePoly]] = field(default_factory=list)
    eq_constraints: list[tuple[str, AffinePoly]] = field(default_factory=list)
    objective: tuple[str, AffinePoly] | None = None

    # -- decision variables -------------------------------------------------
    def free_scalar(self, name: str) -> AffinePoly:
        idx = self.n_free
        self.n_free += 1
        self.free_names.append(name)
        return AffinePoly(self.nvars, {(0,) * self.nvars: {("y", idx): 1.0}}, name)

    def free_poly(self, name: str, degree: int, no_constant: bool = False,
                  min_degree: int = 0, monomials: Sequence[Monomial] | None = None) -> AffinePoly:
        """Polynomial with free coefficients on every monomial up to ``degree``.

        An explicit ``monomials`` list overrides the degree arguments.
        """
        coeffs: dict[Monomial, dict[Key, float]] = {}
        if monomials is None:
            monomials = monomial_basis(self.nvars, degree, no_constant, min_degree)
        for mono in monomials:
            idx = self.n_free
            self.n_free += 1
            self.free_names.append(f"{name}[{mono}]")
            coeffs[mono] = {("y", idx): 1.0}
        return AffinePoly(self.nvars, coeffs, name)

    def sos_poly(self, name: str, degree: int) -> AffinePoly:
        """SOS multiplier of the given (even) degree, as basis^T G basis with G PSD."""
        if degree % 2:
            raise ValueError(f"SOS multiplier {name} needs even degree, got {degree}")
        basis = monomial_basis(self.nvars, degree // 2)
        b = len(self.blocks)
        self.blocks.append(GramBlock(name, basis, "multiplier"))
        coeffs: dict[Monomial, dict[Key, float]] = {}
        for j, mj in enumerate(basis):
            for i in range(j + 1):
                m = tuple(a + c for a, c in zip(basis[i], mj))
                coeffs.setdefault(m, {})[("G", b, i, j)] = 1.0 if i == j else 2.0
        return AffinePoly(self.nvars, coeffs, name)

    # -- constraints --------------------------------------------------------
    def add_sos(self, expr: AffinePoly, name: str | None = None) -> None:
        self.sos_constraints.append((name or expr.label, expr))

    def add_eq(self, expr: AffinePoly, name: str | None = None) -> None:
        """Require every coefficient of ``expr`` to vanish."""
        self.eq_constraints.append((name or expr.label, expr))

    def maximize(self, expr: AffinePoly) -> None:
        self.objective = ("max", expr)

    def minimize(self, expr: AffinePoly) -> None:
        self.objective = ("min", expr)

    # -- compilation --------------------------------------------------------
    def compile(self):
        """Build the SDP.  Returns (instance, constraint Gram blocks)."""
        all_blocks = list(self.blocks)
        con_blocks: list[tuple[int, list[Monomial]]] = []
        equations: list[tuple[dict, float]] = []

        def key_map(k):
            if k[0] == "y":
                return k
            return ("X", k[1], k[2], k[3])

        def emit(lin: dict[Key, float], gram: dict | None = None):
            func: dict = {}
            rhs = 0.0
            for k, v in lin.items():
                if k is None:
                    rhs -= v
                else:
                    kk = key_map(k)
                    func[kk] = func.get(kk, 0.0) + v
            for k, v in (gram or {}).items():
                func[k] = func.get(k, 0.0) + v
            func = {k: v for k, v in func.items() if v != 0.0}
            if not func:
                if abs(rhs) > 1e-12:
                    # constant nonzero coefficient that nothing can absorb
                    equations.append(({}, rhs))
                return
            equations.append((func, rhs))

        for name, expr in self.sos_constraints:
            support = expr.support()
            basis = gram_basis_for(support, self.nvars)
            b = len(all_blocks)
            gram_terms: dict[Monomial, dict] = {}
            if basis:
                all_blocks.append(GramBlock(name, basis, "constraint"))
                con_blocks.append((b, basis))
                for j, mj in enumerate(basis):
                    for i in range(j + 1):
                        m = tuple(a + c for a, c in zip(basis[i], mj))
                        gram_terms.setdefault(m, {})[("X", b, i, j)] = 1.0 if i == j else 2.0
            else:
                con_blocks.append((-1, []))
            monos = set(support) | set(gram_terms)
            for m in sorted(monos, key=grlex_key):
                # basis' G basis - expr = 0
                lin = {k: -v for k, v in expr.coeffs.get(m, {}).items()}
                emit(lin, gram_terms.get(m))

        for name, expr in self.eq_constraints:
            for m in sorted(expr.support(), key=grlex_key):
                emit(dict(expr.coeffs[m]))

        objective: dict = {}
        if self.objective is not None:
            sense, expr = self.objective
            if expr.degree() > 0:
                raise ValueError("objective must be a scalar expression")
            sign = -1.0 if sense == "max" else 1.0
            for k, v in expr.coeffs.get((0,) * self.nvars, {}).items():
                if k is not None:
                    kk = key_map(k)
                    objective[kk] = objective.get(kk, 0.0) + sign * v
        sizes = [len(bl.basis) for bl in all_blocks]
        # an equation with no variables and nonzero rhs is infeasible as stated
        instance = sdp.SDPInstance.from_functionals(sizes or [1], self.n_free, objective, equations)
        self._compiled_blocks = all_blocks
        return instance, con_blocks

    def solve(self, tol: float = sdp.DEFAULT_TOL, max_iter: int = sdp.DEFAULT_MAX_ITER) -> SOSResult:
        instance, con_blocks = self.compile()
        sol = sdp.solve(instance, tol=tol, max_iter=max_iter)
        values: dict = {}
        if sol.vector is not None and sol.vector.size:
            for i in range(self.n_free):
                values[("y", i)] = float(sol.vector[instance.layout.free(i)])
            for b, bl in enumerate(self.blocks):
                n = len(bl.basis)
                for j in range(n):
                    for i in range(j + 1):
                        values[("G", b, i, j)] = float(sol.vector[instance.layout.entry(b, i, j)])
        cert = None
        obj = math.nan
        if sol.status is sdp.Status.OPTIMAL:
            grams, bases, names = [], [], []
            worst = 0.0
            for (name, expr), (b, basis) in zip(self.sos_constraints, con_blocks):
                target = expr.evaluate(values)
                G = sol.block_values[b] if b >= 0 else np.zeros((0, 0))
                recon = gram_polynomial(G, basis, self.nvars)
                worst = max(worst, (recon - target).max_abs_coeff())
                grams.append(G)
                bases.append(basis)
                names.append(name)
            cert = SOSCertificate(grams, bases, names, values, worst)
            if self.objective is not None:
                obj = self.objective[1].evaluate(values).coeff((0,) * self.nvars)
        return SOSResult(sol.status, values, cert, obj, sol, instance)


def gram_polynomial(G: np.ndarray, basis: Sequence[Monomial], nvars: int) -> Polynomial:
    """basis^T G basis."""
    terms: dict[Monomial, float] = {}
    for i, mi in enumerate(basis):
        for j, mj in enumerate(basis):
            m = tuple(a + b for a, b in zip(mi, mj))
            terms[m] = terms.get(m, 0.0) + G[i, j]
    return Polynomial(nvars, terms)


@dataclass
class SOSCheck:
    is_sos: bool
    certificate: SOSCertificate | None
    status: sdp.Status
    farkas: sdp.FarkasCertificate | None = None
    instance: sdp.SDPInstance | None = None

    def infeasibility_verified(self, tol: float = 1e-6) -> bool:
        """True when the rejection is backed by a checked Farkas certificate."""
        return self.farkas is not None and self.farkas.verify(self.instance, tol)


def check_sos(p: Polynomial, tol: float = sdp.DEFAULT_TOL) -> SOSCheck:
    """Decide whether ``p`` is a sum of squares.

    Raises :class:`SOSNumericalError` when the solver cannot decide.
    """
    if p.degree() % 2:
        return SOSCheck(False, None, sdp.Status.INFEASIBLE)
    prog = SOSProgram(p.nvars)
    prog.add_sos(AffinePoly.const(p, "p"), "p")
    res = prog.solve(tol=tol)
    if res.status is sdp.Status.OPTIMAL:
        return SOSCheck(True, res.certificate, res.status)
    if res.status is sdp.Status.INFEASIBLE:
        return SOSCheck(False, None, res.status, res.sdp_solution.farkas, res.instance)
    raise SOSNumericalError(f"SDP solve ended with status {res.status.value}")


def forcing_term(nvars: int, eps: float = FORCING_EPS) -> Polynomial:
    """eps * sum z_i^2, the positive-definite margin used in the Lyapunov conditions."""
    return Polynomial(nvars, {tuple(2 if k == i else 0 for k in range(nvars)): eps
                              for i in range(nvars)})


# -- Positivstellensatz templates -------------------------------------------

@dataclass(frozen=True)
class MultiplierDegrees:
    """Multiplier degrees.

    Expansion defaults: quadratic V, s8 quadratic, the other multipliers
    constant, except lam3.  The constraint polynomials have a linear term at
    the origin, so a constant lam3 is forced to zero by the decrease condition
    (whose constant term vanishes); it then has to hold off the manifold too,
    including along a neutral direction of the chart linearisation.  A
    quadratic lam3 restores the use of the manifold.
    """
    V: int = 2
    # initial estimate (first, bilinear-in-beta stage)
    init_s2: int = 0
    init_s6: int = 2
    init_lam1: int = 0
    init_lam2: int = 2
    # local containment
    s1: int = 2
    s2_local: int = 2
    s3: int = 0
    s4: int = 0
    lam_local1: int = 2
    lam_local2: int = 0
    # expanding interior
    s2: int = 0
    s6: int = 0
    s8: int = 2
    s9: int = 0
    s13: int = 0
    lam1: int = 0
    lam2: int = 0
    lam3: int = 2
    lam4: int = 0


def _lam_g(prog: SOSProgram, name: str, g: Sequence[Polynomial], degree: int):
    total = None
    lams = []
    for k, gk in enumerate(g):
        lam = prog.free_poly(f"{name}_{k}", degree)
        lams.append(lam)
        term = lam * gk
        total = term if total is None else total + term
    if total is None:
        total = AffinePoly.const(Polynomial.zero(prog.nvars), "0")
    return total, lams


def _as_affine(x, nvars: int) -> AffinePoly:
    return AffinePoly._lift(x, nvars)


def assemble_psatz_constraint(prog: SOSProgram, template: str, *, g: Sequence[Polynomial] = (),
                              V=None, Vdot=None, W=None, p=None, beta=None, c=None,
                              degrees: MultiplierDegrees = MultiplierDegrees(),
                              fixed: dict | None = None, margin: float = 0.0,
                              eps: float = FORCING_EPS) -> dict:
    """Add the SOS constraints of one certificate template to ``prog``.

    ``template`` is one of:

    ``"initial"``
        V - l1 - s2 (beta - p) - lam1.g  and  -s6 (beta - p) - Vdot - lam2.g - l2
    ``"local"``
        -s1 (c - V) - s2 (p - beta) - s3 (c - V)(p - beta) - lam1.g - (p - beta)^2
        and, when a successor W is given, -s4 (c - V) - lam2.g - (W - 1 + margin)
    ``"expand"``
        s2 V - lam1.g - l1,  -s6 (beta - p) - lam2.g - (V - 1),
        -s8 (1 - V) - s9 Vdot - lam3.g - l2
    ``"successor"``
        -s13 (1 - V) - lam4.g - (W - 1 + margin)

    The last one is the set-emptiness condition {V <= 1, W >= 1, W != 1} after
    fixing the free cone terms to zero and taking the power of (W - 1) as one.

    Multipliers named in ``fixed`` are treated as given polynomials instead of
    unknowns.  Returns a dict with the created multipliers and expressions.
    """
    n = prog.nvars
    fixed = fixed or {}
    out: dict = {"exprs": {}}
    l1 = forcing_term(n, eps)
    l2 = forcing_term(n, eps)

    def mult(name: str, degree: int) -> AffinePoly:
        if name in fixed:
            return _as_affine(fixed[name], n)
        s = prog.sos_poly(name, degree)
        out[name] = s
        return s

    def lam(name: str, degree: int):
        total, lams = _lam_g(prog, name, g, degree)
        out[name] = lams
        return total

    Va = _as_affine(V, n) if V is not None else None
    if template == "initial":
        s2 = mult("s2", degrees.init_s2)
        s6 = mult("s6", degrees.init_s6)
        e1 = Va - l1 - s2 * (_as_affine(p, n) * -1.0 + beta) - lam("lam1", degrees.init_lam1)
        e2 = (s6 * (_as_affine(p, n) * -1.0 + beta)) * -1.0 - _as_affine(Vdot, n) \
            - lam("lam2", degrees.init_lam2) - l2
        exprs = {"positivity": e1, "decrease": e2}
    elif template == "local":
        s1 = mult("s1", degrees.s1)
        s2 = mult("s2", degrees.s2_local)
        s3 = mult("s3", degrees.s3)
        cV = Va * -1.0 + c          # c - V, fixed
        pb = _as_affine(p, n) - beta  # p - beta, fixed
        pb_poly = pb.evaluate({})
        e1 = (s1 * cV) * -1.0 - s2 * pb - s3 * (cV.evaluate({}) * pb_poly) \
            - lam("lam1", degrees.lam_local1) - AffinePoly.const(pb_poly * pb_poly)
        exprs = {"shape": e1}
        if W is not None:
            s4 = mult("s4", degrees.s4)
            e2 = (s4 * cV) * -1.0 - lam("lam2", degrees.lam_local2) \
                - (_as_affine(W, n) - 1.0 + margin)
            exprs["successor"] = e2
    elif template == "expand":
        s2 = mult("s2", degrees.s2)
        s6 = mult("s6", degrees.s6)
        s8 = mult("s8", degrees.s8)
        s9 = mult("s9", degrees.s9)
        e1 = s2 * Va - lam("lam1", degrees.lam1) - l1
        e2 = (s6 * (_as_affine(p, n) * -1.0 + beta)) * -1.0 - lam("lam2", degrees.lam2) - (Va - 1.0)
        e3 = (s8 * (Va * -1.0 + 1.0)) * -1.0 - s9 * _as_affine(Vdot, n) - lam("lam3", degrees.lam3) - l2
        exprs = {"positivity": e1, "shape": e2, "decrease": e3}
    elif template == "successor":
        s13 = mult("s13", degrees.s13)
        e = (s13 * (Va * -1.0 + 1.0)) * -1.0 - lam("lam4", degrees.lam4) - (_as_affine(W, n) - 1.0 + margin)
        exprs = {"successor": e}
    else:
        raise ValueError(f"unknown template {template!r}")
    for name, e in exprs.items():
        prog.add_sos(e, name)
    out["exprs"] = exprs
    return out
