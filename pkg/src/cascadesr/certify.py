"""Nested Lyapunov level sets for a fixed cascade sequence.

For a sequence of switching states ``s_1 -> ... -> s_N`` the stages are
certified backwards.  Stage ``i`` looks for a quadratic V (in the chart of
``s_i``) such that ``{V <= 1}`` is positively invariant for ``f_{s_i}``, lies
in the region where ``V`` decreases, and is contained in the unit level set of
the already certified stage ``i+1`` (pulled into this chart with the affine
chart map).  A trajectory starting in the innermost set then converges to the
final equilibrium whatever the trip instants are.

Each stage runs three SOS searches:

1. an initial estimate: V positive and decreasing on ``{p <= beta}``, with
   beta maximised by bisection;
2. local containment: the largest ``c`` with ``{V <= c}`` inside ``{p <= beta}``
   and inside the successor's unit set; V is rescaled to level one;
3. expansion: alternate between multipliers (V fixed, beta by bisection) and
   V (multipliers fixed, beta maximised directly), then replace the shape p
   with the current V and repeat until the level set stops growing.

Every returned certificate is checked by sampling before it is handed out.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.special
from scipy.stats import qmc

from . import sdp
from .cascade import CascadeSequence
from .poly import Polynomial, lie_derivative
from .psys import Chart, PolySystem, ReducedSystem
from .sos import (AffinePoly, MultiplierDegrees, SOSProgram, SOSResult, _as_affine, _lam_g,
                  assemble_psatz_constraint, forcing_term)

log = logging.getLogger(__name__)


class Uncertifiable(RuntimeError):
    def __init__(self, message: str, state_id: int | None = None, step: str = ""):
        super().__init__(message)
        self.state_id = state_id
        self.step = step


@dataclass(frozen=True)
class CertifyOptions:
    degrees: MultiplierDegrees = MultiplierDegrees()
    eps: float = 1e-6
    beta_bracket: tuple[float, float] = (1e-6, 1e3)
    c_bracket: tuple[float, float] = (1e-6, 1e2)
    bisection_steps: int = 40
    bisection_rtol: float = 1e-4
    inner_tol: float = 1e-3
    outer_tol: float = 1e-3
    max_inner: int = 8
    max_outer: int = 6
    margin: float = 1e-6
    backoff: float = 0.02
    seed_retries: int = 4
    sdp_tol: float = sdp.DEFAULT_TOL
    n_samples: int = 10_000
    sample_tol: float = 1e-8
    seed: int = 0
    # shape level used by the first containment program;
    # None means "the beta of the initial estimate"
    local_beta: float | None = None


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------

def bisect_max(feasible: Callable[[float], object | None], lo: float, hi: float,
               steps: int = 40, geometric: bool = True, rtol: float = 0.0):
    """Largest value in [lo, hi] for which ``feasible`` returns a non-None result.

    At most ``steps`` halvings; stops early once ``hi / lo - 1 <= rtol``.
    Returns (value, result) or (None, None) when even ``lo`` fails.
    """
    res = feasible(hi)
    if res is not None:
        return hi, res
    best = feasible(lo)
    if best is None:
        return None, None
    a, b = lo, hi
    for _ in range(steps):
        if a > 0 and b / a - 1.0 <= rtol:
            break
        mid = math.sqrt(a * b) if geometric and a > 0 else 0.5 * (a + b)
        r = feasible(mid)
        if r is not None:
            a, best = mid, r
        else:
            b = mid
    return a, best


def shape_function(system: PolySystem) -> Polynomial:
    """Quadratic shape from the tangent linearisation's Lyapunov equation.

    ``p = x^T P x`` with ``x`` the speeds and sine coordinates, where
    ``A^T P + P A = -I``; each ``(1 - cos)`` coordinate gets ``P_ii z_c^2`` so
    that p is positive on the whole circle, not only near the equilibrium.
    Systems without a chart use plain ``z^T P z``.
    """
    A = system.linearization()
    n = system.nvars
    ch = system.chart
    if ch is None:
        P = scipy.linalg.solve_continuous_lyapunov(A.T, -np.eye(n))
        return Polynomial.quadratic_form(0.5 * (P + P.T))
    idx = list(range(ch.m)) + [ch.s_index(i) for i in range(ch.m)]
    Ar = A[np.ix_(idx, idx)]
    P = scipy.linalg.solve_continuous_lyapunov(Ar.T, -np.eye(len(idx)))
    P = 0.5 * (P + P.T)
    p = Polynomial.quadratic_form(P, idx, n)
    for i in range(ch.m):
        k = idx.index(ch.s_index(i))
        p = p + Polynomial.var(n, ch.c_index(i)) ** 2 * P[k, k]
    return p


def _origin(n: int) -> tuple[int, ...]:
    return (0,) * n


def _v_monomials(system: PolySystem, degree: int) -> list[tuple[int, ...]]:
    """Monomials allowed in V.

    No constant, and no linear term except in the ``1 - cos`` coordinates
    (which are quadratic along the manifold).  Squared sine coordinates are
    dropped as well: on the manifold ``s^2 = 2c - c^2``, so keeping them would
    leave V defined only up to multiples of the constraints.
    """
    from .sos import monomial_basis
    n = system.nvars
    ch = system.chart
    c_idx = set() if ch is None else {ch.c_index(i) for i in range(ch.m)}
    s_sq = set() if ch is None else {
        tuple(2 if k == ch.s_index(i) else 0 for k in range(n)) for i in range(ch.m)}
    out = []
    for mono in monomial_basis(n, degree, no_constant=True):
        if sum(mono) == 1 and mono.index(1) not in c_idx:
            continue
        if mono in s_sq:
            continue
        out.append(mono)
    return out


def _new_V(prog: SOSProgram, system: PolySystem, degree: int) -> AffinePoly:
    return prog.free_poly("V", degree, monomials=_v_monomials(system, degree))


def tangent_trace(V, system: PolySystem):
    """Trace of V's Hessian along the manifold at the equilibrium, halved.

    Squared speed and sine coordinates count once; a linear ``1 - cos`` term
    counts half (it behaves like theta^2 / 2).  Works on Polynomial and
    AffinePoly alike since it is linear in the coefficients.
    """
    n = system.nvars
    ch = system.chart
    c_idx = set() if ch is None else {ch.c_index(i) for i in range(ch.m)}
    unit = lambda i, k: tuple(k if j == i else 0 for j in range(n))
    if isinstance(V, Polynomial):
        total = 0.0
        for i in range(n):
            total += V.coeff(unit(i, 1)) / 2 if i in c_idx else V.coeff(unit(i, 2))
        return total
    acc: dict = {}
    for i in range(n):
        mono, w = (unit(i, 1), 0.5) if i in c_idx else (unit(i, 2), 1.0)
        for k, v in V.coeffs.get(mono, {}).items():
            acc[k] = acc.get(k, 0.0) + w * v
    return AffinePoly(n, {_origin(n): acc})


def _solve(prog: SOSProgram, opts: CertifyOptions) -> SOSResult | None:
    res = prog.solve(tol=opts.sdp_tol)
    return res if res.feasible else None


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

@dataclass
class LyapunovCertificate:
    state_id: int
    V: Polynomial
    beta_achieved: float
    sep: np.ndarray | None = None
    successor: "LyapunovCertificate | None" = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def chart(self) -> Chart | None:
        return Chart(self.sep) if self.sep is not None else None

    def to_z(self, x) -> np.ndarray:
        ch = self.chart
        return ch.to_z(x) if ch is not None else np.asarray(x, dtype=float)

    def to_x(self, z) -> np.ndarray:
        ch = self.chart
        return ch.to_x(z) if ch is not None else np.asarray(z, dtype=float)

    def value(self, x) -> np.ndarray:
        """V at physical states (rows of ``x``)."""
        return self.V.eval_many(np.atleast_2d(self.to_z(x)))

    def contains(self, x) -> np.ndarray:
        return self.value(x) <= 1.0

    def to_dict(self) -> dict:
        return {
            "state": self.state_id,
            "sep": None if self.sep is None else [float(a) for a in self.sep],
            "nvars": self.V.nvars,
            "V": self.V.to_text(),
            "beta": float(self.beta_achieved),
            "successor_state": None if self.successor is None else self.successor.state_id,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LyapunovCertificate":
        return cls(d["state"], Polynomial.from_text(d["V"], d["nvars"]), d["beta"],
                   None if d["sep"] is None else np.array(d["sep"]),
                   diagnostics=d.get("diagnostics", {}))


@dataclass
class CertificateChain:
    sequence: CascadeSequence
    stages: list[LyapunovCertificate]  # ordered sigma_N -> sigma_1
    certified: bool = True
    failed_state: int | None = None
    reason: str = ""

    @property
    def innermost(self) -> LyapunovCertificate | None:
        return self.stages[-1] if self.certified and self.stages else None

    def contains(self, x) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        if not self.certified:
            return np.zeros(X.shape[0], dtype=bool)
        return self.innermost.contains(X)

    def to_dict(self) -> dict:
        return {
            "trip_order": list(self.sequence.trip_order),
            "states": self.sequence.states,
            "certified": self.certified,
            "failed_state": self.failed_state,
            "reason": self.reason,
            "stages": [c.to_dict() for c in self.stages],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, n_rg: int) -> "CertificateChain":
        seq = CascadeSequence(tuple(d["trip_order"]), n_rg)
        stages = [LyapunovCertificate.from_dict(s) for s in d["stages"]]
        for a, b in zip(stages[1:], stages[:-1]):
            a.successor = b
        return cls(seq, stages, d["certified"], d.get("failed_state"), d.get("reason", ""))


# ---------------------------------------------------------------------------
# sampling on the constraint manifold
# ---------------------------------------------------------------------------

def _directions(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.where(rng.random(count) < 0.5, -1.0, 1.0)[:, None]
    sob = qmc.Sobol(d=dim, scramble=True, seed=rng)
    # draw a full power-of-two block to keep the sequence balanced
    u = sob.random_base2(max(1, int(np.ceil(np.log2(count)))))[:count]
    g = np.sqrt(2.0) * scipy.special.erfinv(2.0 * np.clip(u, 1e-12, 1 - 1e-12) - 1.0)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def ray_boundary(V: Polynomial, to_z: Callable[[np.ndarray], np.ndarray], dirs: np.ndarray,
                 r_max: float = 40.0, n_grid: int = 200, iters: int = 80):
    """First crossing of V = 1 along each ray ``r * d`` from the equilibrium.

    Returns radii (nan where no crossing was found up to ``r_max``).
    """
    r_grid = np.linspace(0.0, r_max, n_grid)
    nd, dim = dirs.shape
    pts = (r_grid[None, :, None] * dirs[:, None, :]).reshape(-1, dim)
    vals = V.eval_many(to_z(pts)).reshape(nd, n_grid)
    above = vals > 1.0
    has = above.any(axis=1)
    first = np.where(has, above.argmax(axis=1), 0)
    lo = np.where(has, r_grid[np.maximum(first - 1, 0)], np.nan)
    hi = np.where(has, r_grid[first], np.nan)
    ok = np.nonzero(has)[0]
    a, b = lo[ok].copy(), hi[ok].copy()
    d = dirs[ok]
    for _ in range(iters):
        mid = 0.5 * (a + b)
        v = V.eval_many(to_z(mid[:, None] * d))
        inside = v <= 1.0
        a = np.where(inside, mid, a)
        b = np.where(inside, b, mid)
    radii = np.full(nd, np.nan)
    # land on whichever end is closer to the level
    va = V.eval_many(to_z(a[:, None] * d))
    vb = V.eval_many(to_z(b[:, None] * d))
    radii[ok] = np.where(np.abs(va - 1.0) <= np.abs(vb - 1.0), a, b)
    return radii


def sample_sublevel(cert: LyapunovCertificate, count: int, rng: np.random.Generator,
                    boundary: bool = False, include_boundary: bool = True) -> np.ndarray:
    """Physical states in {V <= 1} (or on {V = 1}) reached along rays from the equilibrium.

    Angles are sampled first and recast, so every point lies exactly on the
    constraint manifold.
    """
    dim = cert.V.nvars if cert.sep is None else 2 * len(cert.sep)
    center = np.zeros(dim) if cert.sep is None else np.concatenate([cert.sep, np.zeros(len(cert.sep))])
    out = []
    need = count
    tries = 0
    while need > 0 and tries < 20:
        dirs = _directions(max(need, 16) + 8, dim, rng)
        radii = ray_boundary(cert.V, lambda P: cert.to_z(P + center), dirs)
        good = np.isfinite(radii)
        dirs, radii = dirs[good], radii[good]
        if boundary:
            pts = center + radii[:, None] * dirs
        else:
            u = rng.random(len(radii))
            if include_boundary:
                u[: max(1, len(u) // 10)] = 1.0
            pts = center + (u * radii)[:, None] * dirs
        out.append(pts[:need])
        need -= len(pts[:need])
        tries += 1
    return np.concatenate(out, axis=0) if out else np.zeros((0, dim))


@dataclass
class ValidationReport:
    n_points: int
    positivity_violations: int
    decrease_violations: int
    nesting_violations: int
    max_successor_value: float

    @property
    def ok(self) -> bool:
        return not (self.positivity_violations or self.decrease_violations or self.nesting_violations)


def validate_certificate(cert: LyapunovCertificate, system: PolySystem,
                         successor: LyapunovCertificate | None, n: int,
                         rng: np.random.Generator, tol: float = 1e-8) -> ValidationReport:
    X = sample_sublevel(cert, n, rng)
    Z = np.atleast_2d(cert.to_z(X))
    nz = np.linalg.norm(Z, axis=1) > 1e-6
    Z = Z[nz]
    X = X[nz]
    v = cert.V.eval_many(Z)
    vdot = lie_derivative(cert.V, system.f).eval_many(Z)
    pos_bad = int(np.sum(v <= 0.0))
    dec_bad = int(np.sum(vdot >= 0.0))
    nest_bad = 0
    wmax = -np.inf
    if successor is not None:
        w = successor.value(X)
        wmax = float(w.max(initial=-np.inf))
        nest_bad = int(np.sum(w > 1.0 + tol))
    return ValidationReport(len(Z), pos_bad, dec_bad, nest_bad, wmax)


# ---------------------------------------------------------------------------
# SOS stages
# ---------------------------------------------------------------------------

def initial_estimate(system: PolySystem, p: Polynomial, opts: CertifyOptions = CertifyOptions()):
    """Largest beta with a V positive and decreasing on {p <= beta}.  Returns (V, beta)."""
    n = system.nvars
    deg = opts.degrees

    def feasible(beta: float):
        prog = SOSProgram(n)
        V = _new_V(prog, system, deg.V)
        Vdot = _lie_affine(V, system.f)
        assemble_psatz_constraint(prog, "initial", g=system.g, V=V, Vdot=Vdot, p=p, beta=beta,
                                  degrees=deg, eps=opts.eps)
        prog.add_eq(tangent_trace(V, system) - tangent_trace(p, system), "scale")
        res = _solve(prog, opts)
        return None if res is None else res.value(V)

    lo, hi = opts.beta_bracket
    beta, V = bisect_max(feasible, lo, hi, opts.bisection_steps, rtol=opts.bisection_rtol)
    if beta is None:
        raise Uncertifiable("no certificate at requested degree", system.state_id, "initial")
    return V, beta


def _lie_affine(V: AffinePoly, f: Sequence[Polynomial]) -> AffinePoly:
    """grad(V) . f for V with unknown coefficients."""
    n = V.nvars
    out = AffinePoly.const(Polynomial.zero(n))
    for mono, d in V.coeffs.items():
        term = Polynomial(n, {mono: 1.0})
        lie = lie_derivative(term, f)
        for k, v in d.items():
            out = out + AffinePoly(n, {m: {k: v * c} for m, c in lie.items()})
    out.label = "Vdot"
    return out


def local_containment(V: Polynomial, system: PolySystem, successor: Polynomial | None = None,
                      p: Polynomial | None = None, beta: float | None = None,
                      opts: CertifyOptions = CertifyOptions(), c_max: float = 1.0):
    """Largest c <= c_max with {V <= c} inside {p <= beta} and the successor's unit set.

    Returns (V / c, c).
    """
    n = system.nvars
    deg = opts.degrees
    beta_local = opts.local_beta if opts.local_beta is not None else beta

    def feasible(c: float):
        prog = SOSProgram(n)
        if p is not None:
            assemble_psatz_constraint(prog, "local", g=system.g, V=V, p=p, beta=beta_local, c=c,
                                      W=successor, degrees=deg, margin=opts.margin, eps=opts.eps)
        elif successor is not None:
            assemble_psatz_constraint(prog, "successor", g=system.g, V=V * (1.0 / c), W=successor,
                                      degrees=deg, margin=opts.margin, eps=opts.eps)
        else:
            return True
        return _solve(prog, opts)

    lo = opts.c_bracket[0]
    c, _ = bisect_max(feasible, lo, c_max, opts.bisection_steps, rtol=opts.bisection_rtol)
    if c is None:
        raise Uncertifiable("containment impossible at this degree", system.state_id, "local")
    return V * (1.0 / c), c


def shape_beta(V: Polynomial, system: PolySystem, p: Polynomial, opts: CertifyOptions):
    """Largest beta with {p <= beta} inside {V <= 1}; returns (beta, s6).

    With a constant s6 the condition ``-s6 (beta - p) - lam.g - (V - 1)`` is
    divided by s6 (which must be positive since V is unbounded), leaving
    ``p - beta - t (V - 1) - lam'.g`` with ``t = 1/s6 >= 0``: linear in beta,
    so one SDP replaces the bisection.  Other degrees bisect on beta.
    """
    n = system.nvars
    deg = opts.degrees
    lo, hi = opts.beta_bracket
    if deg.s6 == 0:
        prog = SOSProgram(n)
        beta = prog.free_scalar("beta")
        t = prog.sos_poly("t", 0)
        lam, _ = _lam_g(prog, "lam2", system.g, deg.lam2)
        prog.add_sos(_as_affine(p, n) - beta - t * (V - 1.0) - lam, "shape")
        prog.add_sos(beta * -1.0 + hi, "bracket")
        prog.maximize(beta)
        res = _solve(prog, opts)
        if res is None:
            return None, None
        b, tv = res.scalar(beta), res.scalar(t)
        if not (np.isfinite(b) and b >= lo and tv > 1e-12):
            return None, None
        return b, Polynomial.constant(n, 1.0 / tv)

    def feasible(beta: float):
        prog = SOSProgram(n)
        s6 = prog.sos_poly("s6", deg.s6)
        lam, _ = _lam_g(prog, "lam2", system.g, deg.lam2)
        prog.add_sos((s6 * (_as_affine(p, n) * -1.0 + beta)) * -1.0 - lam - (AffinePoly.const(V) - 1.0), "shape")
        res = _solve(prog, opts)
        return None if res is None else res.value(s6)

    return bisect_max(feasible, lo, hi, opts.bisection_steps, rtol=opts.bisection_rtol)


def _multiplier_step(V: Polynomial, system: PolySystem, successor: Polynomial | None,
                     opts: CertifyOptions):
    """Positivity, decrease and successor multipliers for a fixed V (None if infeasible)."""
    n = system.nvars
    deg = opts.degrees
    one = Polynomial.constant(n, 1.0)
    prog = SOSProgram(n)
    Vdot = lie_derivative(V, system.f)
    lam1, _ = _lam_g(prog, "lam1", system.g, deg.lam1)
    prog.add_sos(AffinePoly.const(V) - lam1 - forcing_term(n, opts.eps), "positivity")
    s8 = prog.sos_poly("s8", deg.s8)
    lam3, _ = _lam_g(prog, "lam3", system.g, deg.lam3)
    prog.add_sos((s8 * (one - V)) * -1.0 - Vdot - lam3 - forcing_term(n, opts.eps), "decrease")
    s13 = None
    if successor is not None:
        s13 = prog.sos_poly("s13", deg.s13)
        lam4, _ = _lam_g(prog, "lam4", system.g, deg.lam4)
        prog.add_sos((s13 * (one - V)) * -1.0 - lam4 - (AffinePoly.const(successor) - 1.0 + opts.margin),
                     "successor")
    res = _solve(prog, opts)
    if res is None:
        return None
    return {"s8": res.value(s8), "s13": None if s13 is None else res.value(s13)}


def _v_step(system: PolySystem, p: Polynomial, successor: Polynomial | None, mults: dict,
            opts: CertifyOptions, beta_floor: float | None = None):
    """Maximise beta over V with the multipliers fixed.  Returns (V, beta) or None."""
    n = system.nvars
    deg = opts.degrees
    one = Polynomial.constant(n, 1.0)

    def build(fixed_beta: float | None):
        prog = SOSProgram(n)
        V = _new_V(prog, system, deg.V)
        Vdot = _lie_affine(V, system.f)
        beta = prog.free_scalar("beta") if fixed_beta is None else fixed_beta
        lam1, _ = _lam_g(prog, "lam1", system.g, deg.lam1)
        prog.add_sos(V - lam1 - forcing_term(n, opts.eps), "positivity")
        lam2, _ = _lam_g(prog, "lam2", system.g, deg.lam2)
        prog.add_sos((AffinePoly.const(mults["s6"]) * (_as_affine(p, n) * -1.0 + beta)) * -1.0 - lam2 - (V - 1.0), "shape")
        lam3, _ = _lam_g(prog, "lam3", system.g, deg.lam3)
        prog.add_sos((AffinePoly.const(mults["s8"]) * (V * -1.0 + 1.0)) * -1.0 - Vdot - lam3
                     - forcing_term(n, opts.eps), "decrease")
        if successor is not None:
            lam4, _ = _lam_g(prog, "lam4", system.g, deg.lam4)
            prog.add_sos((AffinePoly.const(mults["s13"]) * (V * -1.0 + 1.0)) * -1.0 - lam4
                         - (AffinePoly.const(successor) - 1.0 + opts.margin), "successor")
        if fixed_beta is None:
            prog.maximize(beta)
        return prog, V, beta

    prog, V, beta = build(None)
    res = _solve(prog, opts)
    if res is None:
        return None
    beta_star = res.scalar(beta)
    if not np.isfinite(beta_star) or beta_star <= 0:
        return None
    # back off from the optimum so the next multiplier step sees an interior point
    target = beta_star * (1.0 - opts.backoff)
    if beta_floor is not None:
        target = max(target, min(beta_floor, beta_star))
    prog2, V2, _ = build(target)
    res2 = _solve(prog2, opts)
    if res2 is None:
        return res.value(V), beta_star
    return res2.value(V2), target


def expand_interior(V: Polynomial, system: PolySystem, p: Polynomial,
                    successor: Polynomial | None = None,
                    opts: CertifyOptions = CertifyOptions()):
    """Grow {V <= 1} while keeping it invariant, decreasing and inside the successor set.

    Returns (V, beta, diagnostics) where beta is measured against the original
    shape ``p``; ``diagnostics["beta_history"]`` holds one list of accepted
    betas per outer pass.  Falls back to the best verified iterate if the alternation stalls.
    """
    diag = {"inner_iterations": 0, "outer_iterations": 0, "beta_history": [], "seed_shrink": 0}
    mults = _multiplier_step(V, system, successor, opts)
    # a seed on the edge of feasibility can fail the differently structured
    # expansion conditions; shrink it a few times before giving up
    while mults is None and diag["seed_shrink"] < opts.seed_retries:
        V = V * 2.0
        diag["seed_shrink"] += 1
        mults = _multiplier_step(V, system, successor, opts)
    if mults is None:
        raise Uncertifiable("seed does not admit expansion multipliers", system.state_id, "expand")
    beta0, s6 = shape_beta(V, system, p, opts)
    if beta0 is None:
        raise Uncertifiable("seed level set does not contain any shape level", system.state_id, "expand")
    best_V, best_mults = V, mults
    shape = p
    beta_cur = beta0
    mults["s6"] = s6
    for outer in range(opts.max_outer):
        diag["outer_iterations"] += 1
        start_beta = beta_cur
        diag["beta_history"].append([float(beta_cur)])
        for inner in range(opts.max_inner):
            diag["inner_iterations"] += 1
            step = _v_step(system, shape, successor, best_mults, opts)
            if step is None:
                break
            V_new, _ = step
            m_new = _multiplier_step(V_new, system, successor, opts)
            if m_new is None:
                break
            b_new, s6_new = shape_beta(V_new, system, shape, opts)
            if b_new is None or b_new <= beta_cur:
                break
            improvement = (b_new - beta_cur) / beta_cur
            best_V, best_mults = V_new, m_new
            best_mults["s6"] = s6_new
            beta_cur = b_new
            diag["beta_history"][-1].append(float(b_new))
            if improvement < opts.inner_tol:
                break
        growth = beta_cur / start_beta if outer else None
        if outer and growth is not None and growth - 1.0 < opts.outer_tol:
            break
        # replace the shape by the current V and start again from level one
        shape = best_V
        b_shape, s6_shape = shape_beta(best_V, system, shape, opts)
        if b_shape is None:
            break
        beta_cur = b_shape
        best_mults["s6"] = s6_shape
    beta_p, _ = shape_beta(best_V, system, p, opts)
    diag["beta_seed"] = float(beta0)
    return best_V, float(beta_p if beta_p is not None else beta0), diag


def certify_stage(system: PolySystem, successor: LyapunovCertificate | None,
                  opts: CertifyOptions = CertifyOptions(), sep=None,
                  state_id: int | None = None) -> LyapunovCertificate:
    """Certificate for one switching state, nested in ``successor`` if given.

    ``state_id`` labels the certificate (default: the system's own id).
    """
    sid = system.state_id if state_id is None else state_id
    W = None
    if successor is not None:
        W = successor.V
        if successor.sep is not None and system.chart is not None:
            A, b = system.chart.map_to(Chart(successor.sep))
            W = successor.V.compose_affine(A, b)
    p = shape_function(system)
    V0, beta0 = initial_estimate(system, p, opts)
    V1, c = local_containment(V0, system, W, p, beta0, opts, c_max=opts.c_bracket[1])
    # step back from the bisection edge so the seed is strictly feasible
    V1 = V1 * (1.0 / (1.0 - opts.backoff))
    V, beta, diag = expand_interior(V1, system, p, W, opts)
    diag.update({"beta_initial": float(beta0), "c_local": float(c)})
    sep = system.chart.sep if (sep is None and system.chart is not None) else sep
    cert = LyapunovCertificate(sid, V, beta, None if sep is None else np.asarray(sep), successor, diag)
    rng = np.random.default_rng([opts.seed, sid])
    report = validate_certificate(cert, system, successor, opts.n_samples, rng, opts.sample_tol)
    cert.diagnostics["validation"] = {
        "points": report.n_points,
        "positivity_violations": report.positivity_violations,
        "decrease_violations": report.decrease_violations,
        "nesting_violations": report.nesting_violations,
    }
    if not report.ok:
        raise Uncertifiable(f"sampling check failed: {report}", sid, "validate")
    return cert


def certify_sequence(seq: CascadeSequence, systems: Mapping[int, ReducedSystem | PolySystem],
                     opts: CertifyOptions = CertifyOptions(),
                     cache: dict | None = None) -> CertificateChain:
    """Certify the nested chain for ``seq``, last switching state first.

    ``cache`` (keyed by the state-id suffix) lets sequences sharing a tail reuse
    stages; failures are cached too.
    """
    states = seq.states
    cache = {} if cache is None else cache
    stages: list[LyapunovCertificate] = []
    successor = None
    for i in range(len(states) - 1, -1, -1):
        key = tuple(states[i:])
        if key not in cache:
            sysm = systems[states[i]]
            poly_sys = sysm.recast if isinstance(sysm, ReducedSystem) else sysm
            try:
                cache[key] = certify_stage(poly_sys, successor, opts, state_id=states[i])
            except Uncertifiable as exc:
                cache[key] = exc
        got = cache[key]
        if isinstance(got, Uncertifiable):
            return CertificateChain(seq, stages, False, states[i], f"{got.step}: {got}")
        stages.append(got)
        successor = got
    return CertificateChain(seq, stages)
