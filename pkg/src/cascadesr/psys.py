"""Switched classical power-system model with trippable renewable units.

Loads and online renewable units are converted to constant shunt admittances
(renewables as negative real loads), the network is Kron-reduced onto the
generator internal nodes for every switching state, and the resulting swing
dynamics are written in the reference-machine frame.  The trigonometric model
is recast into a polynomial differential-algebraic system around each state's
stable equilibrium, with affine maps between the charts of different states.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from .poly import Polynomial


class NetworkError(ValueError):
    """Invalid or inconsistent network description."""


class SEPError(RuntimeError):
    """Equilibrium solve failed."""


# ---------------------------------------------------------------------------
# network description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bus:
    id: int
    type: str = "pq"


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0  # total line charging, split half per end


@dataclass(frozen=True)
class Generator:
    bus: int
    M: float
    D: float
    E: float
    xd: float
    Pm: float


@dataclass(frozen=True)
class RGUnit:
    id: int
    bus: int
    P: float


@dataclass(frozen=True)
class Load:
    bus: int
    P: float
    Q: float = 0.0


@dataclass
class NetworkModel:
    buses: list[Bus]
    branches: list[Branch]
    generators: list[Generator]
    rg_units: list[RGUnit] = field(default_factory=list)
    loads: list[Load] = field(default_factory=list)
    base_mva: float = 100.0
    reference: int = -1  # 1-based generator index of the reference machine; -1 means last
    voltage_profile: dict[int, tuple[float, float]] | None = None
    damping_tol: float = 1e-9
    name: str = "network"

    def __post_init__(self):
        if self.generators and self.reference == -1:
            self.reference = len(self.generators)
        self.rg_units = sorted(self.rg_units, key=lambda u: u.id)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_rg(self) -> int:
        return len(self.rg_units)

    @property
    def ref_index(self) -> int:
        """0-based index of the reference generator."""
        return self.reference - 1

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    def validate(self) -> "NetworkModel":
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate bus ids")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise NetworkError(f"branch {br.from_bus}-{br.to_bus} references unknown bus")
            if br.r == 0 and br.x == 0:
                raise NetworkError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        for what, items in (("generator", self.generators), ("rg_unit", self.rg_units), ("load", self.loads)):
            for it in items:
                if it.bus not in known:
                    raise NetworkError(f"{what} at unknown bus {it.bus}")
        if self.n_gen < 2:
            raise NetworkError("need at least two generators (one is the reference)")
        if not 1 <= self.reference <= self.n_gen:
            raise NetworkError(f"reference generator {self.reference} out of range 1..{self.n_gen}")
        for g in self.generators:
            if g.M <= 0 or g.xd <= 0 or g.E <= 0:
                raise NetworkError(f"generator at bus {g.bus}: M, xd and E must be positive")
        ratios = np.array([g.D / g.M for g in self.generators])
        if np.ptp(ratios) > self.damping_tol:
            raise NetworkError(f"damping must be uniform: D/M ratios {ratios.tolist()} differ "
                               f"by more than {self.damping_tol}")
        rg_ids = [u.id for u in self.rg_units]
        if rg_ids != list(range(1, self.n_rg + 1)):
            raise NetworkError(f"rg_units ids must be 1..{self.n_rg}, got {rg_ids}")
        _check_connected(len(self.buses), [(self.bus_index[b.from_bus], self.bus_index[b.to_bus])
                                           for b in self.branches])
        return self

    @property
    def damping_ratio(self) -> float:
        """Uniform D/M [1/s]."""
        return self.generators[0].D / self.generators[0].M

    def rg_penetration(self) -> float:
        total_load = sum(l.P for l in self.loads)
        return sum(u.P for u in self.rg_units) / total_load if total_load else 0.0

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": [asdict(b) for b in self.buses],
            "branches": [asdict(b) for b in self.branches],
            "generators": [asdict(g) for g in self.generators],
            "rg_units": [asdict(u) for u in self.rg_units],
            "loads": [asdict(l) for l in self.loads],
            "options": {"reference": self.reference, "damping_tol": self.damping_tol},
        }
        if self.voltage_profile:
            d["voltage_profile"] = {str(k): list(v) for k, v in self.voltage_profile.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkModel":
        try:
            opts = d.get("options", {})
            profile = d.get("voltage_profile")
            net = cls(
                buses=[Bus(**b) for b in d["buses"]],
                branches=[Branch(**b) for b in d["branches"]],
                generators=[Generator(**g) for g in d["generators"]],
                rg_units=[RGUnit(**u) for u in d.get("rg_units", [])],
                loads=[Load(**l) for l in d.get("loads", [])],
                base_mva=float(d.get("base_mva", 100.0)),
                reference=int(opts.get("reference", -1)),
                damping_tol=float(opts.get("damping_tol", 1e-9)),
                voltage_profile={int(k): (float(v[0]), float(v[1])) for k, v in profile.items()}
                if profile else None,
                name=d.get("name", "network"),
            )
        except (KeyError, TypeError) as exc:
            raise NetworkError(f"malformed system description: {exc}") from exc
        return net.validate()


def load_network(path: str | Path) -> NetworkModel:
    with open(path) as fh:
        return NetworkModel.from_dict(json.load(fh))


def demo_network() -> NetworkModel:
    """Bundled 3-machine, 3-renewable test system (about 50% renewable share)."""
    text = resources.files("cascadesr").joinpath("data/demo3m3rg.json").read_text()
    return NetworkModel.from_dict(json.loads(text))


def _check_connected(n: int, edges: Sequence[tuple[int, int]]) -> None:
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {0} if n else set()
    stack = [0] if n else []
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != n:
        missing = sorted(set(range(n)) - seen)
        raise NetworkError(f"network is not connected; isolated bus positions {missing}")


# ---------------------------------------------------------------------------
# switching states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SwitchingState:
    """Online status of every renewable unit.

    Ids follow the status-string convention: RG 1 is the most significant bit,
    ``"11...1"`` (all online) is id 1 and ``"00...0"`` is id 2**n.
    """
    online: tuple[bool, ...]

    @property
    def n_rg(self) -> int:
        return len(self.online)

    @property
    def id(self) -> int:
        bits = "".join("1" if b else "0" for b in self.online)
        return (2 ** self.n_rg - 1 - int(bits, 2)) + 1 if bits else 1

    @property
    def status(self) -> str:
        return "".join("1" if b else "0" for b in self.online)

    @classmethod
    def from_id(cls, state_id: int, n_rg: int) -> "SwitchingState":
        total = 2 ** n_rg
        if not 1 <= state_id <= total:
            raise ValueError(f"state id {state_id} outside 1..{total}")
        value = total - state_id
        bits = format(value, f"0{n_rg}b") if n_rg else ""
        return cls(tuple(c == "1" for c in bits))

    @classmethod
    def all_online(cls, n_rg: int) -> "SwitchingState":
        return cls((True,) * n_rg)

    def trip(self, rg: int) -> "SwitchingState":
        """State after RG ``rg`` (1-based) goes offline."""
        if not self.online[rg - 1]:
            raise ValueError(f"RG {rg} is already offline")
        online = list(self.online)
        online[rg - 1] = False
        return SwitchingState(tuple(online))

    def __str__(self) -> str:
        return f"state {self.id} ({self.status})"


def all_states(n_rg: int) -> list[SwitchingState]:
    return [SwitchingState.from_id(i, n_rg) for i in range(1, 2 ** n_rg + 1)]


# ---------------------------------------------------------------------------
# admittance matrices
# ---------------------------------------------------------------------------

def node_order(net: NetworkModel) -> list[str]:
    """Labels of the Y-bus rows: network buses, then generator internal nodes."""
    return [f"bus{b.id}" for b in net.buses] + [f"int{k + 1}" for k in range(net.n_gen)]


def build_ybus(net: NetworkModel, sigma: SwitchingState | None = None) -> np.ndarray:
    """Bus admittance matrix including generator internal nodes.

    Loads become ``(P - jQ)/|V|^2`` shunts and online renewables ``-P/|V|^2``
    (negative real loads) at the prefault voltage; offline renewables add nothing.
    """
    nb = len(net.buses)
    n = nb + net.n_gen
    Y = np.zeros((n, n), dtype=complex)
    idx = net.bus_index
    for br in net.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        Y[i, i] += y + 0.5j * br.b
        Y[j, j] += y + 0.5j * br.b
        Y[i, j] -= y
        Y[j, i] -= y
    for k, g in enumerate(net.generators):
        i, e = idx[g.bus], nb + k
        y = 1.0 / complex(0.0, g.xd)
        Y[i, i] += y
        Y[e, e] += y
        Y[i, e] -= y
        Y[e, i] -= y

    def vmag(bus: int) -> float:
        if net.voltage_profile and bus in net.voltage_profile:
            return net.voltage_profile[bus][0]
        return 1.0

    for ld in net.loads:
        Y[idx[ld.bus], idx[ld.bus]] += complex(ld.P, -ld.Q) / vmag(ld.bus) ** 2
    online = sigma.online if sigma is not None else (True,) * net.n_rg
    if len(online) != net.n_rg:
        raise ValueError(f"switching state has {len(online)} units, network has {net.n_rg}")
    for unit, on in zip(net.rg_units, online):
        if on:
            Y[idx[unit.bus], idx[unit.bus]] -= unit.P / vmag(unit.bus) ** 2
    return Y


def kron_reduce(Y: np.ndarray, retained: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Schur complement of ``Y`` onto ``retained`` nodes; returns (G, B)."""
    Y = np.asarray(Y, dtype=complex)
    n = Y.shape[0]
    keep = list(retained)
    elim = [k for k in range(n) if k not in set(keep)]
    if not elim:
        Yr = Y[np.ix_(keep, keep)]
        return Yr.real.copy(), Yr.imag.copy()
    Yee = Y[np.ix_(elim, elim)]
    P, L, U = scipy.linalg.lu(Yee)
    piv = np.abs(np.diag(U))
    scale = max(np.abs(Yee).max(), 1.0)
    if piv.min() <= 1e-12 * scale:
        k = int(np.argmin(piv))
        raise np.linalg.LinAlgError(
            f"singular interior block in Kron reduction: pivot {k} (node {elim[k]}) is {piv[k]:.3e}")
    Yrr = Y[np.ix_(keep, keep)]
    Yre = Y[np.ix_(keep, elim)]
    Yer = Y[np.ix_(elim, keep)]
    Yr = Yrr - Yre @ scipy.linalg.lu_solve(scipy.linalg.lu_factor(Yee), Yer)
    return Yr.real.copy(), Yr.imag.copy()


# ---------------------------------------------------------------------------
# reduced swing dynamics
# ---------------------------------------------------------------------------

@dataclass
class ReducedSystem:
    """Kron-reduced classical model of one switching state.

    Physical state ordering is ``(angles, speeds)``: the relative angles
    ``delta_i - delta_ref`` and relative speeds for every non-reference machine,
    in generator order.
    """
    sigma: SwitchingState | None
    G: np.ndarray
    B: np.ndarray
    M: np.ndarray
    E: np.ndarray
    Pm: np.ndarray
    lam: float
    ref: int
    sep: np.ndarray | None = None

    @property
    def n_gen(self) -> int:
        return len(self.M)

    @property
    def m(self) -> int:
        return self.n_gen - 1

    @property
    def others(self) -> list[int]:
        return [k for k in range(self.n_gen) if k != self.ref]

    @property
    def state_id(self) -> int:
        return self.sigma.id if self.sigma is not None else 1

    def full_angles(self, rel: np.ndarray) -> np.ndarray:
        d = np.zeros(self.n_gen)
        d[self.others] = rel
        return d

    def electrical_power(self, rel_angles) -> np.ndarray:
        d = self.full_angles(np.asarray(rel_angles, dtype=float))
        diff = d[:, None] - d[None, :]
        EE = np.outer(self.E, self.E)
        return np.sum(EE * (self.G * np.cos(diff) + self.B * np.sin(diff)), axis=1)

    def accel(self, rel_angles) -> np.ndarray:
        """Relative accelerations at zero speed (the mismatch the SEP zeroes)."""
        r = self.ref
        a = (self.Pm - self.electrical_power(rel_angles)) / self.M
        return a[self.others] - a[r]

    def accel_jacobian(self, rel_angles) -> np.ndarray:
        d = self.full_angles(np.asarray(rel_angles, dtype=float))
        diff = d[:, None] - d[None, :]
        EE = np.outer(self.E, self.E)
        # dPe_i/dd_j for j != i, and the diagonal from the sum
        # J[i, j] = dPe_i / d delta_j
        J = EE * (self.G * np.sin(diff) - self.B * np.cos(diff))
        np.fill_diagonal(J, 0.0)
        J[np.diag_indices(self.n_gen)] = -J.sum(axis=1)
        dA = -J / self.M[:, None]
        rel = dA[np.ix_(self.others, self.others)] - dA[self.ref][None, self.others]
        return rel

    def vector_field(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = self.m
        if x.shape != (2 * m,):
            raise ValueError(f"state must have length {2 * m}")
        ang, w = x[:m], x[m:]
        return np.concatenate([w, self.accel(ang) - self.lam * w])

    def linearization(self, rel_angles=None) -> np.ndarray:
        ang = self.sep if rel_angles is None else rel_angles
        m = self.m
        A = np.zeros((2 * m, 2 * m))
        A[:m, m:] = np.eye(m)
        A[m:, :m] = self.accel_jacobian(ang)
        A[m:, m:] = -self.lam * np.eye(m)
        return A

    # -- polynomial recasting -------------------------------------------------
    @cached_property
    def chart(self) -> "Chart":
        if self.sep is None:
            raise SEPError("solve the SEP before recasting")
        return Chart(self.sep)

    @cached_property
    def recast(self) -> "PolySystem":
        return recast(self)


def reduce_network(net: NetworkModel, sigma: SwitchingState | None = None) -> ReducedSystem:
    Y = build_ybus(net, sigma)
    nb = len(net.buses)
    G, B = kron_reduce(Y, list(range(nb, nb + net.n_gen)))
    gens = net.generators
    return ReducedSystem(
        sigma=sigma,
        G=G, B=B,
        M=np.array([g.M for g in gens]),
        E=np.array([g.E for g in gens]),
        Pm=np.array([g.Pm for g in gens]),
        lam=net.damping_ratio,
        ref=net.ref_index,
    )


def solve_sep(reduced: ReducedSystem, guess=None, tol: float = 1e-10, max_iter: int = 50) -> np.ndarray:
    """Newton solve of the zero-speed equilibrium; stores and returns the angles."""
    x = np.zeros(reduced.m) if guess is None else np.array(guess, dtype=float)
    for _ in range(max_iter):
        F = reduced.accel(x)
        if np.max(np.abs(F)) <= tol:
            break
        J = reduced.accel_jacobian(x)
        if not np.all(np.isfinite(J)) or abs(np.linalg.det(J)) < 1e-14:
            raise SEPError("singular Jacobian in SEP Newton iteration")
        x = x - np.linalg.solve(J, F)
    else:
        raise SEPError(f"SEP Newton iteration did not converge in {max_iter} iterations")
    # one polishing step
    F = reduced.accel(x)
    if np.max(np.abs(F)) > 0:
        x = x - np.linalg.solve(reduced.accel_jacobian(x), F)
    if np.max(np.abs(reduced.accel(x))) > tol:
        raise SEPError("SEP residual above tolerance")
    reduced.sep = x
    reduced.__dict__.pop("chart", None)
    reduced.__dict__.pop("recast", None)
    return x


def is_stable_equilibrium(reduced: ReducedSystem) -> bool:
    return bool(np.all(np.linalg.eigvals(reduced.linearization()).real < 0))


def smib(p_max: float, p_m: float, M: float, D: float) -> ReducedSystem:
    """Single machine against an infinite bus: ``M w' = Pm - Pmax sin(delta) - D w``.

    Modelled as a two-machine system whose reference has infinite inertia,
    so the chart machinery applies unchanged.  The SEP is ``asin(Pm / Pmax)``.
    """
    if not 0.0 <= p_m < p_max:
        raise ValueError("need 0 <= Pm < Pmax for a stable equilibrium")
    B = np.array([[0.0, p_max], [p_max, 0.0]])
    red = ReducedSystem(sigma=None, G=np.zeros((2, 2)), B=B, M=np.array([M, np.inf]),
                        E=np.ones(2), Pm=np.array([p_m, -p_m]), lam=D / M, ref=1)
    red.sep = np.array([np.arcsin(p_m / p_max)])
    return red


def build_switched_system(net: NetworkModel) -> dict[int, ReducedSystem]:
    """Reduced models and SEPs for every switching state, keyed by state id.

    SEP Newton solves are warm-started along the trip lattice: the all-online
    state starts from zero, every other state from a state with one more unit
    online.
    """
    systems: dict[int, ReducedSystem] = {}
    order = sorted(all_states(net.n_rg), key=lambda s: (-sum(s.online), s.id))
    for s in order:
        red = reduce_network(net, s)
        guess = None
        for k, on in enumerate(s.online):
            if not on:
                parent = list(s.online)
                parent[k] = True
                pid = SwitchingState(tuple(parent)).id
                if pid in systems:
                    guess = systems[pid].sep
                    break
        solve_sep(red, guess)
        if not is_stable_equilibrium(red):
            raise SEPError(f"equilibrium of {s} is not stable")
        systems[s.id] = red
    return dict(sorted(systems.items()))


# ---------------------------------------------------------------------------
# charts and recasting
# ---------------------------------------------------------------------------

class Chart:
    """Polynomial coordinates around one equilibrium.

    ``z = (w_1..w_m, sin(t_1), 1 - cos(t_1), ..., sin(t_m), 1 - cos(t_m))`` with
    ``t_i`` the angle deviation of machine i from the equilibrium.
    """

    def __init__(self, sep):
        self.sep = np.asarray(sep, dtype=float)
        self.m = len(self.sep)
        self.nvars = 3 * self.m

    def s_index(self, i: int) -> int:
        return self.m + 2 * i

    def c_index(self, i: int) -> int:
        return self.m + 2 * i + 1

    def to_z(self, x) -> np.ndarray:
        """Physical (angles, speeds) -> chart coordinates; accepts (N, 2m) arrays."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        m = self.m
        th = X[:, :m] - self.sep
        Z = np.empty((X.shape[0], 3 * m))
        Z[:, :m] = X[:, m:]
        Z[:, m::2] = np.sin(th)
        Z[:, m + 1::2] = 1.0 - np.cos(th)
        return Z if np.ndim(x) > 1 else Z[0]

    def to_x(self, z) -> np.ndarray:
        """Inverse map on the constraint manifold; angles wrapped to (-pi, pi] about the SEP."""
        Z = np.atleast_2d(np.asarray(z, dtype=float))
        m = self.m
        th = np.arctan2(Z[:, m::2], 1.0 - Z[:, m + 1::2])
        X = np.concatenate([self.sep + th, Z[:, :m]], axis=1)
        return X if np.ndim(z) > 1 else X[0]

    def constraints(self) -> list[Polynomial]:
        n = self.nvars
        out = []
        for i in range(self.m):
            s = Polynomial.var(n, self.s_index(i))
            c = Polynomial.var(n, self.c_index(i))
            out.append(s * s + c * c - 2.0 * c)
        return out

    def manifold_residual(self, z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(z, dtype=float))
        s, c = Z[:, self.m::2], Z[:, self.m + 1::2]
        return s ** 2 + c ** 2 - 2.0 * c

    def map_to(self, other: "Chart") -> tuple[np.ndarray, np.ndarray]:
        """Affine (A, b) with z_other = A z_self + b on the manifold."""
        if other.m != self.m:
            raise ValueError("charts belong to different systems")
        m = self.m
        A = np.eye(3 * m)
        b = np.zeros(3 * m)
        for i, dlt in enumerate(self.sep - other.sep):
            s, c = self.s_index(i), self.c_index(i)
            cd, sd = np.cos(dlt), np.sin(dlt)
            A[np.ix_([s, c], [s, c])] = [[cd, -sd], [sd, cd]]
            b[s] = sd
            b[c] = 1.0 - cd
        return A, b


def chart_map(z, from_chart: Chart, to_chart: Chart) -> np.ndarray:
    A, b = from_chart.map_to(to_chart)
    Z = np.atleast_2d(np.asarray(z, dtype=float))
    out = Z @ A.T + b
    return out if np.ndim(z) > 1 else out[0]


@dataclass
class PolySystem:
    """Polynomial dynamics dz/dt = f(z) with algebraic constraints g(z) = 0."""
    f: list[Polynomial]
    g: list[Polynomial]
    chart: Chart | None = None
    state_id: int = 1

    @property
    def nvars(self) -> int:
        return len(self.f)

    def field(self, z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.stack([fi.eval_many(Z) for fi in self.f], axis=1)
        return out if np.ndim(z) > 1 else out[0]

    def linearization(self) -> np.ndarray:
        n = self.nvars
        A = np.zeros((n, n))
        for i, fi in enumerate(self.f):
            for j in range(n):
                mono = tuple(1 if k == j else 0 for k in range(n))
                A[i, j] = fi.coeff(mono)
        return A


def recast(reduced: ReducedSystem) -> PolySystem:
    """Polynomial form of the swing dynamics in the chart of ``reduced.sep``."""
    chart = Chart(reduced.sep)
    m, n = reduced.m, chart.nvars
    one = Polynomial.constant(n, 1.0)
    zero = Polynomial.zero(n)
    S: list[Polynomial] = []
    C: list[Polynomial] = []
    W: list[Polynomial] = []
    pos = {k: i for i, k in enumerate(reduced.others)}
    for k in range(reduced.n_gen):
        if k == reduced.ref:
            S.append(zero)
            C.append(one)
            W.append(zero)
        else:
            i = pos[k]
            S.append(Polynomial.var(n, chart.s_index(i)))
            C.append(one - Polynomial.var(n, chart.c_index(i)))
            W.append(Polynomial.var(n, i))
    d_star = reduced.full_angles(reduced.sep)

    def pe(k: int) -> Polynomial:
        total = Polynomial.constant(n, reduced.E[k] ** 2 * reduced.G[k, k])
        for j in range(reduced.n_gen):
            if j == k:
                continue
            ds = d_star[k] - d_star[j]
            cos_d = C[k] * C[j] + S[k] * S[j]
            sin_d = S[k] * C[j] - C[k] * S[j]
            cos_full = cos_d * np.cos(ds) - sin_d * np.sin(ds)
            sin_full = sin_d * np.cos(ds) + cos_d * np.sin(ds)
            total = total + (cos_full * reduced.G[k, j] + sin_full * reduced.B[k, j]) \
                * (reduced.E[k] * reduced.E[j])
        return total

    acc = [(Polynomial.constant(n, reduced.Pm[k]) - pe(k)) / reduced.M[k] for k in range(reduced.n_gen)]
    f: list[Polynomial] = [zero] * n
    origin = (0,) * n
    for k in reduced.others:
        i = pos[k]
        fi = acc[k] - acc[reduced.ref] - W[k] * reduced.lam
        # constant term is the SEP residual (<= Newton tolerance); drop it so f(0) = 0 exactly
        terms = fi.terms
        terms.pop(origin, None)
        f[i] = Polynomial(n, terms)
        f[chart.s_index(i)] = C[k] * W[k]
        f[chart.c_index(i)] = S[k] * W[k]
    return PolySystem(f, chart.constraints(), chart, reduced.state_id)
