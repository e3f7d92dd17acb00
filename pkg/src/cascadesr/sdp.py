"""Semidefinite programs over symmetric block variables plus free scalars.

Problem form::

    minimize    c . v
    subject to  A v = b
                X_k  PSD  for every block k

where ``v`` stacks the upper triangles of the blocks (column-major, raw
entries, no sqrt(2) scaling) followed by the free scalars.  A linear
functional assigns one coefficient to each stored entry, so the entry
``X_ij`` with ``i < j`` is counted once.

The numerical work is delegated to Clarabel, an interior-point solver built on
a homogeneous embedding, so infeasible problems come back with a certificate
instead of an iteration-cap timeout.  Everything around it (status semantics,
residuals, PSD floor) is checked here.
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import clarabel
import numpy as np
import scipy.sparse as sp

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 200

# ('X', block, i, j) with i <= j, or ('y', index)
VarKey = tuple


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


def tri_size(n: int) -> int:
    return n * (n + 1) // 2


class Layout:
    """Index bookkeeping for the stacked variable vector."""

    def __init__(self, psd_blocks: Sequence[int], n_free: int):
        self.psd_blocks = tuple(int(n) for n in psd_blocks)
        if any(n < 1 for n in self.psd_blocks):
            raise ValueError("PSD block sizes must be >= 1")
        if n_free < 0:
            raise ValueError("free variable count must be >= 0")
        self.n_free = int(n_free)
        self.offsets = np.concatenate([[0], np.cumsum([tri_size(n) for n in self.psd_blocks])]).astype(int)
        self.n_block_entries = int(self.offsets[-1])
        self.nvars = self.n_block_entries + self.n_free

    def entry(self, k: int, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        n = self.psd_blocks[k]
        if not (0 <= i <= j < n):
            raise IndexError(f"entry ({i},{j}) outside block {k} of size {n}")
        return int(self.offsets[k]) + j * (j + 1) // 2 + i

    def free(self, idx: int) -> int:
        if not 0 <= idx < self.n_free:
            raise IndexError(f"free variable {idx} not declared")
        return self.n_block_entries + idx

    def index(self, key: VarKey) -> int:
        if key[0] == "X":
            return self.entry(key[1], key[2], key[3])
        if key[0] == "y":
            return self.free(key[1])
        raise KeyError(key)

    def unpack_block(self, v: np.ndarray, k: int) -> np.ndarray:
        n = self.psd_blocks[k]
        X = np.zeros((n, n))
        o = int(self.offsets[k])
        for j in range(n):
            for i in range(j + 1):
                X[i, j] = X[j, i] = v[o + j * (j + 1) // 2 + i]
        return X


@dataclass
class SDPInstance:
    psd_blocks: tuple[int, ...]
    n_free: int
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.layout = Layout(self.psd_blocks, self.n_free)
        self.psd_blocks = self.layout.psd_blocks
        self.A = sp.csr_matrix(self.A, shape=(len(self.b), self.layout.nvars))
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.c.shape != (self.layout.nvars,):
            raise ValueError("objective length does not match the variable layout")

    @classmethod
    def from_functionals(cls, psd_blocks: Sequence[int], n_free: int,
                         objective: Mapping[VarKey, float],
                         eq_constraints: Sequence[tuple[Mapping[VarKey, float], float]]) -> "SDPInstance":
        layout = Layout(psd_blocks, n_free)
        c = np.zeros(layout.nvars)
        for key, val in objective.items():
            c[layout.index(key)] += val
        rows, cols, vals, b = [], [], [], []
        for r, (func, rhs) in enumerate(eq_constraints):
            for key, val in func.items():
                rows.append(r)
                cols.append(layout.index(key))
                vals.append(val)
            b.append(rhs)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(len(b), layout.nvars)).tocsr()
        return cls(tuple(psd_blocks), n_free, A, np.array(b, dtype=float), c)

    @property
    def n_constraints(self) -> int:
        return self.A.shape[0]

    def dump(self) -> str:
        """Sparse text form: one ``block row col value`` style line per entry."""
        out = io.StringIO()
        lay = self.layout
        out.write("# sparse SDP: minimize c.v s.t. A v = b, blocks PSD\n")
        out.write("blocks " + " ".join(str(n) for n in lay.psd_blocks) + "\n")
        out.write(f"free {lay.n_free}\n")
        out.write(f"constraints {self.n_constraints}\n")
        keys = _index_to_key(lay)
        for i, bi in enumerate(self.b):
            out.write(f"rhs {i} {float(bi)!r}\n")
        for idx in np.nonzero(self.c)[0]:
            out.write(f"obj {_fmt_key(keys[idx])} {float(self.c[idx])!r}\n")
        A = self.A.tocoo()
        for r, col, v in sorted(zip(A.row, A.col, A.data)):
            out.write(f"con {r} {_fmt_key(keys[col])} {float(v)!r}\n")
        return out.getvalue()

    @classmethod
    def load(cls, text: str) -> "SDPInstance":
        blocks: list[int] = []
        n_free = m = 0
        obj: dict[VarKey, float] = {}
        rhs: dict[int, float] = {}
        cons: dict[int, dict[VarKey, float]] = {}
        for line in text.splitlines():
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "blocks":
                blocks = [int(t) for t in tok[1:]]
            elif tok[0] == "free":
                n_free = int(tok[1])
            elif tok[0] == "constraints":
                m = int(tok[1])
            elif tok[0] == "rhs":
                rhs[int(tok[1])] = float(tok[2])
            elif tok[0] == "obj":
                key, rest = _parse_key(tok[1:])
                obj[key] = float(rest[0])
            elif tok[0] == "con":
                key, rest = _parse_key(tok[2:])
                cons.setdefault(int(tok[1]), {})[key] = float(rest[0])
            else:
                raise ValueError(f"unrecognised line: {line!r}")
        eqs = [(cons.get(i, {}), rhs.get(i, 0.0)) for i in range(m)]
        return cls.from_functionals(blocks, n_free, obj, eqs)


def _index_to_key(lay: Layout) -> list[VarKey]:
    keys: list[VarKey] = []
    for k, n in enumerate(lay.psd_blocks):
        for j in range(n):
            for i in range(j + 1):
                keys.append(("X", k, i, j))
    keys.extend(("y", i) for i in range(lay.n_free))
    return keys


def _fmt_key(key: VarKey) -> str:
    if key[0] == "X":
        return f"X {key[1]} {key[2]} {key[3]}"
    return f"y {key[1]}"


def _parse_key(tok: list[str]) -> tuple[VarKey, list[str]]:
    if tok[0] == "X":
        return ("X", int(tok[1]), int(tok[2]), int(tok[3])), tok[4:]
    return ("y", int(tok[1])), tok[2:]


@dataclass
class FarkasCertificate:
    """Multipliers ``y`` of ``A v = b`` proving that no feasible ``v`` exists.

    ``A^T y`` restricted to block k pairs with ``X_k`` through a symmetric
    matrix ``S_k``; if every ``S_k`` is PSD, the free part of ``A^T y`` vanishes
    and ``b . y < 0``, then ``0 <= sum <S_k, X_k> = y . A v = b . y < 0`` for any
    feasible point, which is absurd.  ``y`` is scaled so that ``b . y = -1``.
    """

    y: np.ndarray

    def residuals(self, instance: "SDPInstance") -> dict[str, float]:
        lay = instance.layout
        g = instance.A.T @ self.y
        eig_floor = 0.0
        for k, n in enumerate(lay.psd_blocks):
            S = lay.unpack_block(g, k)
            # off-diagonal entries are stored once but pair with both X_ij and X_ji
            S = 0.5 * (S + np.diag(np.diag(S)))
            eig_floor = min(eig_floor, float(np.linalg.eigvalsh(S)[0]))
        free = g[lay.n_block_entries:]
        return {"b_dot_y": float(instance.b @ self.y),
                "free": float(np.max(np.abs(free), initial=0.0)),
                "eig_floor": eig_floor}

    def verify(self, instance: "SDPInstance", tol: float = 1e-6) -> bool:
        r = self.residuals(instance)
        return r["b_dot_y"] <= -0.5 and r["free"] <= tol and r["eig_floor"] >= -tol


@dataclass
class SDPSolution:
    status: Status
    block_values: list[np.ndarray]
    free_values: np.ndarray
    objective_value: float
    dual_objective_value: float
    residuals: dict[str, float] = field(default_factory=dict)
    iterations: int = 0
    vector: np.ndarray | None = None
    farkas: FarkasCertificate | None = None  # set when reported infeasible

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def value(self, instance: SDPInstance, key: VarKey) -> float:
        return float(self.vector[instance.layout.index(key)])


def _failed(lay: Layout) -> SDPSolution:
    v = np.full(lay.nvars, np.nan)
    return SDPSolution(Status.NUMERICAL_FAILURE, [lay.unpack_block(v, k) for k in range(len(lay.psd_blocks))],
                       v[lay.n_block_entries:].copy(), np.nan, np.nan,
                       {"primal": np.inf, "dual": np.inf, "gap": np.inf, "eig_floor": np.nan}, 0, v)


_STATUS_MAP = {
    "Solved": Status.OPTIMAL,
    "AlmostSolved": Status.OPTIMAL,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
}


def solve(instance: SDPInstance, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
          verbose: bool = False) -> SDPSolution:
    """Solve ``instance``; ``optimal`` is only reported when residuals are within ``tol``."""
    lay = instance.layout
    n = lay.nvars
    m = instance.n_constraints

    # Cone rows: equalities first, then -D v + s = 0 with s = svec(X) in each PSD cone.
    diag_rows, diag_cols, diag_vals = [], [], []
    r = 0
    for k, nk in enumerate(lay.psd_blocks):
        for j in range(nk):
            for i in range(j + 1):
                diag_rows.append(r)
                diag_cols.append(lay.entry(k, i, j))
                diag_vals.append(-1.0 if i == j else -np.sqrt(2.0))
                r += 1
    D = sp.coo_matrix((diag_vals, (diag_rows, diag_cols)), shape=(r, n))
    Aall = sp.vstack([instance.A, D]).tocsc()
    ball = np.concatenate([instance.b, np.zeros(r)])
    cones = []
    if m:
        cones.append(clarabel.ZeroConeT(m))
    cones.extend(clarabel.PSDTriangleConeT(nk) for nk in lay.psd_blocks)
    P = sp.csc_matrix((n, n))

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_feas = min(1e-9, tol * 1e-2)
    settings.tol_gap_abs = min(1e-9, tol * 1e-2)
    settings.tol_gap_rel = min(1e-9, tol * 1e-2)
    settings.chordal_decomposition_enable = False
    settings.presolve_enable = False
    settings.max_threads = 1

    try:
        solver = clarabel.DefaultSolver(P, instance.c, Aall, ball, cones, settings)
        sol = solver.solve()
    except (KeyboardInterrupt, SystemExit):
        raise
    except BaseException:  # the solver's internal panics surface as BaseException
        return _failed(lay)
    status_name = str(sol.status).split(".")[-1]
    status = _STATUS_MAP.get(status_name, Status.NUMERICAL_FAILURE)

    v = np.asarray(sol.x, dtype=float)
    if not np.all(np.isfinite(v)):
        return _failed(lay)
    blocks = [lay.unpack_block(v, k) for k in range(len(lay.psd_blocks))]
    free = v[lay.n_block_entries:].copy()
    eq_res = float(np.max(np.abs(instance.A @ v - instance.b), initial=0.0))
    eig_floor = min((float(np.linalg.eigvalsh(X)[0]) for X in blocks), default=0.0)
    primal = float(instance.c @ v)
    dual = float(sol.obj_val_dual)
    residuals = {
        "primal": eq_res,
        "dual": float(sol.r_dual),
        "gap": abs(primal - dual) / (1.0 + abs(primal)),
        "eig_floor": eig_floor,
    }
    if status is Status.OPTIMAL:
        if eq_res > tol or eig_floor < -tol or not np.isfinite(primal):
            status = Status.NUMERICAL_FAILURE
    farkas = None
    if status is Status.INFEASIBLE and m:
        y = np.asarray(sol.z, dtype=float)[:m]
        bty = float(instance.b @ y)
        if bty < 0 and np.all(np.isfinite(y)):
            farkas = FarkasCertificate(y / -bty)
    return SDPSolution(status, blocks, free, primal, dual, residuals, int(sol.iterations), v, farkas)
