"""Risk of instability from a set of per-sequence stability-region estimates.

For an initial state x0 the risk is the probability mass of the cascade
sequences whose certified region does not contain x0.  A sequence without a
certificate counts as "outside" everywhere.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cascade import BlockingLogic, TripOrder, reassign_probabilities
from .certify import CertificateChain

PROB_TOL = 1e-9


def _check_probs(probs: Mapping[TripOrder, float]) -> None:
    for order, p in probs.items():
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} of sequence {order} outside [0, 1]")
    total = math.fsum(probs.values())
    if abs(total - 1.0) > PROB_TOL:
        raise ValueError(f"probabilities sum to {total!r}, expected 1")


def outside_indicator(chain: CertificateChain | None, X: np.ndarray) -> np.ndarray:
    """1.0 where a state lies outside the chain's innermost region (or no certificate exists)."""
    X = np.atleast_2d(X)
    if chain is None or not chain.certified:
        return np.ones(len(X))
    return (~chain.contains(X)).astype(float)


def risk_values(X, chains: Mapping[TripOrder, CertificateChain | None],
                probs: Mapping[TripOrder, float]) -> np.ndarray:
    """Risk at each row of ``X`` (physical states)."""
    _check_probs(probs)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = np.zeros(len(X))
    # fixed summation order keeps results reproducible bit for bit
    for order in sorted(probs, key=lambda o: (len(o), o)):
        p = probs[order]
        if p == 0.0:
            continue
        total += p * outside_indicator(chains.get(order), X)
    return np.clip(total, 0.0, 1.0)


def risk_at(x0, chains, probs) -> float:
    return float(risk_values(np.asarray(x0, dtype=float)[None, :], chains, probs)[0])


@dataclass(frozen=True)
class GridSpec:
    ranges: tuple[tuple[float, float], tuple[float, float]] = ((-math.pi, math.pi), (-math.pi, math.pi))
    resolution: tuple[int, int] = (101, 101)
    axes: tuple[int, int] = (0, 1)          # which relative angles span the plane
    speeds: tuple[float, ...] | None = None  # None: zero relative speeds
    angles: tuple[float, ...] | None = None  # fixed values of the angles not on the plane

    def axis_values(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.ranges, self.resolution)]

    def states(self, m: int) -> np.ndarray:
        """Physical states of every cell, first axis varying slowest."""
        a0, a1 = self.axis_values()
        A0, A1 = np.meshgrid(a0, a1, indexing="ij")
        base_ang = np.zeros(m) if self.angles is None else np.asarray(self.angles, dtype=float)
        spd = np.zeros(m) if self.speeds is None else np.asarray(self.speeds, dtype=float)
        X = np.tile(np.concatenate([base_ang, spd]), (A0.size, 1))
        X[:, self.axes[0]] = A0.ravel()
        X[:, self.axes[1]] = A1.ravel()
        return X

    def to_dict(self) -> dict:
        return {"ranges": [list(r) for r in self.ranges], "resolution": list(self.resolution),
                "axes": list(self.axes), "speeds": None if self.speeds is None else list(self.speeds),
                "angles": None if self.angles is None else list(self.angles)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(tuple(tuple(r) for r in d["ranges"]), tuple(d["resolution"]), tuple(d["axes"]),
                   None if d.get("speeds") is None else tuple(d["speeds"]),
                   None if d.get("angles") is None else tuple(d["angles"]))


@dataclass
class RiskGrid:
    spec: GridSpec
    values: np.ndarray                  # shape = spec.resolution
    provenance: dict = field(default_factory=dict)

    @property
    def axes(self) -> list[np.ndarray]:
        return self.spec.axis_values()

    @property
    def zero_risk_fraction(self) -> float:
        return float(np.mean(self.values == 0.0))

    def to_csv(self, path: str | Path) -> None:
        """Long format: one row per cell with both axis coordinates."""
        a0, a1 = self.axes
        i0, i1 = self.spec.axes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"delta{i0 + 1}", f"delta{i1 + 1}", "risk"])
            for i, u in enumerate(a0):
                for j, v in enumerate(a1):
                    w.writerow([repr(float(u)), repr(float(v)), repr(float(self.values[i, j]))])

    def metadata(self) -> dict:
        return {"grid": self.spec.to_dict(), "provenance": self.provenance,
                "zero_risk_fraction": self.zero_risk_fraction}

    def save(self, csv_path: str | Path, meta_path: str | Path | None = None, extra: dict | None = None) -> None:
        self.to_csv(csv_path)
        meta_path = Path(str(csv_path) + ".json") if meta_path is None else Path(meta_path)
        meta = self.metadata()
        if extra:
            meta.update(extra)
        meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path: str | Path, meta_path: str | Path | None = None) -> "RiskGrid":
        meta_path = Path(str(csv_path) + ".json") if meta_path is None else Path(meta_path)
        meta = json.loads(Path(meta_path).read_text())
        spec = GridSpec.from_dict(meta["grid"])
        with open(csv_path) as fh:
            rows = list(csv.reader(fh))[1:]
        vals = np.array([float(r[2]) for r in rows]).reshape(spec.resolution)
        return cls(spec, vals, meta.get("provenance", {}))


def risk_grid(chains: Mapping[TripOrder, CertificateChain | None], probs: Mapping[TripOrder, float],
              spec: GridSpec = GridSpec(), m: int = 2, provenance: dict | None = None) -> RiskGrid:
    X = spec.states(m)
    vals = risk_values(X, chains, probs).reshape(spec.resolution)
    prov = {"probabilities": {"-".join(map(str, o)) or "none": p for o, p in sorted(probs.items())}}
    prov.update(provenance or {})
    return RiskGrid(spec, vals, prov)


@dataclass
class BlockingSummary:
    option: str
    zero_risk_fraction: float
    mean_risk: float


def compare_blocking(chains: Mapping[TripOrder, CertificateChain | None], base: Mapping[TripOrder, float],
                     options: Sequence[BlockingLogic], n_rg: int, spec: GridSpec = GridSpec(),
                     m: int = 2) -> tuple[dict[str, RiskGrid], list[BlockingSummary]]:
    """Risk grids with each blocking option applied, ranked by zero-risk area.

    Ties break on the option name.  The unblocked case is always included
    under the name ``none``.
    """
    opts = list(options)
    if not any(not o.group for o in opts):
        opts.insert(0, BlockingLogic())
    grids: dict[str, RiskGrid] = {}
    for opt in opts:
        dist = reassign_probabilities(base, opt, n_rg)
        grids[opt.name] = risk_grid(chains, dist, spec, m, {"blocking": opt.name})
    summary = [BlockingSummary(name, g.zero_risk_fraction, float(g.values.mean())) for name, g in grids.items()]
    summary.sort(key=lambda s: (-s.zero_risk_fraction, s.option))
    return grids, summary
