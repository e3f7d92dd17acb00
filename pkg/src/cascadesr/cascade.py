"""Cascade (switching) sequences of renewable-unit trips.

A sequence is fully described by the order in which units trip; tripped
units never come back online, and the worst-case timing abstraction means the
trip instants are not part of the sequence.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .psys import SwitchingState

TripOrder = tuple[int, ...]


@dataclass(frozen=True)
class CascadeSequence:
    trip_order: TripOrder
    n_rg: int
    probability: float = 0.0

    def __post_init__(self):
        if len(set(self.trip_order)) != len(self.trip_order):
            raise ValueError(f"unit tripped twice in {self.trip_order}")
        if any(not 1 <= r <= self.n_rg for r in self.trip_order):
            raise ValueError(f"trip order {self.trip_order} references units outside 1..{self.n_rg}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")

    @property
    def switching_states(self) -> list[SwitchingState]:
        s = SwitchingState.all_online(self.n_rg)
        out = [s]
        for r in self.trip_order:
            s = s.trip(r)
            out.append(s)
        return out

    @property
    def states(self) -> list[int]:
        """State ids [sigma_1, ..., sigma_N]."""
        return [s.id for s in self.switching_states]

    @property
    def name(self) -> str:
        return "-".join(map(str, self.trip_order)) if self.trip_order else "none"

    def with_probability(self, p: float) -> "CascadeSequence":
        return CascadeSequence(self.trip_order, self.n_rg, p)

    def __str__(self) -> str:
        return f"trips {self.name}: states {'->'.join(map(str, self.states))}"


@dataclass(frozen=True)
class BlockingLogic:
    """Units in ``group`` watch each other; the last one still online never trips."""
    group: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "group", frozenset(self.group))
        if len(self.group) == 1:
            raise ValueError("a blocking group needs at least two units (or none)")

    @property
    def name(self) -> str:
        return "B=[" + ",".join(map(str, sorted(self.group))) + "]" if self.group else "none"


def sequence_count(n_rg: int) -> int:
    """sum over r of C(n, r) * r!"""
    return sum(math.comb(n_rg, r) * math.factorial(r) for r in range(n_rg + 1))


def enumerate_sequences(n_rg: int, uniform: bool = True) -> list[CascadeSequence]:
    """Every admissible trip order, shortest first, lexicographic within a length."""
    if n_rg < 0:
        raise ValueError("n_rg must be >= 0")
    orders = [p for r in range(n_rg + 1) for p in itertools.permutations(range(1, n_rg + 1), r)]
    p = 1.0 / len(orders) if uniform else 0.0
    return [CascadeSequence(tuple(o), n_rg, p) for o in orders]


def apply_blocking(seq: CascadeSequence, blocking: BlockingLogic) -> CascadeSequence:
    """Drop trips the blocking rule forbids; the rest of the cascade is unchanged.

    The rule is evaluated at each trip against the units online at that moment.
    """
    online = set(range(1, seq.n_rg + 1))
    kept = []
    for r in seq.trip_order:
        if r in blocking.group and not (online & blocking.group) - {r}:
            continue
        online.discard(r)
        kept.append(r)
    return CascadeSequence(tuple(kept), seq.n_rg, seq.probability)


def _validate(dist: Mapping[TripOrder, float], tol: float = 1e-12) -> None:
    for order, p in dist.items():
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} of sequence {order} outside [0, 1]")
    total = math.fsum(dist.values())
    if abs(total - 1.0) > tol:
        raise ValueError(f"probabilities sum to {total}, expected 1")


def reassign_probabilities(dist: Mapping[TripOrder, float], blocking: BlockingLogic,
                           n_rg: int) -> dict[TripOrder, float]:
    """Move each sequence's mass onto the sequence it becomes under ``blocking``."""
    _validate(dist)
    parts: dict[TripOrder, list[float]] = {o: [] for o in dist}
    for order, p in dist.items():
        image = apply_blocking(CascadeSequence(tuple(order), n_rg), blocking).trip_order
        parts.setdefault(image, []).append(p)
    return {o: math.fsum(ps) for o, ps in parts.items()}


def distribution(seqs: Iterable[CascadeSequence]) -> dict[TripOrder, float]:
    return {s.trip_order: s.probability for s in seqs}


def parse_trip_order(text: str) -> TripOrder:
    text = text.strip().lower()
    if text in ("", "none", "-", "no trip"):
        return ()
    return tuple(int(t) for t in text.replace("-", " ").replace(",", " ").split())


def load_probabilities(path: str | Path, n_rg: int) -> dict[TripOrder, float]:
    """Read ``trip_order : probability`` lines; unlisted sequences get zero."""
    dist = {s.trip_order: 0.0 for s in enumerate_sequences(n_rg)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'trip_order : probability'")
            left, right = line.rsplit(":", 1)
            order = parse_trip_order(left)
            if order not in dist:
                raise ValueError(f"{path}:{lineno}: {order} is not an admissible sequence")
            dist[order] = float(right)
    _validate(dist, tol=1e-9)
    return dist


def format_probabilities(dist: Mapping[TripOrder, float]) -> str:
    lines = []
    for order, p in sorted(dist.items(), key=lambda kv: (len(kv[0]), kv[0])):
        name = " ".join(map(str, order)) if order else "none"
        lines.append(f"{name} : {p!r}")
    return "\n".join(lines) + "\n"
