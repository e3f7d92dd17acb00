"""Time-domain simulation of a cascade with prescribed trip instants.

The integration is split at every switch time, so no event location is
needed: each segment runs the active state's swing dynamics with an adaptive
Dormand-Prince scheme and the next segment starts from where it stopped.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .cascade import CascadeSequence
from .certify import CertificateChain, LyapunovCertificate, sample_sublevel
from .psys import ReducedSystem

CONVERGED = "converged"
DIVERGED = "diverged"
UNDECIDED = "undecided"


@dataclass
class SwitchedTrajectory:
    t: np.ndarray
    x: np.ndarray                 # rows of (angles, speeds)
    active: np.ndarray            # state id in force at each sample
    switch_events: list[tuple[float, int, int]]
    verdict: str
    final_error: float
    final_speed: float
    sequence: CascadeSequence | None = None
    switch_times: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def converged(self) -> bool:
        return self.verdict == CONVERGED

    def to_csv(self, path, v_trace: np.ndarray | None = None) -> None:
        m = self.x.shape[1] // 2
        header = ["t"] + [f"delta{i + 1}" for i in range(m)] + [f"omega{i + 1}" for i in range(m)] + ["state"]
        if v_trace is not None:
            header.append("V")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.t)):
                row = [repr(float(self.t[k]))] + [repr(float(v)) for v in self.x[k]] + [int(self.active[k])]
                if v_trace is not None:
                    row.append(repr(float(v_trace[k])))
                w.writerow(row)


def sample_switch_times(n_trips: int, rng: np.random.Generator,
                        interval: tuple[float, float] = (0.0, 2.0)) -> np.ndarray:
    """Trip instants whose successive gaps are uniform on ``interval``."""
    gaps = rng.uniform(interval[0], interval[1], size=n_trips)
    return np.cumsum(gaps)


def integrate_switched(systems: Mapping[int, ReducedSystem], seq: CascadeSequence, x0,
                       switch_times: Sequence[float] = (), horizon: float = 20.0,
                       rtol: float = 1e-9, atol: float = 1e-9, method: str = "DOP853",
                       sample_dt: float = 0.01, conv_tol: float = 1e-3,
                       speed_limit: float = 50.0, **solver_options) -> SwitchedTrajectory:
    """Integrate ``x0`` through ``seq``, switching at the given absolute times.

    ``horizon`` is measured from the last switch.  The verdict compares the
    final state with the SEP of the last switching state, without reducing
    angles modulo 2 pi.  Extra keyword arguments go to ``solve_ivp``.
    """
    states = seq.states
    times = np.asarray(switch_times, dtype=float)
    if len(times) != len(states) - 1:
        raise ValueError(f"{len(states) - 1} switch times needed, got {len(times)}")
    if len(times) and (times[0] < 0 or np.any(np.diff(times) <= 0)):
        raise ValueError("switch times must be nonnegative and strictly increasing")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    bounds = np.concatenate([[0.0], times, [(times[-1] if len(times) else 0.0) + horizon]])
    x = np.array(x0, dtype=float)

    def blowup(t, y):
        m = len(y) // 2
        return speed_limit - np.max(np.abs(y[m:]))
    blowup.terminal = True

    T, X, A, events = [], [], [], []
    diverged = False
    for k, sid in enumerate(states):
        t0, t1 = bounds[k], bounds[k + 1]
        red = systems[sid]
        if k > 0:
            events.append((float(t0), states[k - 1], sid))
        if t1 > t0:
            n_eval = max(2, int(np.ceil((t1 - t0) / sample_dt)) + 1)
            t_eval = np.linspace(t0, t1, n_eval)
            sol = solve_ivp(lambda t, y, r=red: r.vector_field(y), (t0, t1), x, method=method,
                            t_eval=t_eval, rtol=rtol, atol=atol, events=blowup, **solver_options)
            if sol.status < 0:
                raise RuntimeError(f"integration failed in state {sid}: {sol.message}")
            ts, ys = sol.t, sol.y.T
            if k > 0 and len(ts):  # the switch instant is already recorded
                ts, ys = ts[1:], ys[1:]
            T.append(ts)
            X.append(ys)
            A.append(np.full(len(ts), sid))
            x = sol.y[:, -1] if sol.status == 0 else sol.y_events[0][0]
            if sol.status == 1:
                T.append(np.array([sol.t_events[0][0]]))
                X.append(x[None, :])
                A.append(np.array([sid]))
                diverged = True
                break
        elif k == 0:
            T.append(np.array([t0]))
            X.append(x[None, :])
            A.append(np.array([sid]))
    t = np.concatenate(T)
    xs = np.concatenate(X, axis=0)
    act = np.concatenate(A)
    final = systems[states[-1]]
    m = final.m
    # no wrapping: a pole slip followed by resynchronisation is not a pass
    err = float(np.max(np.abs(xs[-1, :m] - final.sep), initial=0.0))
    spd = float(np.linalg.norm(xs[-1, m:]))
    if diverged or not np.all(np.isfinite(xs[-1])):
        verdict = DIVERGED
    elif err <= conv_tol and spd <= conv_tol:
        verdict = CONVERGED
    else:
        verdict = UNDECIDED
    return SwitchedTrajectory(t, xs, act, events, verdict, err, spd, seq, times)


def boundary_sample(cert: LyapunovCertificate, count: int,
                    rng: np.random.Generator | int = 0) -> np.ndarray:
    """Physical states on ``{V = 1}`` of ``cert``, reached along rays from its SEP."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return sample_sublevel(cert, count, rng, boundary=True)


def lyapunov_trace(traj: SwitchedTrajectory, chain: CertificateChain) -> np.ndarray:
    """V of the stage active at each sample, in that stage's chart."""
    by_state = {c.state_id: c for c in chain.stages}
    out = np.empty(len(traj.t))
    for sid in np.unique(traj.active):
        mask = traj.active == sid
        out[mask] = by_state[int(sid)].value(traj.x[mask])
    return out


def successor_values_at_switches(traj: SwitchedTrajectory, chain: CertificateChain) -> np.ndarray:
    """V of the newly active stage evaluated at each switch instant."""
    by_state = {c.state_id: c for c in chain.stages}
    vals = []
    for (ts, _, to) in traj.switch_events:
        k = int(np.searchsorted(traj.t, ts))
        k = min(k, len(traj.t) - 1)
        vals.append(float(by_state[to].value(traj.x[k])[0]))
    return np.array(vals)


def monte_carlo(chain: CertificateChain, systems: Mapping[int, ReducedSystem], runs: int = 100,
                seed: int = 0, interval: tuple[float, float] = (0.0, 2.0),
                horizon: float = 20.0, **kw) -> list[SwitchedTrajectory]:
    """Trajectories from the innermost boundary with random trip instants.

    Run ``k`` uses its own generator derived from ``(seed, k)``.
    """
    if not chain.certified:
        raise ValueError("sequence is not certified")
    starts = boundary_sample(chain.innermost, runs, np.random.default_rng([seed, 0]))
    out = []
    for k, x0 in enumerate(starts):
        rng = np.random.default_rng([seed, 1, k])
        times = sample_switch_times(len(chain.sequence.trip_order), rng, interval)
        out.append(integrate_switched(systems, chain.sequence, x0, times, horizon, **kw))
    return out
