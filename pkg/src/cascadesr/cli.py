"""Command-line front end: reduce, sep, certify, risk, simulate, report.

Every artifact lands under ``<outdir>/{models,certificates,risk,trajectories,report}``
and carries the config hash, the seed and the package version, so a rerun with
the same configuration reproduces the files byte for byte.

Exit codes: 0 success, 1 invalid input, 2 uncertifiable sequences, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cascade import (BlockingLogic, CascadeSequence, distribution, enumerate_sequences,
                      load_probabilities, parse_trip_order)
from .certify import CertificateChain, CertifyOptions, certify_sequence
from .psys import (NetworkError, NetworkModel, SEPError, all_states, build_switched_system,
                   demo_network, is_stable_equilibrium, load_network)
from .risk import GridSpec, compare_blocking
from .sim import lyapunov_trace, monte_carlo
from .sos import MultiplierDegrees, SOSNumericalError

log = logging.getLogger("cascadesr")

EXIT_OK, EXIT_INVALID, EXIT_UNCERTIFIABLE, EXIT_NUMERICAL = 0, 1, 2, 3
SUBDIRS = ("models", "certificates", "risk", "trajectories", "report")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    system: str | None = None           # None: bundled demo network
    probabilities: str | None = None    # None: uniform over all sequences
    blocking: list[list[int]] = field(default_factory=list)
    sequences: list[str] | None = None  # restrict to these trip orders
    degrees: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    runs: int = 100
    dump_runs: int = 3
    switch_interval: tuple[float, float] = (0.0, 2.0)
    horizon: float = 20.0
    outdir: str = "out"
    seed: int = 0
    jobs: int = 1

    # fields that do not influence results
    _NOT_HASHED = ("outdir", "jobs")

    def validate(self) -> None:
        for k, v in self.tolerances.items():
            if not isinstance(v, (int, float)) or v <= 0:
                raise ConfigError(f"tolerances.{k} must be positive, got {v!r}")
        known_tol = {f.name for f in dataclasses.fields(CertifyOptions)} - {"degrees"}
        for k in self.tolerances:
            if k not in known_tol:
                raise ConfigError(f"tolerances.{k} is not a known option")
        known_deg = {f.name for f in dataclasses.fields(MultiplierDegrees)}
        for k, v in self.degrees.items():
            if k not in known_deg:
                raise ConfigError(f"degrees.{k} is not a known multiplier")
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"degrees.{k} must be a nonnegative integer")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        lo, hi = self.switch_interval
        if not 0 <= lo < hi:
            raise ConfigError("switch_interval must satisfy 0 <= lo < hi")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        for g in self.blocking:
            if len(g) == 1:
                raise ConfigError(f"blocking group {g} needs at least two units")
        if self.system is not None and not Path(self.system).is_file():
            raise ConfigError(f"system: file {self.system!r} not found")
        if self.probabilities is not None and not Path(self.probabilities).is_file():
            raise ConfigError(f"probabilities: file {self.probabilities!r} not found")

    def hashed_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in self._NOT_HASHED:
            d.pop(k, None)
        for k in ("system", "probabilities"):
            if d[k] is not None:
                d[k] = {"path": Path(d[k]).name,
                        "sha256": hashlib.sha256(Path(d[k]).read_bytes()).hexdigest()}
        d["switch_interval"] = list(d["switch_interval"])
        return d

    def config_hash(self) -> str:
        text = json.dumps(self.hashed_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def certificate_hash(self) -> str:
        """Hash of the fields certificates depend on; run counts and grids are excluded."""
        d = self.hashed_dict()
        text = json.dumps({k: d[k] for k in ("system", "degrees", "tolerances", "seed")}, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def certify_options(self) -> CertifyOptions:
        tol = dict(self.tolerances)
        for k in ("bisection_steps", "max_inner", "max_outer", "n_samples"):
            if k in tol:
                tol[k] = int(tol[k])
        return CertifyOptions(degrees=MultiplierDegrees(**self.degrees), seed=self.seed, **tol)

    def grid_spec(self) -> GridSpec:
        g = self.grid
        kw = {}
        if "range" in g:
            lo, hi = g["range"]
            kw["ranges"] = ((lo, hi), (lo, hi))
        if "resolution" in g:
            r = g["resolution"]
            kw["resolution"] = (r, r) if isinstance(r, int) else tuple(r)
        if "speeds" in g:
            kw["speeds"] = tuple(g["speeds"])
        return GridSpec(**kw)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config: file {path!r} not found")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be an object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for k in data:
        if k not in known:
            raise ConfigError(f"config: unknown field {k!r}")
    return data


def parse_blocking(text: str) -> list[list[int]]:
    """``"1,2;3,1"`` -> [[1, 2], [3, 1]]; an empty string means no option."""
    groups = []
    for part in text.split(";"):
        part = part.strip()
        if part:
            groups.append([int(t) for t in part.replace(" ", ",").split(",") if t])
    return groups


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cascadesr", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--system", help="network JSON (default: bundled demo)")
    common.add_argument("--outdir")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--probabilities", help="'trip order : probability' table")
    common.add_argument("--blocking", action="append",
                        help="blocking option, e.g. '1,2' (repeatable; ';' separates several)")
    common.add_argument("--sequences", help="comma-separated trip orders such as '1-3-2,none'")
    common.add_argument("--runs", type=int, help="Monte Carlo runs per sequence")
    common.add_argument("--grid-resolution", type=int)
    common.add_argument("--grid-range", type=float, nargs=2, metavar=("LO", "HI"))
    common.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE",
                        help="certification option override (e.g. sdp_tol=1e-8)")
    common.add_argument("--degree", action="append", default=[], metavar="NAME=VALUE",
                        help="multiplier degree override (e.g. s8=2)")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, helptext in [("reduce", "Kron-reduced model of every switching state"),
                           ("sep", "equilibrium table of every switching state"),
                           ("certify", "nested Lyapunov certificates per cascade sequence"),
                           ("risk", "risk-of-instability grids, one per blocking option"),
                           ("simulate", "Monte Carlo check of the certified regions"),
                           ("report", "human-readable summary of the artifacts")]:
        sub.add_parser(name, parents=[common], help=helptext)
    return ap


def _kv(items: list[str], what: str, cast) -> dict:
    out = {}
    for it in items:
        if "=" not in it:
            raise ConfigError(f"{what} override {it!r} must look like NAME=VALUE")
        k, v = it.split("=", 1)
        try:
            out[k.strip()] = cast(v)
        except ValueError as exc:
            raise ConfigError(f"{what}.{k}: {exc}") from exc
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then flags."""
    data = load_config(args.config)
    cfg = RunConfig(**data)
    if isinstance(cfg.switch_interval, list):
        cfg.switch_interval = tuple(cfg.switch_interval)
    for name in ("system", "outdir", "seed", "jobs", "probabilities", "runs"):
        v = getattr(args, name)
        if v is not None:
            setattr(cfg, name, v)
    if args.blocking:
        cfg.blocking = [g for text in args.blocking for g in parse_blocking(text)]
    if args.sequences:
        cfg.sequences = [s.strip() for s in args.sequences.split(",") if s.strip()]
    if args.grid_resolution is not None:
        cfg.grid = {**cfg.grid, "resolution": args.grid_resolution}
    if args.grid_range is not None:
        cfg.grid = {**cfg.grid, "range": list(args.grid_range)}
    cfg.tolerances = {**cfg.tolerances, **_kv(args.tol, "tolerances", float)}
    cfg.degrees = {**cfg.degrees, **_kv(args.degree, "degrees", int)}
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# pipeline pieces
# ---------------------------------------------------------------------------

class Context:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.outdir)
        self.meta = {"config_hash": cfg.config_hash(), "certificate_hash": cfg.certificate_hash(), "seed": cfg.seed, "version": __version__}
        self._net: NetworkModel | None = None
        self._systems = None

    @property
    def net(self) -> NetworkModel:
        if self._net is None:
            self._net = demo_network() if self.cfg.system is None else load_network(self.cfg.system)
            self._net.validate()
        return self._net

    @property
    def systems(self):
        if self._systems is None:
            self._systems = build_switched_system(self.net)
        return self._systems

    def dir(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def write_json(self, path: Path, payload: dict) -> None:
        path.write_text(json.dumps({"meta": self.meta, **payload}, indent=1, sort_keys=True) + "\n")

    def sequences(self) -> list[CascadeSequence]:
        seqs = enumerate_sequences(self.net.n_rg)
        if self.cfg.sequences:
            wanted = {parse_trip_order(s) for s in self.cfg.sequences}
            bad = wanted - {s.trip_order for s in seqs}
            if bad:
                raise ConfigError(f"sequences: {sorted(bad)} are not admissible trip orders")
            seqs = [s for s in seqs if s.trip_order in wanted]
        return seqs

    def probabilities(self) -> dict:
        if self.cfg.probabilities is None:
            return distribution(enumerate_sequences(self.net.n_rg))
        return load_probabilities(self.cfg.probabilities, self.net.n_rg)


def _seq_file(seq: CascadeSequence) -> str:
    return f"seq_{seq.name}.json"


def cmd_reduce(ctx: Context) -> int:
    d = ctx.dir("models")
    for sid, red in sorted(ctx.systems.items()):
        ctx.write_json(d / f"state_{sid}.json", {
            "state": sid, "status": red.sigma.status if red.sigma else None,
            "G": red.G.tolist(), "B": red.B.tolist(), "M": red.M.tolist(), "E": red.E.tolist(),
            "Pm": red.Pm.tolist(), "damping_ratio": red.lam, "reference": red.ref + 1})
    print(f"wrote {len(ctx.systems)} reduced models to {d}")
    return EXIT_OK


def cmd_sep(ctx: Context) -> int:
    d = ctx.dir("models")
    rows = []
    for sid, red in sorted(ctx.systems.items()):
        res = float(np.max(np.abs(red.accel(red.sep))))
        rows.append([sid, red.sigma.status if red.sigma else "", *[repr(float(a)) for a in red.sep],
                     repr(res), is_stable_equilibrium(red)])
    m = ctx.net.n_gen - 1
    header = ["state", "status"] + [f"delta{i + 1}" for i in range(m)] + ["residual", "stable"]
    with open(d / "sep_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# config_hash={ctx.meta['config_hash']} seed={ctx.cfg.seed} version={__version__}"])
        w.writerow(header)
        w.writerows(rows)
    print("  ".join(header))
    for r in rows:
        print("  ".join(str(x) for x in r))
    return EXIT_OK


def _certify_one(args):
    seq, systems, opts = args
    return certify_sequence(seq, systems, opts)


def _certify_all(ctx: Context) -> dict:
    opts = ctx.cfg.certify_options()
    seqs = ctx.sequences()
    systems = ctx.systems
    chains = {}
    if ctx.cfg.jobs > 1 and len(seqs) > 1:
        with cf.ProcessPoolExecutor(max_workers=ctx.cfg.jobs) as ex:
            for seq, ch in zip(seqs, ex.map(_certify_one, [(s, systems, opts) for s in seqs])):
                chains[seq.trip_order] = ch
    else:
        cache: dict = {}
        for seq in seqs:
            log.info("certifying %s", seq)
            chains[seq.trip_order] = certify_sequence(seq, systems, opts, cache)
    return chains


def cmd_certify(ctx: Context) -> int:
    chains = _certify_all(ctx)
    d = ctx.dir("certificates")
    for order, ch in chains.items():
        ctx.write_json(d / _seq_file(ch.sequence), ch.to_dict())
        status = "certified" if ch.certified else f"UNCERTIFIABLE at state {ch.failed_state} ({ch.reason})"
        print(f"{ch.sequence}: {status}")
    bad = [ch.sequence.name for ch in chains.values() if not ch.certified]
    if bad:
        print("uncertifiable sequences: " + ", ".join(bad), file=sys.stderr)
        return EXIT_UNCERTIFIABLE
    return EXIT_OK


def _load_chains(ctx: Context) -> dict:
    d = ctx.out / "certificates"
    chains = {}
    missing = []
    for seq in enumerate_sequences(ctx.net.n_rg):
        f = d / _seq_file(seq)
        if f.is_file():
            data = json.loads(f.read_text())
            if data.get("meta", {}).get("certificate_hash") != ctx.meta["certificate_hash"]:
                missing.append(seq)
                continue
            chains[seq.trip_order] = CertificateChain.from_dict(data, ctx.net.n_rg)
        else:
            missing.append(seq)
    if missing:
        log.info("certifying %d sequences without stored certificates", len(missing))
        opts = ctx.cfg.certify_options()
        cache: dict = {}
        for seq in missing:
            chains[seq.trip_order] = certify_sequence(seq, ctx.systems, opts, cache)
            ctx.write_json(ctx.dir("certificates") / _seq_file(seq), chains[seq.trip_order].to_dict())
    return chains


def cmd_risk(ctx: Context) -> int:
    probs = ctx.probabilities()
    chains = _load_chains(ctx)
    spec = ctx.cfg.grid_spec()
    options = [BlockingLogic(frozenset(g)) for g in ctx.cfg.blocking]
    grids, summary = compare_blocking(chains, probs, options, ctx.net.n_rg, spec, ctx.net.n_gen - 1)
    d = ctx.dir("risk")
    for name, g in grids.items():
        fname = "base" if name == "none" else name.replace("B=[", "block_").replace("]", "").replace(",", "_")
        g.save(d / f"{fname}.csv", extra={"meta": ctx.meta})
    ctx.write_json(d / "summary.json", {"ranking": [dataclasses.asdict(s) for s in summary]})
    for s in summary:
        print(f"{s.option:>12}  zero-risk fraction {s.zero_risk_fraction:.4f}  mean risk {s.mean_risk:.4f}")
    return EXIT_OK


def cmd_simulate(ctx: Context) -> int:
    chains = _load_chains(ctx)
    d = ctx.dir("trajectories")
    rows = []
    for order, ch in sorted(chains.items(), key=lambda kv: (len(kv[0]), kv[0])):
        if order not in {s.trip_order for s in ctx.sequences()} or not ch.certified:
            continue
        trajs = monte_carlo(ch, ctx.systems, ctx.cfg.runs, ctx.cfg.seed, ctx.cfg.switch_interval,
                            ctx.cfg.horizon)
        for k, tr in enumerate(trajs):
            rows.append([ch.sequence.name, k, tr.verdict, repr(tr.final_error), repr(tr.final_speed),
                         " ".join(repr(float(t)) for t in tr.switch_times)])
            if k < ctx.cfg.dump_runs:
                tr.to_csv(d / f"seq_{ch.sequence.name}_run{k}.csv", lyapunov_trace(tr, ch))
        ok = sum(t.converged for t in trajs)
        print(f"{ch.sequence}: {ok}/{len(trajs)} converged")
    with open(d / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# config_hash={ctx.meta['config_hash']} seed={ctx.cfg.seed} version={__version__}"])
        w.writerow(["sequence", "run", "verdict", "final_error", "final_speed", "switch_times"])
        w.writerows(rows)
    failures = [r for r in rows if r[2] != "converged"]
    if failures:
        print(f"{len(failures)} runs did not converge", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_report(ctx: Context) -> int:
    chains = _load_chains(ctx)
    lines = ["# Cascade stability report", "",
             f"config hash `{ctx.meta['config_hash']}`, seed {ctx.cfg.seed}, version {__version__}", "",
             "## Sequences", "", "| trip order | states | certified | innermost beta |", "|---|---|---|---|"]
    for order, ch in sorted(chains.items(), key=lambda kv: (len(kv[0]), kv[0])):
        beta = f"{ch.innermost.beta_achieved:.4g}" if ch.certified else f"failed at {ch.failed_state}"
        lines.append(f"| {ch.sequence.name} | {'->'.join(map(str, ch.sequence.states))} | "
                     f"{'yes' if ch.certified else 'no'} | {beta} |")
    summary_file = ctx.out / "risk" / "summary.json"
    if summary_file.is_file():
        data = json.loads(summary_file.read_text())
        lines += ["", "## Blocking options", "", "| option | zero-risk fraction | mean risk |", "|---|---|---|"]
        for s in data["ranking"]:
            lines.append(f"| {s['option']} | {s['zero_risk_fraction']:.4f} | {s['mean_risk']:.4f} |")
    sim_file = ctx.out / "trajectories" / "summary.csv"
    if sim_file.is_file():
        with open(sim_file) as fh:
            rows = list(csv.reader(fh))[2:]
        per: dict[str, list[int]] = {}
        for r in rows:
            per.setdefault(r[0], [0, 0])
            per[r[0]][0] += r[2] == "converged"
            per[r[0]][1] += 1
        lines += ["", "## Simulation", "", "| trip order | converged |", "|---|---|"]
        for name, (ok, tot) in per.items():
            lines.append(f"| {name} | {ok}/{tot} |")
    text = "\n".join(lines) + "\n"
    (ctx.dir("report") / "summary.md").write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {"reduce": cmd_reduce, "sep": cmd_sep, "certify": cmd_certify, "risk": cmd_risk,
            "simulate": cmd_simulate, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        ctx = Context(cfg)
        ctx.net  # load and validate before anything is written
        return COMMANDS[args.command](ctx)
    except (ConfigError, NetworkError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SEPError, SOSNumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
