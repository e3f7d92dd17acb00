"""Shared fixtures.

Certifying all sixteen demo sequences is the expensive part of the suite, so
it happens once per session and every test that needs chains reuses the result.
"""
from __future__ import annotations

import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cascadesr.cascade import CascadeSequence, enumerate_sequences
from cascadesr.certify import CertifyOptions, certify_sequence
from cascadesr.psys import build_switched_system, demo_network, smib

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# single machine against a reference: Pmax = 1, Pm = 0.5, D/M = 4
SMIB_PARAMS = dict(p_max=1.0, p_m=0.5, M=0.1, D=0.4)


@pytest.fixture(scope="session")
def demo_net():
    return demo_network()


@pytest.fixture(scope="session")
def demo_systems(demo_net):
    return build_switched_system(demo_net)


@pytest.fixture(scope="session")
def smib_system():
    return smib(**SMIB_PARAMS)


@pytest.fixture(scope="session")
def smib_chain(smib_system):
    seq = CascadeSequence((), 1)
    t0 = time.perf_counter()
    chain = certify_sequence(seq, {1: smib_system}, CertifyOptions())
    chain.elapsed = time.perf_counter() - t0
    return chain


@pytest.fixture(scope="session")
def smib_pair():
    """Two single-machine states (Pm 0.4 then 0.6) joined by one trip."""
    systems = {1: smib(1.0, 0.4, 0.1, 0.4), 2: smib(1.0, 0.6, 0.1, 0.4)}
    return systems, certify_sequence(CascadeSequence((1,), 1), systems)


@pytest.fixture(scope="session")
def demo_chains(demo_systems):
    """Every admissible trip order of the demo, certified with the default options."""
    cache: dict = {}
    t0 = time.perf_counter()
    chains = {s.trip_order: certify_sequence(s, demo_systems, CertifyOptions(), cache)
              for s in enumerate_sequences(3)}
    elapsed = time.perf_counter() - t0
    for c in chains.values():
        c.elapsed = elapsed
    return chains


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s[6:8])):
            terminalreporter.write_line(line)
