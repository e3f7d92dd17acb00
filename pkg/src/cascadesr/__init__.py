"""Stability regions of power systems under cascade tripping of renewable units.

Sum-of-squares certificates (nested Lyapunov level sets, one per switching
state of a trip sequence), a risk-of-instability map built from them, and a
time-domain simulator to check the certificates against.
"""
__version__ = "0.1.0"

from .poly import Polynomial
from .cascade import BlockingLogic, CascadeSequence, enumerate_sequences
from .psys import NetworkModel, SwitchingState, build_switched_system, demo_network, smib
from .certify import CertificateChain, CertifyOptions, LyapunovCertificate, certify_sequence
from .risk import GridSpec, RiskGrid, compare_blocking, risk_at, risk_grid
from .sim import SwitchedTrajectory, integrate_switched

__all__ = [
    "Polynomial", "BlockingLogic", "CascadeSequence", "enumerate_sequences", "NetworkModel",
    "SwitchingState", "build_switched_system", "demo_network", "smib", "CertificateChain",
    "CertifyOptions", "LyapunovCertificate", "certify_sequence", "GridSpec", "RiskGrid",
    "compare_blocking", "risk_at", "risk_grid", "SwitchedTrajectory", "integrate_switched",
]
