"""Sums of squares in a few lines.

A polynomial is a sum of squares exactly when it can be written as
m(x)^T Q m(x) with Q positive semidefinite, where m(x) is a vector of
monomials.  Finding Q is a semidefinite feasibility problem.  When no Q
exists the solver returns a Farkas certificate, a set of multipliers that
proves infeasibility and can be checked without trusting the solver.

Run:  python demos/sos_basics.py
"""
import numpy as np

from cascadesr.poly import Polynomial
from cascadesr.sos import check_sos

x1, x2 = Polynomial.variables(2)

p = (x1 + x2) ** 2 + x1 ** 4
res = check_sos(p)
cert = res.certificate
print(f"p = {p}")
print(f"SOS: {res.is_sos}, reconstruction residual {cert.reconstruction_residual:.1e}")
G, basis = cert.gram_matrices[0], cert.bases[0]
print("monomial basis:", basis)
print("Gram matrix eigenvalues:", np.round(np.linalg.eigvalsh(G), 6))

# Nonnegative everywhere (AM-GM) yet not a sum of squares.
motzkin = x1 ** 4 * x2 ** 2 + x1 ** 2 * x2 ** 4 - 3 * x1 ** 2 * x2 ** 2 + 1
pts = np.random.default_rng(0).uniform(-2, 2, (5000, 2))
print(f"\nMotzkin minimum over 5000 random points: {motzkin.eval_many(pts).min():.4f}")
res = check_sos(motzkin)
print(f"SOS: {res.is_sos}, Farkas certificate verified: {res.infeasibility_verified()}")
print("certificate residuals:", res.farkas.residuals(res.instance))
