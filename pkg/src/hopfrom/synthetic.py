"""Analytically solvable quadratic DAE with a Hopf bifurcation.

Cartesian oscillator with cubic amplitude saturation,

    x' = a(eta) x - omega y + (beta x - gamma y) r,
    y' = omega x + a(eta) y + (gamma x + beta y) r,
    0  = -r + x^2 + y^2,
    eta' = 0,            a(eta) = a0 + a_eta * eta,

quadratically recast through the slaved amplitude variable r.  On the
manifold r = x^2 + y^2 the dynamics of x + i y is exactly

    d/dt (x + i y) = (a(eta) + i omega) (x + i y)
                     + (beta + i gamma) |x + i y|^2 (x + i y),

so the polar reduced dynamics has closed-form coefficients against which
the whole pipeline can be checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dae import CooBilinear, DofPartition, coo_bilinear_dae, QuadraticDae


@dataclass(frozen=True)
class HopfOracle:
    """Closed-form quantities of the synthetic system.

    The reduced coordinate produced by the pipeline's mode normalisation
    (largest-magnitude entry scaled to 1) satisfies z1 = (x + i y) / 2, so
    the cubic reduced-dynamics coefficient picks up a factor |2|^2 = 4.
    """
    a0: float
    omega: float
    beta: float
    gamma: float
    a_eta: float

    @property
    def lam(self) -> complex:
        return complex(self.a0, self.omega)

    def c1(self, eta: float = 0.0) -> float:
        return self.a0 + self.a_eta * eta

    def c0(self, eta: float = 0.0) -> float:
        return self.omega

    @property
    def cubic_reduced(self) -> complex:
        """f coefficient on z1^2 z2 in the normalised reduced coordinate."""
        return 4.0 * complex(self.beta, self.gamma)

    def rho_lc(self, eta: float = 0.0) -> float | None:
        """Limit-cycle amplitude in the reduced coordinate (|z1|)."""
        c1 = self.c1(eta)
        c3 = 4.0 * self.beta
        if c1 <= 0 or c3 >= 0:
            return None
        return float(np.sqrt(-c1 / c3))


def make_hopf_dae(a0: float = 0.05, omega: float = 1.0, beta: float = -0.4,
                  gamma: float = 0.3, a_eta: float = 10.0,
                  delta: float = 0.0) -> tuple[QuadraticDae, HopfOracle]:
    """Build the 4-row recast system (x, y, r, eta).

    ``delta`` adds a plain quadratic term delta*(x^2 - y^2, -2xy) to the
    oscillator.  With delta = 0 the manifold expansion terminates at order
    3 and the oracle's closed-form coefficients are exact; with delta != 0
    the expansion has a genuine infinite tail, which is what the residual
    slope diagnostics need.
    """
    n = 4
    B = sp.diags([1.0, 1.0, 0.0, 1.0])
    A = sp.csr_matrix(np.array([
        [a0, -omega, 0.0, 0.0],
        [omega, a0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ]))
    # raw tensor: rows i, entries q_i = sum vals * y1[j] * y2[k]
    rows, jdx, kdx, vals = [], [], [], []

    def add(i, j, k, v):
        rows.append(i); jdx.append(j); kdx.append(k); vals.append(v)

    X, Y, R, ETA = 0, 1, 2, 3
    # x-row: a_eta*eta*x + beta*x*r - gamma*y*r
    add(X, ETA, X, a_eta)
    add(X, X, R, beta)
    add(X, Y, R, -gamma)
    # y-row: a_eta*eta*y + gamma*x*r + beta*y*r
    add(Y, ETA, Y, a_eta)
    add(Y, X, R, gamma)
    add(Y, Y, R, beta)
    # r-row: x^2 + y^2
    add(R, X, X, 1.0)
    add(R, Y, Y, 1.0)
    if delta:
        # quadratic oscillator term delta * (x^2 - y^2, -2 x y)
        add(X, X, X, delta)
        add(X, Y, Y, -delta)
        add(Y, X, Y, -2.0 * delta)

    tensor = CooBilinear(n, rows, jdx, kdx, vals)
    part = DofPartition(velocity=np.array([X, Y]), pressure=np.array([R]), param=ETA)
    dae = coo_bilinear_dae(n, B, A, tensor, part,
                           meta={"kind": "synthetic-hopf", "a0": a0, "omega": omega,
                                 "beta": beta, "gamma": gamma, "a_eta": a_eta})
    return dae, HopfOracle(a0, omega, beta, gamma, a_eta)
