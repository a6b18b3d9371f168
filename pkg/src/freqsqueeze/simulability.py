"""Classical-simulability bound for lossy, noisy Gaussian boson sampling.

An experiment with ``K`` squeezers of parameter ``r``, transmission ``eta``,
detector efficiency ``eta_D`` and dark-count probability ``p_D`` can be
simulated to total-variation distance ``epsilon`` whenever

    sech(Theta(y) / 2) > exp(-epsilon^2 / (4K)),
    y = ln[(1 - 2 p_D/eta_D) / (eta e^{-2r} + 1 - eta)],

with ``Theta(y) = max(y, 0)``. The smallest such ``epsilon`` solves the
equality: ``epsilon = 2 sqrt(K ln cosh(y / 2))`` for ``y > 0`` and 0 otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "SimulabilityInput",
    "theta_argument",
    "simulability_epsilon",
    "simulability_epsilon_rootfind",
    "epsilon_surface",
]


@dataclass(frozen=True)
class SimulabilityInput:
    r: float
    eta: float
    eta_D: float
    p_D: float
    K: int

    def __post_init__(self):
        if not self.r >= 0 or not math.isfinite(self.r):
            raise ValueError("squeezing parameter must be finite and non-negative")
        for name in ("eta", "eta_D", "p_D"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.eta_D == 0:
            raise ValueError("eta_D must be positive")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be a positive integer")


def theta_argument(inp: SimulabilityInput) -> float:
    """``y``; ``-inf`` when the numerator ``1 - 2 p_D / eta_D`` is not positive."""
    num = 1.0 - 2.0 * inp.p_D / inp.eta_D
    if num <= 0:
        return -math.inf
    # log(eta e^{-2r} + 1 - eta) without cancellation for eta -> 1, r large
    terms = []
    if inp.eta > 0:
        terms.append(math.log(inp.eta) - 2.0 * inp.r)
    if inp.eta < 1:
        terms.append(math.log1p(-inp.eta))
    log_den = float(np.logaddexp.reduce(terms))
    return math.log(num) - log_den


def _log_cosh(x: float) -> float:
    x = abs(x)
    return x + math.log1p(math.exp(-2.0 * x)) - math.log(2.0)


def simulability_epsilon(inp: SimulabilityInput) -> float:
    """Closed-form inversion of the bound."""
    y = theta_argument(inp)
    if not y > 0:
        return 0.0
    if math.isinf(y):
        return math.inf
    return 2.0 * math.sqrt(inp.K * _log_cosh(0.5 * y))


def simulability_epsilon_rootfind(inp: SimulabilityInput) -> float:
    """Independent inversion: bracket and bisect ``ln sech(y/2) + eps^2/(4K) = 0``."""
    y = theta_argument(inp)
    if not y > 0:
        return 0.0
    if math.isinf(y):
        return math.inf
    # ln sech(h) = ln 2 - ln(e^h + e^-h)
    log_sech = math.log(2.0) - float(np.logaddexp(0.5 * y, -0.5 * y))

    def f(eps):
        return log_sech + eps * eps / (4.0 * inp.K)

    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def epsilon_surface(eta_D, p_D, r: float, eta: float, K: int) -> np.ndarray:
    """``epsilon`` on the ``(eta_D, p_D)`` grid, rows indexed by ``eta_D``."""
    eta_D = np.asarray(eta_D, dtype=float).reshape(-1)
    p_D = np.asarray(p_D, dtype=float).reshape(-1)
    out = np.empty((eta_D.size, p_D.size))
    for i, ed in enumerate(eta_D):
        for j, pd in enumerate(p_D):
            out[i, j] = simulability_epsilon(SimulabilityInput(r, eta, ed, pd, K))
    return out
