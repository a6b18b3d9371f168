"""Least-squares fits of parametric gain and conversion saturation.

Both models are fitted with damped Gauss-Newton (Levenberg-Marquardt, via
``scipy.optimize.least_squares``) using analytic Jacobians. The scale
parameter is fitted in log space so it stays positive. Starting values come
from a profile over a log-spaced grid of the scale parameter, where the
amplitude enters linearly and is solved in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

__all__ = [
    "FitResult",
    "FitError",
    "gain_model",
    "saturation_model",
    "fit_parametric_gain",
    "fit_saturation",
]


class FitError(RuntimeError):
    """The optimiser did not converge."""

    def __init__(self, message: str, residual_norm: float):
        super().__init__(message)
        self.residual_norm = residual_norm


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters, one-sigma standard errors and residual norm."""

    model: str
    params: dict
    stderr: dict
    residual_norm: float
    nfev: int = 0
    covariance: np.ndarray = field(default=None, repr=False)

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {k: float(v) for k, v in self.params.items()},
            "stderr": {k: float(v) for k, v in self.stderr.items()},
            "residual_norm": float(self.residual_norm),
            "nfev": int(self.nfev),
        }


def gain_model(P, etaM: float, P0: float) -> np.ndarray:
    """``etaM sinh^2(sqrt(P / P0))``."""
    return etaM * np.sinh(np.sqrt(np.asarray(P, dtype=float) / P0)) ** 2


def saturation_model(P, c_max: float, P_sat: float) -> np.ndarray:
    """``c_max (1 - exp(-P / P_sat))``."""
    return c_max * -np.expm1(-np.asarray(P, dtype=float) / P_sat)


def _check_data(x, y, min_points=3):
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("power and data arrays differ in length")
    if x.size < min_points:
        raise ValueError(f"need at least {min_points} points, got {x.size}")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("data must be finite")
    return x, y


def _profile_start(x, y, basis, scales):
    # amplitude is linear: a = <b, y> / <b, b> for each trial scale
    best = None
    for s in scales:
        b = basis(x, s)
        bb = float(b @ b)
        if bb == 0 or not np.isfinite(bb):
            continue
        a = float(b @ y) / bb
        cost = float(np.sum((a * b - y) ** 2))
        if best is None or cost < best[0]:
            best = (cost, a, s)
    if best is None:
        raise FitError("could not find a starting point", float("nan"))
    return best[1], best[2]


def _finish(model, names, x, y, fun, jac, p0, transform):
    sol = least_squares(fun, p0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    resid = fun(sol.x)
    rnorm = float(np.linalg.norm(resid))
    if sol.status <= 0 or not np.all(np.isfinite(sol.x)):
        raise FitError(f"{model} fit did not converge: {sol.message}", rnorm)
    J = jac(sol.x)
    dof = max(x.size - len(p0), 1)
    s2 = rnorm**2 / dof
    try:
        cov_raw = np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov_raw = np.full((len(p0), len(p0)), np.nan)
    values, grads = transform(sol.x)
    G = np.diag(grads)
    cov = G @ cov_raw @ G.T
    params = dict(zip(names, values))
    stderr = dict(zip(names, np.sqrt(np.clip(np.diag(cov), 0, None))))
    return FitResult(model, params, stderr, rnorm, int(sol.nfev), cov)


def fit_parametric_gain(powers, photon_means, sigma=None) -> FitResult:
    """Fit ``<n>_total = etaM sinh^2(sqrt(P / P0))``.

    Parameters
    ----------
    powers : array_like
        Pump powers, all positive.
    photon_means : array_like
        Measured mean photon numbers per shot.
    sigma : array_like, optional
        Per-point uncertainties; residuals are divided by them.

    Returns
    -------
    FitResult
        Parameters ``etaM`` and ``P0``.
    """
    P, y = _check_data(powers, photon_means)
    if np.any(P <= 0):
        raise ValueError("powers must be positive")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    scales = np.geomspace(P.min() / 100, P.max() * 100, 400)
    a0, P00 = _profile_start(P, y * w, lambda x, s: w * np.sinh(np.sqrt(x / s)) ** 2, scales)

    def fun(p):
        a, lp = p
        return w * (a * np.sinh(np.sqrt(P * np.exp(-lp))) ** 2 - y)

    def jac(p):
        a, lp = p
        u = np.sqrt(P * np.exp(-lp))
        # d/d(ln P0) sinh^2(u) = -u sinh(u) cosh(u) = -u sinh(2u) / 2
        return np.column_stack([w * np.sinh(u) ** 2, -w * a * u * np.sinh(2 * u) / 2])

    def transform(p):
        a, lp = p
        return (a, np.exp(lp)), (1.0, np.exp(lp))

    return _finish("parametric_gain", ("etaM", "P0"), P, y, fun, jac, np.array([a0, np.log(P00)]), transform)


def fit_saturation(powers, conversions, sigma=None) -> FitResult:
    """Fit ``c(P) = c_max (1 - exp(-P / P_sat))``.

    Returns
    -------
    FitResult
        Parameters ``c_max`` and ``P_sat``.
    """
    P, c = _check_data(powers, conversions)
    if np.any(P < 0):
        raise ValueError("powers must be non-negative")
    if np.any(c < 0) or np.any(c > 1):
        raise ValueError("conversions must lie in [0, 1]")
    w = np.ones_like(c) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    pos = P[P > 0]
    if pos.size == 0:
        raise ValueError("need at least one positive power")
    scales = np.geomspace(pos.min() / 100, P.max() * 100, 400)
    a0, s0 = _profile_start(P, c * w, lambda x, s: -w * np.expm1(-x / s), scales)

    def fun(p):
        a, ls = p
        return w * (a * -np.expm1(-P * np.exp(-ls)) - c)

    def jac(p):
        a, ls = p
        x = P * np.exp(-ls)
        return np.column_stack([-w * np.expm1(-x), -w * a * x * np.exp(-x)])

    def transform(p):
        a, ls = p
        return (a, np.exp(ls)), (1.0, np.exp(ls))

    return _finish("saturation", ("c_max", "P_sat"), P, c, fun, jac, np.array([a0, np.log(s0)]), transform)
