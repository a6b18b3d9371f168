"""Split-beam coincidence predictions.

A beam ``n_1`` is split on a balanced beamsplitter into ``n_3`` and ``n_4``
(the other input is vacuum). Then

    Cov(n_3, n_4) = eta_L eta_R / 4 * (Var(n_1) - <n_1>)

which is zero for coherent light, ``<n>^2/4`` for thermal light,
``(2<n>^2 + <n>)/4`` for squeezed vacuum and negative for Fock states.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .gaussian import (
    CovarianceMatrix,
    LossChannel,
    apply_greens,
    apply_loss,
    beamsplitter_greens,
)
from .photon_stats import photon_covariance

__all__ = [
    "SOURCE_KINDS",
    "SourceSpec",
    "QeCurve",
    "excess_variance",
    "splitter_covariance",
    "multimode_covariance",
    "threshold_covariance",
    "qe_weighted_slope",
    "split_beam_state",
    "split_beam_covariance",
    "BiphotonWarning",
    "write_sweep_csv",
]

SOURCE_KINDS = ("squeezed", "coherent", "thermal", "fock")
BIPHOTON_LIMIT = 0.1


class BiphotonWarning(UserWarning):
    """The biphoton approximation is used outside its validity range."""


@dataclass(frozen=True)
class SourceSpec:
    """Per-mode source description for split-beam detection.

    ``means`` are mean photon numbers per mode (for ``fock``, the integer
    photon number); ``eta_L`` and ``eta_R`` are per-arm transmissions,
    scalars or one per mode.
    """

    kind: str
    means: np.ndarray
    eta_L: np.ndarray = 1.0
    eta_R: np.ndarray = 1.0

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}; expected one of {SOURCE_KINDS}")
        means = np.atleast_1d(np.asarray(self.means, dtype=float))
        if np.any(means < 0):
            raise ValueError("mean photon numbers must be non-negative")
        etas = []
        for name in ("eta_L", "eta_R"):
            eta = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), means.shape).copy()
            if np.any(eta < 0) or np.any(eta > 1):
                raise ValueError(f"{name} must lie in [0, 1]")
            etas.append(eta)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "eta_L", etas[0])
        object.__setattr__(self, "eta_R", etas[1])

    @property
    def total_mean(self) -> float:
        return float(self.means.sum())

    @property
    def detector_mean(self) -> float:
        """Mean photons reaching the right-arm detector, ``sum_i eta_R,i <n_i> / 2``."""
        return float(np.sum(self.eta_R * self.means) / 2)


def excess_variance(kind: str, n) -> np.ndarray:
    """``Var(n) - <n>`` for a single mode of the given kind."""
    n = np.asarray(n, dtype=float)
    if kind == "squeezed":
        return 2 * n**2 + n
    if kind == "coherent":
        return np.zeros_like(n)
    if kind == "thermal":
        return n**2
    if kind == "fock":
        return -n
    raise ValueError(f"unknown source kind {kind!r}")


def splitter_covariance(spec: SourceSpec, mode: int = 0) -> float:
    """``Cov(n_3, n_4)`` for one mode of ``spec``."""
    return float(spec.eta_L[mode] * spec.eta_R[mode] / 4 * excess_variance(spec.kind, spec.means[mode]))


def multimode_covariance(spec: SourceSpec) -> float:
    """Sum of single-mode split covariances over independent modes."""
    if spec.means.size == 0:
        return 0.0
    return float(np.sum(spec.eta_L * spec.eta_R / 4 * excess_variance(spec.kind, spec.means)))


def threshold_covariance(p_click_given_click: float, p_click_given_dark: float, mean: float) -> float:
    """Covariance of two Bernoulli click variables.

    With ``m = P(c_4)`` and conditional probabilities ``P(c_3 | c_4)`` and
    ``P(c_3 | not c_4)``,

        Cov = P(c_3|c_4) m - (P(c_3|c_4) m + P(c_3|not c_4)(1 - m)) m
            = (P(c_3|c_4) - P(c_3|not c_4)) m (1 - m),

    a parabola in ``m`` vanishing at 0 and 1 and extremal at 1/2.
    """
    for p in (p_click_given_click, p_click_given_dark, mean):
        if not 0 <= p <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
    return float((p_click_given_click - p_click_given_dark) * mean * (1 - mean))


@dataclass(frozen=True)
class QeCurve:
    """Detector quantum efficiency on a wavelength grid (m); zero outside the grid."""

    wavelengths: np.ndarray
    qe: np.ndarray
    center: float

    def __post_init__(self):
        lam = np.asarray(self.wavelengths, dtype=float).reshape(-1)
        qe = np.asarray(self.qe, dtype=float).reshape(-1)
        if lam.shape != qe.shape or lam.size < 2:
            raise ValueError("need matching wavelength and QE arrays with at least two points")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if np.any(qe < 0) or np.any(qe > 1):
            raise ValueError("QE values must lie in [0, 1]")
        if not self.center > 0:
            raise ValueError("center wavelength must be positive")
        object.__setattr__(self, "wavelengths", lam)
        object.__setattr__(self, "qe", qe)

    def __call__(self, lam) -> np.ndarray:
        return np.interp(lam, self.wavelengths, self.qe, left=0.0, right=0.0)


def qe_weighted_slope(wavelengths, spectrum, qe: QeCurve, eta: float, total_mean: float | None = None) -> float:
    """Slope of ``Cov(n_3, n_4)`` against ``<N>`` in the biphoton approximation.

    Integrates over the short-wavelength half of the spectrum,

        eta^2 * int dl/l^2 P(l) QE(l) QE(l') / int dl/l^2 P(l),   1/l' = 2/l0 - 1/l,

    so that each photon at ``l`` is paired with its energy-conjugate partner.
    ``total_mean`` (if given) is checked against the validity limit.
    """
    lam = np.asarray(wavelengths, dtype=float).reshape(-1)
    P = np.asarray(spectrum, dtype=float).reshape(-1)
    if lam.shape != P.shape or lam.size < 2:
        raise ValueError("need matching wavelength and spectrum arrays")
    if np.any(P < 0):
        raise ValueError("spectral density must be non-negative")
    if not 0 <= eta <= 1:
        raise ValueError("eta must lie in [0, 1]")
    if total_mean is not None and total_mean >= BIPHOTON_LIMIT:
        warnings.warn(
            f"<N> = {total_mean:.3g} is outside the biphoton regime (< {BIPHOTON_LIMIT})",
            BiphotonWarning,
            stacklevel=2,
        )
    order = np.argsort(lam)
    lam, P = lam[order], P[order]
    l0 = qe.center
    side = lam <= l0
    if np.count_nonzero(side) < 2:
        raise ValueError("spectrum has fewer than two points on the short-wavelength side of the center")
    ls, Ps = lam[side], P[side]
    partner = 1.0 / (2.0 / l0 - 1.0 / ls)
    w = Ps / ls**2
    denom = np.trapezoid(w, ls)
    if not denom > 0:
        raise ValueError("spectrum carries no weight on the short-wavelength side")
    num = np.trapezoid(w * qe(ls) * qe(partner), ls)
    if num == 0:
        warnings.warn("spectrum lies entirely outside the QE support; slope is 0", BiphotonWarning, stacklevel=2)
        return 0.0
    return float(eta**2 * num / denom)


def split_beam_state(sigma: CovarianceMatrix, eta_L: float = 1.0, eta_R: float = 1.0) -> CovarianceMatrix:
    """Mix a single-mode state with vacuum on a balanced beamsplitter and attenuate each arm."""
    if sigma.M != 1:
        raise ValueError("split_beam_state expects a single-mode state")
    two = CovarianceMatrix(
        np.block(
            [
                [sigma.data[:1, :1], np.zeros((1, 1)), sigma.data[:1, 1:], np.zeros((1, 1))],
                [np.zeros((1, 1)), np.full((1, 1), 0.5), np.zeros((1, 1)), np.zeros((1, 1))],
                [sigma.data[1:, :1], np.zeros((1, 1)), sigma.data[1:, 1:], np.zeros((1, 1))],
                [np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), np.full((1, 1), 0.5)],
            ]
        )
    )
    out = apply_greens(beamsplitter_greens(np.pi / 4), two)
    return apply_loss(out, LossChannel(np.array([eta_L, eta_R])))


def split_beam_covariance(sigma: CovarianceMatrix, eta_L: float = 1.0, eta_R: float = 1.0) -> float:
    """``Cov(n_3, n_4)`` from the explicit two-mode covariance matrix."""
    return float(photon_covariance(split_beam_state(sigma, eta_L, eta_R))[0, 1])


def write_sweep_csv(path, total_means, covariances) -> None:
    """Two columns ``mean_total,covariance`` for plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mean_total", "covariance"])
        for n, c in zip(np.asarray(total_means, dtype=float), np.asarray(covariances, dtype=float)):
            w.writerow([repr(float(n)), repr(float(c))])
