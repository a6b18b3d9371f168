"""EMCCD measurement chain and spectrometer binning.

A photoelectron count ``n`` is amplified to ``x ~ Erlang(n, g)`` electrons
(``x = 0`` for ``n = 0``) and Gaussian readout noise of width ``sigma_r`` is
added. Analog operation inverts the raw moments of ``x`` into photon-number
moments; threshold operation turns each pixel into a click.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special, stats

from .gaussian import CovarianceMatrix
from .nlo import FrequencyGrid
from .photon_stats import mean_photons, photon_covariance

__all__ = [
    "EmccdConfig",
    "CAMERA_PROFILES",
    "SpectrometerConfig",
    "RawMoments",
    "PhotonMoments",
    "BinnedStats",
    "em_gain_sample",
    "simulate_frames",
    "raw_moments",
    "analog_invert_moments",
    "roc_curve",
    "pixel_to_photoelectrons",
    "electrons_to_pixels",
    "pixel_weights",
    "bin_photon_stats",
    "bin_covariance",
    "route_photons",
    "threshold_frames",
    "sample_binned_counts",
    "write_frames_csv",
    "write_frames_binary",
    "read_frames_binary",
    "write_roc_csv",
]

# Camera numbers are instrument-specific; the default profile gives a
# single-photon detection efficiency near 0.8 at a 5 sigma_r threshold.
CAMERA_PROFILES = {
    "default": dict(gain=3000.0, readout_sigma=100.0, qe=0.95, adc_k=21.43, bias=0.0, dark_rate=0.0),
    "ideal": dict(gain=1e6, readout_sigma=1.0, qe=1.0, adc_k=1.0, bias=0.0, dark_rate=0.0),
}


@dataclass(frozen=True)
class EmccdConfig:
    """Electron-multiplying CCD parameters.

    Parameters
    ----------
    gain : float
        EM gain ``g`` (electrons per photoelectron).
    readout_sigma : float
        Readout noise ``sigma_r`` (electrons).
    qe : float
        Quantum efficiency.
    adc_k : float
        Conversion factor ``k`` in ``<n_e> = k p / g - b``.
    bias : float
        Bias ``b`` in photoelectron units.
    dark_rate : float
        Probability per pixel and frame of a spurious single electron
        (dark current and clock-induced charge), amplified like a photoelectron.
    """

    gain: float = 3000.0
    readout_sigma: float = 100.0
    qe: float = 0.95
    adc_k: float = 21.43
    bias: float = 0.0
    dark_rate: float = 0.0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("EM gain must be positive")
        if not self.readout_sigma >= 0:
            raise ValueError("readout noise must be non-negative")
        if not 0 <= self.qe <= 1:
            raise ValueError("quantum efficiency must lie in [0, 1]")
        if not 0 <= self.dark_rate <= 1:
            raise ValueError("dark rate is a per-pixel probability in [0, 1]")

    @classmethod
    def from_profile(cls, name: str = "default", **overrides) -> "EmccdConfig":
        if name not in CAMERA_PROFILES:
            raise KeyError(f"unknown camera profile {name!r}; known: {sorted(CAMERA_PROFILES)}")
        return cls(**{**CAMERA_PROFILES[name], **overrides})


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def em_gain_sample(n, cfg: EmccdConfig, seed=None, readout: bool = True) -> np.ndarray:
    """Amplified electrons for photoelectron counts ``n``.

    ``n = 0`` gives no signal; ``n >= 1`` draws ``Erlang(n, g)``. Readout
    noise is added unless ``readout`` is False.
    """
    rng = _rng(seed)
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("photoelectron counts must be non-negative")
    shape = np.where(n > 0, n, 1).astype(float)
    x = np.where(n > 0, rng.gamma(shape, cfg.gain), 0.0)
    if readout and cfg.readout_sigma > 0:
        x = x + rng.normal(0.0, cfg.readout_sigma, size=x.shape)
    return x


def simulate_frames(photons, cfg: EmccdConfig, seed=None) -> np.ndarray:
    """Electrons read out for incident photon counts (shots x pixels).

    Photons are converted with probability ``qe``; each pixel gains a dark
    electron with probability ``dark_rate``.
    """
    rng = _rng(seed)
    photons = np.asarray(photons, dtype=np.int64)
    ne = rng.binomial(photons, cfg.qe)
    if cfg.dark_rate > 0:
        ne = ne + (rng.random(ne.shape) < cfg.dark_rate)
    return em_gain_sample(ne, cfg, rng)


def threshold_frames(frames, t: float) -> np.ndarray:
    """Clicks where the signal exceeds ``t``."""
    return np.asarray(frames) > t


def pixel_to_photoelectrons(p, cfg: EmccdConfig):
    """``<n_e> = k p / g - b``."""
    return cfg.adc_k * np.asarray(p, dtype=float) / cfg.gain - cfg.bias


def electrons_to_pixels(x, cfg: EmccdConfig):
    """Inverse of :func:`pixel_to_photoelectrons` applied to amplified electrons ``x = g n_e``."""
    return (np.asarray(x, dtype=float) + cfg.gain * cfg.bias) / cfg.adc_k


# --- analog moments ----------------------------------------------------------


@dataclass(frozen=True)
class RawMoments:
    """Sample moments of the amplified signal.

    ``m21[i, j] = <x_i^2 x_j>``; ``m11``, ``m22`` likewise. ``m111`` maps
    sorted index triples to ``<x_i x_j x_k>``.
    """

    m1: np.ndarray
    m2: np.ndarray
    m11: np.ndarray
    m21: np.ndarray
    m22: np.ndarray
    m111: dict = field(default_factory=dict)
    shots: int = 0


@dataclass(frozen=True)
class PhotonMoments:
    """Photon-number moments with the same layout as :class:`RawMoments`."""

    n: np.ndarray
    n2: np.ndarray
    nn: np.ndarray
    n2n: np.ndarray
    n2n2: np.ndarray
    nnn: dict = field(default_factory=dict)

    @property
    def variance(self) -> np.ndarray:
        return self.n2 - self.n**2

    @property
    def covariance(self) -> np.ndarray:
        cov = self.nn - np.outer(self.n, self.n)
        np.fill_diagonal(cov, self.variance)
        return cov


def raw_moments(frames, triples: Sequence[Sequence[int]] = ()) -> RawMoments:
    """Sample moments of ``frames`` (shots x pixels) up to ``<x_i^2 x_j^2>``."""
    x = np.asarray(frames, dtype=float)
    if x.ndim != 2:
        raise ValueError("frames must be a 2-D array (shots x pixels)")
    S = x.shape[0]
    if S == 0:
        raise ValueError("no frames")
    x2 = x * x
    m111 = {}
    for t in triples:
        i, j, k = sorted(int(v) for v in t)
        m111[(i, j, k)] = float(np.mean(x[:, i] * x[:, j] * x[:, k]))
    return RawMoments(
        m1=x.mean(axis=0),
        m2=x2.mean(axis=0),
        m11=x.T @ x / S,
        m21=x2.T @ x / S,
        m22=x2.T @ x2 / S,
        m111=m111,
        shots=S,
    )


def analog_invert_moments(raw: RawMoments, gain: float, readout_sigma: float = 0.0) -> PhotonMoments:
    """Photon-number moments from amplified-signal moments.

    Uses ``g^-k <x^k>_n = n (n+1) ... (n+k-1)``, so that

        <n>         = <x>/g
        <n^2>       = <x^2>/g^2 - <x>/g
        <n_i n_j>   = <x_i x_j>/g^2
        <n_i^2 n_j> = <x_i^2 x_j>/g^3 - <x_i x_j>/g^2
        <n_i^2 n_j^2> = <x_i^2 x_j^2>/g^4 - (<x_i^2 x_j> + <x_i x_j^2>)/g^3 + <x_i x_j>/g^2

    Independent zero-mean readout noise of width ``readout_sigma`` is
    removed from the even moments first. Diagonal entries of the pair
    matrices are not meaningful and are set from the single-mode moments.
    """
    g = float(gain)
    s2 = float(readout_sigma) ** 2
    m1, m11 = raw.m1, raw.m11.copy()
    m2 = raw.m2 - s2
    # <x_i^2 x_j> picks up sigma^2 <x_j>; <x_i^2 x_j^2> picks up sigma^2 on each square
    m21 = raw.m21 - s2 * m1[None, :]
    m22 = raw.m22 - s2 * (raw.m2[:, None] + raw.m2[None, :]) + s2**2

    n = m1 / g
    n2 = m2 / g**2 - m1 / g
    nn = m11 / g**2
    n2n = m21 / g**3 - m11 / g**2
    n2n2 = m22 / g**4 - (m21 + m21.T) / g**3 + m11 / g**2
    nnn = {key: val / g**3 for key, val in raw.m111.items()}
    np.fill_diagonal(nn, n2)
    return PhotonMoments(n=n, n2=n2, nn=nn, n2n=n2n, n2n2=n2n2, nnn=nnn)


# --- thresholding ------------------------------------------------------------


def _emg_survival(t, g: float, sigma: float) -> np.ndarray:
    """``P(E + N > t)`` for ``E ~ Exp(mean g)`` and ``N ~ Normal(0, sigma^2)``."""
    t = np.asarray(t, dtype=float)
    tail = special.ndtr(-t / sigma)
    log_term = sigma**2 / (2 * g**2) - t / g + special.log_ndtr((t - sigma**2 / g) / sigma)
    return tail + np.exp(log_term)


def roc_curve(cfg: EmccdConfig, thresholds) -> np.ndarray:
    """``(false_click_rate, pde)`` per threshold.

    The false rate is the chance that a dark pixel (readout noise, plus a
    dark electron with probability ``dark_rate``) exceeds ``t``; the PDE is
    ``qe`` times the chance that a single amplified photoelectron does.
    """
    if not cfg.readout_sigma > 0:
        raise ValueError("the ROC model needs positive readout noise")
    t = np.asarray(thresholds, dtype=float)
    single = _emg_survival(t, cfg.gain, cfg.readout_sigma)
    noise = special.ndtr(-t / cfg.readout_sigma)
    false = (1 - cfg.dark_rate) * noise + cfg.dark_rate * single
    pde = cfg.qe * single
    return np.stack([np.clip(false, 0, 1), np.clip(pde, 0, 1)], axis=-1)


def write_roc_csv(path, thresholds, roc) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "false_rate", "pde"])
        for t, (f, p) in zip(np.asarray(thresholds, dtype=float), np.asarray(roc)):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


# --- spectrometer binning ------------------------------------------------------


@dataclass(frozen=True)
class SpectrometerConfig:
    """Pixel binning of a fine frequency grid.

    ``bin_edges`` are angular-frequency pixel boundaries on the same axis
    as ``fine_grid.omega``; ``psf_sigma`` is the Gaussian point-spread width
    in pixels. Every pixel must hold at least ``min_points_per_bin`` fine
    grid points.
    """

    fine_grid: FrequencyGrid
    bin_edges: np.ndarray
    psf_sigma: float = 0.6
    min_points_per_bin: int = 4

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float).reshape(-1)
        if edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing with at least one bin")
        if not self.psf_sigma >= 0:
            raise ValueError("psf_sigma must be non-negative")
        edges.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)

    @property
    def n_bins(self) -> int:
        return self.bin_edges.size - 1

    @classmethod
    def uniform(cls, fine_grid: FrequencyGrid, n_bins: int = 512, psf_sigma: float = 0.6, min_points_per_bin: int = 4):
        """Equal-width pixels spanning the fine grid (edges half a spacing outside)."""
        w = fine_grid.omega
        lo, hi = w[0] - fine_grid.spacing / 2, w[-1] + fine_grid.spacing / 2
        return cls(fine_grid, np.linspace(lo, hi, n_bins + 1), psf_sigma, min_points_per_bin)

    @classmethod
    def from_wavelength_edges(cls, fine_grid: FrequencyGrid, edges_m, psf_sigma: float = 0.6, min_points_per_bin: int = 4):
        """Pixel boundaries given as wavelengths (m), converted to ``2 pi c / lambda``."""
        omega = 2 * np.pi * 299792458.0 / np.asarray(edges_m, dtype=float)
        return cls(fine_grid, np.sort(omega), psf_sigma, min_points_per_bin)


def pixel_weights(cfg: SpectrometerConfig) -> np.ndarray:
    """Arrival probabilities ``W[p, f]`` of a photon in fine mode ``f`` on pixel ``p``.

    The fine point sits at fractional pixel coordinate ``u_f``; its arrival
    position is Gaussian around ``u_f`` with width ``psf_sigma``, integrated
    over each pixel and renormalised over the detector.
    """
    w = cfg.fine_grid.omega
    edges = cfg.bin_edges
    if w[0] < edges[0] or w[-1] > edges[-1]:
        raise ValueError("fine grid extends beyond the spectrometer pixels")
    P = cfg.n_bins
    idx = np.clip(np.searchsorted(edges, w, side="right") - 1, 0, P - 1)
    counts = np.bincount(idx, minlength=P)
    if np.any(counts < cfg.min_points_per_bin):
        raise ValueError(
            f"fine grid does not resolve the pixels: {int(counts.min())} points in the sparsest bin, "
            f"need {cfg.min_points_per_bin}"
        )
    if cfg.psf_sigma == 0:
        W = np.zeros((P, w.size))
        W[idx, np.arange(w.size)] = 1.0
        return W
    u = idx + (w - edges[idx]) / (edges[idx + 1] - edges[idx])
    lo = np.arange(P)[:, None]
    with np.errstate(over="ignore"):
        W = special.ndtr((lo + 1 - u[None, :]) / cfg.psf_sigma) - special.ndtr((lo - u[None, :]) / cfg.psf_sigma)
    return W / W.sum(axis=0, keepdims=True)


@dataclass(frozen=True)
class BinnedStats:
    mean: np.ndarray
    covariance: np.ndarray
    weights: np.ndarray


def bin_photon_stats(mean, cov, W) -> BinnedStats:
    """Accumulate fine-grid photon means and covariances into pixels.

    Each photon lands on pixel ``p`` independently with probability
    ``W[p, f]``, so

        mean_bin = W mean
        cov_bin  = W cov W^T + diag(W mean) - W diag(mean) W^T

    The last two terms are the multinomial routing noise; they vanish
    for a sharp (0/1) assignment.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    W = np.asarray(W, dtype=float)
    mb = W @ mean
    cb = W @ cov @ W.T + np.diag(mb) - (W * mean[None, :]) @ W.T
    return BinnedStats(mb, 0.5 * (cb + cb.T), W)


def bin_covariance(fine_sigma: CovarianceMatrix, cfg: SpectrometerConfig) -> BinnedStats:
    """Pixel photon means and covariance of a fine-grid Gaussian state."""
    if fine_sigma.M != cfg.fine_grid.N:
        raise ValueError(f"state has {fine_sigma.M} modes, spectrometer grid has {cfg.fine_grid.N}")
    return bin_photon_stats(mean_photons(fine_sigma), photon_covariance(fine_sigma), pixel_weights(cfg))


def route_photons(patterns, W, seed=None) -> np.ndarray:
    """Send each photon of fine-mode patterns to a pixel drawn from ``W[:, f]``."""
    rng = _rng(seed)
    patterns = np.asarray(patterns, dtype=np.int64)
    W = np.asarray(W, dtype=float)
    out = np.zeros((patterns.shape[0], W.shape[0]), dtype=np.int64)
    for f in range(W.shape[1]):
        col = W[:, f] / W[:, f].sum()
        out += rng.multinomial(patterns[:, f], col)
    return out


def sample_binned_counts(mean, cov, shots: int, seed=None) -> np.ndarray:
    """Correlated photon counts from pixel means and covariances (Gaussian copula).

    Marginals are negative binomial when over-dispersed and Poisson
    otherwise; a latent Gaussian with the count correlation matrix couples
    them. This reproduces means and variances exactly and correlations
    approximately; it is not exact boson sampling.
    """
    rng = _rng(seed)
    mean = np.clip(np.asarray(mean, dtype=float), 0.0, None)
    cov = np.asarray(cov, dtype=float)
    P = mean.size
    if shots == 0:
        return np.zeros((0, P), dtype=np.int64)
    var = np.clip(np.diag(cov), 0.0, None)
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = cov / np.outer(sd, sd)
    R[~np.isfinite(R)] = 0.0
    np.fill_diagonal(R, 1.0)
    lam, vec = np.linalg.eigh(0.5 * (R + R.T))
    # nearest PSD factor, rows rescaled to unit latent variance
    L = vec * np.sqrt(np.clip(lam, 0.0, None))
    L = L / np.sqrt(np.clip(np.sum(L * L, axis=1), 1e-300, None))[:, None]
    z = rng.standard_normal((shots, P)) @ L.T
    u = special.ndtr(z)
    out = np.zeros((shots, P), dtype=np.int64)
    for p in range(P):
        m, v = mean[p], var[p]
        if m <= 0:
            continue
        if v > m * (1 + 1e-12):
            size = m * m / (v - m)
            out[:, p] = stats.nbinom.ppf(u[:, p], size, size / (size + m)).astype(np.int64)
        else:
            out[:, p] = stats.poisson.ppf(u[:, p], m).astype(np.int64)
    return out


# --- frame export ---------------------------------------------------------------

_FRAME_MAGIC = b"FRMS"


def write_frames_csv(path, frames, prefix: str = "px") -> None:
    """One row per shot, one column per pixel, with a header row."""
    frames = np.asarray(frames)
    cols = frames.shape[1] if frames.ndim == 2 else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}{k}" for k in range(cols)])
        integral = np.issubdtype(frames.dtype, np.integer) or frames.dtype == bool
        for row in frames.reshape(-1, cols) if cols else []:
            w.writerow([int(v) for v in row] if integral else [repr(float(v)) for v in row])


def write_frames_binary(path, frames) -> None:
    """``FRMS`` magic, uint32 shots, uint32 pixels, then float64 little-endian row-major."""
    frames = np.asarray(frames, dtype="<f8")
    if frames.ndim != 2:
        raise ValueError("frames must be a 2-D array")
    with open(path, "wb") as fh:
        fh.write(_FRAME_MAGIC + struct.pack("<II", *frames.shape))
        fh.write(np.ascontiguousarray(frames).tobytes())


def read_frames_binary(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != _FRAME_MAGIC:
        raise ValueError(f"{path}: not a frame file")
    rows, cols = struct.unpack("<II", data[4:12])
    arr = np.frombuffer(data[12:], dtype="<f8")
    if arr.size != rows * cols:
        raise ValueError(f"{path}: truncated frame data")
    return arr.reshape(rows, cols).copy()
