"""Photon-number statistics of zero-mean Gaussian states.

Moments come from the quadrants of the covariance matrix (closed forms up
to ``<n_i^2 n_j^2>``); probabilities and exact samples come from hafnians
of ``X A`` with ``A = I - (sigma + I/2)^{-1}`` and ``X`` the block swap.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .gaussian import CovarianceMatrix, gauge_fix, trace_out
from .hafnian import RepeatedHafnian

__all__ = [
    "StatsMatrices",
    "TruncationWarning",
    "stats_matrices",
    "mean_photons",
    "photon_covariance",
    "photon_moment",
    "normal_ordered_moment",
    "gbs_probability",
    "gbs_distribution",
    "sample_patterns",
    "write_samples_csv",
    "write_probabilities_csv",
    "SAMPLER_CHUNK",
]

MAX_PATTERN_PHOTONS = 20
MAX_EXACT_SAMPLING_MODES = 16
SAMPLER_CHUNK = 1024


class TruncationWarning(RuntimeWarning):
    """Per-mode photon cutoff discarded more probability than allowed."""


@dataclass(frozen=True)
class StatsMatrices:
    """Quadrants and kernels derived from a covariance matrix."""

    U: np.ndarray
    V: np.ndarray
    A: np.ndarray
    X: np.ndarray

    @property
    def M(self) -> int:
        return self.U.shape[0]


def _block_swap(M: int) -> np.ndarray:
    Z, I = np.zeros((M, M)), np.eye(M)
    return np.block([[Z, I], [I, Z]])


def stats_matrices(sigma: CovarianceMatrix) -> StatsMatrices:
    M = sigma.M
    Q = sigma.data + 0.5 * np.eye(2 * M)
    A = np.eye(2 * M) - np.linalg.inv(Q)
    return StatsMatrices(U=sigma.U.copy(), V=sigma.V.copy(), A=A, X=_block_swap(M))


def mean_photons(sigma: CovarianceMatrix) -> np.ndarray:
    """``<n_i> = V_ii``."""
    n = np.real(np.diag(sigma.V)).copy()
    if np.any(n < -1e-10):
        raise ValueError(f"negative mean photon number {n.min():.3e}: covariance is unphysical")
    return np.clip(n, 0.0, None)


def photon_covariance(sigma: CovarianceMatrix) -> np.ndarray:
    """``Cov(n_i, n_j) = |U_ij|^2 + |V_ij|^2``, diagonal ``|U_ii|^2 + <n>^2 + <n>``."""
    U, V = sigma.U, sigma.V
    n = mean_photons(sigma)
    cov = np.abs(U) ** 2 + np.abs(V) ** 2
    np.fill_diagonal(cov, np.abs(np.diag(U)) ** 2 + n**2 + n)
    return cov


# --- moments ----------------------------------------------------------------


def _canonical_pattern(pattern, M: int) -> list[tuple[int, int]]:
    if isinstance(pattern, Mapping):
        items = [(int(k), int(v)) for k, v in pattern.items() if int(v) != 0]
    else:
        pattern = list(pattern)
        if len(pattern) != M:
            raise ValueError(f"pattern has {len(pattern)} entries for {M} modes")
        items = [(k, int(v)) for k, v in enumerate(pattern) if int(v) != 0]
    items.sort()
    for k, v in items:
        if not 0 <= k < M:
            raise ValueError(f"mode {k} out of range")
        if v < 0:
            raise ValueError("powers must be non-negative")
    return items


def photon_moment(sigma: CovarianceMatrix, pattern) -> float:
    """``<prod_i n_i^{m_i}>`` for the supported low-order family.

    ``pattern`` is either a per-mode exponent sequence or a mapping
    ``{mode: exponent}``. Supported: ``<n_i>``, ``<n_i^2>``, ``<n_i n_j>``,
    ``<n_i^2 n_j>``, ``<n_i n_j^2>``, ``<n_i^2 n_j^2>``, ``<n_i n_j n_k>``.
    Indices are sorted before the closed forms are applied, and the local
    phases are first rotated so that every ``U_ii`` is real and >= 0.
    """
    items = _canonical_pattern(pattern, sigma.M)
    if not items:
        return 1.0
    powers = tuple(v for _, v in items)
    modes = [k for k, _ in items]
    s = gauge_fix(trace_out(sigma, modes))
    U, V = s.U, s.V
    n = np.real(np.diag(V))

    def nn(a, b):
        return abs(U[a, b]) ** 2 + abs(V[a, b]) ** 2 + n[a] * n[b]

    def n2(a):
        return abs(U[a, a]) ** 2 + 2 * n[a] ** 2 + n[a]

    def n2n(a, b):
        # <n_a^2 n_b>, valid for either index order in the gauge U_aa >= 0
        return (
            nn(a, b) * (4 * n[a] + 1)
            + n[b] * (abs(U[a, a]) ** 2 - 2 * n[a] ** 2)
            + 4 * np.real(U[a, a] * U[a, b] * V[a, b])
        )

    if powers == (1,):
        return float(n[0])
    if powers == (2,):
        return float(n2(0))
    if powers == (1, 1):
        return float(nn(0, 1))
    if powers == (2, 1):
        return float(n2n(0, 1))
    if powers == (1, 2):
        return float(n2n(1, 0))
    if powers == (2, 2):
        i, j = 0, 1
        nij = nn(i, j)
        val = (
            n2n(i, j) * (4 * n[j] + 1)
            + n2n(j, i) * (4 * n[i] + 1)
            - nij * (4 * n[i] + 1) * (4 * n[j] + 1)
            + 4 * (nij - n[i] * n[j]) ** 2
            + (2 * n[i] ** 2 - abs(U[i, i]) ** 2) * (2 * n[j] ** 2 - abs(U[j, j]) ** 2)
            + 4 * np.real(U[i, i] * U[j, j] * (np.conj(V[i, j]) ** 2 + np.conj(U[i, j]) ** 2))
            + 8 * abs(U[i, j]) ** 2 * abs(V[i, j]) ** 2
        )
        return float(np.real(val))
    if powers == (1, 1, 1):
        i, j, k = 0, 1, 2
        val = (
            n[i] * nn(j, k)
            + n[j] * nn(i, k)
            + n[k] * nn(i, j)
            - 2 * n[i] * n[j] * n[k]
            + 2
            * np.real(
                np.conj(U[i, j]) * (V[i, k] * U[j, k] + V[j, k] * U[i, k])
                + V[i, j] * (np.conj(U[i, k]) * U[j, k] + np.conj(V[i, k]) * V[j, k])
            )
        )
        return float(val)
    raise NotImplementedError(
        f"moment pattern {dict(items)} is outside the closed-form family (powers <= 2 over <= 2 modes, or three first powers)"
    )


def normal_ordered_moment(sigma: CovarianceMatrix, powers: Sequence[int]) -> complex:
    """``<prod a_i^dag^{k_i} prod a_i^{k_i}>`` as ``Haf((X sigma')_{[k,k]})``."""
    powers = [int(p) for p in powers]
    if len(powers) != sigma.M:
        raise ValueError("one power per mode required")
    M = sigma.M
    sigma_p = sigma.data - 0.5 * np.eye(2 * M)
    kernel = _block_swap(M) @ sigma_p
    return RepeatedHafnian(kernel)(powers + powers)


# --- probabilities ----------------------------------------------------------


class _ProbabilityKernel:
    """Shared-cache evaluator of ``P(n)`` for one covariance matrix."""

    def __init__(self, sigma: CovarianceMatrix):
        M = sigma.M
        Q = sigma.data + 0.5 * np.eye(2 * M)
        A = np.eye(2 * M) - np.linalg.inv(Q)
        # pure states have block-off-diagonal A; drop the rounding noise in the
        # diagonal blocks so that parity selection rules hold exactly
        scale = max(1.0, float(np.max(np.abs(A))))
        for blk in (np.s_[:M, :M], np.s_[M:, M:]):
            if np.max(np.abs(A[blk])) < 1e-12 * scale:
                A[blk] = 0.0
        kernel = _block_swap(M) @ A
        kernel = 0.5 * (kernel + kernel.T)
        self.M = M
        self.haf = RepeatedHafnian(kernel)
        self.vacuum = 1.0 / np.sqrt(np.real(np.linalg.det(Q)))

    def __call__(self, pattern: Sequence[int]) -> float:
        pattern = [int(n) for n in pattern]
        h = self.haf(pattern + pattern)
        denom = math.prod(math.factorial(n) for n in pattern)
        p = self.vacuum * np.real(h) / denom
        return float(max(p, 0.0))


def gbs_probability(sigma: CovarianceMatrix, pattern: Sequence[int], max_photons: int = MAX_PATTERN_PHOTONS) -> float:
    """Probability of photon pattern ``n`` (one count per mode)."""
    pattern = [int(n) for n in pattern]
    if len(pattern) != sigma.M:
        raise ValueError(f"pattern has {len(pattern)} entries for {sigma.M} modes")
    if any(n < 0 for n in pattern):
        raise ValueError("photon counts must be non-negative")
    if sum(pattern) > max_photons:
        raise OverflowError(f"pattern carries {sum(pattern)} photons, above the cap of {max_photons}")
    return _ProbabilityKernel(sigma)(pattern)


def _compositions(total: int, M: int):
    if M == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, M - 1):
            yield (first,) + rest


def gbs_distribution(sigma: CovarianceMatrix, max_total: int = MAX_PATTERN_PHOTONS) -> dict[tuple, float]:
    """All pattern probabilities with at most ``max_total`` photons in total."""
    kern = _ProbabilityKernel(sigma)
    out = {}
    for total in range(max_total + 1):
        for pat in _compositions(total, sigma.M):
            out[pat] = kern(pat)
    return out


# --- sampling ---------------------------------------------------------------


class _ChainSampler:
    def __init__(self, sigma: CovarianceMatrix, mass_tol: float, max_cutoff: int):
        self.M = sigma.M
        self.kernels = [_ProbabilityKernel(trace_out(sigma, range(k + 1))) for k in range(self.M)]
        self.mass_tol = mass_tol
        self.max_cutoff = max_cutoff
        self.cdfs: dict[tuple, np.ndarray] = {}
        self.joint: dict[tuple, float] = {(): 1.0}
        self.worst_loss = 0.0

    def conditional_cdf(self, prefix: tuple) -> np.ndarray:
        cdf = self.cdfs.get(prefix)
        if cdf is not None:
            return cdf
        k = len(prefix)
        norm = self.joint[prefix]
        probs = []
        acc = 0.0
        for j in range(self.max_cutoff + 1):
            p = self.kernels[k](prefix + (j,))
            self.joint[prefix + (j,)] = p
            probs.append(p)
            acc += p
            if norm <= 0 or acc >= norm * (1 - self.mass_tol):
                break
        probs = np.asarray(probs)
        loss = 1.0 - acc / norm if norm > 0 else 0.0
        if loss > self.mass_tol:
            self.worst_loss = max(self.worst_loss, loss)
        cdf = np.cumsum(probs) / max(acc, 1e-300)
        self.cdfs[prefix] = cdf
        return cdf


def sample_patterns(
    sigma: CovarianceMatrix,
    shots: int,
    seed=None,
    *,
    max_modes: int = MAX_EXACT_SAMPLING_MODES,
    max_cutoff: int = 40,
    mass_tol: float = 1e-6,
) -> np.ndarray:
    """Exact photon-pattern samples by the mode-by-mode chain rule.

    Mode ``k`` is drawn from ``P(n_k | n_1..n_{k-1})`` computed from the
    marginal Gaussian state of the first ``k`` modes; each conditional is
    truncated once it holds ``1 - mass_tol`` of its mass (hard cap
    ``max_cutoff``). Shots are split into chunks of ``SAMPLER_CHUNK``; chunk
    ``c`` draws its uniforms from ``SeedSequence(seed).spawn(n_chunks)[c]``,
    so results depend only on ``(sigma, shots, seed)``.

    Returns an integer array of shape ``(shots, M)``.
    """
    if sigma.M > max_modes:
        raise ValueError(f"exact sampling is limited to {max_modes} modes, state has {sigma.M}")
    shots = int(shots)
    out = np.zeros((shots, sigma.M), dtype=np.int64)
    if shots == 0:
        return out
    sampler = _ChainSampler(sigma, mass_tol, max_cutoff)
    n_chunks = -(-shots // SAMPLER_CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    for c, child in enumerate(children):
        lo, hi = c * SAMPLER_CHUNK, min(shots, (c + 1) * SAMPLER_CHUNK)
        u = np.random.default_rng(child).random((hi - lo, sigma.M))
        for s in range(hi - lo):
            prefix = ()
            for k in range(sigma.M):
                cdf = sampler.conditional_cdf(prefix)
                j = int(np.searchsorted(cdf, u[s, k], side="right"))
                j = min(j, len(cdf) - 1)
                prefix = prefix + (j,)
            out[lo + s] = prefix
    if sampler.worst_loss > mass_tol:
        warnings.warn(
            f"per-mode cutoff {max_cutoff} discarded up to {sampler.worst_loss:.2e} of conditional probability mass",
            TruncationWarning,
            stacklevel=2,
        )
    return out


# --- export -----------------------------------------------------------------


def write_samples_csv(path, samples: np.ndarray, labels: Sequence[str] | None = None) -> None:
    """One row per shot, one column per mode; a header row is always written."""
    samples = np.asarray(samples)
    M = samples.shape[1] if samples.ndim == 2 else (len(labels) if labels else 0)
    labels = list(labels) if labels is not None else [f"mode_{k}" for k in range(M)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(labels)
        for row in samples.reshape(-1, M) if M else []:
            w.writerow([int(v) for v in row])


def write_probabilities_csv(path, table: Mapping[tuple, float]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pattern", "probability"])
        for pat, p in table.items():
            w.writerow(["-".join(str(n) for n in pat), repr(float(p))])
