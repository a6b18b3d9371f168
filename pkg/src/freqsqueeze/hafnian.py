"""Hafnians of symmetric matrices.

Two evaluators are provided:

* :func:`hafnian` uses the power-trace inclusion-exclusion formula over
  subsets of row pairs, ``O(2^{n/2} n^3)``.
* :class:`RepeatedHafnian` evaluates hafnians of matrices whose rows and
  columns are repeated (the photon-number kernel) by memoised Wick
  recursion on the multiplicity vector. All sub-patterns share one cache,
  so sweeping a whole photon-number lattice costs roughly one evaluation
  per lattice point.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = ["hafnian", "hafnian_repeated", "RepeatedHafnian", "expand_repeated"]


def _check_symmetric(A: np.ndarray, tol: float) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"hafnian needs a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > tol * scale:
        raise ValueError("hafnian needs a symmetric matrix")


def _exp_series_coeff(power_traces: np.ndarray, n: int) -> complex:
    # coefficient of t^n in exp(sum_k p_k t^k / (2k))
    a = np.array([power_traces[k - 1] / (2 * k) for k in range(1, n + 1)])
    e = np.zeros(n + 1, dtype=complex)
    e[0] = 1.0
    for m in range(1, n + 1):
        k = np.arange(1, m + 1)
        e[m] = np.sum(k * a[k - 1] * e[m - k]) / m
    return e[n]


def hafnian(A, tol: float = 1e-10) -> complex:
    """Sum over perfect matchings of ``prod A[i, j]``.

    The empty matrix has hafnian 1 and odd-sized matrices have hafnian 0.
    """
    A = np.asarray(A, dtype=complex)
    if A.size == 0:
        return 1.0 + 0j
    _check_symmetric(A, tol)
    dim = A.shape[0]
    if dim % 2:
        return 0.0 + 0j
    n = dim // 2
    # pair rows (2i, 2i+1) and swap within each pair
    swap = np.kron(np.eye(n), np.array([[0, 1], [1, 0]]))
    AX = A @ swap
    total = 0.0 + 0j
    for size in range(1, n + 1):
        sign = (-1) ** (n - size)
        for subset in itertools.combinations(range(n), size):
            idx = np.array([[2 * s, 2 * s + 1] for s in subset]).ravel()
            lam = np.linalg.eigvals(AX[np.ix_(idx, idx)])
            powers = np.array([np.sum(lam**k) for k in range(1, n + 1)])
            total += sign * _exp_series_coeff(powers, n)
    return complex(total)


def expand_repeated(A, reps) -> np.ndarray:
    """Matrix with row/column ``i`` of ``A`` repeated ``reps[i]`` times."""
    idx = np.repeat(np.arange(len(reps)), np.asarray(reps, dtype=int))
    A = np.asarray(A)
    return A[np.ix_(idx, idx)]


class RepeatedHafnian:
    """Hafnian of ``A`` expanded by a multiplicity vector, with a shared cache.

    Uses ``Haf(k) = sum_j (k'_j) A[i, j] Haf(k' - e_j)`` where ``i`` is the
    first index with ``k_i > 0`` and ``k' = k - e_i``.
    """

    def __init__(self, A):
        A = np.asarray(A, dtype=complex)
        _check_symmetric(A, 1e-10)
        self.A = A
        self._cache: dict[tuple, complex] = {}

    def __call__(self, reps) -> complex:
        reps = tuple(int(r) for r in reps)
        if len(reps) != self.A.shape[0]:
            raise ValueError("multiplicity vector length does not match matrix size")
        if any(r < 0 for r in reps):
            raise ValueError("multiplicities must be non-negative")
        if sum(reps) % 2:
            return 0.0 + 0j
        return self._eval(reps)

    def _eval(self, reps: tuple) -> complex:
        cached = self._cache.get(reps)
        if cached is not None:
            return cached
        first = next((k for k, r in enumerate(reps) if r), None)
        if first is None:
            return 1.0 + 0j
        rest = list(reps)
        rest[first] -= 1
        row = self.A[first]
        total = 0.0 + 0j
        for j, r in enumerate(rest):
            if r == 0 or row[j] == 0:
                continue
            rest[j] -= 1
            total += r * row[j] * self._eval(tuple(rest))
            rest[j] += 1
        self._cache[reps] = total
        return total


def hafnian_repeated(A, reps) -> complex:
    """One-shot hafnian of ``A`` with rows/columns repeated per ``reps``."""
    return RepeatedHafnian(A)(reps)
