"""Multimode zero-mean Gaussian states in the complex (a, a^dagger) basis.

All matrices use the fixed ordering ``xi = [a_1 .. a_M, a_1^dag .. a_M^dag]``.
The covariance matrix is ``sigma = 1/2 <{xi, xi^dag}>`` so that the vacuum is
``I/2`` and its quadrants read

    sigma = [[V + I/2, U], [U*, V^T + I/2]]

with ``V_ij = <a_j^dag a_i>`` Hermitian and ``U_ij = <a_i a_j>`` symmetric.

A lossless Gaussian operation acts as ``a_out = C a_in + S a_in^dag``; its
Green's function in the xi basis is ``[[C, S], [S*, C*]]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "CovarianceMatrix",
    "GreensFunction",
    "LossChannel",
    "SupermodeDecomposition",
    "NotSymplecticError",
    "vacuum_covariance",
    "squeezer_greens",
    "two_mode_squeezer_greens",
    "beamsplitter_greens",
    "passive_greens",
    "identity_greens",
    "random_symplectic_greens",
    "covariance_from_greens",
    "apply_greens",
    "apply_loss",
    "trace_out",
    "bloch_messiah",
    "symplectic_residual",
    "gauge_fix",
    "direct_sum",
    "embed",
    "to_quadrature",
    "from_quadrature",
]

SYMPLECTIC_TOL = 1e-8
BLOCH_MESSIAH_GATE = 1e-6


class NotSymplecticError(ValueError):
    """Raised when a Green's function violates the commutation relations."""


def _commutation_form(M: int) -> np.ndarray:
    # [xi_i, xi_j^dag] = diag(I, -I) in the (a, a^dag) basis
    return np.diag(np.concatenate([np.ones(M), -np.ones(M)]))


@dataclass(frozen=True)
class CovarianceMatrix:
    """Second moments of a zero-mean Gaussian state of ``M`` modes."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=complex)
        if data.ndim != 2 or data.shape[0] != data.shape[1] or data.shape[0] % 2:
            raise ValueError(f"covariance must be 2M x 2M, got shape {data.shape}")
        if data.shape[0] == 0:
            raise ValueError("covariance must describe at least one mode")
        scale = max(1.0, float(np.max(np.abs(data))))
        if np.max(np.abs(data - data.conj().T)) > 1e-12 * scale:
            raise ValueError("covariance matrix is not Hermitian")
        data = 0.5 * (data + data.conj().T)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def M(self) -> int:
        return self.data.shape[0] // 2

    @property
    def V(self) -> np.ndarray:
        M = self.M
        return self.data[:M, :M] - 0.5 * np.eye(M)

    @property
    def U(self) -> np.ndarray:
        M = self.M
        return self.data[:M, M:]

    def physicality_margin(self) -> float:
        """Smallest eigenvalue of ``sigma + Z/2`` (Z the commutation form).

        Non-negative for every physical state; this is the complex-basis form
        of the uncertainty relation ``sigma + i Omega / 2 >= 0``.
        """
        mat = self.data + 0.5 * _commutation_form(self.M)
        return float(np.linalg.eigvalsh(mat)[0])

    def is_physical(self, tol: float = 1e-9) -> bool:
        return self.physicality_margin() >= -tol

    def __eq__(self, other):
        if not isinstance(other, CovarianceMatrix):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class GreensFunction:
    """Input-output map ``a_out = C a_in + S a_in^dag``.

    ``C`` and ``S`` are ``M_out x M_in``. Rectangular maps are allowed (for
    example one block of a bipartite frequency conversion) but only square
    ones can generate a covariance matrix.
    """

    C: np.ndarray
    S: np.ndarray = None

    def __post_init__(self):
        C = np.atleast_2d(np.array(self.C, dtype=complex))
        S = np.zeros_like(C) if self.S is None else np.atleast_2d(np.array(self.S, dtype=complex))
        if C.shape != S.shape:
            raise ValueError(f"C {C.shape} and S {S.shape} blocks differ in shape")
        C.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "S", S)

    @property
    def M_out(self) -> int:
        return self.C.shape[0]

    @property
    def M_in(self) -> int:
        return self.C.shape[1]

    @property
    def is_square(self) -> bool:
        return self.M_in == self.M_out

    @property
    def matrix(self) -> np.ndarray:
        """The full ``2M_out x 2M_in`` matrix acting on ``xi``."""
        return np.block([[self.C, self.S], [self.S.conj(), self.C.conj()]])

    def __matmul__(self, other: "GreensFunction") -> "GreensFunction":
        # (self o other): apply `other` first
        C = self.C @ other.C + self.S @ other.S.conj()
        S = self.C @ other.S + self.S @ other.C.conj()
        return GreensFunction(C, S)


@dataclass(frozen=True)
class LossChannel:
    """Per-mode transmission ``eta`` and added noise ``nu = nbar + 1/2``."""

    eta: np.ndarray
    nu: np.ndarray = None

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        nu = np.full_like(eta, 0.5) if self.nu is None else np.atleast_1d(np.asarray(self.nu, dtype=float))
        nu = np.broadcast_to(nu, eta.shape).copy()
        if np.any(eta < 0) or np.any(eta > 1) or not np.all(np.isfinite(eta)):
            raise ValueError("transmission eta must lie in [0, 1]")
        if np.any(nu < 0.5) or not np.all(np.isfinite(nu)):
            raise ValueError("added noise nu must be >= 1/2")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "nu", nu)

    @classmethod
    def uniform(cls, eta: float, M: int, nbar: float = 0.0) -> "LossChannel":
        return cls(np.full(M, eta), np.full(M, nbar + 0.5))


@dataclass(frozen=True)
class SupermodeDecomposition:
    """Bloch-Messiah factors of a lossless Green's function.

    ``G = U_out diag-squeezer(r) U_in^dag``, i.e. ``C = U_out cosh(r) U_in^dag``
    and ``S = U_out sinh(r) U_in^T``. Columns of ``output_modes`` are the
    output supermode spectra. The real quadrature factors are kept as well
    (``x = a + a^dag``, ``p = i (a^dag - a)``).
    """

    squeezing_params: np.ndarray
    output_modes: np.ndarray
    input_modes: np.ndarray
    quadrature_out: np.ndarray = field(repr=False)
    quadrature_in: np.ndarray = field(repr=False)

    @property
    def mean_photons(self) -> np.ndarray:
        """Photons per supermode for vacuum input, ``sinh(r)**2``."""
        return np.sinh(self.squeezing_params) ** 2

    @property
    def squeezing_db(self) -> np.ndarray:
        return 20 * np.log10(np.exp(self.squeezing_params))

    def reconstruct(self) -> GreensFunction:
        r = self.squeezing_params
        Uo, Ui = self.output_modes, self.input_modes
        C = (Uo * np.cosh(r)) @ Ui.conj().T
        S = (Uo * np.sinh(r)) @ Ui.T
        return GreensFunction(C, S)


# --- constructors -----------------------------------------------------------


def vacuum_covariance(M: int) -> CovarianceMatrix:
    if M < 1:
        raise ValueError("mode count must be >= 1")
    return CovarianceMatrix(0.5 * np.eye(2 * M))


def identity_greens(M: int) -> GreensFunction:
    return GreensFunction(np.eye(M))


def squeezer_greens(r: float, phi: float = 0.0) -> GreensFunction:
    """Single-mode squeezer ``a -> cosh(r) a + e^{i phi} sinh(r) a^dag``."""
    if not np.isfinite(r):
        raise ValueError("squeezing parameter must be finite")
    return GreensFunction([[np.cosh(r)]], [[np.exp(1j * phi) * np.sinh(r)]])


def two_mode_squeezer_greens(r: float, phi: float = 0.0) -> GreensFunction:
    """``a_1 -> cosh(r) a_1 + e^{i phi} sinh(r) a_2^dag`` and symmetric."""
    c, s = np.cosh(r), np.exp(1j * phi) * np.sinh(r)
    return GreensFunction(np.eye(2) * c, np.array([[0, s], [s, 0]]))


def beamsplitter_greens(theta: float, phi: float = 0.0) -> GreensFunction:
    """Two-mode beamsplitter; ``theta = pi/4`` is balanced."""
    c, s = np.cos(theta), np.sin(theta)
    e = np.exp(1j * phi)
    return GreensFunction(np.array([[c, e * s], [-np.conj(e) * s, c]]))


def passive_greens(W: np.ndarray) -> GreensFunction:
    """Passive (number conserving) map ``a -> W a`` for unitary ``W``."""
    return GreensFunction(np.asarray(W, dtype=complex))


def direct_sum(*gs: GreensFunction) -> GreensFunction:
    from scipy.linalg import block_diag

    return GreensFunction(block_diag(*[g.C for g in gs]), block_diag(*[g.S for g in gs]))


def embed(g: GreensFunction, modes: Sequence[int], M: int) -> GreensFunction:
    """Place a square Green's function acting on ``modes`` into ``M`` modes."""
    modes = list(modes)
    C = np.eye(M, dtype=complex)
    S = np.zeros((M, M), dtype=complex)
    idx = np.ix_(modes, modes)
    C[idx] = g.C
    S[idx] = g.S
    return GreensFunction(C, S)


def _haar_unitary(M: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_symplectic_greens(M: int, rng=None, max_r: float = 1.0, layers: int = 2) -> GreensFunction:
    """Random lossless Green's function built from squeezers and mixers.

    Alternates Haar-random passive interferometers with layers of
    single-mode squeezers of random strength in ``[0, max_r]``.
    """
    rng = np.random.default_rng(rng)
    g = passive_greens(_haar_unitary(M, rng))
    for _ in range(layers):
        sq = direct_sum(*[squeezer_greens(rng.uniform(0, max_r), rng.uniform(0, 2 * np.pi)) for _ in range(M)])
        g = passive_greens(_haar_unitary(M, rng)) @ sq @ g
    return g


# --- state operations -------------------------------------------------------


def covariance_from_greens(G: GreensFunction) -> CovarianceMatrix:
    """Covariance ``sigma = G G^dag / 2`` produced from vacuum."""
    if not G.is_square:
        raise ValueError(f"Green's function must be square, got {G.M_out}x{G.M_in}")
    g = G.matrix
    return CovarianceMatrix(0.5 * g @ g.conj().T)


def apply_greens(G: GreensFunction, sigma: CovarianceMatrix) -> CovarianceMatrix:
    """Congruence ``sigma -> G sigma G^dag``.

    Rectangular ``G`` is allowed; the result then lives on ``G.M_out`` modes.
    """
    if G.M_in != sigma.M:
        raise ValueError(f"Green's function acts on {G.M_in} modes, state has {sigma.M}")
    g = G.matrix
    return CovarianceMatrix(g @ sigma.data @ g.conj().T)


def apply_loss(sigma: CovarianceMatrix, chan: LossChannel) -> CovarianceMatrix:
    """Fictitious-beamsplitter loss: ``sqrt(eta eta^T) o sigma + (1-eta) o nu o I``."""
    M = sigma.M
    if chan.eta.shape != (M,):
        if chan.eta.size == 1:
            chan = LossChannel(np.full(M, chan.eta[0]), np.full(M, chan.nu[0]))
        else:
            raise ValueError(f"loss channel has {chan.eta.size} modes, state has {M}")
    eta2 = np.concatenate([chan.eta, chan.eta])
    nu2 = np.concatenate([chan.nu, chan.nu])
    out = np.sqrt(np.outer(eta2, eta2)) * sigma.data + np.diag((1 - eta2) * nu2)
    return CovarianceMatrix(out)


def _check_modes(modes, M: int) -> list[int]:
    modes = [int(k) for k in modes]
    if not modes:
        raise ValueError("mode subset must be non-empty")
    if min(modes) < 0 or max(modes) >= M:
        raise ValueError(f"mode indices out of range for {M} modes: {modes}")
    if len(set(modes)) != len(modes):
        raise ValueError("mode subset has repeated indices")
    return modes


def trace_out(sigma: CovarianceMatrix, keep: Sequence[int]) -> CovarianceMatrix:
    """Reduced state on ``keep`` (in the given order)."""
    keep = _check_modes(keep, sigma.M)
    idx = np.concatenate([keep, np.asarray(keep) + sigma.M])
    return CovarianceMatrix(sigma.data[np.ix_(idx, idx)])


def gauge_fix(sigma: CovarianceMatrix) -> CovarianceMatrix:
    """Rotate each mode's local phase so the diagonal of ``U`` is real and >= 0.

    Photon-number statistics are invariant under this rotation.
    """
    diagU = np.diag(sigma.U)
    theta = -0.5 * np.angle(np.where(np.abs(diagU) > 0, diagU, 1.0))
    return apply_greens(passive_greens(np.diag(np.exp(1j * theta))), sigma)


# --- symplectic analysis ----------------------------------------------------


def symplectic_residual(G: GreensFunction) -> float:
    """Max-norm of ``C C^dag - S S^dag - I`` and ``C S^T - S C^T``."""
    if not G.is_square:
        raise ValueError("symplectic residual needs a square Green's function")
    C, S = G.C, G.S
    r1 = C @ C.conj().T - S @ S.conj().T - np.eye(G.M_in)
    r2 = C @ S.T - S @ C.T
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


def _quad_transform(M: int) -> np.ndarray:
    # [x; p] = R xi with x = a + a^dag, p = i (a^dag - a)
    I = np.eye(M)
    return np.block([[I, I], [-1j * I, 1j * I]])


def to_quadrature(G: GreensFunction) -> np.ndarray:
    """Real ``2M x 2M`` symplectic matrix acting on ``[x; p]``."""
    M = G.M_in
    R = _quad_transform(M)
    Gq = R @ G.matrix @ np.linalg.inv(R)
    return Gq.real


def from_quadrature(Gq: np.ndarray) -> GreensFunction:
    M = Gq.shape[0] // 2
    R = _quad_transform(M)
    g = np.linalg.inv(R) @ Gq @ R
    return GreensFunction(g[:M, :M], g[:M, M:])


def _orthosymplectic_to_unitary(O: np.ndarray) -> np.ndarray:
    M = O.shape[0] // 2
    return O[:M, :M] + 1j * O[M:, :M]


def bloch_messiah(G: GreensFunction, tol: float = 1e-10) -> SupermodeDecomposition:
    """Decompose a lossless Green's function into independent squeezers.

    Works on the real quadrature matrix ``G'`` whose singular values come in
    pairs ``(s, 1/s)``. The right singular vectors with ``s > 1`` are paired
    with their images under the symplectic form; the ``s = 1`` eigenspace is
    split into conjugate pairs by symplectic Gram-Schmidt. Output modes follow
    from ``O_out = G' O_in Sigma^{-1}`` so the factorisation reproduces ``G'``
    to rounding error.
    """
    if not G.is_square:
        raise ValueError("Bloch-Messiah needs a square Green's function")
    resid = symplectic_residual(G)
    scale = max(1.0, float(np.max(np.abs(G.matrix))) ** 2)
    if resid > BLOCH_MESSIAH_GATE * scale:
        raise NotSymplecticError(
            f"Green's function is not symplectic (residual {resid:.3e} > {BLOCH_MESSIAH_GATE:g}); "
            "lossy maps need a Williamson decomposition, which is not provided"
        )
    M = G.M_in
    Gq = to_quadrature(G)
    _, svals, Vt = np.linalg.svd(Gq)
    logs = np.log(svals)
    Omega = np.block([[np.zeros((M, M)), np.eye(M)], [-np.eye(M), np.zeros((M, M))]])

    big = [k for k in range(2 * M) if logs[k] > tol]
    cols = [Vt[k] for k in big]
    r = [logs[k] for k in big]
    # s == 1 eigenspace: collect raw basis, then split into (w, -Omega w) pairs
    unit_basis = [Vt[k] for k in range(2 * M) if abs(logs[k]) <= tol]
    chosen: list[np.ndarray] = []
    for w in unit_basis:
        for c in chosen:
            w = w - (c @ w) * c
            jc = -Omega @ c
            w = w - (jc @ w) * jc
        n = np.linalg.norm(w)
        if n > 1e-6:
            chosen.append(w / n)
        if len(chosen) == M - len(big):
            break
    cols.extend(chosen)
    r.extend([0.0] * len(chosen))
    if len(cols) != M:
        raise NotSymplecticError("singular values do not pair into (s, 1/s); decomposition failed")

    r = np.asarray(r)
    V1 = np.stack(cols, axis=1)  # 2M x M
    # symplectic Gram-Schmidt pass to remove rounding drift
    for j in range(M):
        v = V1[:, j]
        for k in range(j):
            u = V1[:, k]
            v = v - (u @ v) * u
            ju = -Omega @ u
            v = v - (ju @ v) * ju
        V1[:, j] = v / np.linalg.norm(v)
    O_in = np.hstack([V1, -Omega @ V1])
    Sigma = np.concatenate([np.exp(r), np.exp(-r)])
    O_out = (Gq @ O_in) / Sigma

    U_out = _orthosymplectic_to_unitary(O_out)
    U_in = _orthosymplectic_to_unitary(O_in)
    order = _canonical_order(r, U_out, tol)
    r = r[order]
    U_out, U_in = U_out[:, order], U_in[:, order]
    perm = np.concatenate([order, order + M])
    return SupermodeDecomposition(
        squeezing_params=r,
        output_modes=U_out,
        input_modes=U_in,
        quadrature_out=O_out[:, perm],
        quadrature_in=O_in[:, perm],
    )


def _canonical_order(r: np.ndarray, modes: np.ndarray, tol: float) -> np.ndarray:
    # descending r; ties broken by index of the first significant component
    keys = []
    for k in range(len(r)):
        mag = np.abs(modes[:, k])
        first = int(np.argmax(mag > 1e-6 * mag.max())) if mag.max() > 0 else 0
        keys.append((-np.round(r[k] / max(tol, 1e-9)), first, k))
    return np.array([k for *_, k in sorted(keys)], dtype=int)


# --- serialization ----------------------------------------------------------

_LAYOUT_TAG = "a_then_adag"
_MAGIC = b"GCOV"


def save_covariance(sigma: CovarianceMatrix, path, fmt: str | None = None) -> None:
    """Write ``sigma`` as CSV or flat binary.

    CSV: first line ``M,<M>,layout,a_then_adag``; then ``2M`` rows each with
    ``4M`` values ``re_0,im_0,re_1,im_1,...`` (row-major complex pairs).

    Binary: ``GCOV`` magic, little-endian uint32 ``M``, 16-byte ASCII layout
    tag padded with NULs, then ``(2M)^2`` little-endian complex128 values in
    row-major order.
    """
    from pathlib import Path

    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "bin")
    data = sigma.data
    if fmt == "csv":
        pairs = np.stack([data.real, data.imag], axis=-1).reshape(data.shape[0], -1)
        lines = [f"M,{sigma.M},layout,{_LAYOUT_TAG}"]
        lines += [",".join(repr(float(v)) for v in row) for row in pairs]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "bin":
        header = _MAGIC + np.uint32(sigma.M).astype("<u4").tobytes() + _LAYOUT_TAG.encode().ljust(16, b"\0")
        path.write_bytes(header + data.astype("<c16").tobytes(order="C"))
    else:
        raise ValueError(f"unknown covariance format {fmt!r}")


def load_covariance(path) -> CovarianceMatrix:
    from pathlib import Path

    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == _MAGIC:
        M = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
        tag = raw[8:24].rstrip(b"\0").decode()
        if tag != _LAYOUT_TAG:
            raise ValueError(f"unsupported layout {tag!r}")
        data = np.frombuffer(raw[24:], dtype="<c16").reshape(2 * M, 2 * M)
        return CovarianceMatrix(data)
    lines = raw.decode().strip().splitlines()
    head = lines[0].split(",")
    if head[0] != "M" or head[3] != _LAYOUT_TAG:
        raise ValueError("not a covariance CSV file")
    M = int(head[1])
    vals = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    data = vals[:, 0::2] + 1j * vals[:, 1::2]
    if data.shape != (2 * M, 2 * M):
        raise ValueError("covariance CSV body has wrong shape")
    return CovarianceMatrix(data)
