"""Coupled-mode propagation for parametric amplification and frequency conversion.

Two processes are integrated along the crystal with a symmetric split step
(exact dispersion phases around a midpoint coupling step):

* DOPA, ``da/dz(w) = i D(w) a + i K(z) a^dag`` with the Hankel coupling
  ``K_kl = kappa A(w_k + w_l)``. The output is a :class:`GreensFunction`.
* AFC, the bipartite system ``d/dz (a_vis, a_ir) = i H(z) (a_vis, a_ir)``
  with the Toeplitz coupling ``K_vi = kappa A(w_v - w_i)`` between bands.
  Poling enters either as the rotating-frame detuning ``+-beta0 z`` or as
  an explicit sign sequence ``chi(z)`` multiplying the coupling.

The pump is classical and undepleted; it may still pick up spectral phase
from its own dispersion as it propagates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm, toeplitz

from .gaussian import CovarianceMatrix, GreensFunction, apply_greens, symplectic_residual

__all__ = [
    "FrequencyGrid",
    "DispersionProfile",
    "PumpPulse",
    "PolingProfile",
    "PropagationConfig",
    "BipartiteGreens",
    "ConvergenceError",
    "shape_pump",
    "gaussian_pump",
    "monochromatic_pump",
    "dopa_coupling_matrix",
    "lz_coupling_matrix",
    "design_poling",
    "solve_dopa",
    "solve_afc",
    "conversion_efficiency",
    "save_poling_csv",
    "load_poling_csv",
]

DEFAULT_QUANTUM = 25e-9


class ConvergenceError(RuntimeError):
    """Step doubling did not settle below the requested tolerance."""

    def __init__(self, message: str, change: float, steps: int):
        super().__init__(message)
        self.change = change
        self.steps = steps


# --- grids, dispersion, pump ------------------------------------------------


@dataclass(frozen=True)
class FrequencyGrid:
    """``N`` angular frequencies spaced by ``spacing`` and symmetric about ``center``."""

    N: int
    center: float
    spacing: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"grid needs a positive integer size, got {self.N}")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "N", int(self.N))

    @property
    def offsets(self) -> np.ndarray:
        """Detunings ``dw`` from the center (rad/s)."""
        return (np.arange(self.N) - (self.N - 1) / 2) * self.spacing

    @property
    def omega(self) -> np.ndarray:
        return self.center + self.offsets

    def commensurate(self, other: "FrequencyGrid", rtol: float = 1e-9) -> bool:
        return abs(self.spacing - other.spacing) <= rtol * max(self.spacing, other.spacing)


@dataclass(frozen=True)
class DispersionProfile:
    """Wavenumber profile ``D(dw) = offset + sum_k c_k dw^(k+1) / (k+1)!``.

    ``beta_coeffs = [dbeta1, beta2, beta3, ...]`` in s/m, s^2/m, ...; ``offset``
    is a constant wavenumber (1/m), used for the phase mismatch that explicit
    poling compensates. ``beta0_rate`` (1/m^2) is the rotating-frame sweep rate.
    """

    beta_coeffs: tuple = ()
    beta0_rate: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.beta_coeffs)
        if not all(math.isfinite(c) for c in coeffs + (self.beta0_rate, self.offset)):
            raise ValueError("dispersion coefficients must be finite")
        object.__setattr__(self, "beta_coeffs", coeffs)

    def __call__(self, dw) -> np.ndarray:
        dw = np.asarray(dw, dtype=float)
        out = np.full(dw.shape, self.offset, dtype=float)
        for k, c in enumerate(self.beta_coeffs):
            out = out + c * dw ** (k + 1) / math.factorial(k + 1)
        return out


@dataclass(frozen=True)
class PumpPulse:
    """Classical pump spectrum with intensity and phase masks.

    ``amplitude`` is normalised so that ``kappa * |A|`` is a spatial rate in
    1/m; the pulse energy is proportional to ``sum |A|^2``.
    """

    grid: FrequencyGrid
    amplitude: np.ndarray
    mu: np.ndarray = None
    phi: np.ndarray = None

    def __post_init__(self):
        N = self.grid.N
        amp = np.asarray(self.amplitude, dtype=complex).reshape(-1)
        mu = np.ones(N) if self.mu is None else np.asarray(self.mu, dtype=float).reshape(-1)
        phi = np.zeros(N) if self.phi is None else np.asarray(self.phi, dtype=float).reshape(-1)
        for name, arr in (("amplitude", amp), ("mu", mu), ("phi", phi)):
            if arr.shape != (N,):
                raise ValueError(f"pump {name} has {arr.size} points for a grid of {N}")
        if np.any(mu < 0) or np.any(mu > 1):
            raise ValueError("intensity mask must lie in [0, 1]")
        for arr in (amp, mu, phi):
            arr.setflags(write=False)
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "phi", phi)

    @property
    def shaped(self) -> np.ndarray:
        return shape_pump(self)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.shaped) ** 2))

    def scaled(self, factor: float) -> "PumpPulse":
        """Same pulse with amplitude multiplied by ``factor`` (power by ``factor^2``)."""
        return PumpPulse(self.grid, self.amplitude * factor, self.mu, self.phi)

    def with_masks(self, mu=None, phi=None) -> "PumpPulse":
        return PumpPulse(self.grid, self.amplitude, self.mu if mu is None else mu, self.phi if phi is None else phi)


def shape_pump(pulse: PumpPulse) -> np.ndarray:
    """``A(w) = A0(w) sqrt(mu(w)) exp(i phi(w))``."""
    return pulse.amplitude * np.sqrt(pulse.mu) * np.exp(1j * pulse.phi)


def gaussian_pump(grid: FrequencyGrid, peak: float, fwhm: float, chirp: float = 0.0) -> PumpPulse:
    """Gaussian amplitude spectrum with intensity FWHM ``fwhm`` (rad/s) and quadratic phase ``chirp`` (s^2)."""
    dw = grid.offsets
    amp = peak * np.exp(-2 * np.log(2) * (dw / fwhm) ** 2) * np.exp(0.5j * chirp * dw**2)
    return PumpPulse(grid, amp)


def monochromatic_pump(grid: FrequencyGrid, amplitude: complex) -> PumpPulse:
    """Single line at the grid center. Needs an odd grid size."""
    if grid.N % 2 == 0:
        raise ValueError("a centred line needs an odd number of pump grid points")
    amp = np.zeros(grid.N, dtype=complex)
    amp[grid.N // 2] = amplitude
    return PumpPulse(grid, amp)


# --- coupling matrices --------------------------------------------------------


def dopa_coupling_matrix(pump_amplitude, n: int | None = None, kappa: float = 1.0) -> np.ndarray:
    """Hankel coupling ``K_kl = kappa A(dw_k + dw_l)`` for ``n`` signal modes.

    The pump spectrum must have ``2n - 1`` points on the signal spacing.
    """
    A = np.asarray(pump_amplitude, dtype=complex).reshape(-1)
    if n is None:
        n = (A.size + 1) // 2
    if A.size != 2 * n - 1:
        raise ValueError(f"DOPA pump needs {2 * n - 1} points for {n} signal modes, got {A.size}")
    idx = np.arange(n)
    return kappa * A[idx[:, None] + idx[None, :]]


def lz_coupling_matrix(pump_amplitude, n_out: int | None = None, n_in: int | None = None, kappa: float = 1.0) -> np.ndarray:
    """Toeplitz coupling ``K_vi = kappa A(dw_v - dw_i)`` from ``n_in`` to ``n_out`` modes.

    The pump spectrum must have ``n_out + n_in - 1`` points on the band
    spacing; with equal band sizes both default to ``(len(A) + 1) / 2``.
    Intensity and phase masks enter through the (already shaped) spectrum,
    which keeps every diagonal constant.
    """
    A = np.asarray(pump_amplitude, dtype=complex).reshape(-1)
    if n_out is None and n_in is None:
        if A.size % 2 == 0:
            raise ValueError("equal band sizes need an odd pump grid")
        n_out = n_in = (A.size + 1) // 2
    elif n_in is None:
        n_in = A.size + 1 - n_out
    elif n_out is None:
        n_out = A.size + 1 - n_in
    if n_out < 1 or n_in < 1 or A.size != n_out + n_in - 1:
        raise ValueError(f"pump has {A.size} points, need n_out + n_in - 1 = {n_out + n_in - 1}")
    # column i, row v -> A[v - i + n_in - 1]
    first_col = A[n_in - 1 :]
    first_row = A[n_in - 1 :: -1]
    return kappa * toeplitz(first_col, first_row)


# --- poling -------------------------------------------------------------------


@dataclass(frozen=True)
class PolingProfile:
    """Alternating-sign domains with lengths on a fixed quantum (m)."""

    domain_lengths: np.ndarray
    signs: np.ndarray
    quantum: float = DEFAULT_QUANTUM

    def __post_init__(self):
        lengths = np.asarray(self.domain_lengths, dtype=float).reshape(-1)
        signs = np.asarray(self.signs, dtype=int).reshape(-1)
        if lengths.shape != signs.shape or lengths.size == 0:
            raise ValueError("need one sign per domain and at least one domain")
        if np.any(lengths <= 0):
            raise ValueError("domain lengths must be positive")
        if not np.all(np.isin(signs, (-1, 1))) or np.any(signs[1:] == signs[:-1]):
            raise ValueError("domain signs must alternate between +1 and -1")
        lengths.setflags(write=False)
        signs.setflags(write=False)
        object.__setattr__(self, "domain_lengths", lengths)
        object.__setattr__(self, "signs", signs)

    @property
    def total_length(self) -> float:
        return float(np.sum(self.domain_lengths))

    @property
    def boundaries(self) -> np.ndarray:
        """Domain walls including both facets, ``[0, ..., L]``."""
        return np.concatenate([[0.0], np.cumsum(self.domain_lengths)])

    def sign_at(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        idx = np.searchsorted(self.boundaries, z, side="right") - 1
        idx = np.clip(idx, 0, self.signs.size - 1)
        return self.signs[idx]


def _sweep_wavenumber(beta_i, beta_f, L, tanh_fraction, end_span, steepness):
    """Return ``dk(z)`` and its exact integral ``phi(z)`` for the chirp with tanh ends."""
    slope = (beta_f - beta_i) / L
    w = tanh_fraction * L
    direction = 1.0 if beta_f >= beta_i else -1.0
    a = steepness / w if w > 0 else 0.0
    amp = direction * end_span / math.tanh(steepness) if w > 0 else 0.0

    def dk(z):
        z = np.asarray(z, dtype=float)
        out = beta_i + slope * z
        if w > 0:
            front = z < w
            back = z > L - w
            out = out - np.where(front, amp * np.tanh(a * (w - z)), 0.0)
            out = out + np.where(back, amp * np.tanh(a * (z - (L - w))), 0.0)
        return out

    def logcosh(x):
        x = np.abs(x)
        return x + np.log1p(np.exp(-2 * x)) - np.log(2.0)

    def phi(z):
        z = np.asarray(z, dtype=float)
        out = beta_i * z + 0.5 * slope * z**2
        if w > 0:
            # integral of tanh(a (w - s)) over [0, min(z, w)]
            zf = np.minimum(z, w)
            front = (logcosh(a * w) - logcosh(a * (w - zf))) / a
            zb = np.maximum(z - (L - w), 0.0)
            back = logcosh(a * zb) / a
            out = out - amp * front + amp * back
        return out

    return dk, phi


def design_poling(
    beta_i: float,
    beta_f: float,
    L: float,
    quantum: float = DEFAULT_QUANTUM,
    tanh_fraction: float = 0.0,
    end_span: float | None = None,
    steepness: float = 3.0,
) -> PolingProfile:
    """Quantized domains for a linearly chirped spatial frequency.

    The ideal pattern is ``chi(z) = sign(sin(phi(z)))`` with ``phi' = dk(z)``
    sweeping linearly from ``beta_i`` to ``beta_f``. Over the first and last
    ``tanh_fraction * L`` the sweep is extended by a further ``end_span``
    (1/m, default half the linear span) along a tanh profile. Domain walls
    sit at ``phi = m pi`` and are rounded to multiples of ``quantum``.

    Raises
    ------
    ValueError
        If ``quantum`` exceeds the shortest ideal domain or ``dk`` changes sign.
    """
    if not L > 0:
        raise ValueError("crystal length must be positive")
    if not quantum > 0:
        raise ValueError("quantum must be positive")
    if not 0 <= tanh_fraction < 0.5:
        raise ValueError("tanh_fraction must lie in [0, 0.5)")
    if end_span is None:
        end_span = 0.5 * abs(beta_f - beta_i)
    dk, phi = _sweep_wavenumber(beta_i, beta_f, L, tanh_fraction, end_span, steepness)

    zs = np.linspace(0.0, L, 20001)
    k = dk(zs)
    if np.any(k <= 0):
        raise ValueError("spatial frequency must stay positive along the crystal")
    shortest = math.pi / float(np.max(k))
    if quantum > shortest:
        raise ValueError(f"quantum {quantum:.3e} m exceeds the shortest ideal domain {shortest:.3e} m")

    phis = phi(zs)
    m = np.arange(1, int(np.floor(phis[-1] / math.pi)) + 1)
    targets = m * math.pi
    walls = np.interp(targets, phis, zs)
    for _ in range(3):
        walls = walls - (phi(walls) - targets) / dk(walls)
    walls = walls[(walls > 0) & (walls < L)]

    edges = np.concatenate([[0.0], walls, [L]])
    q_edges = np.round(edges / quantum) * quantum
    lengths = np.diff(q_edges)
    keep = lengths > 0.5 * quantum
    if not np.all(keep[:-1] | keep[1:]):
        raise ValueError("quantization merged adjacent domains")
    # a trailing sliver shorter than half a quantum is absorbed by the facet
    lengths = lengths[keep]
    signs = np.where(np.arange(lengths.size) % 2 == 0, 1, -1)
    return PolingProfile(lengths, signs, quantum)


def save_poling_csv(profile: PolingProfile, path) -> None:
    """Two-column CSV ``length_m,sign``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["length_m", "sign"])
        for length, s in zip(profile.domain_lengths, profile.signs):
            w.writerow([repr(float(length)), int(s)])


def load_poling_csv(path, quantum: float = DEFAULT_QUANTUM) -> PolingProfile:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["length_m", "sign"]:
        raise ValueError(f"{path}: expected header length_m,sign")
    lengths = [float(r[0]) for r in rows[1:]]
    signs = [int(r[1]) for r in rows[1:]]
    return PolingProfile(np.array(lengths), np.array(signs), quantum)


# --- propagation ------------------------------------------------------------


@dataclass(frozen=True)
class PropagationConfig:
    """Numerical settings of one propagation.

    ``kappa`` scales the pump amplitude into a coupling rate. ``n_vis`` and
    ``n_ir`` split the AFC pump grid into bands (default: equal halves).
    ``poling_mode`` is ``"rotating"`` (detuning ``beta0 z``) or ``"explicit"``
    (sampled domain signs, first-order coupling ``2/pi`` of ``kappa``).
    """

    length: float
    z_steps: int = 64
    kappa: float = 1.0
    n_vis: int | None = None
    n_ir: int | None = None
    poling_mode: str = "rotating"
    conv_tol: float = 1e-4
    max_z_steps: int = 1 << 16
    check_convergence: bool = True
    order: int = 4

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("propagation length must be positive")
        if self.z_steps < 16:
            raise ValueError("z_steps must be at least 16")
        if self.order not in (2, 4):
            raise ValueError("split-step order must be 2 or 4")
        if self.poling_mode not in ("rotating", "explicit"):
            raise ValueError(f"unknown poling mode {self.poling_mode!r}")


def _relative_change(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def _step_doubling(run: Callable[[int], np.ndarray], cfg: PropagationConfig, min_steps: int = 0) -> tuple[np.ndarray, int]:
    steps = max(cfg.z_steps, min_steps)
    coarse = run(steps)
    if not cfg.check_convergence:
        return coarse, steps
    change = math.inf
    while 2 * steps <= cfg.max_z_steps:
        fine = run(2 * steps)
        change = _relative_change(coarse, fine)
        steps *= 2
        if change < cfg.conv_tol:
            return fine, steps
        coarse = fine
    raise ConvergenceError(
        f"step doubling still changes the Green's function by {change:.2e} at {steps} steps "
        f"(tolerance {cfg.conv_tol:.0e})",
        change,
        steps,
    )


_YOSHIDA_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_YOSHIDA_W0 = 1.0 - 2.0 * _YOSHIDA_W1


def _composed_step(strang, T, z1, z2, sign, order):
    """One symmetric split step, or its fourth-order triple-jump composition."""
    if order == 2:
        return strang(T, z1, z2, sign)
    h = z2 - z1
    za = z1 + _YOSHIDA_W1 * h
    zb = za + _YOSHIDA_W0 * h
    T = strang(T, z1, za, sign)
    T = strang(T, za, zb, sign)
    return strang(T, zb, z2, sign)


def _pump_phase(pump: PumpPulse, pump_disp: DispersionProfile | None):
    A0 = pump.shaped
    if pump_disp is None:
        return lambda z: A0, True
    kp = pump_disp(pump.grid.offsets)
    return lambda z: A0 * np.exp(1j * kp * z), False


def solve_dopa(
    pump: PumpPulse,
    disp: DispersionProfile,
    cfg: PropagationConfig,
    pump_disp: DispersionProfile | None = None,
) -> GreensFunction:
    """Signal-band Green's function of a degenerate parametric amplifier.

    The signal grid has ``(N_pump + 1) / 2`` points on the pump spacing
    centred at half the pump center.

    Raises
    ------
    ConvergenceError
        If step doubling does not converge or the result is not symplectic.
    """
    Np = pump.grid.N
    if Np % 2 == 0:
        raise ValueError("DOPA pump grid needs 2N - 1 points")
    n = (Np + 1) // 2
    signal = FrequencyGrid(n, pump.grid.center / 2, pump.grid.spacing)
    D = disp(signal.offsets)
    pump_at, static = _pump_phase(pump, pump_disp)
    L = cfg.length
    cache: dict = {}

    def coupling_step(z, dz):
        key = round(dz, 15)
        if static and key in cache:
            return cache[key]
        K = dopa_coupling_matrix(pump_at(z), n, cfg.kappa)
        gen = 1j * np.block([[np.zeros((n, n)), K], [-K.conj(), np.zeros((n, n))]])
        step = expm(gen * dz)
        if static:
            cache[key] = step
        return step

    def strang(g, z1, z2, _sign):
        h = z2 - z1
        half = np.exp(0.5j * D * h)
        P = np.concatenate([half, half.conj()])
        g = P[:, None] * g
        g = coupling_step(0.5 * (z1 + z2), h) @ g
        return P[:, None] * g

    def run(steps):
        zs = np.linspace(0.0, L, steps + 1)
        g = np.eye(2 * n, dtype=complex)
        for z1, z2 in zip(zs[:-1], zs[1:]):
            g = _composed_step(strang, g, z1, z2, 1.0, cfg.order)
        return g

    g, _ = _step_doubling(run, cfg)
    G = GreensFunction(g[:n, :n], g[:n, n:])
    # roundoff in C C^dag grows with the gain, so gate relative to ||C||^2
    res = symplectic_residual(G) / max(1.0, np.linalg.norm(G.C, 2) ** 2)
    if res > 1e-6:
        raise ConvergenceError(f"DOPA Green's function symplectic residual {res:.2e}", res, 0)
    return G


@dataclass(frozen=True)
class BipartiteGreens:
    """Unitary map over the joint ``(ir, vis)`` mode space.

    ``T`` is ordered ``[ir modes, vis modes]`` on both sides; blocks are
    named ``G_out_in``.
    """

    T: np.ndarray
    n_ir: int
    n_vis: int

    def __post_init__(self):
        T = np.array(self.T, dtype=complex)
        if T.shape != (self.n_ir + self.n_vis,) * 2:
            raise ValueError("bipartite map has the wrong shape")
        T.setflags(write=False)
        object.__setattr__(self, "T", T)

    @property
    def G_ir_ir(self) -> np.ndarray:
        return self.T[: self.n_ir, : self.n_ir]

    @property
    def G_ir_vis(self) -> np.ndarray:
        return self.T[: self.n_ir, self.n_ir :]

    @property
    def G_vis_ir(self) -> np.ndarray:
        return self.T[self.n_ir :, : self.n_ir]

    @property
    def G_vis_vis(self) -> np.ndarray:
        return self.T[self.n_ir :, self.n_ir :]

    @property
    def greens(self) -> GreensFunction:
        return GreensFunction(self.T)

    def unitarity_residual(self) -> float:
        k = self.T.shape[0]
        return float(np.max(np.abs(self.T.conj().T @ self.T - np.eye(k))))

    def visible_covariance(self, sigma_ir: CovarianceMatrix) -> CovarianceMatrix:
        """``G_vis,ir sigma_ir G_vis,ir^dag + G_vis,vis G_vis,vis^dag / 2`` with vacuum visible input."""
        if sigma_ir.M != self.n_ir:
            raise ValueError(f"state has {sigma_ir.M} modes, infrared band has {self.n_ir}")
        out = apply_greens(GreensFunction(self.G_vis_ir), sigma_ir).data
        vv = self.G_vis_vis @ self.G_vis_vis.conj().T
        out = out + 0.5 * np.block([[vv, np.zeros_like(vv)], [np.zeros_like(vv), vv.conj()]])
        return CovarianceMatrix(out)

    def infrared_covariance(self, sigma_ir: CovarianceMatrix) -> CovarianceMatrix:
        """Unconverted infrared state, same construction with the ``ir`` blocks."""
        out = apply_greens(GreensFunction(self.G_ir_ir), sigma_ir).data
        iv = self.G_ir_vis @ self.G_ir_vis.conj().T
        out = out + 0.5 * np.block([[iv, np.zeros_like(iv)], [np.zeros_like(iv), iv.conj()]])
        return CovarianceMatrix(out)


def _afc_bands(pump: PumpPulse, cfg: PropagationConfig) -> tuple[int, int]:
    Np = pump.grid.N
    n_vis, n_ir = cfg.n_vis, cfg.n_ir
    if n_vis is None and n_ir is None:
        if Np % 2 == 0:
            raise ValueError("equal AFC bands need an odd pump grid")
        n_vis = n_ir = (Np + 1) // 2
    elif n_vis is None:
        n_vis = Np + 1 - n_ir
    elif n_ir is None:
        n_ir = Np + 1 - n_vis
    if n_vis + n_ir - 1 != Np:
        raise ValueError(f"pump grid of {Np} points does not span bands of {n_vis} and {n_ir} modes")
    return n_vis, n_ir


def solve_afc(
    pump: PumpPulse,
    disp_ir: DispersionProfile,
    disp_vis: DispersionProfile,
    poling: PolingProfile | None,
    cfg: PropagationConfig,
    pump_disp: DispersionProfile | None = None,
) -> BipartiteGreens:
    """Bipartite Green's function of adiabatic sum-frequency conversion.

    Both bands share the pump spacing. In ``rotating`` mode the visible
    band sees ``D_vis + beta0 z`` and the infrared band ``D_ir - beta0 z``
    with ``beta0 = disp_vis.beta0_rate`` and ``z`` measured from the crystal
    center; ``poling`` is not used. In ``explicit`` mode the coupling is
    multiplied by the domain sign ``chi(z)`` and the dispersion offsets
    carry the phase mismatch. Step boundaries include every domain wall,
    so the sign is constant on each sub-step.

    Raises
    ------
    ConvergenceError
        If step doubling does not converge or the map is not unitary.
    """
    n_vis, n_ir = _afc_bands(pump, cfg)
    band_spacing = pump.grid.spacing
    vis_grid = FrequencyGrid(n_vis, 0.0, band_spacing)
    ir_grid = FrequencyGrid(n_ir, 0.0, band_spacing)
    D = np.concatenate([disp_ir(ir_grid.offsets), disp_vis(vis_grid.offsets)])
    L = cfg.length
    explicit = cfg.poling_mode == "explicit"
    if explicit:
        if poling is None:
            raise ValueError("explicit poling mode needs a poling profile")
        if abs(poling.total_length - L) > poling.quantum:
            raise ValueError(f"poling length {poling.total_length:.6e} m differs from crystal length {L:.6e} m")
        beta0 = 0.0
        walls = poling.boundaries[1:-1]
    else:
        if disp_ir.beta0_rate not in (0.0, disp_vis.beta0_rate):
            raise ValueError("the sweep rate is taken from the visible profile; set the infrared one to 0")
        beta0 = disp_vis.beta0_rate
        walls = np.empty(0)
    # +beta0 z on visible modes, -beta0 z on infrared modes
    sweep = np.concatenate([-np.ones(n_ir), np.ones(n_vis)]) * beta0
    pump_at, static = _pump_phase(pump, pump_disp)
    k = n_ir + n_vis
    eig_cache: dict = {}

    def coupling_eig(z):
        if static and "eig" in eig_cache:
            return eig_cache["eig"]
        K = lz_coupling_matrix(pump_at(z), n_vis, n_ir, cfg.kappa)
        H = np.zeros((k, k), dtype=complex)
        H[n_ir:, :n_ir] = K
        H[:n_ir, n_ir:] = K.conj().T
        lam, W = np.linalg.eigh(H)
        if static:
            eig_cache["eig"] = (lam, W)
        return lam, W

    def diag_phase(z1, z2):
        # exact integral of D + sweep * (z - L/2)
        zc1, zc2 = z1 - L / 2, z2 - L / 2
        return np.exp(1j * (D * (z2 - z1) + 0.5 * sweep * (zc2**2 - zc1**2)))

    def strang(T, z1, z2, sign):
        zm = 0.5 * (z1 + z2)
        lam, W = coupling_eig(zm)
        T = diag_phase(z1, zm)[:, None] * T
        T = W @ (np.exp(1j * sign * lam * (z2 - z1))[:, None] * (W.conj().T @ T))
        return diag_phase(zm, z2)[:, None] * T

    def run(steps):
        grid_z = np.linspace(0.0, L, steps + 1)
        if walls.size:
            grid_z = np.union1d(grid_z, walls)
        T = np.eye(k, dtype=complex)
        for z1, z2 in zip(grid_z[:-1], grid_z[1:]):
            if z2 <= z1:
                continue
            sign = float(poling.sign_at(0.5 * (z1 + z2))) if explicit else 1.0
            T = _composed_step(strang, T, z1, z2, sign, cfg.order)
        return T

    T, _ = _step_doubling(run, cfg)
    G = BipartiteGreens(T, n_ir, n_vis)
    res = G.unitarity_residual()
    if res > 1e-6:
        raise ConvergenceError(f"AFC map unitarity residual {res:.2e}", res, 0)
    return G


def conversion_efficiency(G: BipartiteGreens, input_modes) -> np.ndarray:
    """``||G_vis,ir v||^2`` for each infrared input mode ``v`` (columns, normalised here)."""
    if G.unitarity_residual() > 1e-6:
        raise ValueError("conversion efficiency needs a unitary bipartite map")
    V = np.asarray(input_modes, dtype=complex)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != G.n_ir:
        raise ValueError(f"input modes have {V.shape[0]} components, infrared band has {G.n_ir}")
    norms = np.linalg.norm(V, axis=0)
    if np.any(norms == 0):
        raise ValueError("input modes must be nonzero")
    out = np.linalg.norm(G.G_vis_ir @ (V / norms), axis=0) ** 2
    return np.clip(out, 0.0, 1.0)
