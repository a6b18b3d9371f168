"""Headline acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; the terminal summary lists the pass/fail
status of every criterion by name.
"""

import hashlib
import itertools
import json
import time

import numpy as np
import pytest

from counting_oracle import check_within, squeezed_counts, thermal_counts
from fock_oracle import build, chernoff_tail, random_circuit
from pairing_oracle import pairing_oracle, random_symmetric
from split_oracle import split_oracle
from freqsqueeze.cli import EXIT_OK, main
from freqsqueeze.coincidence import SourceSpec, split_beam_covariance, splitter_covariance, threshold_covariance
from freqsqueeze.detector import (
    EmccdConfig,
    SpectrometerConfig,
    analog_invert_moments,
    bin_photon_stats,
    pixel_weights,
    raw_moments,
    roc_curve,
    simulate_frames,
)
from freqsqueeze.fitting import fit_parametric_gain, fit_saturation, gain_model, saturation_model
from freqsqueeze.gaussian import (
    beamsplitter_greens,
    bloch_messiah,
    covariance_from_greens,
    embed,
    identity_greens,
    squeezer_greens,
    symplectic_residual,
    trace_out,
    two_mode_squeezer_greens,
)
from freqsqueeze.hafnian import hafnian
from freqsqueeze.nlo import (
    DispersionProfile,
    FrequencyGrid,
    PropagationConfig,
    PumpPulse,
    monochromatic_pump,
    solve_afc,
    solve_dopa,
)
from freqsqueeze.photon_stats import gbs_distribution, gbs_probability, photon_moment
from freqsqueeze.simulability import (
    SimulabilityInput,
    epsilon_surface,
    simulability_epsilon,
    simulability_epsilon_rootfind,
    theta_argument,
)

ONE = FrequencyGrid(1, 0.0, 1.0)


def random_composition(M, rng, layers=3):
    g = identity_greens(M)
    for _ in range(layers):
        for k in range(M):
            g = embed(squeezer_greens(rng.uniform(0, 1.0), rng.uniform(0, 2 * np.pi)), [k], M) @ g
        for k in range(M - 1):
            g = embed(beamsplitter_greens(rng.uniform(0, np.pi / 2), rng.uniform(0, 2 * np.pi)), [k, k + 1], M) @ g
    return g


@pytest.mark.criterion("symplectic suite")
def test_symplectic_suite():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    for _ in range(200):
        g = random_composition(int(rng.integers(1, 17)), rng)
        assert symplectic_residual(g) < 1e-8
        rec = bloch_messiah(g).reconstruct()
        assert np.max(np.abs(rec.matrix - g.matrix)) < 1e-10
    assert time.perf_counter() - t0 < 30


@pytest.mark.criterion("hafnian oracle equivalence")
def test_hafnian_oracle_equivalence():
    rng = np.random.default_rng(12)
    t0 = time.perf_counter()
    assert hafnian(np.ones((4, 4))) == pytest.approx(3.0, abs=1e-12)
    for n in range(2, 13, 2):
        for _ in range(5):
            A = random_symmetric(n, rng)
            want = pairing_oracle(A)
            assert abs(hafnian(A) - want) <= 1e-9 * abs(want)
    assert time.perf_counter() - t0 < 60


@pytest.mark.criterion("GBS consistency")
def test_gbs_consistency():
    t0 = time.perf_counter()
    # truncated mass against the generating-function tail bound
    for M in (1, 2, 3):
        g = identity_greens(M)
        for k in range(M):
            g = embed(squeezer_greens(0.8, 0.4 * k), [k], M) @ g
        if M > 1:
            g = embed(beamsplitter_greens(0.5), [0, 1], M) @ g
        sigma = covariance_from_greens(g)
        deficit = 1.0 - sum(gbs_distribution(sigma, 20).values())
        assert -1e-12 <= deficit <= chernoff_tail(sigma, 20)

    single = covariance_from_greens(squeezer_greens(0.8, 0.3))
    assert all(gbs_probability(single, (n,)) == 0 for n in range(1, 20, 2))

    rng = np.random.default_rng(8)
    states = [
        build([("sq", 0, 0.8, 0.3)], 1, 120),
        build([("sq2", 0, 1, 0.8, 0.0)], 2, 60),
        build(random_circuit(rng, 3, 0.8), 3, 30),
    ]
    for sigma, fs, psi in states:
        probs = fs.number_probs(psi)
        table = gbs_distribution(sigma, 8)
        assert max(abs(p - probs[pat]) for pat, p in table.items()) < 1e-8
    assert time.perf_counter() - t0 < 300


PAIR_MOMENTS = [(1, 0), (0, 1), (2, 0), (0, 2), (1, 1), (2, 1), (1, 2), (2, 2)]


@pytest.mark.criterion("moment formulas")
def test_moment_formulas():
    states = [
        build([("sq2", 0, 1, 0.6, 0.0)], 2, 60),
        build([("sq", 0, 0.7, 0.0), ("sq", 1, 0.4, 1.2)], 2, 80),
    ]
    for sigma, fs, psi in states:
        for powers in PAIR_MOMENTS:
            assert photon_moment(sigma, powers) == pytest.approx(fs.moment(psi, powers), rel=1e-8, abs=1e-12)


@pytest.mark.criterion("solver physics")
def test_solver_physics():
    t0 = time.perf_counter()
    G = solve_dopa(PumpPulse(FrequencyGrid(9, 2.0, 0.5), np.zeros(9)), DispersionProfile((0.3, 0.8)), PropagationConfig(length=2.0))
    assert np.all(G.S == 0)

    for A, L, kappa in [(0.5, 2.1, 1.0), (0.05, 10.0, 3.0), (1.0, 1.5, 1.0)]:
        G = solve_dopa(monochromatic_pump(ONE, A), DispersionProfile(), PropagationConfig(length=L, kappa=kappa))
        g = kappa * A * L
        assert abs(G.C[0, 0] - np.cosh(g)) < 1e-4 * np.cosh(g)
        assert abs(abs(G.S[0, 0]) - np.sinh(g)) < 1e-4 * np.cosh(g)

    # one decade of coupling through a linear sweep of rate beta0
    beta0 = 1.0
    for g in np.geomspace(0.06, 0.6, 4):
        B = solve_afc(
            monochromatic_pump(ONE, g),
            DispersionProfile(),
            DispersionProfile(beta0_rate=beta0),
            None,
            PropagationConfig(length=100.0, z_steps=512),
        )
        unconverted = abs(B.G_ir_ir[0, 0]) ** 2
        assert unconverted == pytest.approx(np.exp(-2 * np.pi * g**2 / (2 * beta0)), rel=0.03)
    assert time.perf_counter() - t0 < 120


@pytest.mark.criterion("fit round trips")
def test_fit_round_trips():
    P0 = 100.0
    P = np.linspace(0.1, 6, 20) * P0
    truth = gain_model(P, 431.0, P0)
    assert fit_parametric_gain(P, truth)["etaM"] == pytest.approx(431.0, rel=0.01)
    rng = np.random.default_rng(43)
    for _ in range(20):
        y = truth * (1 + 0.05 * rng.standard_normal(P.size))
        assert fit_parametric_gain(P, y, sigma=0.05 * y)["etaM"] == pytest.approx(431.0, rel=0.10)
    Ps = np.linspace(0, 5, 15) * 0.7
    assert fit_saturation(Ps, saturation_model(Ps, 0.925, 0.7))["c_max"] == pytest.approx(0.925, rel=0.01)


@pytest.mark.criterion("coincidence identities")
def test_coincidence_identities():
    for eL, eR in [(1.0, 1.0), (0.6, 0.9), (0.25, 0.5)]:
        for r in (0.2, 0.7, 1.3):
            n = np.sinh(r) ** 2
            coh = splitter_covariance(SourceSpec("coherent", [n], eL, eR))
            th = splitter_covariance(SourceSpec("thermal", [n], eL, eR))
            sq = splitter_covariance(SourceSpec("squeezed", [n], eL, eR))
            assert coh == 0.0
            assert th == pytest.approx(eL * eR * n**2 / 4, rel=1e-12)
            assert sq == pytest.approx(eL * eR * (2 * n**2 + n) / 4, rel=1e-12)
            # explicit beamsplit covariance matrices through the photon statistics layer
            sq_state = covariance_from_greens(squeezer_greens(r, 0.4))
            th_state = trace_out(covariance_from_greens(two_mode_squeezer_greens(r)), [0])
            for state, want in ((sq_state, sq), (th_state, th)):
                assert abs(split_oracle(state, eL, eR) - want) < 1e-10
                assert abs(split_beam_covariance(state, eL, eR) - want) < 1e-10
    m = np.linspace(0, 1, 2001)
    vals = [threshold_covariance(0.8, 0.05, x) for x in m]
    assert m[int(np.argmax(vals))] == pytest.approx(0.5)


@pytest.mark.criterion("detector chain")
def test_detector_chain():
    rng = np.random.default_rng(77)
    cam = EmccdConfig.from_profile("default")
    g, s2 = cam.gain, cam.readout_sigma**2
    shots = 10**6
    q, ns = cam.qe, np.sinh(0.8) ** 2
    # binomial thinning by the quantum efficiency: Var -> q^2 Var + q (1 - q) <n>
    inputs = {
        "squeezed": (squeezed_counts(0.8, shots, rng), ns, lambda ne: q**2 * 2 * ns * (ns + 1) + q * (1 - q) * ns),
        "thermal": (thermal_counts(1.5, shots, rng), 1.5, lambda ne: ne * (ne + 1)),
        "coherent": (rng.poisson(0.7, shots), 0.7, lambda ne: ne),
    }
    for name, (counts, nbar, variance) in inputs.items():
        frames = simulate_frames(counts[:, None], cam, rng)
        got = analog_invert_moments(raw_moments(frames), g, cam.readout_sigma)
        x = frames[:, 0]
        q1 = x / g
        ne = cam.qe * nbar
        check_within(got.n[0], q1, ne)
        q2 = (x**2 - s2) / g**2 - x / g
        check_within(got.variance[0], q2 - 2 * got.n[0] * q1, variance(ne))

    for c in (cam, EmccdConfig(gain=300.0, readout_sigma=40.0, qe=0.6, dark_rate=0.05)):
        roc = roc_curve(c, np.linspace(-5 * c.readout_sigma, 10 * c.readout_sigma + 5 * c.gain, 400))
        assert np.all(np.diff(roc, axis=0) <= 1e-12)

    for n_bins, psf in itertools.product((1, 3, 5), (0.0, 0.7, 2.5)):
        grid = FrequencyGrid(4 * n_bins, 10.0, 0.5)
        W = pixel_weights(SpectrometerConfig.uniform(grid, n_bins, psf_sigma=psf))
        mean = rng.random(grid.N)
        A = rng.standard_normal((grid.N, grid.N))
        b = bin_photon_stats(mean, A @ A.T, W)
        assert abs(b.mean.sum() - mean.sum()) < 1e-12 * max(1.0, mean.sum())

    # modes 0 and 1 perfectly anticorrelated: separately resolved, then merged into one pixel
    v = 0.3
    cov = np.diag([v, v, 0.1, 0.2])
    cov[0, 1] = cov[1, 0] = -v
    mean = np.array([0.5, 0.5, 0.1, 0.2])
    grid = FrequencyGrid(4, 0.0, 1.0)
    resolved = bin_photon_stats(mean, cov, pixel_weights(SpectrometerConfig.uniform(grid, 4, psf_sigma=0.0, min_points_per_bin=1)))
    assert resolved.covariance[0, 1] == pytest.approx(-v)
    merged = bin_photon_stats(mean, cov, pixel_weights(SpectrometerConfig.uniform(grid, 2, psf_sigma=0.0, min_points_per_bin=2)))
    assert merged.covariance[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert np.all(merged.covariance[0] >= -1e-15)


@pytest.mark.criterion("simulability bound")
def test_simulability_bound():
    lossy = SimulabilityInput(r=0.1, eta=0.1, eta_D=0.5, p_D=0.05, K=100)
    assert theta_argument(lossy) <= 0
    assert simulability_epsilon(lossy) == 0.0
    assert simulability_epsilon_rootfind(lossy) == 0.0

    surf = epsilon_surface(np.linspace(0.3, 1.0, 15), np.linspace(0.0, 0.1, 21), r=1.0, eta=0.4, K=400)
    assert np.all(np.diff(surf, axis=0) >= -1e-12)
    assert np.all(np.diff(surf, axis=1) <= 1e-12)

    rng = np.random.default_rng(5)
    for _ in range(300):
        eta_D = rng.uniform(0.05, 1)
        inp = SimulabilityInput(rng.uniform(0, 4), rng.uniform(0, 1), eta_D, rng.uniform(0, 0.6) * eta_D, int(rng.integers(1, 5000)))
        a, b = simulability_epsilon(inp), simulability_epsilon_rootfind(inp)
        assert a == pytest.approx(b, rel=1e-10, abs=1e-300)


DETERMINISM_CONFIG = {
    "seed": 19,
    "grid": {"n_modes": 12, "spacing": 1.0},
    "dopa": {"length": 1.0, "pump": {"peak": 0.4, "fwhm": 3.0}},
    "afc": {"length": 8.0, "pump": {"shape": "monochromatic", "peak": 0.5}},
    "loss": {"post_afc_eta": 0.6},
    "spectrometer": {"n_bins": 3},
    "sampling": {"shots": 300},
}


@pytest.mark.criterion("determinism")
def test_determinism(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(DETERMINISM_CONFIG))
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["--seed", "19", "--out-dir", str(out), "run", str(path)]) == EXIT_OK
    a, b = outs
    assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    files = json.loads((a / "manifest.json").read_text())["files"]
    assert "samples.csv" in files
    for name, digest in files.items():
        assert hashlib.sha256((b / name).read_bytes()).hexdigest() == digest
