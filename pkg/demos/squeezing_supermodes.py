"""Broadband parametric amplification and its squeezed supermodes.

A Gaussian pump drives a phase-matched crystal. The Bloch-Messiah decomposition of
the resulting Green's function gives the squeezing spectrum, and the photon-number
covariance shows the pair correlations along the anti-diagonal.
"""

import numpy as np

from freqsqueeze.gaussian import bloch_messiah, covariance_from_greens
from freqsqueeze.nlo import DispersionProfile, FrequencyGrid, PropagationConfig, gaussian_pump, solve_dopa
from freqsqueeze.photon_stats import mean_photons, photon_covariance

N = 21
pump_grid = FrequencyGrid(2 * N - 1, 0.0, 1.0)
G = solve_dopa(gaussian_pump(pump_grid, 0.15, 3.0), DispersionProfile((0.0, 0.02)), PropagationConfig(length=2.0))

r = bloch_messiah(G).squeezing_params
print("leading squeezing parameters:", np.round(r[:6], 4))
print(f"effective mode number K = {np.sum(r) ** 2 / np.sum(r**2):.2f}")

sigma = covariance_from_greens(G)
n = mean_photons(sigma)
print(f"total mean photons {n.sum():.4f} = sum sinh^2 r = {np.sum(np.sinh(r) ** 2):.4f}")

C = photon_covariance(sigma)
anti = C[np.arange(N), N - 1 - np.arange(N)]
print("photon covariance, diagonal   :", np.round(np.diag(C)[N // 2 - 3 : N // 2 + 4], 4))
print("photon covariance, anti-diag. :", np.round(anti[N // 2 - 3 : N // 2 + 4], 4))
