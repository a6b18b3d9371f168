"""Adiabatic frequency conversion as a Landau-Zener passage.

A single idler frequency is swept through resonance with a signal level. The
unconverted fraction follows exp(-pi g^2 / beta0) and the conversion efficiency
saturates with pump power. The saturation fit recovers the asymptotic efficiency.
"""

import numpy as np

from freqsqueeze.fitting import fit_saturation
from freqsqueeze.nlo import (
    DispersionProfile,
    FrequencyGrid,
    PropagationConfig,
    conversion_efficiency,
    monochromatic_pump,
    solve_afc,
)

ONE = FrequencyGrid(1, 0.0, 1.0)
beta0 = 1.0


def convert(g, L=60.0):
    B = solve_afc(monochromatic_pump(ONE, g), DispersionProfile(), DispersionProfile(beta0_rate=beta0), None, PropagationConfig(length=L))
    return conversion_efficiency(B, [1.0])[0]


print(" g      converted   1 - exp(-pi g^2/beta0)")
for g in (0.1, 0.2, 0.4, 0.6, 0.8):
    print(f"{g:4.2f}   {convert(g):.5f}     {1 - np.exp(-np.pi * g**2 / beta0):.5f}")

power = np.linspace(0.0, 0.8, 8)
conv = np.array([convert(np.sqrt(P)) for P in power])
fit = fit_saturation(power, conv)
print(f"saturation fit: c_max = {fit['c_max']:.3f}, P_sat = {fit['P_sat']:.3f}, residual = {fit.residual_norm:.2e}")
