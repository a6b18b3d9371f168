"""Multimode squeezed-light simulation: Gaussian states, nonlinear propagation,
photon statistics, detector noise and analysis fits."""

from . import coincidence, detector, fitting, gaussian, hafnian, nlo, photon_stats, simulability

__version__ = "0.1.0"

__all__ = [
    "coincidence",
    "detector",
    "fitting",
    "gaussian",
    "hafnian",
    "nlo",
    "photon_stats",
    "simulability",
    "__version__",
]
