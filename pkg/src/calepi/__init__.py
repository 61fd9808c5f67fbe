"""Individual-based epidemic models with categorical approximate likelihood
filtering, exact-enumeration oracles, gradient-based calibration, HMC
posterior sampling, and particle-filter baselines."""

__version__ = "0.1.0"
