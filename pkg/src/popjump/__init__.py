"""Jump-decay popularity model: exact simulation, stationary solver and calibration."""

__version__ = "0.1.0"
