"""Configuration and defaults for spectralab."""
from __future__ import annotations

import os

from dotenv import load_dotenv

# A .env in the working directory may carry any of the settings below.
load_dotenv(override=False)

# Worker processes for ensemble sweeps; None means "ask the CLI / hardware".
_workers = os.environ.get("SPECTRA_WORKERS")
WORKERS: int | None = int(_workers) if _workers else None

# Default output directory for results, manifest and checkpoint DB.
OUT_DIR: str = os.environ.get("SPECTRA_OUT_DIR", "results")

LOG_LEVEL: str = os.environ.get("SPECTRA_LOG_LEVEL", "INFO").upper()

# Samples per checkpointed chunk.
CHECKPOINT_INTERVAL: int = int(os.environ.get("SPECTRA_CHECKPOINT_INTERVAL", "1000"))

# Per-chunk progress at INFO instead of DEBUG.
LOG_SAMPLES = os.getenv("SPECTRA_LOG_SAMPLES", "0").strip().lower() in ("1", "true", "yes", "on")

# Numerical defaults shared across modules
DEGENERACY_RTOL: float = 1e-8          # eigenvalue gap threshold, relative to ||H||
LOW_ENERGY_FRACTION: float = 0.05      # refuse E < fraction * 4*beta0 by default
LOCALIZATION_GATE: float = 0.02        # minimum median decay rate per site
EIGEN_TOLERANCES = {
    "orthonormality": 1e-10,
    "residual": 1e-10,
    "range": 1e-8,
}
