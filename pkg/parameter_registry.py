"""
Parameter Registry
==================
Centralized registry of robust estimators and benchmark sweeps.

REGISTRY NOTES:
- Tuning constants are the published Tukey bisquare values
- The S-estimator normalizer 0.199 and the MAD consistency factor 0.6745
  are fixed; they are not exposed as config fields
- Sweep definitions reproduce the three synthetic accuracy panels
  (noise, outlier rate, number of lines)
"""

from enum import Enum
from typing import Any, Dict


class EstimatorKind(str, Enum):
    """Robust estimator used for pose refinement."""
    LS = "LS"
    M = "M"
    S = "S"
    MM = "MM"


# MAD consistency factor: MAD / 0.6745 estimates a Gaussian sigma
MAD_CONSISTENCY = 0.6745

# Normalizer of the S-scale update
S_SCALE_NORMALIZER = 0.199

# Tukey bisquare tuning constants
TUKEY_C_M = 4.685
TUKEY_C_S = 1.547


# ============================================================================
# ESTIMATOR REGISTRY
# ============================================================================
# Each estimator is a sequence of reweight / minimize stages run by
# pose_optimizer.refine_pose:
#   rule:         reweighting rule ("unit", "tukey" or "s")
#   c_field:      OptConfig field holding the tuning constant (None for unit weights)
#   iterations:   OptConfig field bounding a non-final stage; the final stage
#                 gets whatever remains of max_iterations
#   frozen_scale: reuse the previous stage's scale instead of re-estimating it

ESTIMATOR_REGISTRY: Dict[EstimatorKind, Dict[str, Any]] = {

    EstimatorKind.LS: {
        "name": "Least squares",
        "stages": [
            {"rule": "unit", "c_field": None},
        ],
    },

    EstimatorKind.M: {
        "name": "M-estimation (Tukey bisquare, MAD scale)",
        "stages": [
            {"rule": "tukey", "c_field": "c_m"},
        ],
    },

    EstimatorKind.S: {
        "name": "S-estimation",
        "stages": [
            {"rule": "s", "c_field": "c_s"},
        ],
    },

    EstimatorKind.MM: {
        "name": "MM-estimation (S stage, then M with frozen scale)",
        "stages": [
            {"rule": "s", "c_field": "c_s", "iterations": "s_stage_iterations"},
            {"rule": "tukey", "c_field": "c_m", "frozen_scale": True},
        ],
    },
}


def parse_estimator(value: str) -> EstimatorKind:
    """
    Parse a case-insensitive estimator name ('ls', 'm', 's', 'mm').

    Raises:
        ValueError: If the name is not registered
    """
    try:
        return EstimatorKind(value.upper())
    except ValueError:
        supported = ", ".join(k.value.lower() for k in EstimatorKind)
        raise ValueError(f"Unknown estimator '{value}'. Supported: {supported}")


# ============================================================================
# BENCHMARK SWEEPS
# ============================================================================
# Each sweep varies one SynthConfig field and fixes the others.

SWEEP_REGISTRY: Dict[str, Dict[str, Any]] = {

    "noise": {
        "description": "Gaussian event noise from 0 to 10 px, n = 25, 2% outliers",
        "parameter": "noise_sigma",
        "values": [0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
        "fixed": {"n_lines": 25, "outlier_rate": 0.02},
    },

    "outliers": {
        "description": "Outlier rate from 0 to 50%, n = 25, sigma = 2 px",
        "parameter": "outlier_rate",
        "values": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        "fixed": {"n_lines": 25, "noise_sigma": 2.0},
    },

    "lines": {
        "description": "Number of lines from 4 to 40, sigma = 2 px, 2% outliers",
        "parameter": "n_lines",
        "values": [4, 8, 12, 16, 20, 24, 28, 32, 36, 40],
        "fixed": {"noise_sigma": 2.0, "outlier_rate": 0.02},
    },
}
