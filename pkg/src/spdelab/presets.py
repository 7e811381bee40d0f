"""Named parameter sets for the simulation studies."""
from __future__ import annotations

import copy
import logging

import spdelab.common as common

from spdelab.precision import InvalidSpecException, SpdeSystemSpec

logger = logging.getLogger(__name__)


def _bivariate(
    kappa11: float,
    kappa21: float,
    kappa22: float,
    b11: float,
    b21: float,
    b22: float,
    noise_alpha: tuple[int, int],
    noise_kappa: tuple[float, float],
) -> dict:
    return {
        "p": 2,
        "alpha": [[2, 0], [2, 2]],
        "kappa": [[kappa11, 0.0], [kappa21, kappa22]],
        "b": [[b11, 0.0], [b21, b22]],
        "noise_alpha": list(noise_alpha),
        "noise_kappa": list(noise_kappa),
    }


PRESETS: dict[str, dict] = {
    "bivariate-smooth": _bivariate(0.15, 0.5, 0.3, 1.0, -1.0, 1.0, (1, 1), (0.15, 0.3)),
    "bivariate-shared-range": _bivariate(0.15, 0.15, 0.3, 1.0, -0.5, 1.0, (0, 0), (0.15, 0.3)),
    "bivariate-positive": _bivariate(0.15, 0.5, 0.3, 1.0, -1.0, 1.0, (0, 0), (0.15, 0.3)),
    "bivariate-negative": _bivariate(0.15, 0.5, 0.3, 1.0, 1.0, 1.0, (0, 0), (0.15, 0.3)),
    "bivariate-mixed-noise": _bivariate(0.3, 0.5, 0.4, 1.0, 1.0, 1.0, (1, 0), (0.3, 0.4)),
    "trivariate": {
        "p": 3,
        "alpha": [[2, 0, 0], [2, 2, 0], [2, 2, 2]],
        "kappa": [[0.5, 0.0, 0.0], [0.6, 0.4, 0.0], [0.5, 1.0, 0.3]],
        "b": [[1.0, 0.0, 0.0], [0.8, 1.0, 0.0], [1.0, 0.9, 1.0]],
        "noise_alpha": [1, 1, 1],
        "noise_kappa": [0.5, 0.4, 0.3],
    },
}

# nugget standard deviations used when simulating each study
NUGGET_STD: dict[str, float] = {
    "bivariate-mixed-noise": 0.001,
    "bivariate-positive": 0.001,
    "trivariate": 0.01,
}


def get_preset(name: str) -> SpdeSystemSpec:
    try:
        data = PRESETS[name]
    except KeyError:
        common.error_raise(
            InvalidSpecException,
            f"Unknown preset {name}, choose from {', '.join(PRESETS)}",
        )
    logger.debug(f"Loading preset {name}")
    return SpdeSystemSpec.from_dict(copy.deepcopy(data))
