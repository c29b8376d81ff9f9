"""Observation-to-network feature scaling.

The world reports ranges and distances in meters and angles in radians;
the networks see each component divided by its physical scale so every
input lands in roughly [-1, 1].
"""

import math

import numpy as np


def feature_scale(cfg):
    """Per-component divisors for the 26-dim observation vector."""
    diag = math.sqrt(
        (2.0 * cfg.half_extent) ** 2
        + (2.0 * cfg.half_extent) ** 2
        + (cfg.z_max - cfg.z_min) ** 2
    )
    scale = np.empty(cfg.n_beams + 3, dtype=np.float64)
    scale[: cfg.n_beams] = cfg.max_range
    scale[cfg.n_beams] = diag
    scale[cfg.n_beams + 1] = math.pi
    scale[cfg.n_beams + 2] = cfg.z_max - cfg.z_min
    return scale


def featurize(obs_vec, scale):
    """Scale a single observation vector or a batch of them."""
    if scale is None:
        return np.asarray(obs_vec, dtype=np.float64)
    return np.asarray(obs_vec, dtype=np.float64) / scale
