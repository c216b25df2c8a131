"""Pure-Python predictive-resampling chain runner.

This is the fallback used when the compiled kernel is unavailable and the
reference the kernel is tested against: both consume the same pre-drawn
variate blocks and perform the same float64 operations in the same order,
so results agree bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .models import Model, sample_from_variates, score
from .models import gmm as _gmm


def gmm_chain_ref(spec, theta0, uniforms, normals, n_train, eta0, schedule_offset, clip, checkpoints):
    """Run a GMM score-update chain; mirrors ``_kernels.gmm_chain`` exactly.

    ``checkpoints`` is a sorted int64 array of 1-based step indices at which
    theta is snapshotted; the chain runs ``checkpoints[-1]`` steps. Returns
    (snaps, n_clipped, n_nan_replaced).
    """
    theta = np.array(theta0, dtype=np.float64)
    n_steps = int(checkpoints[-1])
    snaps = np.empty((len(checkpoints), theta.shape[0]))
    n_clipped = 0
    n_nan = 0
    ci = 0
    for k in range(1, n_steps + 1):
        x = _gmm.sample_from_variates(spec, theta, uniforms[k - 1], normals[k - 1])
        g = _gmm.score_point(spec, theta, x)
        nan_mask = np.isnan(g)
        if nan_mask.any():
            n_nan += int(nan_mask.sum())
            g[nan_mask] = 0.0
        over = g > clip
        under = g < -clip
        n_clipped += int(over.sum()) + int(under.sum())
        g[over] = clip
        g[under] = -clip
        eta = eta0 / (n_train + k - schedule_offset)
        theta = theta + eta * g
        if ci < len(checkpoints) and k == checkpoints[ci]:
            snaps[ci] = theta
            ci += 1
    return snaps, n_clipped, n_nan


def generic_chain(model: Model, theta0, uniforms, normals, n_train, eta0, schedule_offset, clip, checkpoints):
    """Model-agnostic chain runner (used for non-GMM families).

    Same update rule and counters as the GMM path; sampling and scoring go
    through the model interface.
    """
    theta = np.array(theta0, dtype=np.float64)
    n_steps = int(checkpoints[-1])
    snaps = np.empty((len(checkpoints), theta.shape[0]))
    n_clipped = 0
    n_nan = 0
    ci = 0
    for k in range(1, n_steps + 1):
        u = uniforms[k - 1] if uniforms is not None else None
        x = sample_from_variates(model, theta, u, normals[k - 1])
        g = np.array(score(model, theta, x))
        nan_mask = np.isnan(g)
        if nan_mask.any():
            n_nan += int(nan_mask.sum())
            g[nan_mask] = 0.0
        over = g > clip
        under = g < -clip
        n_clipped += int(over.sum()) + int(under.sum())
        g[over] = clip
        g[under] = -clip
        eta = eta0 / (n_train + k - schedule_offset)
        theta = theta + eta * g
        if ci < len(checkpoints) and k == checkpoints[ci]:
            snaps[ci] = theta
            ci += 1
    return snaps, n_clipped, n_nan
