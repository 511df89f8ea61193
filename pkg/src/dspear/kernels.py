"""Hot numeric kernels with a compiled core and a numpy fallback.

The two inner loops that dominate desk-scale runs are the pitch-tracking
difference function and the diagonal-Gaussian mixture log-densities.  If the
Cython extension ``dspear._accel`` was built it is used automatically;
setting ``DSPEAR_PURE_PYTHON=1`` forces the numpy implementations.  Both
paths compute the same quantities to floating-point noise; selection happens
once at import.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _accel  # type: ignore[attr-defined]

    HAVE_ACCEL = True
except ImportError:
    _accel = None
    HAVE_ACCEL = False

USE_ACCEL = HAVE_ACCEL and os.environ.get("DSPEAR_PURE_PYTHON", "0").lower() not in (
    "1",
    "true",
    "yes",
)

_LOG_2PI = float(np.log(2.0 * np.pi))


def yin_difference_numpy(x: np.ndarray, tau_max: int) -> np.ndarray:
    """Squared-difference function d[tau] for tau = 0..tau_max.

    d[tau] = sum_{j<W} (x[j] - x[j+tau])^2 with W = len(x) - tau_max, computed
    through cumulative energies and one linear correlation.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    w = n - tau_max
    if w < 2:
        raise ValueError(f"need at least tau_max + 2 samples, got {n} for tau_max={tau_max}")
    sq = np.concatenate([[0.0], np.cumsum(x * x)])
    e_head = sq[w]
    taus = np.arange(tau_max + 1)
    e_tau = sq[taus + w] - sq[taus]
    cross = np.correlate(x, x[:w], mode="valid")[: tau_max + 1]
    d = e_head + e_tau - 2.0 * cross
    d[0] = 0.0
    return np.maximum(d, 0.0)


def gmm_log_densities_numpy(
    obs: np.ndarray, weights: np.ndarray, means: np.ndarray, variances: np.ndarray
) -> np.ndarray:
    """Per-observation log p(x) under a diagonal-covariance mixture.

    obs (N, D); weights (K,); means/variances (K, D).  Returns (N,).
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    inv_var = 1.0 / variances
    # (x - mu)^2 / var expanded into three matmul-friendly terms
    quad = (
        (obs * obs) @ inv_var.T
        - 2.0 * (obs @ (means * inv_var).T)
        + np.sum(means * means * inv_var, axis=1)
    )
    log_norm = -0.5 * (obs.shape[1] * _LOG_2PI + np.sum(np.log(variances), axis=1))
    comp = np.log(weights) + log_norm - 0.5 * quad  # (N, K)
    peak = np.max(comp, axis=1, keepdims=True)
    return (peak + np.log(np.sum(np.exp(comp - peak), axis=1, keepdims=True))).ravel()


def _yin_difference_accel(x, tau_max):
    return _accel.yin_difference(np.ascontiguousarray(x, dtype=np.float64), int(tau_max))


def _gmm_log_densities_accel(obs, weights, means, variances):
    obs = np.ascontiguousarray(np.atleast_2d(obs), dtype=np.float64)
    return _accel.gmm_log_densities(
        obs,
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(means, dtype=np.float64),
        np.ascontiguousarray(variances, dtype=np.float64),
    )


if USE_ACCEL:
    yin_difference = _yin_difference_accel
    gmm_log_densities = _gmm_log_densities_accel
    BACKEND = "accel"
else:
    yin_difference = yin_difference_numpy
    gmm_log_densities = gmm_log_densities_numpy
    BACKEND = "numpy"
