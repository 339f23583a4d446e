"""Optional update modifiers: gain localisation and adaptive inflation.

Localisation damps the Kalman gain elementwise to suppress spurious sample
correlations: bootstrap resamples of the ensemble give the sampling spread
of each gain entry, and entries whose spread is large relative to their
value are shrunk towards zero.  Inflation counteracts the variance loss of
the update by appending standardised random variates to the parameter
block, measuring how much the update contracts them, and rescaling the
updated ensemble deviations by the reciprocal contraction.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .ensemble import (
    EnsembleStats,
    LocalisationConfig,
    ObservationModel,
    compute_kalman_gain,
    estimate_stats,
)

RngLike = Union[np.random.Generator, Sequence[np.random.Generator]]


def localisation_weights(gain: np.ndarray, gain_std: np.ndarray, beta: float) -> np.ndarray:
    """Elementwise damping factors from a gain and its bootstrap spread.

    ``psi = 1 / (1 + V^2 (1 + 1/beta^2))`` with ``V = gain_std / gain``.
    Entries with zero gain are fully suppressed; entries with zero spread
    are fully trusted (the latter rule wins where both are zero).
    """
    gain = np.asarray(gain, dtype=float)
    gain_std = np.asarray(gain_std, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        v2 = (gain_std / gain) ** 2
    psi = 1.0 / (1.0 + v2 * (1.0 + 1.0 / beta**2))
    psi = np.where(gain == 0.0, 0.0, psi)
    psi = np.where(gain_std == 0.0, 1.0, psi)
    return psi


def bootstrap_localisation(
    params: np.ndarray,
    preds: np.ndarray,
    obs: ObservationModel,
    alpha: float,
    config: LocalisationConfig,
    rng: RngLike,
) -> np.ndarray:
    """Estimate the gain localisation matrix by bootstrap resampling.

    Particle indices are resampled jointly for ``params`` and ``preds`` (one
    index vector per bootstrap replicate, preserving the particle-wise
    pairing), a gain is computed per replicate with the same ``alpha`` and
    error covariance as the true gain, and the entrywise sample standard
    deviation of the replicates (1/(n_b - 1) normalisation) feeds
    :func:`localisation_weights`.

    ``rng`` is either one generator or one per bootstrap replicate.

    Returns
    -------
    ndarray, shape (n, q)
        Damping matrix with entries in [0, 1].
    """
    params = np.asarray(params, dtype=float)
    preds = np.asarray(preds, dtype=float)
    m = params.shape[1]
    stats = estimate_stats(params, preds)
    gain = compute_kalman_gain(stats, obs, alpha)

    if isinstance(rng, np.random.Generator):
        rngs: Sequence[np.random.Generator] = [rng] * config.n_bootstrap
    else:
        rngs = rng
        if len(rngs) != config.n_bootstrap:
            raise ValueError("need one generator per bootstrap replicate")

    boot_gains = np.empty((config.n_bootstrap,) + gain.shape)
    for b, gen in enumerate(rngs):
        idx = gen.integers(0, m, size=m)
        boot_stats = estimate_stats(params[:, idx], preds[:, idx])
        boot_gains[b] = compute_kalman_gain(boot_stats, obs, alpha)
    gain_std = boot_gains.std(axis=0, ddof=1)
    return localisation_weights(gain, gain_std, config.beta)


def augment_with_variates(
    params: np.ndarray, n_variates: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Append standardised random variate rows to the parameter block.

    Each appended row is a standard-normal draw shifted and scaled so its
    ensemble mean and standard deviation are exactly 0 and 1.  Returns the
    augmented matrix and the indices of the variate rows.
    """
    params = np.asarray(params, dtype=float)
    n, m = params.shape
    if m < 2:
        raise ValueError("need at least 2 particles to standardise variates")
    variates = rng.standard_normal((n_variates, m))
    variates -= variates.mean(axis=1, keepdims=True)
    variates /= variates.std(axis=1, keepdims=True)
    augmented = np.vstack([params, variates])
    return augmented, np.arange(n, n + n_variates)


def inflation_factor(updated_variate_block: np.ndarray) -> float:
    """Reciprocal of the mean post-update standard deviation of the variates.

    The variates start the update with unit spread, so this measures the
    contraction the update inflicted through sampling error alone.
    """
    block = np.asarray(updated_variate_block, dtype=float)
    if not np.all(np.isfinite(block)):
        raise ValueError("variate block contains non-finite entries")
    sigmas = block.std(axis=1)
    mean_sigma = float(sigmas.mean())
    if mean_sigma == 0.0:
        raise ValueError("degenerate update: every variate collapsed to a constant")
    return 1.0 / mean_sigma


def apply_inflation(params: np.ndarray, rho: float) -> np.ndarray:
    """Scale the ensemble deviations about their mean by ``rho``.

    The ensemble mean is unchanged; per-row variances scale by ``rho**2``.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    params = np.asarray(params, dtype=float)
    if rho == 1.0:
        return params.copy()
    mean = params.mean(axis=1, keepdims=True)
    return mean + rho * (params - mean)
