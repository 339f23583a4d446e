"""Core ensemble types and the EKI update mathematics.

The particle update implemented here is the stochastic Kalman-type step

    theta_j' = theta_j + K (y + eps_j - g_j),    eps_j ~ N(0, alpha * C_eps),

with gain ``K = C_tg (C_gg + alpha * C_eps)^{-1}`` estimated from the
ensemble, and the regularisation parameter ``alpha`` chosen adaptively from
the ensemble data misfits (see :func:`select_alpha_dmc`).  Failed particles
are replaced by draws from a Gaussian fitted to the successful ones, with a
small multiple of the prior covariance added for rank repair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import math

import numpy as np
import scipy.linalg

from .errors import DegenerateEnsembleError, IllConditionedSystemError

# Failure reason tags used in PredictionEnsemble.status.
FAIL_NON_FINITE = "nonfinite"
FAIL_SOLVER = "solver"
FAIL_TIMEOUT = "timeout"
FAIL_INJECTED = "injected"

RngLike = Union[np.random.Generator, Sequence[np.random.Generator], None]


@dataclass
class ParameterEnsemble:
    """Unconstrained particles at one iteration, one column per particle.

    Parameters
    ----------
    values : ndarray, shape (n, J)
        Particle matrix; rows are parameter dimensions.
    iteration : int
        Iteration index the ensemble belongs to.
    """

    values: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("parameter ensemble must be a 2-D matrix")
        if self.values.shape[1] < 2:
            raise ValueError("ensemble needs at least two particles")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter ensemble contains non-finite entries")
        if self.iteration < 0:
            raise ValueError("iteration must be non-negative")

    @property
    def dimension(self) -> int:
        return self.values.shape[0]

    @property
    def size(self) -> int:
        return self.values.shape[1]


@dataclass
class PredictionEnsemble:
    """Forward-model outputs per particle, with per-column success status.

    ``status[j]`` is ``None`` for a successful column and a failure reason
    tag otherwise.  Failed columns hold NaNs.
    """

    values: np.ndarray
    status: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.status = tuple(self.status)
        if self.values.ndim != 2:
            raise ValueError("prediction ensemble must be a 2-D matrix")
        if len(self.status) != self.values.shape[1]:
            raise ValueError("status length must equal the particle count")
        ok = self.success_mask
        if ok.any() and not np.all(np.isfinite(self.values[:, ok])):
            raise ValueError("successful columns contain non-finite entries")

    @property
    def success_mask(self) -> np.ndarray:
        return np.array([s is None for s in self.status], dtype=bool)

    @property
    def success_indices(self) -> np.ndarray:
        return np.flatnonzero(self.success_mask)

    @property
    def failed_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.success_mask)

    @property
    def n_success(self) -> int:
        return int(self.success_mask.sum())

    def failure_histogram(self) -> dict:
        counts: dict = {}
        for s in self.status:
            if s is not None:
                counts[s] = counts.get(s, 0) + 1
        return counts


class ObservationModel:
    """Observed data ``y`` with error covariance ``C_eps``.

    ``cov_eps`` may be a 1-D array (diagonal covariance) or a dense SPD
    matrix.  The Cholesky factor is cached for solves and noise draws.
    """

    def __init__(self, y: np.ndarray, cov_eps: np.ndarray):
        self.y = np.asarray(y, dtype=float).reshape(-1)
        cov = np.asarray(cov_eps, dtype=float)
        if not np.all(np.isfinite(self.y)):
            raise ValueError("observations contain non-finite entries")
        q = self.y.size
        if cov.ndim == 1:
            if cov.size != q:
                raise ValueError("diagonal covariance length must match y")
            if np.any(cov <= 0):
                raise ValueError("diagonal covariance entries must be positive")
            self.diag: Optional[np.ndarray] = cov
            self._chol = None
        elif cov.ndim == 2:
            if cov.shape != (q, q):
                raise ValueError("covariance shape must be (q, q)")
            if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
                raise ValueError("covariance must be symmetric")
            self.diag = None
            try:
                self._chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise ValueError("covariance must be positive definite") from exc
        else:
            raise ValueError("covariance must be 1-D (diagonal) or 2-D (dense)")
        self._cov = cov

    @property
    def dim(self) -> int:
        return self.y.size

    def dense(self) -> np.ndarray:
        if self.diag is not None:
            return np.diag(self.diag)
        return self._cov

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``C_eps^{-1} b``."""
        if self.diag is not None:
            if b.ndim == 1:
                return b / self.diag
            return b / self.diag[:, None]
        z = scipy.linalg.solve_triangular(self._chol, b, lower=True)
        return scipy.linalg.solve_triangular(self._chol.T, z, lower=False)

    def inv_quad(self, r: np.ndarray) -> float:
        """Return ``r^T C_eps^{-1} r``."""
        if self.diag is not None:
            return float(np.sum(r * r / self.diag))
        z = scipy.linalg.solve_triangular(self._chol, r, lower=True)
        return float(z @ z)

    def sqrt_matvec(self, z: np.ndarray) -> np.ndarray:
        """Return ``C_eps^{1/2} z`` (used to draw correlated noise)."""
        if self.diag is not None:
            if z.ndim == 1:
                return np.sqrt(self.diag) * z
            return np.sqrt(self.diag)[:, None] * z
        return self._chol @ z


@dataclass(frozen=True)
class EkiSchedule:
    """The regularisation schedule of one run.

    ``steps`` holds one ``(t, alpha)`` pair per iteration, where ``t`` is the
    pseudo-time at which the iteration starts and ``alpha`` its regularisation
    parameter; ``final_time`` is the pseudo-time reached after the last step.
    The step sizes ``1/alpha`` telescope across ``[0, 1]``: the final step of
    a completed run is clamped so the schedule lands on ``t = 1`` exactly.
    """

    steps: tuple
    final_time: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple((float(t), float(a)) for t, a in self.steps))
        object.__setattr__(self, "final_time", float(self.final_time))

    @property
    def times(self) -> np.ndarray:
        """Pseudo-time knots, including the terminal time."""
        return np.array([t for t, _ in self.steps] + [self.final_time])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([a for _, a in self.steps])

    def validate(self) -> None:
        """Check the invariants of a completed schedule; raise ValueError."""
        times = self.times
        if times[0] != 0.0:
            raise ValueError("schedule must start at t = 0")
        if times[-1] != 1.0:
            raise ValueError("schedule must end at t = 1 exactly")
        if np.any(np.diff(times) <= 0):
            raise ValueError("schedule times must be strictly increasing")
        for (t, a), t_next in zip(self.steps, times[1:]):
            if a <= 0:
                raise ValueError("alpha must be positive")
            # 1/alpha equals the step size up to one rounding of each op
            if abs((t_next - t) - 1.0 / a) > 8 * max(math.ulp(t_next), math.ulp(1.0 / a)):
                raise ValueError("step size must equal 1/alpha")


@dataclass(frozen=True)
class LocalisationConfig:
    """Bootstrap gain localisation settings."""

    n_bootstrap: int = 50
    beta: float = 0.6

    def __post_init__(self):
        if self.n_bootstrap < 2:
            raise ValueError("n_bootstrap must be at least 2")
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True)
class InflationConfig:
    """Adaptive inflation settings."""

    n_variates: int = 100

    def __post_init__(self):
        if self.n_variates < 2:
            raise ValueError("n_variates must be at least 2")


@dataclass(frozen=True)
class EkiConfig:
    """Settings of one inversion run."""

    ensemble_size: int
    seed: int
    delta: float = 1e-4
    max_iterations: int = 30
    localisation: Optional[LocalisationConfig] = None
    inflation: Optional[InflationConfig] = None

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be at least 2")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class EnsembleStats:
    """Ensemble means and (cross-)covariances."""

    mean_theta: np.ndarray
    mean_g: np.ndarray
    cov_tg: np.ndarray
    cov_gg: np.ndarray


def estimate_stats(params: np.ndarray, preds: np.ndarray) -> EnsembleStats:
    """Estimate ensemble means and 1/(J-1)-normalised (cross-)covariances.

    Parameters
    ----------
    params : ndarray, shape (n, m)
        Parameter columns, already restricted to successful particles.
    preds : ndarray, shape (q, m)
        Matching prediction columns.

    Raises
    ------
    DegenerateEnsembleError
        If fewer than two columns are supplied.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    preds = np.atleast_2d(np.asarray(preds, dtype=float))
    m = params.shape[1]
    if m != preds.shape[1]:
        raise ValueError("params and preds must have the same column count")
    if m < 2:
        raise DegenerateEnsembleError(f"need at least 2 particles, got {m}")
    mean_theta = params.mean(axis=1)
    mean_g = preds.mean(axis=1)
    dev_t = params - mean_theta[:, None]
    dev_g = preds - mean_g[:, None]
    cov_tg = dev_t @ dev_g.T / (m - 1)
    cov_gg = dev_g @ dev_g.T / (m - 1)
    return EnsembleStats(mean_theta, mean_g, cov_tg, cov_gg)


def data_misfit(pred: np.ndarray, obs: ObservationModel) -> float:
    """Half the error-covariance-weighted squared residual of one prediction."""
    pred = np.asarray(pred, dtype=float).reshape(-1)
    if not np.all(np.isfinite(pred)):
        raise ValueError("cannot evaluate the misfit of a non-finite prediction")
    r = obs.y - pred
    return 0.5 * obs.inv_quad(r)


def select_alpha_dmc(misfits: np.ndarray, q: int, t_current: float) -> tuple[float, float]:
    """Select the regularisation parameter by the data misfit controller.

    The inverse step size is ``min(max(q / (2 m), sqrt(q / (2 v))), 1 - t)``
    where ``m`` and ``v`` are the mean and variance of the supplied misfits.
    A zero misfit variance (all misfits equal) drops the square-root term,
    and a zero mean drops the first term; if both drop, the remaining-time
    clamp applies.

    Returns
    -------
    (alpha, t_next)
        ``t_next`` equals 1.0 exactly on the clamped final step.
    """
    misfits = np.asarray(misfits, dtype=float).reshape(-1)
    if misfits.size == 0:
        raise ValueError("misfits must be non-empty")
    if not np.all(np.isfinite(misfits)):
        raise ValueError("misfits must be finite")
    if not t_current < 1.0:
        raise ValueError("t_current must be below 1")
    m_phi = float(misfits.mean())
    var_phi = float(misfits.var(ddof=1)) if misfits.size > 1 else 0.0

    # degenerate statistics drop out of the max instead of dominating it
    candidates = []
    if m_phi > 0:
        candidates.append(q / (2.0 * m_phi))
    if var_phi > 0:
        candidates.append(math.sqrt(q / (2.0 * var_phi)))
    step = max(candidates) if candidates else np.inf

    remaining = 1.0 - t_current
    if step >= remaining:
        # Land on t = 1 exactly; alpha is the exact reciprocal of the step.
        return 1.0 / remaining, 1.0
    alpha = 1.0 / step
    return alpha, t_current + step


def compute_kalman_gain(stats: EnsembleStats, obs: ObservationModel, alpha: float) -> np.ndarray:
    """Kalman gain ``K = C_tg (C_gg + alpha C_eps)^{-1}``.

    Solved through a Cholesky factorisation of the q-by-q system; no matrix
    is inverted explicitly.

    Raises
    ------
    IllConditionedSystemError
        If the factorisation fails; carries a 1-norm condition estimate.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    system = stats.cov_gg + alpha * obs.dense()
    system = 0.5 * (system + system.T)
    try:
        factor = scipy.linalg.cho_factor(system, lower=True)
    except scipy.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(system, 1))
        raise IllConditionedSystemError(
            f"gain system factorisation failed (cond ~ {cond:.3e})", cond
        ) from exc
    # K^T = system^{-1} C_tg^T
    return scipy.linalg.cho_solve(factor, stats.cov_tg.T).T


def _noise_columns(rng: RngLike, obs: ObservationModel, alpha: float, m: int) -> np.ndarray:
    """Draw the update perturbations eps_j ~ N(0, alpha C_eps) column-wise.

    ``rng`` may be None (no perturbation), one generator (shared across
    columns), or one generator per column (the per-particle streams used by
    the driver).
    """
    q = obs.dim
    if rng is None:
        return np.zeros((q, m))
    scale = math.sqrt(alpha)
    if isinstance(rng, np.random.Generator):
        z = rng.standard_normal((q, m))
        return scale * obs.sqrt_matvec(z)
    if len(rng) != m:
        raise ValueError("need one generator per particle")
    eps = np.empty((q, m))
    for j, gen in enumerate(rng):
        eps[:, j] = scale * obs.sqrt_matvec(gen.standard_normal(q))
    return eps


def eki_update(
    params: np.ndarray,
    preds: np.ndarray,
    obs: ObservationModel,
    alpha: float,
    rng: RngLike,
    gain_localiser: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Apply the stochastic update to the supplied (successful) columns.

    Parameters
    ----------
    params, preds : ndarray
        Successful parameter and prediction columns, matched by position.
    rng : Generator, sequence of Generators, or None
        Source of the perturbations ``eps_j``; None disables them (the
        deterministic update used by consistency tests).
    gain_localiser : ndarray, optional
        Elementwise damping matrix applied to the gain (entries in [0, 1]).

    Returns
    -------
    ndarray
        Updated columns, same shape as ``params``.
    """
    params = np.asarray(params, dtype=float)
    preds = np.asarray(preds, dtype=float)
    stats = estimate_stats(params, preds)
    gain = compute_kalman_gain(stats, obs, alpha)
    if gain_localiser is not None:
        psi = np.asarray(gain_localiser, dtype=float)
        if psi.shape != gain.shape:
            raise ValueError("localiser shape must match the gain")
        gain = psi * gain
    eps = _noise_columns(rng, obs, alpha, params.shape[1])
    residual = obs.y[:, None] + eps - preds
    return params + gain @ residual


def gaussian_resample_draws(
    mean: np.ndarray,
    deviations: np.ndarray,
    delta: float,
    rng: np.random.Generator,
    count: int,
    prior_cov_diag: Optional[np.ndarray] = None,
    method: str = "auto",
) -> np.ndarray:
    """Draw ``count`` samples from ``N(mean, D D^T/(m-1) + delta * C0)``.

    ``deviations`` is the (already centred) n-by-m deviation matrix of the
    successful particles and ``C0`` is diagonal (identity by default: all
    priors here are transforms of unit normals, so the unconstrained prior
    covariance is the identity).

    Two equivalent routes exist: a dense eigendecomposition of the n-by-n
    covariance, and a low-rank route that draws
    ``mean + D z1 / sqrt(m-1) + sqrt(delta * c0) * z2`` without ever forming
    an n-by-n matrix.  ``method="auto"`` switches to the low-rank route for
    large n.
    """
    mean = np.asarray(mean, dtype=float).reshape(-1)
    deviations = np.asarray(deviations, dtype=float)
    n, m = deviations.shape
    if m < 2:
        raise DegenerateEnsembleError("resampling needs at least 2 successful particles")
    if delta <= 0:
        raise ValueError("delta must be positive")
    c0 = np.ones(n) if prior_cov_diag is None else np.asarray(prior_cov_diag, dtype=float)
    if method == "auto":
        method = "lowrank" if n > 512 else "dense"

    if method == "lowrank":
        z1 = rng.standard_normal((m, count))
        z2 = rng.standard_normal((n, count))
        draws = (
            mean[:, None]
            + deviations @ z1 / math.sqrt(m - 1)
            + np.sqrt(delta * c0)[:, None] * z2
        )
        return draws

    if method != "dense":
        raise ValueError("method must be 'auto', 'dense' or 'lowrank'")
    cov = deviations @ deviations.T / (m - 1) + delta * np.diag(c0)
    eigvals, eigvecs = np.linalg.eigh(cov)
    root = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    return mean[:, None] + root @ rng.standard_normal((n, count))


def resample_failed(
    updated_success: np.ndarray,
    failed_count: int,
    delta: float,
    rng: np.random.Generator,
    prior_cov_diag: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Restore the ensemble to full size after simulation failures.

    The failed slots are replaced by draws from a Gaussian with the
    empirical mean and covariance of the successful (already updated)
    columns, plus ``delta`` times the prior covariance for rank repair.
    Returns the successful columns followed by the resampled ones.
    """
    updated_success = np.asarray(updated_success, dtype=float)
    if updated_success.ndim != 2 or updated_success.shape[1] < 2:
        raise DegenerateEnsembleError("resampling needs at least 2 successful particles")
    if failed_count == 0:
        return updated_success
    mean = updated_success.mean(axis=1)
    devs = updated_success - mean[:, None]
    draws = gaussian_resample_draws(
        mean, devs, delta, rng, failed_count, prior_cov_diag=prior_cov_diag
    )
    return np.hstack([updated_success, draws])
