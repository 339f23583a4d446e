"""The inversion driver: adaptive EKI with failure resampling.

One iteration evaluates the forward model on every particle in parallel,
selects the regularisation parameter from the successful misfits, updates
the successful particles (optionally localised and inflated), resamples the
failed slots from the moments of the updated survivors, and advances the
pseudo-time.  The loop ends when the schedule reaches 1; the final ensemble
is evaluated once more so posterior predictions and the final misfit are
available without rerunning.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import streams
from .ensemble import (
    EkiConfig,
    EkiSchedule,
    ObservationModel,
    ParameterEnsemble,
    PredictionEnsemble,
    data_misfit,
    eki_update,
    gaussian_resample_draws,
    select_alpha_dmc,
)
from .errors import RunAbortedError
from .forward import ForwardModel
from .parallel import parallel_evaluate
from .robustness import apply_inflation, augment_with_variates, bootstrap_localisation, inflation_factor

TOOLKIT_VERSION = "0.1.0"


@dataclass
class MisfitSummary:
    """Summary of the data misfits of one evaluated ensemble."""

    min: float
    mean: float
    max: float
    var: float

    @classmethod
    def of(cls, misfits: np.ndarray) -> "MisfitSummary":
        misfits = np.asarray(misfits, dtype=float)
        var = float(misfits.var(ddof=1)) if misfits.size > 1 else 0.0
        return cls(float(misfits.min()), float(misfits.mean()), float(misfits.max()), var)


@dataclass
class IterationRecord:
    """Everything the manifest stores about one iteration."""

    iteration: int
    t: float
    alpha: float
    n_failed: int
    failure_reasons: dict
    misfit: MisfitSummary
    rho: Optional[float] = None
    wall_clock: Optional[float] = None  # not persisted; timing is not provenance


@dataclass
class RunManifest:
    """Provenance of one inversion run."""

    seed: int
    observation_dim: int
    converged: bool
    iterations: list
    final_misfit: Optional[MisfitSummary] = None
    final_failure_reasons: dict = field(default_factory=dict)
    config_echo: Optional[dict] = None
    localisation_active: bool = False
    inflation_active: bool = False
    version: str = TOOLKIT_VERSION

    def schedule(self) -> EkiSchedule:
        steps = [(rec.t, rec.alpha) for rec in self.iterations]
        if not steps:
            return EkiSchedule((), 0.0)
        last = self.iterations[-1]
        final_time = 1.0 if self.converged else last.t + 1.0 / last.alpha
        return EkiSchedule(tuple(steps), final_time)


@dataclass
class RunResult:
    """Final ensemble plus the per-iteration history of a run."""

    params_history: list  # ParameterEnsemble per iteration, initial first
    preds_history: list  # PredictionEnsemble per evaluated ensemble
    schedule: EkiSchedule
    manifest: RunManifest
    converged: bool

    @property
    def final(self) -> ParameterEnsemble:
        return self.params_history[-1]

    @property
    def n_iterations(self) -> int:
        return len(self.manifest.iterations)


def sample_initial_ensemble(dimension: int, config: EkiConfig) -> ParameterEnsemble:
    """Draw the initial ensemble: unit normal in unconstrained space.

    Column ``j`` depends only on (seed, j), so enlarging the ensemble keeps
    the existing particles.
    """
    values = np.empty((dimension, config.ensemble_size))
    for j in range(config.ensemble_size):
        rng = streams.stream(config.seed, 0, streams.PRIOR_SAMPLE, j)
        values[:, j] = rng.standard_normal(dimension)
    return ParameterEnsemble(values, iteration=0)


def _successful_misfits(preds: PredictionEnsemble, obs: ObservationModel) -> np.ndarray:
    return np.array([data_misfit(preds.values[:, j], obs) for j in preds.success_indices])


def run_eki(
    prior,
    forward: ForwardModel,
    obs: ObservationModel,
    config: EkiConfig,
    *,
    workers: int = 1,
    timeout: Optional[float] = None,
    config_echo: Optional[dict] = None,
) -> RunResult:
    """Run the full inversion loop.

    Parameters
    ----------
    prior
        Anything exposing the unconstrained ``dimension`` (a prior graph).
    forward
        The forward model; its output dimension must match ``obs``.
    config
        Ensemble size, seed, resampling jitter, iteration guard, and the
        optional localisation/inflation settings.
    workers, timeout
        Parallel-evaluation settings (see :func:`pyeki.parallel.parallel_evaluate`).
    config_echo
        Optional dictionary echoed into the manifest for provenance.

    Returns
    -------
    RunResult
        Marked non-converged if the iteration guard tripped before t = 1.

    Raises
    ------
    RunAbortedError
        If fewer than two particles survive an iteration; the partial
        result (with manifest) rides on the exception.
    """
    if forward.output_dim != obs.dim:
        raise ValueError("forward model output dimension must match the observations")
    seed = config.seed
    ensemble = sample_initial_ensemble(prior.dimension, config)
    n_params = ensemble.dimension

    params_history = [ensemble]
    preds_history: list = []
    records: list = []
    steps: list = []
    t = 0.0
    iteration = 0
    converged = False

    def partial_result() -> RunResult:
        manifest = _build_manifest(
            config, obs, records, None, {}, converged=False, config_echo=config_echo
        )
        return RunResult(params_history, preds_history, manifest.schedule(), manifest, False)

    while t < 1.0:
        if iteration >= config.max_iterations:
            break
        started = time.perf_counter()
        preds = parallel_evaluate(
            ensemble, forward, workers, timeout, seed=seed, iteration=iteration
        )
        preds_history.append(preds)
        succ = preds.success_indices
        failed = preds.failed_indices
        if succ.size < 2:
            records.append(
                IterationRecord(
                    iteration,
                    t,
                    float("nan"),
                    int(failed.size),
                    preds.failure_histogram(),
                    MisfitSummary(float("nan"), float("nan"), float("nan"), float("nan")),
                    wall_clock=time.perf_counter() - started,
                )
            )
            raise RunAbortedError(
                f"iteration {iteration}: only {succ.size} particles succeeded",
                result=partial_result(),
            )

        misfits = _successful_misfits(preds, obs)
        alpha, t_next = select_alpha_dmc(misfits, obs.dim, t)

        params_s = ensemble.values[:, succ]
        preds_s = preds.values[:, succ]

        work = params_s
        variate_rows = None
        if config.inflation is not None:
            work, variate_rows = augment_with_variates(
                params_s,
                config.inflation.n_variates,
                streams.stream(seed, iteration, streams.VARIATES),
            )

        localiser = None
        if config.localisation is not None:
            boot_rngs = [
                streams.stream(seed, iteration, streams.BOOTSTRAP, b)
                for b in range(config.localisation.n_bootstrap)
            ]
            localiser = bootstrap_localisation(
                work, preds_s, obs, alpha, config.localisation, boot_rngs
            )

        noise_rngs = [
            streams.stream(seed, iteration, streams.UPDATE_NOISE, int(j)) for j in succ
        ]
        updated = eki_update(work, preds_s, obs, alpha, noise_rngs, gain_localiser=localiser)

        rho = None
        if config.inflation is not None:
            rho = inflation_factor(updated[variate_rows, :])
            updated = apply_inflation(updated[:n_params, :], rho)

        new_values = np.empty_like(ensemble.values)
        new_values[:, succ] = updated
        if failed.size:
            mean = updated.mean(axis=1)
            deviations = updated - mean[:, None]
            for j in failed:
                draw = gaussian_resample_draws(
                    mean,
                    deviations,
                    config.delta,
                    streams.stream(seed, iteration, streams.RESAMPLE, int(j)),
                    1,
                )
                new_values[:, j] = draw[:, 0]

        records.append(
            IterationRecord(
                iteration,
                t,
                alpha,
                int(failed.size),
                preds.failure_histogram(),
                MisfitSummary.of(misfits),
                rho=rho,
                wall_clock=time.perf_counter() - started,
            )
        )
        steps.append((t, alpha))
        ensemble = ParameterEnsemble(new_values, iteration=iteration + 1)
        params_history.append(ensemble)
        t = t_next
        iteration += 1

    converged = t >= 1.0

    # one diagnostic evaluation of the final ensemble (posterior predictions)
    final_preds = parallel_evaluate(
        ensemble, forward, workers, timeout, seed=seed, iteration=iteration
    )
    preds_history.append(final_preds)
    final_misfit = None
    if final_preds.n_success:
        final_misfit = MisfitSummary.of(_successful_misfits(final_preds, obs))

    manifest = _build_manifest(
        config,
        obs,
        records,
        final_misfit,
        final_preds.failure_histogram(),
        converged=converged,
        config_echo=config_echo,
    )
    schedule = manifest.schedule()
    if converged:
        schedule.validate()
    return RunResult(params_history, preds_history, schedule, manifest, converged)


def _build_manifest(
    config: EkiConfig,
    obs: ObservationModel,
    records: list,
    final_misfit,
    final_failures: dict,
    *,
    converged: bool,
    config_echo: Optional[dict],
) -> RunManifest:
    return RunManifest(
        seed=config.seed,
        observation_dim=obs.dim,
        converged=converged,
        iterations=list(records),
        final_misfit=final_misfit,
        final_failure_reasons=dict(final_failures),
        config_echo=config_echo,
        localisation_active=config.localisation is not None,
        inflation_active=config.inflation is not None,
    )
