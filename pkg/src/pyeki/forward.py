"""Forward models: the evaluation contract and its implementations.

A forward model maps an unconstrained parameter vector to a prediction
vector or a typed failure.  Implementations must be pure functions of their
inputs and configuration so evaluations can run on any worker in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ensemble import FAIL_INJECTED, FAIL_NON_FINITE, FAIL_SOLVER, ObservationModel
from .errors import SolverError
from .priors import SlicePrior
from .slicemodel import SliceModelSpec, observe, solve_pressure, solve_temperature


@dataclass(frozen=True)
class ForwardOutcome:
    """Either a finite prediction vector or a failure reason tag."""

    predictions: Optional[np.ndarray] = None
    failure: Optional[str] = None

    def __post_init__(self):
        if (self.predictions is None) == (self.failure is None):
            raise ValueError("an outcome is either predictions or a failure")
        if self.predictions is not None and not np.all(np.isfinite(self.predictions)):
            raise ValueError("successful outcomes must be finite")

    @property
    def ok(self) -> bool:
        return self.failure is None


class ForwardModel:
    """Base class: concrete models define ``output_dim`` and ``evaluate``."""

    output_dim: int
    parameter_dim: int

    def evaluate(self, theta: np.ndarray, rng: Optional[np.random.Generator] = None) -> ForwardOutcome:
        raise NotImplementedError


def linear_gaussian_forward(matrix: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """The linear map ``A theta`` (verification model)."""
    return np.asarray(matrix, dtype=float) @ np.asarray(theta, dtype=float)


class LinearGaussianModel(ForwardModel):
    """Forward model ``theta -> A theta``, used for analytic checks."""

    def __init__(self, matrix: np.ndarray):
        self.matrix = np.asarray(matrix, dtype=float)
        self.output_dim, self.parameter_dim = self.matrix.shape

    def evaluate(self, theta, rng=None) -> ForwardOutcome:
        values = linear_gaussian_forward(self.matrix, theta)
        if not np.all(np.isfinite(values)):
            return ForwardOutcome(failure=FAIL_NON_FINITE)
        return ForwardOutcome(predictions=values)


class SliceForwardModel(ForwardModel):
    """Natural-state temperatures of the slice problem at the well points."""

    def __init__(self, prior: SlicePrior, spec: SliceModelSpec):
        if spec.grid != prior.grid:
            raise ValueError("prior and model spec must share one grid")
        self.prior = prior
        self.spec = spec
        self.output_dim = spec.output_dim
        self.parameter_dim = prior.dimension

    def simulate(self, theta: np.ndarray):
        """Full fields for one particle: (instance, pressure solution, T)."""
        instance = self.prior.build_instance(theta)
        psol = solve_pressure(instance, self.spec)
        temperature = solve_temperature(instance, psol, self.spec)
        return instance, psol, temperature

    def evaluate(self, theta, rng=None) -> ForwardOutcome:
        try:
            _, _, temperature = self.simulate(theta)
            values = observe(temperature, self.spec)
        except SolverError:
            return ForwardOutcome(failure=FAIL_SOLVER)
        if not np.all(np.isfinite(values)):
            return ForwardOutcome(failure=FAIL_NON_FINITE)
        return ForwardOutcome(predictions=values)


class FailureInjectionModel(ForwardModel):
    """Wrapper that fails a configurable fraction of evaluations.

    The failure decision is the first draw from the particle's stream, so
    the pattern is reproducible and independent of scheduling.
    """

    def __init__(self, inner: ForwardModel, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("rate must lie in [0, 1)")
        self.inner = inner
        self.rate = rate
        self.output_dim = inner.output_dim
        self.parameter_dim = inner.parameter_dim

    def evaluate(self, theta, rng=None) -> ForwardOutcome:
        if self.rate > 0.0:
            if rng is None:
                raise ValueError("failure injection needs the particle stream")
            if rng.random() < self.rate:
                return ForwardOutcome(failure=FAIL_INJECTED)
        return self.inner.evaluate(theta, rng)


@dataclass
class SyntheticTruth:
    """The noise-free record behind one synthetic data set."""

    theta: np.ndarray
    log10_permeability: np.ndarray  # fine-grid field
    upflow_rate: float
    interface_depth: np.ndarray
    clean_observations: np.ndarray
    noise_std: float


def generate_synthetic_data(
    truth_theta: np.ndarray,
    fine_model: SliceForwardModel,
    noise_fraction: float,
    rng: np.random.Generator,
) -> tuple[ObservationModel, SyntheticTruth]:
    """Simulate a fine-grid truth and return noisy observations of it.

    The noise standard deviation is ``noise_fraction`` times the maximum
    noise-free value of the data type; the observation error covariance is
    that variance times the identity.  The returned truth record carries the
    noise-free data and fields for coverage diagnostics.  Inverting the
    returned observations on a coarser grid avoids the inverse crime.
    """
    if noise_fraction < 0:
        raise ValueError("noise_fraction must be non-negative")
    try:
        instance, _, temperature = fine_model.simulate(truth_theta)
        clean = observe(temperature, fine_model.spec)
    except SolverError as exc:
        raise RuntimeError(f"the truth simulation failed: {exc}") from exc
    if not np.all(np.isfinite(clean)):
        raise RuntimeError("the truth simulation produced non-finite observations")
    sigma = noise_fraction * float(np.max(np.abs(clean)))
    if sigma > 0:
        y = clean + sigma * rng.standard_normal(clean.size)
        cov = np.full(clean.size, sigma**2)
    else:
        y = clean.copy()
        cov = np.ones(clean.size)  # placeholder unit covariance for noise-free data
    truth = SyntheticTruth(
        theta=np.asarray(truth_theta, dtype=float).copy(),
        log10_permeability=instance.log10_permeability,
        upflow_rate=instance.upflow_rate,
        interface_depth=instance.interface_depth,
        clean_observations=clean,
        noise_std=sigma,
    )
    return ObservationModel(y, cov), truth
