"""Deterministic parallel evaluation of a particle ensemble.

Each particle is evaluated with its own counter-derived random stream, so
the resulting prediction ensemble is a pure function of (seed, iteration,
ensemble) and identical for any worker count or completion order.  A
per-particle wall-clock timeout marks slow evaluations failed; a timeout of
zero fails everything without evaluating (the degenerate bound).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from .ensemble import FAIL_NON_FINITE, FAIL_TIMEOUT, ParameterEnsemble, PredictionEnsemble
from .forward import ForwardModel
from .streams import FORWARD, stream_key


def _evaluate_task(args):
    forward, theta, key, timeout = args
    rng = np.random.default_rng(np.random.SeedSequence(key))
    start = time.perf_counter()
    try:
        outcome = forward.evaluate(theta, rng)
    except Exception:
        # defensive: a misbehaving model should fail the particle, not the run
        return None, FAIL_NON_FINITE
    elapsed = time.perf_counter() - start
    if timeout is not None and elapsed > timeout:
        return None, FAIL_TIMEOUT
    if outcome.ok:
        return np.asarray(outcome.predictions, dtype=float), None
    return None, outcome.failure


def parallel_evaluate(
    ensemble: ParameterEnsemble,
    forward: ForwardModel,
    workers: int = 1,
    timeout: Optional[float] = None,
    *,
    seed: int,
    iteration: int = 0,
) -> PredictionEnsemble:
    """Evaluate every particle with at most ``workers`` concurrent solves."""
    if workers < 1:
        raise ValueError("workers must be at least 1")
    count = ensemble.size
    q = forward.output_dim
    values = np.full((q, count), np.nan)
    status: list = [None] * count

    if timeout is not None and timeout <= 0:
        return PredictionEnsemble(values, tuple([FAIL_TIMEOUT] * count))

    tasks = [
        (forward, ensemble.values[:, j], stream_key(seed, iteration, FORWARD, j), timeout)
        for j in range(count)
    ]
    if workers == 1:
        results = map(_evaluate_task, tasks)
    else:
        chunksize = max(1, count // (4 * workers))
        executor = ProcessPoolExecutor(max_workers=workers)
        try:
            results = list(executor.map(_evaluate_task, tasks, chunksize=chunksize))
        finally:
            executor.shutdown()
    for j, (pred, reason) in enumerate(results):
        if reason is None:
            values[:, j] = pred
        status[j] = reason
    return PredictionEnsemble(values, tuple(status))
