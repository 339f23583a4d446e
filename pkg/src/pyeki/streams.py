"""Counter-derived random streams.

Every random draw in the toolkit comes from a generator keyed by
``(seed, iteration, kind, index)``.  Streams are therefore a pure function
of the run seed and the consumer's identity: forward evaluations, update
perturbations, resampling draws, bootstrap resamples and inflation variates
each own a kind tag, and the per-particle (or per-bootstrap) index completes
the key.  Results are independent of scheduling and worker count.
"""

from __future__ import annotations

import numpy as np

# Kind tags. Values are part of the reproducibility contract: changing them
# changes every stream of a run.
FORWARD = 0
UPDATE_NOISE = 1
RESAMPLE = 2
BOOTSTRAP = 3
VARIATES = 4
TRUTH = 5
DATA_NOISE = 6
PRIOR_SAMPLE = 7


def stream_key(seed: int, iteration: int, kind: int, index: int = 0) -> tuple[int, int, int, int]:
    """Return the entropy tuple identifying one stream."""
    return (int(seed), int(iteration), int(kind), int(index))


def stream(seed: int, iteration: int, kind: int, index: int = 0) -> np.random.Generator:
    """Create the dedicated generator for ``(seed, iteration, kind, index)``."""
    return np.random.default_rng(np.random.SeedSequence(stream_key(seed, iteration, kind, index)))


def particle_streams(seed: int, iteration: int, kind: int, indices) -> list[np.random.Generator]:
    """Streams for a set of particle indices, in the given order."""
    return [stream(seed, iteration, kind, j) for j in indices]
