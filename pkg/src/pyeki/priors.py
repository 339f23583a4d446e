"""Prior parametrisations: transforms, level sets, and the slice prior.

Every physical quantity is a deterministic function of one unconstrained
vector of i.i.d. unit normals.  Scalars reach their target distributions
through inverse-CDF transforms (which may reference previously computed
scalars), spatial fields come from Whittle-Matern SPDE solves driven by
white-noise blocks, and rock-type maps are produced by thresholding those
fields at ordered constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import ndtr, ndtri

from .fields import GridSpec, MaternHyper, sample_interface_gp, sample_wm_field

# Region labels of the vertical slice problem.
REGION_SHALLOW = 0
REGION_CLAY = 1
REGION_DEEP = 2
REGION_NAMES = ("shallow", "clay", "deep")

# Normal CDF values are clamped away from {0, 1} so inverse-CDF transforms
# stay finite for extreme particles.
_CDF_CLIP = 1e-15

Param = Union[float, str]


@dataclass(frozen=True)
class TransformSpec:
    """Target distribution of one unconstrained scalar.

    ``target`` is one of ``uniform(a, b)``, ``truncated_normal(m, s, lo, hi)``
    or ``normal(m, s)``.  Parameters may be floats or names of previously
    computed scalars (conditional targets).
    """

    target: str
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        expected = {"uniform": 2, "truncated_normal": 4, "normal": 2}
        if self.target not in expected:
            raise ValueError(f"unknown transform target {self.target!r}")
        if len(self.params) != expected[self.target]:
            raise ValueError(f"{self.target} takes {expected[self.target]} parameters")

    def resolve(self, context: Optional[dict] = None) -> tuple:
        """Replace name references by their values from ``context``."""
        out = []
        for p in self.params:
            if isinstance(p, str):
                if context is None or p not in context:
                    raise ValueError(f"unresolved transform parameter {p!r}")
                out.append(float(context[p]))
            else:
                out.append(float(p))
        return tuple(out)


def transform_scalar(theta: float, spec: TransformSpec, context: Optional[dict] = None) -> float:
    """Map one unit-normal variate to the target distribution of ``spec``.

    The mapping is the inverse-CDF composition ``F_t^{-1}(F_n(theta))``,
    strictly increasing, with the normal CDF clamped away from 0 and 1 so
    extreme particles stay strictly inside the target support.
    """
    if not np.isfinite(theta):
        raise ValueError("cannot transform a non-finite variate")
    params = spec.resolve(context)
    if spec.target == "normal":
        m, s = params
        _check_scale(s)
        return m + s * theta
    u = float(np.clip(ndtr(theta), _CDF_CLIP, 1.0 - _CDF_CLIP))
    if spec.target == "uniform":
        a, b = params
        if not a < b:
            raise ValueError("uniform bounds must satisfy a < b")
        return a + (b - a) * u
    # truncated normal: rescale u into the CDF interval of the truncation
    m, s, lo, hi = params
    _check_scale(s)
    if not lo < hi:
        raise ValueError("truncation bounds must satisfy lo < hi")
    if np.isneginf(lo) and np.isposinf(hi):
        return m + s * theta
    f_lo = ndtr((lo - m) / s) if np.isfinite(lo) else 0.0
    f_hi = ndtr((hi - m) / s) if np.isfinite(hi) else 1.0
    v = np.clip(f_lo + u * (f_hi - f_lo), _CDF_CLIP, 1.0 - _CDF_CLIP)
    return m + s * float(ndtri(v))


def _check_scale(s: float) -> None:
    if s <= 0:
        raise ValueError("scale must be positive")


@dataclass(frozen=True)
class LevelSetConfig:
    """Ordered thresholds and the physical value of each bin.

    ``thresholds`` are the finite interior constants; the outermost bins
    extend to minus and plus infinity.  Bins are left-closed and right-open:
    a value exactly on a threshold belongs to the upper bin.
    """

    thresholds: tuple
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(c) for c in self.thresholds))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != len(self.thresholds) + 1:
            raise ValueError("need exactly one value per bin")
        if np.any(np.diff(self.thresholds) <= 0):
            raise ValueError("thresholds must be strictly increasing")


def apply_level_set(phi: np.ndarray, config: LevelSetConfig) -> np.ndarray:
    """Threshold a level-set field into piecewise-constant physical values."""
    phi = np.asarray(phi, dtype=float)
    bins = np.searchsorted(np.asarray(config.thresholds), phi, side="right")
    return np.asarray(config.values)[bins]


@dataclass(frozen=True)
class Segment:
    """One contiguous block of the unconstrained parameter vector."""

    name: str
    start: int
    size: int
    kind: str  # "scalar" | "field" | "interface" | "raw"
    transform: Optional[TransformSpec] = None

    @property
    def stop(self) -> int:
        return self.start + self.size


class PriorGraph:
    """Layout of the unconstrained vector: ordered, non-overlapping segments.

    Scalar segments carry a transform each; field and interface segments are
    white-noise blocks consumed by GRF solves.  Evaluation order follows the
    segment order, so conditional transform targets may only reference
    scalars that appear earlier.
    """

    def __init__(self, segments: list[Segment]):
        pos = 0
        for seg in segments:
            if seg.start != pos:
                raise ValueError(f"segment {seg.name!r} does not start at offset {pos}")
            pos = seg.stop
        names = [s.name for s in segments]
        if len(set(names)) != len(names):
            raise ValueError("segment names must be unique")
        self.segments = tuple(segments)
        self.dimension = pos

    @classmethod
    def from_sizes(cls, spec: list[tuple]) -> "PriorGraph":
        """Build a graph from ``(name, size, kind[, transform])`` tuples."""
        segments, pos = [], 0
        for entry in spec:
            name, size, kind = entry[0], entry[1], entry[2]
            transform = entry[3] if len(entry) > 3 else None
            segments.append(Segment(name, pos, size, kind, transform))
            pos += size
        return cls(segments)

    @classmethod
    def raw(cls, dimension: int) -> "PriorGraph":
        """A graph with a single untransformed block (identity prior map)."""
        return cls([Segment("theta", 0, dimension, "raw")])

    def segment(self, name: str) -> Segment:
        for seg in self.segments:
            if seg.name == name:
                return seg
        raise KeyError(name)

    def block(self, theta: np.ndarray, name: str) -> np.ndarray:
        seg = self.segment(name)
        return np.asarray(theta)[seg.start : seg.stop]

    def scalar_segments(self) -> list[Segment]:
        return [s for s in self.segments if s.kind == "scalar"]

    def evaluate_scalars(self, theta: np.ndarray) -> dict:
        """Transform every scalar segment, honouring conditional references."""
        values: dict = {}
        for seg in self.scalar_segments():
            values[seg.name] = transform_scalar(float(theta[seg.start]), seg.transform, values)
        return values


@dataclass(frozen=True)
class RegionConfig:
    """Prior of one region's level-set field and its rock-type values."""

    name: str
    std_range: tuple
    lengthscale_x_range: tuple
    lengthscale_z_range: tuple
    levels: LevelSetConfig


@dataclass(frozen=True)
class InterfaceConfig:
    """Squared-exponential GP prior of the clay-base interface depth."""

    mean: float = -350.0
    std: float = 80.0
    lengthscale: float = 500.0


@dataclass
class SliceModelInstance:
    """Physical quantities of one particle of the slice problem."""

    log10_permeability: np.ndarray  # (nx, nz), log10 m^2
    upflow_rate: float  # kg/s
    interface_depth: np.ndarray  # (nx,), metres (clay base, omega_D)
    region_labels: np.ndarray  # (nx, nz), REGION_* codes
    hyperparameters: dict  # transformed scalar values by segment name


class SlicePrior:
    """Prior of the vertical slice problem on one grid.

    The unconstrained vector is laid out as nine hyperparameter scalars
    (std, x-lengthscale, z-lengthscale for the shallow, clay and deep
    regions), one white-noise block per region field, the interface noise
    block, and the upflow scalar.
    """

    def __init__(
        self,
        grid: GridSpec,
        regions: list[RegionConfig],
        interface: InterfaceConfig = InterfaceConfig(),
        shallow_interface_z: float = -60.0,
        upflow_range: tuple = (0.1, 0.2),
    ):
        if len(regions) != 3:
            raise ValueError("the slice prior uses exactly three regions")
        self.grid = grid
        self.regions = tuple(regions)
        self.interface = interface
        self.shallow_interface_z = float(shallow_interface_z)
        self.upflow_range = (float(upflow_range[0]), float(upflow_range[1]))

        layout: list[tuple] = []
        for region in self.regions:
            layout.append(
                (f"{region.name}_std", 1, "scalar", TransformSpec("uniform", region.std_range))
            )
            layout.append(
                (
                    f"{region.name}_lengthscale_x",
                    1,
                    "scalar",
                    TransformSpec("uniform", region.lengthscale_x_range),
                )
            )
            layout.append(
                (
                    f"{region.name}_lengthscale_z",
                    1,
                    "scalar",
                    TransformSpec("uniform", region.lengthscale_z_range),
                )
            )
        for region in self.regions:
            layout.append((f"{region.name}_levelset", grid.n_cells, "field"))
        layout.append(("interface", grid.nx, "interface"))
        layout.append(("upflow", 1, "scalar", TransformSpec("uniform", self.upflow_range)))
        self.graph = PriorGraph.from_sizes(layout)

    @property
    def dimension(self) -> int:
        return self.graph.dimension

    def build_instance(self, theta: np.ndarray) -> SliceModelInstance:
        return build_slice_instance(theta, self)


def build_slice_instance(theta: np.ndarray, prior: SlicePrior) -> SliceModelInstance:
    """Map one unconstrained vector to a slice-model instance.

    Transforms the hyperparameters, solves one Whittle-Matern SPDE per
    region from its white-noise block, thresholds each field into rock-type
    permeabilities, draws the clay-base interface from its GP, labels every
    cell by comparing its centre depth against the two interfaces, and picks
    each cell's permeability from its region's field.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != prior.dimension:
        raise ValueError(f"expected a vector of length {prior.dimension}, got {theta.size}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("unconstrained vector contains non-finite entries")
    graph = prior.graph
    g = prior.grid

    hypers = graph.evaluate_scalars(theta)

    region_values = []
    for region in prior.regions:
        hyper = MaternHyper(
            sigma=hypers[f"{region.name}_std"],
            ell=(hypers[f"{region.name}_lengthscale_x"], hypers[f"{region.name}_lengthscale_z"]),
        )
        noise = graph.block(theta, f"{region.name}_levelset")
        phi = sample_wm_field(noise, hyper, g).reshape(g.nx, g.nz)
        region_values.append(apply_level_set(phi, region.levels))

    interface_depth = sample_interface_gp(
        graph.block(theta, "interface"),
        prior.interface.mean,
        prior.interface.std,
        prior.interface.lengthscale,
        g.x_centres,
    )

    z = g.z_centres[None, :]  # (1, nz)
    omega_d = interface_depth[:, None]  # (nx, 1)
    labels = np.full((g.nx, g.nz), REGION_CLAY, dtype=np.int8)
    labels[np.broadcast_to(z > prior.shallow_interface_z, labels.shape)] = REGION_SHALLOW
    labels[(z <= omega_d) & (z <= prior.shallow_interface_z)] = REGION_DEEP

    log10_perm = np.choose(labels, region_values)
    upflow = hypers["upflow"]
    return SliceModelInstance(
        log10_permeability=log10_perm,
        upflow_rate=upflow,
        interface_depth=interface_depth,
        region_labels=labels,
        hyperparameters=hypers,
    )
