"""Single-phase steady-state Darcy flow and heat transport on a slice.

A finite-volume discretisation on a uniform rectangular grid.  The mass
balance is solved first for the dynamic pressure (hydrostatic datum
subtracted, so gravity drops out of the numerics and only enters the
reported pressure), giving the face mass fluxes; energy is then balanced
with conductive fluxes and first-order upwinded advection.  Boundaries:
fixed pressure and temperature at the top, closed sides, and a closed base
carrying a background conductive heat flux except at the centre cell, which
injects the prescribed hot mass upflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import ConfigError, SolverError
from .fields import GridSpec
from .priors import SliceModelInstance

GRAVITY = 9.81  # m/s^2


@dataclass(frozen=True)
class WellSpec:
    """One observation well: x position and observation depths (z, metres)."""

    x: float
    depths: tuple

    def __post_init__(self):
        # depth-descending: shallowest observation first
        object.__setattr__(self, "depths", tuple(sorted((float(d) for d in self.depths), reverse=True)))


@dataclass(frozen=True)
class SliceModelSpec:
    """Physical configuration of the slice forward problem."""

    grid: GridSpec
    wells: tuple
    thermal_conductivity: float = 2.5  # W/m/K
    basal_heat_flux: float = 0.2  # W/m^2
    top_temperature: float = 20.0  # degC
    top_pressure: float = 1.0e5  # Pa
    fluid_density: float = 1000.0  # kg/m^3
    fluid_heat_capacity: float = 4200.0  # J/kg/K
    fluid_viscosity: float = 1.0e-3  # Pa s
    upflow_enthalpy: float = 1.5e6  # J/kg
    thickness: float = 60.0  # m, slab extent normal to the slice
    picard_tol: float = 1e-8
    picard_max_iter: int = 200

    def __post_init__(self):
        object.__setattr__(self, "wells", tuple(self.wells))
        g = self.grid
        x_lo, x_hi = g.origin[0], g.origin[0] + g.width
        z_lo, z_hi = g.origin[1], g.origin[1] + g.depth
        for well in self.wells:
            if not (x_lo < well.x < x_hi):
                raise ConfigError(f"well at x={well.x} lies outside the domain")
            for d in well.depths:
                if not (z_lo < d < z_hi):
                    raise ConfigError(f"observation depth z={d} lies outside the domain")

    @property
    def output_dim(self) -> int:
        return sum(len(w.depths) for w in self.wells)

    @property
    def upflow_cell(self) -> int:
        """x index of the basal cell carrying the mass upflow (domain centre)."""
        return self.grid.nx // 2


@dataclass
class PressureSolution:
    """Pressure field and the face mass fluxes implied by it."""

    pressure: np.ndarray  # (nx, nz), Pa, hydrostatic included
    dynamic: np.ndarray  # (nx, nz), Pa, datum-subtracted
    flux_x: np.ndarray  # (nx-1, nz), kg/s, positive towards +x
    flux_z: np.ndarray  # (nx, nz-1), kg/s, positive towards +z (up)
    top_outflow: np.ndarray  # (nx,), kg/s through the top boundary


def _face_conductance(spec: SliceModelSpec, perm: np.ndarray):
    """Mass conductances (kg/s/Pa) at interior faces and the top boundary.

    Harmonic-mean face permeabilities handle the discontinuous level-set
    coefficient fields.
    """
    g = spec.grid
    mobility = spec.fluid_density / spec.fluid_viscosity
    kx = 2.0 * perm[:-1, :] * perm[1:, :] / (perm[:-1, :] + perm[1:, :])
    kz = 2.0 * perm[:, :-1] * perm[:, 1:] / (perm[:, :-1] + perm[:, 1:])
    lam_x = mobility * kx * (g.dz * spec.thickness) / g.dx
    lam_z = mobility * kz * (g.dx * spec.thickness) / g.dz
    lam_top = mobility * perm[:, -1] * (g.dx * spec.thickness) / (g.dz / 2.0)
    return lam_x, lam_z, lam_top


def solve_pressure(instance: SliceModelInstance, spec: SliceModelSpec) -> PressureSolution:
    """Solve the steady single-phase mass balance for one instance.

    Raises
    ------
    SolverError
        If the sparse solve fails to produce a finite solution.
    """
    g = spec.grid
    perm = 10.0 ** np.asarray(instance.log10_permeability, dtype=float)
    if not np.all(np.isfinite(perm)):
        raise SolverError("permeability field is not finite")
    lam_x, lam_z, lam_top = _face_conductance(spec, perm)
    n = g.n_cells
    idx = np.arange(n).reshape(g.nx, g.nz)

    rows, cols, vals = [], [], []

    def couple(a, b, lam):
        rows.extend([a, b, a, b])
        cols.extend([a, b, b, a])
        vals.extend([lam, lam, -lam, -lam])

    for i in range(g.nx - 1):
        for k in range(g.nz):
            couple(idx[i, k], idx[i + 1, k], lam_x[i, k])
    for i in range(g.nx):
        for k in range(g.nz - 1):
            couple(idx[i, k], idx[i, k + 1], lam_z[i, k])

    rhs = np.zeros(n)
    # top boundary: fixed dynamic pressure 0 at half-cell distance
    top = idx[:, -1]
    rows.extend(top)
    cols.extend(top)
    vals.extend(lam_top)
    # basal mass source at the centre cell
    rhs[idx[spec.upflow_cell, 0]] = instance.upflow_rate

    matrix = scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    dynamic = scipy.sparse.linalg.spsolve(matrix, rhs)
    if not np.all(np.isfinite(dynamic)):
        raise SolverError("pressure solve produced non-finite values")
    dyn = dynamic.reshape(g.nx, g.nz)

    flux_x = lam_x * (dyn[:-1, :] - dyn[1:, :])
    flux_z = lam_z * (dyn[:, :-1] - dyn[:, 1:])
    top_outflow = lam_top * dyn[:, -1]

    hydrostatic = spec.top_pressure - spec.fluid_density * GRAVITY * g.z_centres
    pressure = dyn + hydrostatic[None, :]
    return PressureSolution(pressure, dyn, flux_x, flux_z, top_outflow)


def _basal_heat_sources(instance: SliceModelInstance, spec: SliceModelSpec) -> np.ndarray:
    """Heat input (W) per basal cell.

    Every basal cell carries the background conductive flux; a positive
    upflow replaces it at the centre cell with the enthalpy inflow.
    """
    g = spec.grid
    source = np.full(g.nx, spec.basal_heat_flux * g.dx * spec.thickness)
    if instance.upflow_rate > 0:
        source[spec.upflow_cell] = instance.upflow_rate * spec.upflow_enthalpy
    return source


def solve_temperature(
    instance: SliceModelInstance, psol: PressureSolution, spec: SliceModelSpec
) -> np.ndarray:
    """Solve the steady energy balance given the mass fluxes.

    Conduction uses the uniform rock conductivity; advection is first-order
    upwind in the face mass fluxes.  The discrete system is assembled once
    and iterated Picard-style until successive solutions agree to the
    configured relative tolerance.

    Raises
    ------
    SolverError
        On non-convergence or a non-finite iterate.
    """
    g = spec.grid
    n = g.n_cells
    idx = np.arange(n).reshape(g.nx, g.nz)
    cond_x = spec.thermal_conductivity * (g.dz * spec.thickness) / g.dx
    cond_z = spec.thermal_conductivity * (g.dx * spec.thickness) / g.dz
    cond_top = spec.thermal_conductivity * (g.dx * spec.thickness) / (g.dz / 2.0)
    c_f = spec.fluid_heat_capacity

    rows, cols, vals = [], [], []
    rhs = np.zeros(n)

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    def face(a, b, cond, flux):
        # conduction both ways, advection donates the upwind temperature
        add(a, a, cond)
        add(b, b, cond)
        add(a, b, -cond)
        add(b, a, -cond)
        adv = c_f * flux
        if flux >= 0:  # a -> b
            add(a, a, adv)
            add(b, a, -adv)
        else:  # b -> a
            add(b, b, -adv)
            add(a, b, adv)

    for i in range(g.nx - 1):
        for k in range(g.nz):
            face(idx[i, k], idx[i + 1, k], cond_x, psol.flux_x[i, k])
    for i in range(g.nx):
        for k in range(g.nz - 1):
            face(idx[i, k], idx[i, k + 1], cond_z, psol.flux_z[i, k])

    # top boundary: fixed temperature, plus the advected outflow
    for i in range(g.nx):
        cell = idx[i, -1]
        add(cell, cell, cond_top)
        rhs[cell] += cond_top * spec.top_temperature
        flux = psol.top_outflow[i]
        if flux >= 0:
            add(cell, cell, c_f * flux)
        else:
            rhs[cell] += c_f * (-flux) * spec.top_temperature

    rhs[idx[:, 0]] += _basal_heat_sources(instance, spec)

    matrix = scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    try:
        solve = scipy.sparse.linalg.factorized(matrix)
    except RuntimeError as exc:
        raise SolverError(f"temperature system factorisation failed: {exc}") from exc

    temperature = np.full(n, spec.top_temperature)
    for _ in range(spec.picard_max_iter):
        updated = solve(rhs)
        if not np.all(np.isfinite(updated)):
            raise SolverError("temperature iterate is not finite")
        scale = max(np.max(np.abs(updated)), 1.0)
        change = np.max(np.abs(updated - temperature)) / scale
        temperature = updated
        if change < spec.picard_tol:
            return temperature.reshape(g.nx, g.nz)
    raise SolverError(
        f"temperature solve did not converge in {spec.picard_max_iter} iterations"
    )


def boundary_energy_residual(
    instance: SliceModelInstance,
    psol: PressureSolution,
    temperature: np.ndarray,
    spec: SliceModelSpec,
) -> float:
    """Net boundary energy flow (W); zero at a converged steady state."""
    g = spec.grid
    c_f = spec.fluid_heat_capacity
    cond_top = spec.thermal_conductivity * (g.dx * spec.thickness) / (g.dz / 2.0)
    t_top_cells = temperature[:, -1]
    conduction_out = float(np.sum(cond_top * (t_top_cells - spec.top_temperature)))
    advection_out = float(
        np.sum(
            np.where(
                psol.top_outflow >= 0,
                c_f * psol.top_outflow * t_top_cells,
                c_f * psol.top_outflow * spec.top_temperature,
            )
        )
    )
    heat_in = float(np.sum(_basal_heat_sources(instance, spec)))
    return heat_in - conduction_out - advection_out


def observe(field_values: np.ndarray, spec: SliceModelSpec) -> np.ndarray:
    """Interpolate a cell-centred field at the well observation points.

    Bilinear interpolation on the cell-centre lattice; observations are
    ordered well-major, depths descending within each well.

    Raises
    ------
    ConfigError
        If an observation point falls outside the centre lattice.
    """
    g = spec.grid
    values = np.asarray(field_values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot observe a non-finite field")
    xc, zc = g.x_centres, g.z_centres
    out = np.empty(spec.output_dim)
    pos = 0
    for well in spec.wells:
        if not (xc[0] <= well.x <= xc[-1]):
            raise ConfigError(f"well at x={well.x} is outside the interpolation lattice")
        ix = min(int(np.searchsorted(xc, well.x, side="right")) - 1, g.nx - 2)
        ix = max(ix, 0)
        wx = (well.x - xc[ix]) / (xc[ix + 1] - xc[ix])
        for depth in well.depths:
            if not (zc[0] <= depth <= zc[-1]):
                raise ConfigError(f"depth z={depth} is outside the interpolation lattice")
            iz = min(int(np.searchsorted(zc, depth, side="right")) - 1, g.nz - 2)
            iz = max(iz, 0)
            wz = (depth - zc[iz]) / (zc[iz + 1] - zc[iz])
            out[pos] = (
                (1 - wx) * (1 - wz) * values[ix, iz]
                + wx * (1 - wz) * values[ix + 1, iz]
                + (1 - wx) * wz * values[ix, iz + 1]
                + wx * wz * values[ix + 1, iz + 1]
            )
            pos += 1
    return out
