"""Initial conditions: uniform plasma, GEM double Harris sheet and a dipole
obstacle in a plasma wind

Notes
-----
Weights are normalised so that the first positively charged species at
reference density 1 has unit plasma frequency, 4 pi n0 q (q/m) = 1.
Species with equal particles_per_cell share particle positions (and in the
Harris sheet the sheet membership too), so ion/electron pairs with opposite
unit charges and equal reference densities are charge neutral per cell.
"""
import logging
import math
from typing import Dict, List, Tuple

import numpy as np

from momentpic.core import (
    BoundaryMode,
    InflowFace,
    ParticleSet,
    ScenarioKind,
    SimConfig,
    SimState,
    SpeciesParams,
    make_rng,
)
from momentpic.exceptions import MomentPICException
from momentpic.grid import FieldGrid, Mesh

logger = logging.getLogger(__name__)


def density_unit(config: SimConfig) -> float:
    """Number density n0 for which 4 pi n0 q (q/m) = 1 for the reference ion"""
    reference = next(
        (s for s in config.species_params if s.charge_over_mass > 0),
        config.species_params[0],
    )
    return 1.0 / (
        4 * math.pi * abs(reference.unit_charge * reference.charge_over_mass)
    )


def particle_weight(config: SimConfig, species: SpeciesParams) -> float:
    """Statistical weight of one loaded particle at the species' density"""
    mesh = config.mesh()
    return (
        species.reference_density
        * density_unit(config)
        * mesh.cell_volume
        / species.particles_per_cell
    )


def _last_inside(length: float) -> float:
    return np.nextafter(length, 0.0)


def cell_positions(mesh: Mesh, per_cell: int, rng: np.random.Generator) -> np.ndarray:
    """per_cell random positions inside each cell, cells in C order"""
    cells = np.array(mesh.cells)
    corners = np.stack(
        np.meshgrid(*(np.arange(n) for n in cells), indexing="ij"), axis=-1
    ).reshape(-1, 3)
    corners = np.repeat(corners, per_cell, axis=0)
    positions = (corners + rng.random(corners.shape)) * mesh.spacing
    return np.minimum(positions, [_last_inside(x) for x in mesh.lengths])


def maxwellian(
    rng: np.random.Generator,
    count: int,
    thermal: Tuple[float, float, float],
    drift,
    c: float,
) -> np.ndarray:
    """Drifting Maxwellian velocities, redrawn until all are below c

    Parameters
    ----------
    drift:
        a triple or a (count, 3) array of per-particle drifts
    """
    thermal = np.asarray(thermal, dtype=float)
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (count, 3))
    velocities = drift + thermal * rng.normal(size=(count, 3))
    for _ in range(100):
        too_fast = np.sum(velocities ** 2, axis=1) >= c * c
        if not np.any(too_fast):
            return velocities
        velocities[too_fast] = drift[too_fast] + thermal * rng.normal(
            size=(int(too_fast.sum()), 3)
        )
    raise ScenarioError("Could not sample velocities below c, thermal speed too high")


def _uniform_fields(mesh: Mesh, b0) -> FieldGrid:
    grid = FieldGrid(mesh)
    grid.B[...] = np.asarray(b0, dtype=float)
    return grid


def _load_uniform_species(
    config: SimConfig, mesh: Mesh, rng: np.random.Generator
) -> List[ParticleSet]:
    shared: Dict[int, np.ndarray] = {}
    species_sets = []
    for species in config.species_params:
        ppc = species.particles_per_cell
        if ppc not in shared:
            shared[ppc] = cell_positions(mesh, ppc, rng)
        positions = shared[ppc]
        velocities = maxwellian(
            rng, len(positions), species.thermal_velocity, species.drift_velocity,
            config.c,
        )
        weights = np.full(len(positions), particle_weight(config, species))
        species_sets.append(ParticleSet(positions.copy(), velocities, weights))
    return species_sets


def init_uniform_plasma(config: SimConfig) -> SimState:
    """Uniform drifting Maxwellian plasma in a periodic box

    Raises
    ------
    ScenarioError
        If boundary mode is not periodic

    Returns
    -------
    SimState
        with E = 0 and B equal to the configured uniform b0
    """
    if config.boundary_mode != BoundaryMode.PERIODIC:
        raise ScenarioError("uniform plasma needs periodic boundaries")
    mesh = config.mesh()
    rng = make_rng(config.rng_seed)
    species = _load_uniform_species(config, mesh, rng)
    logger.info(f"Loaded uniform plasma: {[len(x) for x in species]} particles")
    return SimState(
        config=config, fields=_uniform_fields(mesh, config.scenario.b0),
        species=species, rng=rng,
    )


def harris_field(y_rel, b0: float, width: float):
    """Single Harris sheet B_x = B0 tanh(y / lambda), y relative to the sheet"""
    return b0 * np.tanh(np.asarray(y_rel) / width)


def double_harris_field(y, length_y: float, b0: float, width: float):
    """Two sheets at Ly/4 and 3Ly/4 with opposite current, periodic in y"""
    return (
        harris_field(np.asarray(y) - length_y / 4, b0, width)
        - harris_field(np.asarray(y) - 3 * length_y / 4, b0, width)
        - b0
    )


def gem_perturbation(x, y, lengths, amplitude: float) -> Tuple[np.ndarray, np.ndarray]:
    """In-plane field (B_x, B_y) = curl(psi z) of the flux function
    psi = amplitude cos(2 pi x / Lx) cos(2 pi (y - Ly/4) / Ly)

    With positive amplitude the X-lines of both sheets sit at x = 0.
    """
    lx, ly = lengths[0], lengths[1]
    kx, ky = 2 * np.pi / lx, 2 * np.pi / ly
    phase_y = ky * (np.asarray(y) - ly / 4)
    bx = -amplitude * ky * np.cos(kx * np.asarray(x)) * np.sin(phase_y)
    by = amplitude * kx * np.sin(kx * np.asarray(x)) * np.cos(phase_y)
    return bx, by


def init_gem_harris(config: SimConfig) -> SimState:
    """GEM reconnection setup: double Harris sheet, flux perturbation and a
    uniform background population

    Sheet densities are carried by particle weights, sech^2 around each
    sheet. Sheet particles take the species drift in the lower sheet and
    the reversed drift in the upper sheet.

    Raises
    ------
    ScenarioError
        If the box is not periodic or is shorter than 4 lambda in y
    """
    scenario = config.scenario
    width = scenario.harris_lambda
    length_y = config.domain_lengths[1]
    if config.boundary_mode != BoundaryMode.PERIODIC:
        raise ScenarioError("GEM setup needs periodic boundaries")
    if length_y < 4 * width:
        raise ScenarioError(
            f"domain too small: Ly = {length_y} is less than 4 lambda = {4 * width}"
        )

    mesh = config.mesh()
    rng = make_rng(config.rng_seed)

    nodes = mesh.full_node_positions()
    grid = FieldGrid(mesh)
    grid.B[..., 0] = double_harris_field(
        nodes[..., 1], length_y, scenario.harris_b0, width
    )
    bx, by = gem_perturbation(
        nodes[..., 0], nodes[..., 1], config.domain_lengths,
        scenario.perturbation * scenario.harris_b0,
    )
    grid.B[..., 0] += bx
    grid.B[..., 1] += by
    grid.B += np.asarray(scenario.b0, dtype=float)
    grid.sync()

    shared: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = {}
    species_sets = []
    for species in config.species_params:
        ppc = species.particles_per_cell
        if ppc not in shared:
            sheet_positions = cell_positions(mesh, ppc, rng)
            y = sheet_positions[:, 1]
            lower = np.cosh((y - length_y / 4) / width) ** -2
            upper = np.cosh((y - 3 * length_y / 4) / width) ** -2
            in_upper = rng.random(len(y)) * (lower + upper) < upper
            shared[ppc] = (
                sheet_positions, lower + upper, in_upper,
                cell_positions(mesh, ppc, rng),
            )
        sheet_positions, profile, in_upper, background_positions = shared[ppc]

        base_weight = particle_weight(config, species)
        drift = np.tile(np.asarray(species.drift_velocity, dtype=float), (len(profile), 1))
        drift[in_upper] *= -1
        sheet = ParticleSet(
            sheet_positions.copy(),
            maxwellian(rng, len(profile), species.thermal_velocity, drift, config.c),
            base_weight * profile,
        )
        background = ParticleSet(
            background_positions.copy(),
            maxwellian(
                rng, len(background_positions), species.thermal_velocity,
                (0.0, 0.0, 0.0), config.c,
            ),
            np.full(
                len(background_positions),
                base_weight * scenario.background_fraction,
            ),
        )
        if scenario.background_fraction > 0:
            species_sets.append(sheet.concatenate(background))
        else:
            species_sets.append(sheet)

    logger.info(
        f"Loaded GEM double Harris sheet, lambda={width}: "
        f"{[len(x) for x in species_sets]} particles"
    )
    return SimState(config=config, fields=grid, species=species_sets, rng=rng)


def dipole_field(positions, center, moment, core: float) -> np.ndarray:
    """Point dipole (3 (m.r) r / r^5 - m / r^3), softened to |r| = core inside
    the core radius so the field stays finite at the centre
    """
    r = np.asarray(positions, dtype=float) - np.asarray(center, dtype=float)
    moment = np.asarray(moment, dtype=float)
    distance = np.maximum(np.linalg.norm(r, axis=-1), core)[..., None]
    m_dot_r = np.sum(r * moment, axis=-1)[..., None]
    return 3 * m_dot_r * r / distance ** 5 - moment / distance ** 3


def inflow_face(config: SimConfig) -> InflowFace:
    """Face the first species' drift enters through

    Raises
    ------
    ScenarioError
        If the first species has no drift
    """
    drift = np.asarray(config.species_params[0].drift_velocity, dtype=float)
    if not np.any(drift != 0):
        raise ScenarioError("open inflow needs a drifting first species")
    axis = int(np.argmax(np.abs(drift)))
    return InflowFace(axis=axis, side=0 if drift[axis] > 0 else 1)


def init_dipole_scenario(config: SimConfig) -> SimState:
    """Dipole obstacle in a drifting plasma wind with open boundaries

    Raises
    ------
    ScenarioError
        If boundaries are not open or the dipole centre is outside the domain
    """
    if config.boundary_mode != BoundaryMode.OPEN_INFLOW:
        raise ScenarioError("dipole scenario needs open_inflow boundaries")
    scenario = config.scenario
    mesh = config.mesh()
    lengths = np.array(config.domain_lengths)
    center = (
        lengths / 2
        if scenario.dipole_center is None
        else np.asarray(scenario.dipole_center, dtype=float)
    )
    if np.any(center < 0) or np.any(center > lengths):
        raise ScenarioError(f"dipole center {tuple(center)} is outside the domain")
    core = scenario.dipole_core or float(np.max(mesh.spacing))
    face = inflow_face(config)

    b_wind = np.asarray(scenario.b_wind, dtype=float) + np.asarray(scenario.b0)
    field = dipole_field(
        mesh.full_node_positions(), center, scenario.dipole_moment, core
    ) + b_wind
    v_wind = np.asarray(config.species_params[0].drift_velocity, dtype=float)
    grid = FieldGrid(mesh, B=field, B_boundary=field.copy())
    grid.E[...] = -np.cross(v_wind, b_wind) / config.c

    rng = make_rng(config.rng_seed)
    species = _load_uniform_species(config, mesh, rng)
    logger.info(
        f"Loaded dipole scenario, inflow through axis {face.axis} side "
        f"{face.side}: {[len(x) for x in species]} particles"
    )
    return SimState(
        config=config, fields=grid, species=species, rng=rng, inflow=face
    )


def expected_inflow_count(
    config: SimConfig, species: SpeciesParams, face: InflowFace
) -> float:
    """Mean number of particles crossing the inflow face in one cycle,
    n v A dt / w
    """
    mesh = config.mesh()
    area = float(np.prod(np.delete(np.array(mesh.lengths), face.axis)))
    normal_speed = abs(species.drift_velocity[face.axis])
    density = species.reference_density * density_unit(config)
    return density * normal_speed * area * config.dt / particle_weight(config, species)


def inject_inflow(
    config: SimConfig,
    species: SpeciesParams,
    face: InflowFace,
    rng: np.random.Generator,
) -> ParticleSet:
    """New wind particles entering through the inflow face during one cycle.

    The count is the expected flux, stochastically rounded. Particles fill a
    slab of depth |v_drift| dt behind the face.
    """
    expected = expected_inflow_count(config, species, face)
    count = int(math.floor(expected + rng.random()))
    if count == 0:
        return ParticleSet.empty()
    lengths = np.array(config.domain_lengths)
    positions = rng.random((count, 3)) * lengths
    depth = rng.random(count) * abs(species.drift_velocity[face.axis]) * config.dt
    depth = np.minimum(depth, lengths[face.axis])
    if face.side == 0:
        positions[:, face.axis] = depth
    else:
        positions[:, face.axis] = lengths[face.axis] - depth
    positions = np.minimum(positions, [_last_inside(x) for x in lengths])
    velocities = maxwellian(
        rng, count, species.thermal_velocity, species.drift_velocity, config.c
    )
    weights = np.full(count, particle_weight(config, species))
    return ParticleSet(positions, velocities, weights)


def initialize(config: SimConfig) -> SimState:
    """Build the initial state for the configured scenario kind"""
    initializers = {
        ScenarioKind.UNIFORM: init_uniform_plasma,
        ScenarioKind.GEM: init_gem_harris,
        ScenarioKind.DIPOLE: init_dipole_scenario,
    }
    return initializers[config.scenario.kind](config)


class ScenarioError(MomentPICException):
    pass
