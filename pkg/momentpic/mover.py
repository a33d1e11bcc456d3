"""Implicit relativistic particle mover and particle boundary conditions

Notes
-----
The mover works on u = gamma v. Per particle, with a = dt / 2 and
Omega = (q/m) B / c, one fixed point iterate is::

    v_tilde = u^n + (q/m) a E(x_bar)
    v_bar   = [v_tilde + (a/g) v_tilde x Omega + (a/g)^2 (v_tilde.Omega) Omega] / D
    D       = g (1 + (a/g)^2 |Omega|^2)
    u^{n+1} = 2 g v_bar - u^n,   g = (gamma^n + gamma^{n+1}) / 2

with x_bar = x^n + v_bar dt / 2. The magnetic part is then an exact rotation
of v_tilde, so with E = 0 |u| is preserved to round-off.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from momentpic.core import (
    InflowFace,
    MoverParams,
    Particle,
    ParticleSet,
    SpeciesParams,
    lorentz_factor,
)
from momentpic.exceptions import MomentPICException
from momentpic.grid import FieldGrid, Mesh, OutOfDomainError, sample
from momentpic.scenarios import maxwellian

logger = logging.getLogger(__name__)


@dataclass
class FieldSample:
    """Fields interpolated at a particle position"""

    E: np.ndarray
    B: np.ndarray


@dataclass
class MoverScratch:
    """Per-particle intermediate quantities of the last fixed point iterate"""

    v_tilde: np.ndarray
    v_bar: np.ndarray
    gamma_n: np.ndarray
    gamma_np1: np.ndarray
    gamma_tilde: np.ndarray
    D: np.ndarray
    Omega: np.ndarray


@dataclass
class MoverReport:
    """How the fixed point iteration went for one batch

    residuals holds the largest change in v_bar over all particles, one
    entry per iterate
    """

    iterations: int = 0
    residuals: List[float] = field(default_factory=list)
    scratch: Optional[MoverScratch] = None


class BoundaryVerdict(Enum):
    KEPT = "kept"
    WRAPPED = "wrapped"
    REMOVED = "removed"
    REINJECTED = "reinjected"


def sample_fields(grid: FieldGrid, positions: np.ndarray) -> FieldSample:
    """Trilinear E and B at (N, 3) positions

    Raises
    ------
    MoverError
        If a position is beyond the ghost layer or a sampled field is not finite
    """
    try:
        E = sample(grid.E, positions, grid.mesh)
        B = sample(grid.B, positions, grid.mesh)
    except OutOfDomainError as e:
        raise MoverError(f"Cannot sample fields: {e}") from e
    if not (np.all(np.isfinite(E)) and np.all(np.isfinite(B))):
        raise MoverError("Non-finite field at particle position")
    return FieldSample(E=E, B=B)


def sample_fields_at(grid: FieldGrid, position) -> FieldSample:
    """Fields at a single position"""
    fields = sample_fields(grid, np.asarray(position, dtype=float).reshape(1, 3))
    return FieldSample(E=fields.E[0], B=fields.B[0])


def push_particles(
    particles: ParticleSet,
    grid: FieldGrid,
    species: SpeciesParams,
    dt: float,
    params: MoverParams,
    c: float,
) -> Tuple[ParticleSet, MoverReport]:
    """Advance all particles of one species by one time step

    Parameters
    ----------
    particles: ParticleSet
        positions and velocities at time level n
    grid: FieldGrid
        fields with synced ghosts
    species: SpeciesParams
        gives q/m
    dt: float
        time step
    params: MoverParams
        fixed point tolerance and iteration limit
    c: float
        speed of light

    Raises
    ------
    MoverError
        For non-finite fields or when a new velocity reaches c

    Returns
    -------
    Tuple[ParticleSet, MoverReport]
        Particles at level n + 1, before boundary conditions
    """
    report = MoverReport()
    if len(particles) == 0:
        return particles.copy(), report

    qm = species.charge_over_mass
    half = 0.5 * dt
    x_n = particles.positions
    v_n = particles.velocities
    gamma_n = lorentz_factor(v_n, c)
    u_n = gamma_n[:, None] * v_n

    v_bar = v_n.copy()
    gamma_tilde = gamma_n.copy()
    gamma_np1 = gamma_n.copy()
    for _ in range(params.max_iterations):
        fields = sample_fields(grid, midpoint_positions(x_n, v_bar, half, grid.mesh))
        v_tilde = u_n + qm * half * fields.E
        omega = qm * fields.B / c
        a = (half / gamma_tilde)[:, None]
        omega2 = np.sum(omega * omega, axis=1)[:, None]
        D = gamma_tilde[:, None] * (1.0 + a * a * omega2)
        v_dot_omega = np.sum(v_tilde * omega, axis=1)[:, None]
        new_v_bar = (
            v_tilde + a * np.cross(v_tilde, omega) + a * a * v_dot_omega * omega
        ) / D

        u_np1 = 2 * gamma_tilde[:, None] * new_v_bar - u_n
        gamma_np1 = np.sqrt(1.0 + np.sum(u_np1 * u_np1, axis=1) / (c * c))
        residual = float(np.max(np.linalg.norm(new_v_bar - v_bar, axis=1)))
        v_bar = new_v_bar
        report.iterations += 1
        report.residuals.append(residual)
        report.scratch = MoverScratch(
            v_tilde=v_tilde, v_bar=v_bar, gamma_n=gamma_n, gamma_np1=gamma_np1,
            gamma_tilde=gamma_tilde, D=D[:, 0], Omega=omega,
        )
        gamma_tilde = 0.5 * (gamma_n + gamma_np1)
        if residual < params.tolerance:
            break

    # gamma^{n+1} consistent with v^{n+1} = (v_bar (g' + g^n) - g^n v^n) / g'
    for _ in range(params.max_iterations):
        u_np1 = v_bar * (gamma_np1 + gamma_n)[:, None] - u_n
        updated = np.sqrt(1.0 + np.sum(u_np1 * u_np1, axis=1) / (c * c))
        converged = np.array_equal(updated, gamma_np1)
        gamma_np1 = updated
        if converged:
            break
    u_np1 = v_bar * (gamma_np1 + gamma_n)[:, None] - u_n
    v_np1 = u_np1 / gamma_np1[:, None]

    if not np.all(np.isfinite(v_np1)):
        raise MoverError("Non-finite velocity after push")
    speed2 = np.sum(v_np1 * v_np1, axis=1)
    if np.any(speed2 >= c * c):
        raise MoverError(
            f"{int(np.sum(speed2 >= c * c))} particles reached |v| >= c, "
            f"dt={dt} is too large"
        )
    return ParticleSet(x_n + dt * v_bar, v_np1, particles.weights.copy()), report


def midpoint_positions(
    positions: np.ndarray, v_bar: np.ndarray, half: float, mesh: Mesh
) -> np.ndarray:
    """Where fields are sampled during a push, x^n + v_bar dt / 2

    Periodic meshes wrap the point back into [0, L). Open meshes clamp it to
    [0, L], the edge-copied ghosts hold the face value beyond that anyway.
    """
    x_bar = positions + half * v_bar
    if mesh.periodic:
        return wrap_periodic(x_bar, mesh)
    return np.clip(x_bar, 0.0, np.array(mesh.lengths))


def push_particle(
    p: Particle,
    grid: FieldGrid,
    species: SpeciesParams,
    dt: float,
    params: MoverParams,
    c: float,
) -> Particle:
    """Advance a single particle. See push_particles"""
    pushed, _ = push_particles(
        ParticleSet.from_particles([p]), grid, species, dt, params, c
    )
    return pushed.particle(0)


def wrap_periodic(positions: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Positions mapped into [0, L) per axis"""
    lengths = np.array(mesh.lengths)
    wrapped = np.mod(positions, lengths)
    # mod of a tiny negative value can round up to L itself
    return np.where(wrapped >= lengths, 0.0, wrapped)


def apply_boundaries(
    particles: ParticleSet,
    mesh: Mesh,
    rng: np.random.Generator,
    inflow: Optional[InflowFace] = None,
    species: Optional[SpeciesParams] = None,
    c: float = 1.0,
) -> Tuple[ParticleSet, Dict[BoundaryVerdict, int]]:
    """Apply the mesh's boundary mode to all particles of one species

    Periodic: positions wrap, velocities untouched.
    Open: particles leaving through the inflow face are reinjected there,
    mirrored back inside with a fresh wind velocity; particles leaving
    through any other face are removed.

    Returns
    -------
    Tuple[ParticleSet, Dict[BoundaryVerdict, int]]
        The surviving particles and how many got each verdict
    """
    counts = {verdict: 0 for verdict in BoundaryVerdict}
    if len(particles) == 0:
        return particles.copy(), counts

    if mesh.periodic:
        wrapped = wrap_periodic(particles.positions, mesh)
        changed = np.any(wrapped != particles.positions, axis=1)
        counts[BoundaryVerdict.WRAPPED] = int(changed.sum())
        counts[BoundaryVerdict.KEPT] = len(particles) - counts[BoundaryVerdict.WRAPPED]
        return (
            ParticleSet(wrapped, particles.velocities.copy(), particles.weights.copy()),
            counts,
        )

    lengths = np.array(mesh.lengths)
    positions = particles.positions.copy()
    velocities = particles.velocities.copy()
    below = positions < 0
    above = positions >= lengths
    through_inflow = np.zeros(len(particles), dtype=bool)
    if inflow is not None:
        crossing = below if inflow.side == 0 else above
        through_inflow = crossing[:, inflow.axis].copy()
        below[:, inflow.axis] &= inflow.side != 0
        above[:, inflow.axis] &= inflow.side != 1
    removed = np.any(below | above, axis=1)
    reinjected = through_inflow & ~removed

    if np.any(reinjected):
        if species is None:
            raise MoverError("Reinjection needs the species wind parameters")
        axis, length = inflow.axis, lengths[inflow.axis]
        mirrored = positions[reinjected, axis]
        mirrored = -mirrored if inflow.side == 0 else 2 * length - mirrored
        positions[reinjected, axis] = np.clip(mirrored, 0.0, np.nextafter(length, 0))
        fresh = maxwellian(
            rng, int(reinjected.sum()), species.thermal_velocity,
            species.drift_velocity, c,
        )
        inward = 1.0 if inflow.side == 0 else -1.0
        fresh[:, axis] = inward * np.abs(fresh[:, axis])
        velocities[reinjected] = fresh

    counts[BoundaryVerdict.REMOVED] = int(removed.sum())
    counts[BoundaryVerdict.REINJECTED] = int(reinjected.sum())
    counts[BoundaryVerdict.KEPT] = (
        len(particles) - counts[BoundaryVerdict.REMOVED]
        - counts[BoundaryVerdict.REINJECTED]
    )
    keep = ~removed
    return (
        ParticleSet(positions[keep], velocities[keep], particles.weights[keep]),
        counts,
    )


def apply_particle_bc(
    p: Particle,
    mesh: Mesh,
    rng: np.random.Generator,
    inflow: Optional[InflowFace] = None,
    species: Optional[SpeciesParams] = None,
    c: float = 1.0,
) -> Tuple[BoundaryVerdict, Optional[Particle]]:
    """Boundary condition for a single particle

    Returns
    -------
    Tuple[BoundaryVerdict, Optional[Particle]]
        The verdict and the updated particle, None when it was removed
    """
    result, counts = apply_boundaries(
        ParticleSet.from_particles([p]), mesh, rng, inflow, species, c
    )
    verdict = next(v for v, count in counts.items() if count)
    return verdict, (result.particle(0) if len(result) else None)


class MoverError(MomentPICException):
    pass
