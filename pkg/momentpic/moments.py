"""Particle moments on the mesh and the implicit susceptibility built from them

Notes
-----
All moment arrays are on unique nodes (see momentpic.grid). Densities are
per node volume, so summing rho over nodes times the node volume gives the
total charge.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from momentpic.core import MomentParams, ParticleSet, SpeciesParams
from momentpic.exceptions import MomentPICException
from momentpic.grid import (
    Mesh,
    OutOfDomainError,
    binomial_smooth,
    deposit_stencils,
    divergence,
    tensor_divergence,
)

logger = logging.getLogger(__name__)

# upper triangle of a symmetric 3x3 tensor
PRESSURE_COMPONENTS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass
class SpeciesMoments:
    """Charge density, current density and pressure tensor of one species"""

    rho: np.ndarray
    J: np.ndarray
    Pi: np.ndarray


@dataclass
class Moments:
    """Moments of all species"""

    species: List[SpeciesMoments]

    @property
    def rho(self) -> np.ndarray:
        return sum(s.rho for s in self.species)

    @property
    def J(self) -> np.ndarray:
        return sum(s.J for s in self.species)


@dataclass
class HatMoments:
    """Implicit source terms of the field equation"""

    rho_hat: np.ndarray
    J_hat: np.ndarray


def gather_species(
    particles: ParticleSet, species: SpeciesParams, mesh: Mesh,
    smoothing: bool = False,
) -> SpeciesMoments:
    """Deposit rho = sum q w W, J = sum q w v W and Pi = sum q w v v W per node
    volume, using the trilinear stencil

    Raises
    ------
    MomentError
        When a particle is outside the domain or has a non-finite value
    """
    size = mesh.n_unique
    if len(particles) == 0:
        return SpeciesMoments(
            rho=mesh.zeros(), J=mesh.zeros(3), Pi=mesh.zeros(3, 3)
        )
    if not (
        np.all(np.isfinite(particles.velocities))
        and np.all(np.isfinite(particles.weights))
    ):
        raise MomentError("Non-finite particle velocity or weight")
    try:
        nodes, stencil_weights = deposit_stencils(particles.positions, mesh)
    except OutOfDomainError as e:
        raise MomentError(f"Cannot gather moments: {e}") from e

    flat_nodes = nodes.ravel()
    charge = species.unit_charge * particles.weights[:, None] * stencil_weights
    v = particles.velocities

    def deposit(values: np.ndarray) -> np.ndarray:
        return (
            np.bincount(
                flat_nodes, weights=(charge * values[:, None]).ravel(), minlength=size
            ).reshape(mesh.unique_dims)
            / mesh.node_volume
        )

    rho = deposit(np.ones(len(particles)))
    J = np.stack([deposit(v[:, i]) for i in range(3)], axis=-1)
    Pi = np.zeros(mesh.unique_dims + (3, 3))
    for i, j in PRESSURE_COMPONENTS:
        Pi[..., i, j] = deposit(v[:, i] * v[:, j])
        Pi[..., j, i] = Pi[..., i, j]

    if smoothing:
        rho = binomial_smooth(rho, mesh)
        J = binomial_smooth(J, mesh)
        Pi = binomial_smooth(Pi, mesh)
    return SpeciesMoments(rho=rho, J=J, Pi=Pi)


def gather_moments(
    particles: Sequence[ParticleSet],
    species_params: Sequence[SpeciesParams],
    mesh: Mesh,
    params: MomentParams = MomentParams(),
) -> Moments:
    """Moments of every species, ghost contributions folded per boundary mode"""
    return Moments(
        species=[
            gather_species(p, s, mesh, smoothing=params.smoothing)
            for p, s in zip(particles, species_params)
        ]
    )


def rotation_tensor(B: np.ndarray, charge_over_mass: float, dt: float, c: float):
    """Per node R = (I - a [Omega]x + a^2 Omega Omega^T) / (1 + a^2 |Omega|^2)
    with a = dt / 2 and Omega = (q/m) B / c.

    R maps the velocity source onto the implicit velocity response of the
    mover linearised around gamma = 1
    """
    omega = charge_over_mass * np.asarray(B) / c
    a = 0.5 * dt
    ox, oy, oz = omega[..., 0], omega[..., 1], omega[..., 2]
    zero = np.zeros_like(ox)
    # [Omega]x v = Omega x v, so -[Omega]x v = v x Omega
    skew = np.stack(
        [
            np.stack([zero, -oz, oy], axis=-1),
            np.stack([oz, zero, -ox], axis=-1),
            np.stack([-oy, ox, zero], axis=-1),
        ],
        axis=-2,
    )
    outer = omega[..., :, None] * omega[..., None, :]
    identity = np.broadcast_to(np.eye(3), outer.shape)
    denominator = (1.0 + a * a * np.sum(omega * omega, axis=-1))[..., None, None]
    return (identity - a * skew + a * a * outer) / denominator


def plasma_frequency_squared(rho: np.ndarray, charge_over_mass: float) -> np.ndarray:
    """4 pi |rho q/m|, non-negative whatever the sign of the species charge"""
    return 4 * np.pi * np.abs(rho * charge_over_mass)


def build_susceptibility(
    moments: Moments,
    B: np.ndarray,
    dt: float,
    species_params: Sequence[SpeciesParams],
    c: float,
) -> np.ndarray:
    """chi = sum_s (omega_ps dt)^2 / 2 R_s per node

    Parameters
    ----------
    moments: Moments
        moments of time level n
    B: np.ndarray
        magnetic field on unique nodes
    dt: float
        time step
    species_params: Sequence[SpeciesParams]
        same order as moments.species
    c: float
        speed of light

    Raises
    ------
    MomentError
        If a resulting value is not finite

    Returns
    -------
    np.ndarray
        (P0, P1, P2, 3, 3) susceptibility tensor
    """
    chi = np.zeros(np.shape(B)[:-1] + (3, 3))
    for species_moments, species in zip(moments.species, species_params):
        omega2 = plasma_frequency_squared(species_moments.rho, species.charge_over_mass)
        chi += (omega2 * dt * dt / 2)[..., None, None] * rotation_tensor(
            B, species.charge_over_mass, dt, c
        )
    if not np.all(np.isfinite(chi)):
        raise MomentError("Non-finite susceptibility")
    return chi


def build_hat_moments(
    moments: Moments,
    B: np.ndarray,
    dt: float,
    species_params: Sequence[SpeciesParams],
    c: float,
    mesh: Mesh,
) -> HatMoments:
    """J_hat = sum_s R_s (J_s - dt/2 div Pi_s), rho_hat = rho - dt div J_hat"""
    J_hat = mesh.zeros(3)
    for species_moments, species in zip(moments.species, species_params):
        source = species_moments.J - 0.5 * dt * tensor_divergence(
            mesh.pad(species_moments.Pi), mesh
        )
        R = rotation_tensor(B, species.charge_over_mass, dt, c)
        J_hat += np.einsum("...ij,...j->...i", R, source)
    rho_hat = moments.rho - dt * divergence(mesh.pad(J_hat), mesh)
    if not (np.all(np.isfinite(J_hat)) and np.all(np.isfinite(rho_hat))):
        raise MomentError("Non-finite implicit moments")
    return HatMoments(rho_hat=rho_hat, J_hat=J_hat)


class MomentError(MomentPICException):
    pass
