import numpy as np
import pytest

from momentpic.core import MomentParams, ParticleSet, SpeciesParams
from momentpic.moments import (
    MomentError,
    Moments,
    SpeciesMoments,
    build_hat_moments,
    build_susceptibility,
    gather_moments,
    gather_species,
    plasma_frequency_squared,
    rotation_tensor,
)
from tests.factories import ParticleSetFactory

ION = SpeciesParams(charge_over_mass=1.0)
ELECTRON = SpeciesParams(charge_over_mass=-25.0)


def test_single_particle_on_a_node(a_periodic_mesh):
    particles = ParticleSet([[0.25, 0.5, 0.0]], [[0.1, -0.2, 0.3]], [2.0])
    moments = gather_species(particles, ELECTRON, a_periodic_mesh)
    volume = a_periodic_mesh.node_volume
    assert moments.rho[1, 2, 0] == pytest.approx(-2.0 / volume)
    assert np.count_nonzero(moments.rho) == 1
    assert np.allclose(moments.J[1, 2, 0], -2.0 / volume * np.array([0.1, -0.2, 0.3]))
    assert moments.Pi[1, 2, 0, 0, 1] == pytest.approx(-2.0 / volume * 0.1 * -0.2)


def test_charge_and_current_are_conserved_by_deposit(a_periodic_mesh):
    particles = ParticleSetFactory(n=200, seed=7)
    for smoothing in (False, True):
        moments = gather_species(particles, ION, a_periodic_mesh, smoothing=smoothing)
        volume = a_periodic_mesh.node_volume
        assert moments.rho.sum() * volume == pytest.approx(particles.weights.sum())
        assert np.allclose(
            moments.J.sum(axis=(0, 1, 2)) * volume, particles.charge_momentum(ION)
        )
        assert np.allclose(moments.Pi, np.swapaxes(moments.Pi, -1, -2))


def test_empty_species(a_periodic_mesh):
    moments = gather_species(ParticleSet.empty(), ION, a_periodic_mesh)
    assert moments.rho.shape == (4, 4, 4)
    assert moments.Pi.shape == (4, 4, 4, 3, 3)
    assert not np.any(moments.J)


def test_gather_errors(a_periodic_mesh):
    with pytest.raises(MomentError):
        gather_species(ParticleSet([[1.5, 0, 0]], [[0, 0, 0]], [1.0]), ION, a_periodic_mesh)
    with pytest.raises(MomentError):
        gather_species(ParticleSet([[0.5, 0, 0]], [[np.inf, 0, 0]], [1.0]), ION, a_periodic_mesh)


def test_neutral_plasma_has_no_net_charge(a_state):
    moments = gather_moments(
        a_state.species, a_state.config.species_params, a_state.mesh, MomentParams()
    )
    assert len(moments.species) == 2
    assert np.allclose(moments.rho, 0.0, atol=1e-12)


def test_rotation_tensor():
    assert np.allclose(rotation_tensor(np.zeros(3), 1.0, 0.1, 1.0), np.eye(3))

    B = np.array([0.3, -1.0, 2.0])
    v = np.array([0.2, 0.1, -0.4])
    a, omega = 0.05, -25.0 * B
    expected = (v + a * np.cross(v, omega) + a * a * np.dot(v, omega) * omega) / (
        1 + a * a * np.dot(omega, omega)
    )
    assert np.allclose(rotation_tensor(B, -25.0, 0.1, 1.0) @ v, expected)


def test_plasma_frequency_is_positive_for_both_signs():
    rho = np.array([1.0, -1.0])
    assert np.allclose(plasma_frequency_squared(rho, -25.0), 4 * np.pi * 25.0)


def _uniform_moments(mesh, rho, J):
    return SpeciesMoments(
        rho=np.full(mesh.unique_dims, rho),
        J=np.broadcast_to(np.asarray(J, dtype=float), mesh.unique_dims + (3,)).copy(),
        Pi=mesh.zeros(3, 3),
    )


def test_susceptibility_of_unmagnetised_plasma(a_periodic_mesh):
    rho = 1 / (4 * np.pi)
    moments = Moments(
        species=[
            _uniform_moments(a_periodic_mesh, rho, (0, 0, 0)),
            _uniform_moments(a_periodic_mesh, -rho, (0, 0, 0)),
        ]
    )
    chi = build_susceptibility(
        moments, a_periodic_mesh.zeros(3), 0.1, [ION, ELECTRON], 1.0
    )
    # omega_p^2 is 1 for the ions and 25 for the electrons
    assert np.allclose(chi, 26 * 0.01 / 2 * np.eye(3))


def test_hat_moments_of_uniform_current(a_periodic_mesh):
    moments = Moments(species=[_uniform_moments(a_periodic_mesh, 0.5, (0.1, 0.0, 0.0))])
    hat = build_hat_moments(
        moments, a_periodic_mesh.zeros(3), 0.1, [ION], 1.0, a_periodic_mesh
    )
    assert np.allclose(hat.J_hat, [0.1, 0.0, 0.0])
    assert np.allclose(hat.rho_hat, 0.5)


def test_hat_moments_see_pressure_gradient(a_periodic_mesh):
    species = _uniform_moments(a_periodic_mesh, 1.0, (0.0, 0.0, 0.0))
    x = a_periodic_mesh.node_positions()[..., 0]
    species.Pi[..., 0, 0] = np.sin(2 * np.pi * x)
    hat = build_hat_moments(
        Moments(species=[species]), a_periodic_mesh.zeros(3), 0.1, [ION], 1.0,
        a_periodic_mesh,
    )
    # central difference over 4 cells: d/dx sin(2 pi x) = sin(pi/2) cos(2 pi x) / h
    expected = -0.05 * np.cos(2 * np.pi * x) / 0.25
    assert np.allclose(hat.J_hat[..., 0], expected)
    assert np.allclose(hat.J_hat[..., 1:], 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_susceptibility_symmetric_part_is_positive(a_periodic_mesh, seed):
    """Holds for any B with dt |Omega| <= 2 for the lightest species"""
    rng = np.random.default_rng(seed)
    dt = 0.1
    particles = ParticleSetFactory(n=200, seed=seed)
    moments = Moments(
        species=[
            gather_species(particles, species, a_periodic_mesh)
            for species in (ION, ELECTRON)
        ]
    )
    B = rng.normal(size=a_periodic_mesh.unique_dims + (3,))
    largest = 2 / (dt * abs(ELECTRON.charge_over_mass))
    B *= (largest * rng.random(B.shape[:-1]) / np.linalg.norm(B, axis=-1))[..., None]

    chi = build_susceptibility(moments, B, dt, [ION, ELECTRON], 1.0)
    transposed = np.swapaxes(chi, -1, -2)
    assert np.max(np.abs(chi - transposed)) > 0
    eigenvalues = np.linalg.eigvalsh(0.5 * (chi + transposed))
    assert eigenvalues.min() >= -1e-12 * np.max(np.abs(chi))
