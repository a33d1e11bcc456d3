import numpy as np
import pytest

from momentpic.core import (
    BoundaryMode,
    InflowFace,
    MoverParams,
    Particle,
    ParticleSet,
    SpeciesParams,
    lorentz_factor,
)
from momentpic.grid import FieldGrid, Mesh
from momentpic.mover import (
    BoundaryVerdict,
    MoverError,
    apply_boundaries,
    apply_particle_bc,
    midpoint_positions,
    push_particle,
    push_particles,
    sample_fields_at,
    wrap_periodic,
)
from tests.factories import IonFactory, ParticleSetFactory

ION = SpeciesParams(charge_over_mass=1.0)
TIGHT = MoverParams(tolerance=1e-14, max_iterations=20)


@pytest.fixture
def a_magnetised_grid(a_periodic_mesh) -> FieldGrid:
    """Uniform B = z, giving unit gyro frequency for q/m = 1 and c = 1"""
    grid = FieldGrid(a_periodic_mesh)
    grid.B[..., 2] = 1.0
    return grid


@pytest.fixture
def an_open_mesh() -> Mesh:
    return Mesh(dims=(5, 5, 5), lengths=(1.0, 1.0, 1.0), mode=BoundaryMode.OPEN_INFLOW)


def test_free_streaming(an_empty_grid):
    particles = ParticleSetFactory(n=30)
    pushed, report = push_particles(
        particles, an_empty_grid, ION, dt=0.1, params=MoverParams(), c=1.0
    )
    assert np.allclose(pushed.velocities, particles.velocities, rtol=0, atol=1e-15)
    assert np.allclose(pushed.positions, particles.positions + 0.1 * particles.velocities)
    assert np.array_equal(pushed.weights, particles.weights)
    assert report.iterations == 1
    assert report.residuals[0] < 1e-15


def test_empty_set(an_empty_grid):
    pushed, report = push_particles(
        ParticleSet.empty(), an_empty_grid, ION, 0.1, MoverParams(), 1.0
    )
    assert len(pushed) == 0
    assert report.iterations == 0


def test_uniform_electric_field_gives_exact_impulse(an_empty_grid):
    an_empty_grid.E[..., 0] = 0.5
    particles = ParticleSetFactory(n=10, seed=1)
    pushed, _ = push_particles(particles, an_empty_grid, ION, 0.1, TIGHT, 1.0)
    u_before = lorentz_factor(particles.velocities, 1.0)[:, None] * particles.velocities
    u_after = lorentz_factor(pushed.velocities, 1.0)[:, None] * pushed.velocities
    assert np.allclose(u_after - u_before, [[0.05, 0.0, 0.0]] * 10, rtol=0, atol=1e-9)


def test_gyration_preserves_speed(a_magnetised_grid):
    particles = ParticleSet([[0.5, 0.5, 0.5]], [[0.3, 0.1, 0.2]], [1.0])
    speed = np.linalg.norm(particles.velocities)
    for _ in range(50):
        particles, _ = push_particles(particles, a_magnetised_grid, ION, 0.1, TIGHT, 1.0)
        particles.positions[...] = wrap_periodic(particles.positions, a_magnetised_grid.mesh)
    assert np.linalg.norm(particles.velocities) == pytest.approx(speed, rel=1e-12)
    # parallel velocity untouched by B
    assert particles.velocities[0, 2] == pytest.approx(0.2, rel=1e-12)


def test_rotation_angle_per_step(a_magnetised_grid):
    v = 0.1
    gamma = 1 / np.sqrt(1 - v * v)
    particle = Particle(position=[0.5, 0.5, 0.5], velocity=[v, 0.0, 0.0], weight=1.0)
    pushed = push_particle(particle, a_magnetised_grid, ION, 0.1, TIGHT, 1.0)
    angle = -np.arctan2(pushed.velocity[1], pushed.velocity[0])
    assert angle == pytest.approx(2 * np.arctan(0.05 / gamma), rel=1e-10)


def _circumcentre(a, b, c):
    d = 2 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    ux = (
        np.dot(a, a) * (b[1] - c[1]) + np.dot(b, b) * (c[1] - a[1])
        + np.dot(c, c) * (a[1] - b[1])
    ) / d
    uy = (
        np.dot(a, a) * (c[0] - b[0]) + np.dot(b, b) * (a[0] - c[0])
        + np.dot(c, c) * (b[0] - a[0])
    ) / d
    return np.array([ux, uy])


def test_orbit_has_larmor_radius(a_magnetised_grid):
    """Positions lie on a circle of radius |u| / Omega"""
    v = 0.1
    particles = ParticleSet([[0.5, 0.5, 0.5]], [[v, 0.0, 0.0]], [1.0])
    track = [particles.positions[0, :2].copy()]
    for _ in range(30):
        particles, _ = push_particles(particles, a_magnetised_grid, ION, 0.1, TIGHT, 1.0)
        track.append(particles.positions[0, :2].copy())
    track = np.array(track)
    centre = _circumcentre(*track[:3])
    radius = v / np.sqrt(1 - v * v)
    assert np.allclose(np.linalg.norm(track - centre, axis=1), radius, rtol=1e-9)


def test_batch_and_single_push_agree(a_magnetised_grid):
    a_magnetised_grid.E[..., 1] = 0.02
    particles = ParticleSetFactory(n=5, seed=3)
    pushed, _ = push_particles(particles, a_magnetised_grid, ION, 0.1, TIGHT, 1.0)
    single = push_particle(particles.particle(2), a_magnetised_grid, ION, 0.1, TIGHT, 1.0)
    assert np.allclose(single.position, pushed.positions[2], rtol=0, atol=1e-12)
    assert np.allclose(single.velocity, pushed.velocities[2], rtol=0, atol=1e-12)


def test_report_holds_last_iterate(a_magnetised_grid):
    particles = ParticleSetFactory(n=5)
    _, report = push_particles(
        particles, a_magnetised_grid, ION, 0.1, MoverParams(max_iterations=2), 1.0
    )
    assert report.iterations == len(report.residuals) <= 2
    assert report.scratch.v_bar.shape == (5, 3)
    assert np.allclose(report.scratch.Omega, [[0.0, 0.0, 1.0]] * 5)


def test_non_finite_field_is_an_error(an_empty_grid):
    an_empty_grid.E[...] = np.nan
    with pytest.raises(MoverError):
        push_particles(ParticleSetFactory(n=3), an_empty_grid, ION, 0.1, MoverParams(), 1.0)


def test_sample_fields_at(a_magnetised_grid):
    fields = sample_fields_at(a_magnetised_grid, [0.1, 0.2, 0.3])
    assert np.allclose(fields.B, [0.0, 0.0, 1.0])
    assert np.allclose(fields.E, 0.0)


def test_large_step_near_a_periodic_face(a_magnetised_grid):
    """Midpoint lands more than a ghost layer past the face and is wrapped"""
    particle = Particle(position=[0.001, 0.5, 0.5], velocity=[-0.2, 0.0, 0.0], weight=1.0)
    pushed = push_particle(particle, a_magnetised_grid, ION, 4.0, TIGHT, 1.0)
    assert np.linalg.norm(pushed.velocity) == pytest.approx(0.2, rel=1e-12)
    assert np.all(np.isfinite(pushed.position))

    verdict, result = apply_particle_bc(pushed, a_magnetised_grid.mesh, np.random.default_rng(0))
    assert verdict == BoundaryVerdict.WRAPPED
    assert a_magnetised_grid.mesh.contains(result.position.reshape(1, 3))[0]


def test_free_streaming_across_a_face(an_empty_grid):
    particle = Particle(position=[0.001, 0.5, 0.5], velocity=[-0.2, 0.0, 0.0], weight=1.0)
    pushed = push_particle(particle, an_empty_grid, ION, 4.0, TIGHT, 1.0)
    assert pushed.position[0] == pytest.approx(0.001 - 0.8)
    assert np.allclose(pushed.velocity, [-0.2, 0.0, 0.0], rtol=0, atol=1e-15)


def test_midpoint_positions(a_periodic_mesh, an_open_mesh):
    x = np.array([[0.001, 0.5, 0.99]])
    v_bar = np.array([[-0.2, 0.0, 0.2]])
    assert np.allclose(midpoint_positions(x, v_bar, 2.0, a_periodic_mesh), [[0.601, 0.5, 0.39]])
    assert np.allclose(midpoint_positions(x, v_bar, 2.0, an_open_mesh), [[0.0, 0.5, 1.0]])


def test_wrap_periodic(a_periodic_mesh):
    wrapped = wrap_periodic(np.array([[-0.25, 1.0, 0.5], [-1e-20, 0.0, 1.5]]), a_periodic_mesh)
    assert np.allclose(wrapped, [[0.75, 0.0, 0.5], [0.0, 0.0, 0.5]])
    assert np.all(wrapped < 1.0)


def test_periodic_boundaries(a_periodic_mesh):
    particles = ParticleSet(
        [[0.5, 0.5, 0.5], [1.1, 0.5, 0.5], [0.5, -0.1, 0.5]], np.zeros((3, 3)), np.ones(3)
    )
    result, counts = apply_boundaries(particles, a_periodic_mesh, np.random.default_rng(0))
    assert len(result) == 3
    assert counts[BoundaryVerdict.WRAPPED] == 2
    assert counts[BoundaryVerdict.KEPT] == 1
    assert np.allclose(result.positions[1:], [[0.1, 0.5, 0.5], [0.5, 0.9, 0.5]])


def test_open_boundaries(an_open_mesh):
    wind = IonFactory(drift_velocity=(0.1, 0.0, 0.0))
    particles = ParticleSet(
        [[0.5, 0.5, 0.5], [-0.05, 0.5, 0.5], [1.05, 0.5, 0.5], [0.5, 1.2, 0.5]],
        [[0.0, 0.0, 0.0], [-0.1, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0]],
        [1.0, 2.0, 3.0, 4.0],
    )
    inflow = InflowFace(axis=0, side=0)
    result, counts = apply_boundaries(
        particles, an_open_mesh, np.random.default_rng(0), inflow, wind, 1.0
    )
    assert counts == {
        BoundaryVerdict.KEPT: 1,
        BoundaryVerdict.WRAPPED: 0,
        BoundaryVerdict.REMOVED: 2,
        BoundaryVerdict.REINJECTED: 1,
    }
    assert list(result.weights) == [1.0, 2.0]
    # mirrored back in, moving inward with the wind
    assert result.positions[1, 0] == pytest.approx(0.05)
    assert result.velocities[1, 0] > 0

    with pytest.raises(MoverError):
        apply_boundaries(particles, an_open_mesh, np.random.default_rng(0), inflow)


def test_open_boundaries_without_inflow_remove(an_open_mesh):
    particle = Particle(position=[-0.05, 0.5, 0.5], velocity=[-0.1, 0, 0], weight=1.0)
    verdict, result = apply_particle_bc(particle, an_open_mesh, np.random.default_rng(0))
    assert verdict == BoundaryVerdict.REMOVED
    assert result is None
