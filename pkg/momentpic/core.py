"""Core concepts in momentpic: run configuration, particles and simulation state

Notes
-----
Code units: lengths in ion skin depths, time in inverse ion plasma frequency,
velocities in the same units as the configured speed of light c. Gaussian
(4 pi) factors are kept explicit throughout.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from momentpic.exceptions import MomentPICException

if TYPE_CHECKING:  # pragma: no cover
    from momentpic.grid import FieldGrid, Mesh

Triple = Tuple[float, float, float]

logger = logging.getLogger(__name__)


class BoundaryMode(Enum):
    PERIODIC = "periodic"
    OPEN_INFLOW = "open_inflow"


class RegionGranularity(Enum):
    WHOLE_DOMAIN = "whole_domain"
    PER_CELL = "per_cell"


class RangeMode(Enum):
    DATA = "data"
    FIXED = "fixed"


class FailurePolicy(Enum):
    WARN = "warn"
    ABORT = "abort"


class ScenarioKind(Enum):
    UNIFORM = "uniform"
    GEM = "gem"
    DIPOLE = "dipole"


def _norm(vector: Sequence[float]) -> float:
    return math.sqrt(sum(x * x for x in vector))


@dataclass(frozen=True)
class SpeciesParams:
    """One plasma species. Charge and mass are per unit of statistical weight"""

    charge_over_mass: float
    thermal_velocity: Triple = (0.0, 0.0, 0.0)
    drift_velocity: Triple = (0.0, 0.0, 0.0)
    particles_per_cell: int = 8
    reference_density: float = 1.0
    charge: Optional[float] = None

    @property
    def unit_charge(self) -> float:
        """Charge carried by one unit of weight. Defaults to +-1 following q/m"""
        if self.charge is not None:
            return self.charge
        return math.copysign(1.0, self.charge_over_mass)

    @property
    def mass(self) -> float:
        return self.unit_charge / self.charge_over_mass

    def validate(self, c: float):
        """
        Raises
        ------
        ValidationError
            When any invariant of this species is violated
        """
        if self.charge_over_mass == 0 or not math.isfinite(self.charge_over_mass):
            raise ValidationError("charge_over_mass must be finite and non-zero")
        if self.charge is not None and (
            self.charge == 0 or math.copysign(1, self.charge)
            != math.copysign(1, self.charge_over_mass)
        ):
            raise ValidationError("charge must be non-zero with the sign of q/m")
        if self.particles_per_cell < 1:
            raise ValidationError("particles_per_cell must be at least 1")
        if self.reference_density <= 0:
            raise ValidationError("reference_density must be positive")
        if any(v < 0 for v in self.thermal_velocity):
            raise ValidationError("thermal_velocity must be non-negative")
        if _norm(self.drift_velocity) >= c:
            raise ValidationError("|drift_velocity| must be smaller than c")


@dataclass(frozen=True)
class SolverParams:
    tolerance: float = 1e-8
    restart: int = 20
    max_iterations: int = 200
    preconditioner_iterations: int = 5
    on_failure: FailurePolicy = FailurePolicy.WARN

    def validate(self):
        if not self.tolerance > 0:
            raise ValidationError("solver tolerance must be positive")
        if self.restart < 1:
            raise ValidationError("solver restart must be at least 1")
        if self.max_iterations < 1:
            raise ValidationError("solver max_iterations must be at least 1")
        if self.preconditioner_iterations < 0:
            raise ValidationError("preconditioner_iterations must be non-negative")


@dataclass(frozen=True)
class MoverParams:
    tolerance: float = 1e-10
    max_iterations: int = 3

    def validate(self):
        if not self.tolerance > 0:
            raise ValidationError("mover tolerance must be positive")
        if self.max_iterations < 1:
            raise ValidationError("mover max_iterations must be at least 1")


@dataclass(frozen=True)
class MomentParams:
    smoothing: bool = False


@dataclass(frozen=True)
class ControlParams:
    enabled: bool = False
    theta: float = 0.05
    target: Optional[int] = None
    velocity_bins: int = 4
    count_region: RegionGranularity = RegionGranularity.WHOLE_DOMAIN

    def validate(self):
        if not 0 < self.theta < 1:
            raise ValidationError("theta must be in (0, 1)")
        if self.target is not None and self.target < 2:
            raise ValidationError("control target must be at least 2")
        if self.velocity_bins < 1:
            raise ValidationError("velocity_bins must be at least 1")


@dataclass(frozen=True)
class CompressParams:
    every: int = 0
    bins: int = 32
    components: int = 8
    range_mode: RangeMode = RangeMode.DATA
    v_max: float = 1.0
    regions: Tuple[int, int, int] = (1, 1, 1)
    seed: int = 0

    def validate(self):
        if self.every < 0:
            raise ValidationError("compress every must be non-negative")
        if self.bins < 1:
            raise ValidationError("compress bins must be at least 1")
        if self.components < 1:
            raise ValidationError("compress components must be at least 1")
        if not self.v_max > 0:
            raise ValidationError("compress v_max must be positive")
        if any(r < 1 for r in self.regions):
            raise ValidationError("compress regions must be at least 1 per axis")


@dataclass(frozen=True)
class ScenarioParams:
    kind: ScenarioKind = ScenarioKind.UNIFORM
    b0: Triple = (0.0, 0.0, 0.0)
    harris_b0: float = 1.0
    harris_lambda: float = 0.5
    perturbation: float = 0.1
    background_fraction: float = 0.2
    dipole_moment: Triple = (0.0, 0.0, 0.0)
    dipole_center: Optional[Triple] = None
    dipole_core: Optional[float] = None
    b_wind: Triple = (0.0, 0.0, 0.0)

    def validate(self):
        if not self.harris_lambda > 0:
            raise ValidationError("harris_lambda must be positive")
        if self.background_fraction < 0:
            raise ValidationError("background_fraction must be non-negative")
        if self.dipole_core is not None and not self.dipole_core > 0:
            raise ValidationError("dipole_core must be positive")


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to set up and run one simulation"""

    grid_dims: Tuple[int, int, int]
    domain_lengths: Triple = (1.0, 1.0, 1.0)
    dt: float = 0.1
    c: float = 1.0
    n_cycles: int = 10
    species_params: Tuple[SpeciesParams, ...] = ()
    boundary_mode: BoundaryMode = BoundaryMode.PERIODIC
    solver_params: SolverParams = field(default_factory=SolverParams)
    mover_params: MoverParams = field(default_factory=MoverParams)
    moment_params: MomentParams = field(default_factory=MomentParams)
    control_params: ControlParams = field(default_factory=ControlParams)
    compress_params: CompressParams = field(default_factory=CompressParams)
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    rng_seed: int = 0

    def validate(self) -> "SimConfig":
        """Check all invariants. Returns self to allow chaining

        Raises
        ------
        ValidationError
            Naming the first violated invariant
        """
        if len(self.grid_dims) != 3 or any(n < 4 for n in self.grid_dims):
            raise ValidationError("grid_dims must be at least 4 per axis")
        if len(self.domain_lengths) != 3 or any(
            not length > 0 for length in self.domain_lengths
        ):
            raise ValidationError("domain_lengths must be positive")
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not self.c > 0:
            raise ValidationError("c must be positive")
        if self.n_cycles < 0:
            raise ValidationError("n_cycles must be non-negative")
        if not self.species_params:
            raise ValidationError("at least one species is required")
        for species in self.species_params:
            species.validate(self.c)
        self.solver_params.validate()
        self.mover_params.validate()
        self.control_params.validate()
        self.compress_params.validate()
        self.scenario.validate()
        return self

    @property
    def n_species(self) -> int:
        return len(self.species_params)

    def mesh(self) -> "Mesh":
        from momentpic.grid import Mesh

        return Mesh(
            dims=self.grid_dims, lengths=self.domain_lengths, mode=self.boundary_mode
        )


@dataclass
class Particle:
    """A single computational macro-particle"""

    position: np.ndarray
    velocity: np.ndarray
    weight: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)


class ParticleSet:
    """All particles of one species, stored as arrays

    Parameters
    ----------
    positions: np.ndarray
        (N, 3) positions in code length units
    velocities: np.ndarray
        (N, 3) velocities, |v| < c
    weights: np.ndarray
        (N,) positive statistical weights
    """

    def __init__(
        self, positions: np.ndarray, velocities: np.ndarray, weights: np.ndarray
    ):
        self.positions = np.ascontiguousarray(positions, dtype=float).reshape(-1, 3)
        self.velocities = np.ascontiguousarray(velocities, dtype=float).reshape(-1, 3)
        self.weights = np.ascontiguousarray(weights, dtype=float).reshape(-1)
        if not (
            len(self.positions) == len(self.velocities) == len(self.weights)
        ):
            raise MomentPICException(
                f"Particle arrays differ in length: {len(self.positions)}, "
                f"{len(self.velocities)}, {len(self.weights)}"
            )

    def __len__(self):
        return len(self.weights)

    def __str__(self):
        return f"ParticleSet with {len(self)} particles"

    def __eq__(self, other):
        if not isinstance(other, ParticleSet):
            return NotImplemented
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.velocities, other.velocities)
            and np.array_equal(self.weights, other.weights)
        )

    @classmethod
    def empty(cls) -> "ParticleSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))

    @classmethod
    def from_particles(cls, particles: Sequence[Particle]) -> "ParticleSet":
        if not particles:
            return cls.empty()
        return cls(
            np.array([p.position for p in particles]),
            np.array([p.velocity for p in particles]),
            np.array([p.weight for p in particles]),
        )

    def particle(self, index: int) -> Particle:
        return Particle(
            position=self.positions[index].copy(),
            velocity=self.velocities[index].copy(),
            weight=float(self.weights[index]),
        )

    def copy(self) -> "ParticleSet":
        return ParticleSet(
            self.positions.copy(), self.velocities.copy(), self.weights.copy()
        )

    def select(self, mask_or_index) -> "ParticleSet":
        return ParticleSet(
            self.positions[mask_or_index],
            self.velocities[mask_or_index],
            self.weights[mask_or_index],
        )

    def concatenate(self, other: "ParticleSet") -> "ParticleSet":
        return ParticleSet(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.velocities, other.velocities]),
            np.concatenate([self.weights, other.weights]),
        )

    def total_charge(self, species: SpeciesParams) -> float:
        return species.unit_charge * float(np.sum(self.weights))

    def charge_momentum(self, species: SpeciesParams) -> np.ndarray:
        """Sum of w q v, the momentum measure conserved by particle control"""
        return species.unit_charge * np.sum(
            self.weights[:, None] * self.velocities, axis=0
        )

    def kinetic_energy(self, species: SpeciesParams, c: float) -> float:
        """Sum of w m (gamma - 1) c^2"""
        return species.mass * float(
            np.sum(self.weights * gamma_minus_one(self.velocities, c)) * c * c
        )

    def momentum(self, species: SpeciesParams, c: float) -> np.ndarray:
        """Mechanical momentum sum of w m gamma v"""
        gamma = lorentz_factor(self.velocities, c)
        return species.mass * np.sum(
            (self.weights * gamma)[:, None] * self.velocities, axis=0
        )


def lorentz_factor(velocities: np.ndarray, c: float) -> np.ndarray:
    beta2 = np.sum(np.square(velocities), axis=-1) / (c * c)
    return 1.0 / np.sqrt(1.0 - beta2)


def gamma_minus_one(velocities: np.ndarray, c: float) -> np.ndarray:
    """gamma - 1 without cancellation for slow particles"""
    beta2 = np.sum(np.square(velocities), axis=-1) / (c * c)
    gamma = 1.0 / np.sqrt(1.0 - beta2)
    return beta2 * gamma * gamma / (1.0 + gamma)


@dataclass(frozen=True)
class InflowFace:
    """Face of the domain through which wind plasma enters in OpenInflow mode

    side is 0 for the low face (x_axis = 0) and 1 for the high face
    """

    axis: int
    side: int


@dataclass
class DiagnosticsRow:
    """Conserved quantities and solver statistics after one cycle"""

    cycle: int
    field_energy: float
    kinetic_energy: Tuple[float, ...]
    momentum: Triple
    particle_counts: Tuple[int, ...]
    gauss_residual: float
    krylov_iterations: int
    wall_time: float = 0.0

    @property
    def total_energy(self) -> float:
        return self.field_energy + sum(self.kinetic_energy)

    def csv_header(self) -> List[str]:
        n_species = len(self.kinetic_energy)
        return (
            ["cycle", "field_energy"]
            + [f"kinetic_energy_{s}" for s in range(n_species)]
            + ["momentum_x", "momentum_y", "momentum_z"]
            + [f"count_{s}" for s in range(n_species)]
            + ["gauss_residual", "krylov_iterations", "wall_time"]
        )

    def csv_values(self) -> list:
        return (
            [self.cycle, repr(self.field_energy)]
            + [repr(x) for x in self.kinetic_energy]
            + [repr(x) for x in self.momentum]
            + list(self.particle_counts)
            + [repr(self.gauss_residual), self.krylov_iterations, repr(self.wall_time)]
        )

    def without_timing(self) -> "DiagnosticsRow":
        """Copy with wall time zeroed, for comparing runs"""
        return DiagnosticsRow(
            cycle=self.cycle,
            field_energy=self.field_energy,
            kinetic_energy=self.kinetic_energy,
            momentum=self.momentum,
            particle_counts=self.particle_counts,
            gauss_residual=self.gauss_residual,
            krylov_iterations=self.krylov_iterations,
        )


class SimState:
    """Full state of a running simulation

    Notes
    -----
    Responsibilities: SimState is a passive data structure. Stages in a
    Pipeline read it and replace its fields; it does not advance itself.
    Holds no references to shared mutable objects, so it can be handed to a
    worker thread as a whole.
    """

    def __init__(
        self,
        config: SimConfig,
        fields: "FieldGrid",
        species: List[ParticleSet],
        rng: np.random.Generator,
        cycle: int = 0,
        inflow: Optional[InflowFace] = None,
        diagnostics: Optional[List[DiagnosticsRow]] = None,
    ):
        if len(species) != config.n_species:
            raise MomentPICException(
                f"Expected {config.n_species} species, got {len(species)}"
            )
        self.config = config
        self.fields = fields
        self.species = species
        self.rng = rng
        self.cycle = cycle
        self.inflow = inflow
        self.diagnostics = diagnostics if diagnostics is not None else []

    def __str__(self):
        counts = ", ".join(str(len(x)) for x in self.species)
        return f"SimState at cycle {self.cycle} with particles [{counts}]"

    @property
    def mesh(self) -> "Mesh":
        return self.fields.mesh

    def advance_cycle(self):
        self.cycle += 1

    def particle_counts(self) -> Tuple[int, ...]:
        return tuple(len(x) for x in self.species)

    def copy(self) -> "SimState":
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng.bit_generator.state
        return SimState(
            config=self.config,
            fields=self.fields.copy(),
            species=[x.copy() for x in self.species],
            rng=rng,
            cycle=self.cycle,
            inflow=self.inflow,
            diagnostics=list(self.diagnostics),
        )


def make_rng(seed: int) -> np.random.Generator:
    """Seed-deterministic generator. Only 64-bit draws are used on it so its
    state is fully described by the PCG64 state and increment
    """
    return np.random.Generator(np.random.PCG64(seed))


class ConfigError(MomentPICException):
    """A configuration document could not be read

    Parameters
    ----------
    message: str
        What went wrong
    line_number: int, optional
        Line in the document where the problem was found, if known
    """

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ValidationError(ConfigError):
    """A configuration value violates an invariant"""

    pass
