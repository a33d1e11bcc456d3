"""Reading simulation settings from INI-style documents

Example document::

    [grid]
    dims = 16 16 16
    lengths = 4.0 4.0 4.0   # in ion skin depths

    [time]
    dt = 0.1

    [species.0]
    charge_over_mass = 1.0
    thermal_velocity = 0.01

    [control]
    enabled = true
    theta = 0.05
"""
import configparser
import logging
import re
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

from momentpic.core import (
    BoundaryMode,
    CompressParams,
    ConfigError,
    ControlParams,
    FailurePolicy,
    MomentParams,
    MoverParams,
    RangeMode,
    RegionGranularity,
    ScenarioKind,
    ScenarioParams,
    SimConfig,
    SolverParams,
    SpeciesParams,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_SPECIES = (
    SpeciesParams(charge_over_mass=1.0, thermal_velocity=(0.01, 0.01, 0.01)),
    SpeciesParams(charge_over_mass=-25.0, thermal_velocity=(0.05, 0.05, 0.05)),
)

ALLOWED_KEYS = {
    "grid": {"dims", "lengths", "boundary"},
    "time": {"dt", "c", "cycles"},
    "species": {
        "charge_over_mass",
        "charge",
        "thermal_velocity",
        "drift_velocity",
        "particles_per_cell",
        "reference_density",
    },
    "solver": {
        "tolerance",
        "restart",
        "max_iterations",
        "preconditioner_iterations",
        "on_failure",
    },
    "mover": {"tolerance", "max_iterations"},
    "moments": {"smoothing"},
    "control": {"enabled", "theta", "target", "velocity_bins", "count_region"},
    "compress": {"every", "bins", "components", "range", "v_max", "regions", "seed"},
    "scenario": {
        "kind",
        "seed",
        "b0",
        "harris_b0",
        "harris_lambda",
        "perturbation",
        "background_fraction",
        "dipole_moment",
        "dipole_center",
        "dipole_core",
        "b_wind",
    },
}

SPECIES_SECTION = re.compile(r"^species\.(\d+)$")


class ConfigSection:
    """Typed access to one section of a parsed document

    Parameters
    ----------
    parser: configparser.ConfigParser
        parsed document
    name: str
        section name. Missing sections behave as empty ones
    """

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.parser = parser
        self.name = name

    def __contains__(self, key):
        return self.parser.has_option(self.name, key)

    def _get(self, key: str, convert: Callable, default):
        if key not in self:
            return default
        raw = self.parser.get(self.name, key)
        try:
            return convert(raw)
        except (ValueError, KeyError) as e:
            raise ConfigError(
                f"[{self.name}] {key}: could not read '{raw}': {e}"
            ) from e

    def real(self, key: str, default=None) -> Optional[float]:
        return self._get(key, float, default)

    def integer(self, key: str, default=None) -> Optional[int]:
        return self._get(key, int, default)

    def boolean(self, key: str, default: bool = False) -> bool:
        return self._get(key, _to_bool, default)

    def triple(self, key: str, default=None, expand_single=False):
        def convert(raw):
            values = tuple(float(x) for x in raw.replace(",", " ").split())
            if expand_single and len(values) == 1:
                values = values * 3
            if len(values) != 3:
                raise ValueError(f"expected 3 values, found {len(values)}")
            return values

        return self._get(key, convert, default)

    def int_triple(self, key: str, default=None):
        def convert(raw):
            values = tuple(int(x) for x in raw.replace(",", " ").split())
            if len(values) != 3:
                raise ValueError(f"expected 3 values, found {len(values)}")
            return values

        return self._get(key, convert, default)

    def choice(self, key: str, enum, default):
        return self._get(key, lambda raw: enum(raw.strip().lower()), default)


def _to_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in configparser.ConfigParser.BOOLEAN_STATES:
        return configparser.ConfigParser.BOOLEAN_STATES[lowered]
    raise ValueError(f"not a boolean: {raw}")


def parse_document(text: str) -> configparser.ConfigParser:
    """Parse INI text, turning configparser errors into ConfigError

    Raises
    ------
    ConfigError
        With the offending line number when configparser reports one
    """
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#",), comment_prefixes=("#",), interpolation=None
    )
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("document must start with a section header",
                          line_number=e.lineno) from e
    except configparser.ParsingError as e:
        line_number = e.errors[0][0] if e.errors else None
        raise ConfigError("could not parse document", line_number=line_number) from e
    except (
        configparser.DuplicateSectionError,
        configparser.DuplicateOptionError,
    ) as e:
        raise ConfigError(e.message, line_number=getattr(e, "lineno", None)) from e
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    return parser


def _check_keys(parser: configparser.ConfigParser):
    for section in parser.sections():
        kind = "species" if SPECIES_SECTION.match(section) else section
        if kind not in ALLOWED_KEYS:
            raise ConfigError(f"Unknown section [{section}]")
        unknown = set(parser.options(section)) - ALLOWED_KEYS[kind]
        if unknown:
            raise ConfigError(
                f"Unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
            )


def _read_species(parser: configparser.ConfigParser) -> Tuple[SpeciesParams, ...]:
    numbered: List[Tuple[int, str]] = []
    for section in parser.sections():
        match = SPECIES_SECTION.match(section)
        if match:
            numbered.append((int(match.group(1)), section))
    if not numbered:
        logger.debug("No species sections, using default ion/electron pair")
        return DEFAULT_SPECIES

    species = []
    for _, name in sorted(numbered):
        section = ConfigSection(parser, name)
        charge_over_mass = section.real("charge_over_mass")
        if charge_over_mass is None:
            raise ConfigError(f"[{name}] charge_over_mass is required")
        species.append(
            SpeciesParams(
                charge_over_mass=charge_over_mass,
                charge=section.real("charge"),
                thermal_velocity=section.triple(
                    "thermal_velocity", (0.0, 0.0, 0.0), expand_single=True
                ),
                drift_velocity=section.triple("drift_velocity", (0.0, 0.0, 0.0)),
                particles_per_cell=section.integer("particles_per_cell", 8),
                reference_density=section.real("reference_density", 1.0),
            )
        )
    return tuple(species)


def load_config(text: str) -> SimConfig:
    """Read and validate a configuration document

    Parameters
    ----------
    text: str
        INI-style document. Only [grid] dims and [time] dt are required

    Raises
    ------
    ConfigError
        When the document cannot be parsed or holds unknown keys
    ValidationError
        When a value violates an invariant

    Returns
    -------
    SimConfig
        validated, with defaults filled in
    """
    parser = parse_document(text)
    _check_keys(parser)

    def section(name):
        return ConfigSection(parser, name)

    grid, time = section("grid"), section("time")
    dims = grid.int_triple("dims")
    if dims is None:
        raise ValidationError("[grid] dims is required")
    dt = time.real("dt")
    if dt is None:
        raise ValidationError("[time] dt is required")

    solver = section("solver")
    mover = section("mover")
    control = section("control")
    compress = section("compress")
    scenario = section("scenario")

    config = SimConfig(
        grid_dims=dims,
        domain_lengths=grid.triple("lengths", (1.0, 1.0, 1.0)),
        boundary_mode=grid.choice("boundary", BoundaryMode, BoundaryMode.PERIODIC),
        dt=dt,
        c=time.real("c", 1.0),
        n_cycles=time.integer("cycles", 10),
        species_params=_read_species(parser),
        solver_params=SolverParams(
            tolerance=solver.real("tolerance", 1e-8),
            restart=solver.integer("restart", 20),
            max_iterations=solver.integer("max_iterations", 200),
            preconditioner_iterations=solver.integer("preconditioner_iterations", 5),
            on_failure=solver.choice("on_failure", FailurePolicy, FailurePolicy.WARN),
        ),
        mover_params=MoverParams(
            tolerance=mover.real("tolerance", 1e-10),
            max_iterations=mover.integer("max_iterations", 3),
        ),
        moment_params=MomentParams(
            smoothing=section("moments").boolean("smoothing", False)
        ),
        control_params=ControlParams(
            enabled=control.boolean("enabled", False),
            theta=control.real("theta", 0.05),
            target=control.integer("target", None),
            velocity_bins=control.integer("velocity_bins", 4),
            count_region=control.choice(
                "count_region", RegionGranularity, RegionGranularity.WHOLE_DOMAIN
            ),
        ),
        compress_params=CompressParams(
            every=compress.integer("every", 0),
            bins=compress.integer("bins", 32),
            components=compress.integer("components", 8),
            range_mode=compress.choice("range", RangeMode, RangeMode.DATA),
            v_max=compress.real("v_max", 1.0),
            regions=compress.int_triple("regions", (1, 1, 1)),
            seed=compress.integer("seed", 0),
        ),
        scenario=ScenarioParams(
            kind=scenario.choice("kind", ScenarioKind, ScenarioKind.UNIFORM),
            b0=scenario.triple("b0", (0.0, 0.0, 0.0)),
            harris_b0=scenario.real("harris_b0", 1.0),
            harris_lambda=scenario.real("harris_lambda", 0.5),
            perturbation=scenario.real("perturbation", 0.1),
            background_fraction=scenario.real("background_fraction", 0.2),
            dipole_moment=scenario.triple("dipole_moment", (0.0, 0.0, 0.0)),
            dipole_center=scenario.triple("dipole_center", None),
            dipole_core=scenario.real("dipole_core", None),
            b_wind=scenario.triple("b_wind", (0.0, 0.0, 0.0)),
        ),
        rng_seed=scenario.integer("seed", 0),
    )
    return config.validate()


def load_config_file(path: Union[str, Path]) -> SimConfig:
    """Read config from file

    Raises
    ------
    ConfigError
        When the file cannot be read, or for anything load_config raises
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"Could not read config '{path}': {e}") from e
    return load_config(text)


def describe(config: SimConfig) -> Dict[str, str]:
    """Short human-readable summary of the main settings"""
    return {
        "grid": " x ".join(str(n) for n in config.grid_dims),
        "lengths": " x ".join(f"{x:g}" for x in config.domain_lengths),
        "boundary": config.boundary_mode.value,
        "dt": f"{config.dt:g}",
        "c": f"{config.c:g}",
        "species": str(config.n_species),
        "scenario": config.scenario.kind.value,
    }
