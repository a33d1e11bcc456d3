"""Binary snapshots of a SimState to stop and resume a run bit-exactly

Notes
-----
Layout, all little-endian::

    "IPKC" u32 version
    u32[3] grid dims, u32 ghost width, u32 species count, u64 cycle,
    u64[4] rng state (state low, state high, increment low, increment high),
    f64 dt, f64 c
    E, then B: every node including ghosts, x fastest, 3 f64 per node
    per species: u64 count, then count times (x, y, z, vx, vy, vz, weight) f64

Diagnostics are not part of a checkpoint, they live in the run records.
"""
import logging
import struct
from dataclasses import dataclass
from typing import BinaryIO, List, Tuple

import numpy as np

from momentpic.core import BoundaryMode, ParticleSet, SimConfig, SimState
from momentpic.exceptions import MomentPICException
from momentpic.grid import FieldGrid
from momentpic.scenarios import inflow_face

logger = logging.getLogger(__name__)

MAGIC = b"IPKC"
VERSION = 1
GHOST_WIDTH = 1
HEADER = struct.Struct("<4sI3IIIQ4Qdd")
COUNT = struct.Struct("<Q")
VALUES_PER_PARTICLE = 7
U64_MASK = (1 << 64) - 1


@dataclass
class CheckpointHeader:
    grid_dims: Tuple[int, int, int]
    ghost_width: int
    n_species: int
    cycle: int
    rng_words: Tuple[int, int, int, int]
    dt: float
    c: float
    version: int = VERSION

    def __str__(self):
        return "\n".join(
            [
                f"version:      {self.version}",
                f"cycle:        {self.cycle}",
                f"grid dims:    {' x '.join(str(n) for n in self.grid_dims)}",
                f"ghost width:  {self.ghost_width}",
                f"species:      {self.n_species}",
                f"dt:           {self.dt!r}",
                f"c:            {self.c!r}",
                f"rng state:    {' '.join(f'{w:016x}' for w in self.rng_words)}",
            ]
        )


@dataclass
class CheckpointData:
    """Raw checkpoint contents, readable without a configuration"""

    header: CheckpointHeader
    E: np.ndarray
    B: np.ndarray
    species: List[ParticleSet]


def rng_words(rng: np.random.Generator) -> Tuple[int, int, int, int]:
    state = rng.bit_generator.state
    if state["bit_generator"] != "PCG64":
        raise CheckpointFormatError(
            f"Can only store PCG64 generators, got {state['bit_generator']}"
        )
    value, increment = state["state"]["state"], state["state"]["inc"]
    return (
        value & U64_MASK, value >> 64, increment & U64_MASK, increment >> 64,
    )


def rng_from_words(words: Tuple[int, int, int, int]) -> np.random.Generator:
    bit_generator = np.random.PCG64()
    bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {
            "state": words[0] | (words[1] << 64),
            "inc": words[2] | (words[3] << 64),
        },
        "has_uint32": 0,
        "uinteger": 0,
    }
    return np.random.Generator(bit_generator)


def _field_bytes(full: np.ndarray) -> bytes:
    # x fastest means z is the outermost loop
    return np.ascontiguousarray(full.transpose(2, 1, 0, 3)).astype("<f8").tobytes()


def _field_from_bytes(data: bytes, full_dims: Tuple[int, int, int]) -> np.ndarray:
    n0, n1, n2 = full_dims
    array = np.frombuffer(data, dtype="<f8").reshape(n2, n1, n0, 3)
    return np.ascontiguousarray(array.transpose(2, 1, 0, 3)).astype(float)


def write_checkpoint(state: SimState, sink: BinaryIO):
    """Write state to a binary stream"""
    config = state.config
    sink.write(
        HEADER.pack(
            MAGIC,
            VERSION,
            *config.grid_dims,
            GHOST_WIDTH,
            config.n_species,
            state.cycle,
            *rng_words(state.rng),
            config.dt,
            config.c,
        )
    )
    sink.write(_field_bytes(state.fields.E))
    sink.write(_field_bytes(state.fields.B))
    for particles in state.species:
        sink.write(COUNT.pack(len(particles)))
        values = np.column_stack(
            [particles.positions, particles.velocities, particles.weights]
        )
        sink.write(values.astype("<f8").tobytes())
    logger.debug(f"Wrote checkpoint of cycle {state.cycle}")


def _read_exactly(source: BinaryIO, size: int, what: str) -> bytes:
    data = source.read(size)
    if len(data) != size:
        raise CheckpointFormatError(
            f"Checkpoint truncated while reading {what}: wanted {size} bytes, "
            f"got {len(data)}"
        )
    return data


def read_header(source: BinaryIO) -> CheckpointHeader:
    """
    Raises
    ------
    CheckpointFormatError
        For a bad magic, an unknown version or a truncated header
    """
    values = HEADER.unpack(_read_exactly(source, HEADER.size, "header"))
    magic, version = values[0], values[1]
    if magic != MAGIC:
        raise CheckpointFormatError(f"Not a checkpoint, magic is {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(
            f"Unsupported checkpoint version {version}, expected {VERSION}"
        )
    header = CheckpointHeader(
        grid_dims=tuple(values[2:5]),
        ghost_width=values[5],
        n_species=values[6],
        cycle=values[7],
        rng_words=tuple(values[8:12]),
        dt=values[12],
        c=values[13],
        version=version,
    )
    if header.ghost_width != GHOST_WIDTH:
        raise CheckpointFormatError(
            f"Ghost width {header.ghost_width} not supported, expected {GHOST_WIDTH}"
        )
    return header


def read_checkpoint_data(source: BinaryIO) -> CheckpointData:
    """Read a whole checkpoint without interpreting it against a configuration

    Raises
    ------
    CheckpointFormatError
        For a bad magic, an unknown version or a truncated stream
    """
    header = read_header(source)
    full_dims = tuple(n + 2 * header.ghost_width for n in header.grid_dims)
    field_size = int(np.prod(full_dims)) * 3 * 8
    E = _field_from_bytes(_read_exactly(source, field_size, "E"), full_dims)
    B = _field_from_bytes(_read_exactly(source, field_size, "B"), full_dims)
    species = []
    for s in range(header.n_species):
        (count,) = COUNT.unpack(
            _read_exactly(source, COUNT.size, f"species {s} count")
        )
        values = np.frombuffer(
            _read_exactly(
                source, count * VALUES_PER_PARTICLE * 8, f"species {s} particles"
            ),
            dtype="<f8",
        ).reshape(count, VALUES_PER_PARTICLE)
        species.append(
            ParticleSet(
                positions=values[:, 0:3].astype(float),
                velocities=values[:, 3:6].astype(float),
                weights=values[:, 6].astype(float),
            )
        )
    return CheckpointData(header=header, E=E, B=B, species=species)


def read_checkpoint(source: BinaryIO, config: SimConfig) -> SimState:
    """Rebuild the state a checkpoint was written from

    Parameters
    ----------
    source: BinaryIO
        stream positioned at the start of a checkpoint
    config: SimConfig
        configuration of the run. Must match the checkpoint's grid and
        species count

    Raises
    ------
    CheckpointFormatError
        For a malformed checkpoint or one that does not match config
    """
    data = read_checkpoint_data(source)
    header = data.header
    if tuple(header.grid_dims) != tuple(config.grid_dims):
        raise CheckpointFormatError(
            f"Checkpoint grid {header.grid_dims} does not match configured "
            f"{config.grid_dims}"
        )
    if header.n_species != config.n_species:
        raise CheckpointFormatError(
            f"Checkpoint holds {header.n_species} species, configuration "
            f"{config.n_species}"
        )
    if header.dt != config.dt or header.c != config.c:
        logger.warning(
            f"Checkpoint was written with dt={header.dt}, c={header.c}; "
            f"continuing with configured dt={config.dt}, c={config.c}"
        )

    mesh = config.mesh()
    inflow = None
    B_boundary = None
    if config.boundary_mode == BoundaryMode.OPEN_INFLOW:
        # the imposed field lives in the ghosts, which are stored as is
        B_boundary = data.B.copy()
        inflow = inflow_face(config)
    fields = FieldGrid(mesh, E=data.E, B=data.B, B_boundary=B_boundary)
    return SimState(
        config=config,
        fields=fields,
        species=data.species,
        rng=rng_from_words(header.rng_words),
        cycle=header.cycle,
        inflow=inflow,
    )


def save_checkpoint(state: SimState, path) -> None:
    with open(path, "wb") as f:
        write_checkpoint(state, f)


def load_checkpoint(path, config: SimConfig) -> SimState:
    try:
        with open(path, "rb") as f:
            return read_checkpoint(f, config)
    except OSError as e:
        raise CheckpointFormatError(f"Cannot read checkpoint '{path}': {e}") from e


class CheckpointFormatError(MomentPICException):
    pass
