import io
import struct
from dataclasses import replace

import numpy as np
import pytest

from momentpic.checkpoint import (
    HEADER,
    CheckpointFormatError,
    load_checkpoint,
    read_checkpoint,
    read_checkpoint_data,
    read_header,
    rng_from_words,
    rng_words,
    save_checkpoint,
    write_checkpoint,
)
from momentpic.core import (
    BoundaryMode,
    ScenarioKind,
    ScenarioParams,
    make_rng,
)
from momentpic.pipeline import SimulationPipeline
from momentpic.scenarios import initialize
from tests.factories import ElectronFactory, IonFactory, SimConfigFactory


def _checkpoint_bytes(state) -> bytes:
    sink = io.BytesIO()
    write_checkpoint(state, sink)
    return sink.getvalue()


def test_header_size():
    assert HEADER.size == 84


def test_file_size(a_state):
    data = _checkpoint_bytes(a_state)
    nodes = 7 ** 3
    assert len(data) == 84 + 2 * nodes * 3 * 8 + 2 * (8 + 128 * 7 * 8)


def test_rng_words_round_trip():
    rng = make_rng(42)
    rng.random(5)
    copy = rng_from_words(rng_words(rng))
    assert np.array_equal(copy.random(10), rng.random(10))


def test_round_trip(a_pipeline, a_state):
    a_pipeline.run(a_state, 2)
    loaded = read_checkpoint(io.BytesIO(_checkpoint_bytes(a_state)), a_state.config)
    assert loaded.cycle == 2
    assert loaded.species == a_state.species
    assert np.array_equal(loaded.fields.E, a_state.fields.E)
    assert np.array_equal(loaded.fields.B, a_state.fields.B)
    assert loaded.rng.bit_generator.state == a_state.rng.bit_generator.state
    assert loaded.diagnostics == []


def test_resume_matches_uninterrupted_run(a_config, tmp_path):
    straight = initialize(a_config)
    SimulationPipeline.from_state(straight).run(straight, 4)

    initial = initialize(a_config)
    pipeline = SimulationPipeline.from_state(initial)
    first_half = initial.copy()
    pipeline.run(first_half, 2)
    save_checkpoint(first_half, tmp_path / "half.ipkc")
    resumed = load_checkpoint(tmp_path / "half.ipkc", a_config)
    pipeline.run(resumed, 2)

    assert resumed.cycle == 4
    assert resumed.species == straight.species
    assert np.array_equal(resumed.fields.E, straight.fields.E)
    assert [r.without_timing() for r in resumed.diagnostics] == [
        r.without_timing() for r in straight.diagnostics[2:]
    ]


def test_open_boundary_round_trip():
    config = SimConfigFactory(
        boundary_mode=BoundaryMode.OPEN_INFLOW,
        species_params=(
            IonFactory(drift_velocity=(0.1, 0.0, 0.0)),
            ElectronFactory(drift_velocity=(0.1, 0.0, 0.0)),
        ),
        scenario=ScenarioParams(kind=ScenarioKind.DIPOLE, dipole_moment=(0.0, 0.0, 0.01)),
    ).validate()
    state = initialize(config)
    loaded = read_checkpoint(io.BytesIO(_checkpoint_bytes(state)), config)
    assert loaded.inflow == state.inflow
    assert np.array_equal(loaded.fields.B_boundary, state.fields.B)


def test_dump_without_config(a_state):
    data = read_checkpoint_data(io.BytesIO(_checkpoint_bytes(a_state)))
    assert data.header.grid_dims == (5, 5, 5)
    assert data.header.n_species == 2
    assert data.header.dt == 0.1
    assert data.E.shape == (7, 7, 7, 3)
    assert "grid dims:    5 x 5 x 5" in str(data.header)


@pytest.mark.parametrize(
    "mangle",
    [
        lambda data: data[:-8],
        lambda data: data[:40],
        lambda data: b"IPKX" + data[4:],
        lambda data: data[:4] + struct.pack("<I", 2) + data[8:],
        lambda data: data[:20] + struct.pack("<I", 2) + data[24:],
    ],
    ids=["truncated particles", "truncated header", "magic", "version", "ghosts"],
)
def test_broken_checkpoints(a_state, mangle):
    with pytest.raises(CheckpointFormatError):
        read_checkpoint_data(io.BytesIO(mangle(_checkpoint_bytes(a_state))))


def test_config_mismatch(a_state):
    data = _checkpoint_bytes(a_state)
    bigger = replace(a_state.config, grid_dims=(6, 6, 6))
    with pytest.raises(CheckpointFormatError):
        read_checkpoint(io.BytesIO(data), bigger)
    fewer = replace(a_state.config, species_params=a_state.config.species_params[:1])
    with pytest.raises(CheckpointFormatError):
        read_checkpoint(io.BytesIO(data), fewer)


def test_changed_time_step_warns(a_state, caplog):
    slower = replace(a_state.config, dt=0.05)
    state = read_checkpoint(io.BytesIO(_checkpoint_bytes(a_state)), slower)
    assert state.config.dt == 0.05
    assert "continuing with configured dt=0.05" in caplog.text


def test_missing_file(a_config, tmp_path):
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "nothing.ipkc", a_config)
    assert read_header(io.BytesIO(_checkpoint_bytes(initialize(a_config)))).cycle == 0
