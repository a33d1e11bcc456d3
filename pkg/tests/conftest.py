"""Conftest.py is loaded for each pytest.
Contains fixtures shared by multiple tests.
"""
import logging
import shutil
from pathlib import Path

import pytest

from momentpic.core import SimConfig, SimState
from momentpic.grid import FieldGrid, Mesh
from momentpic.persistence import RunRecords, get_memory_only_sessionmaker
from momentpic.pipeline import SimulationPipeline
from momentpic.scenarios import initialize
from tests import RESOURCE_PATH
from tests.factories import SimConfigFactory


@pytest.fixture
def a_config() -> SimConfig:
    """Small periodic ion/electron plasma with a fixed seed"""
    return SimConfigFactory(rng_seed=1).validate()


@pytest.fixture
def a_state(a_config) -> SimState:
    """Freshly loaded uniform plasma for a_config"""
    return initialize(a_config)


@pytest.fixture
def a_periodic_mesh() -> Mesh:
    """5 nodes, 4 cells per axis over the unit cube"""
    return Mesh(dims=(5, 5, 5), lengths=(1.0, 1.0, 1.0))


@pytest.fixture
def an_empty_grid(a_periodic_mesh) -> FieldGrid:
    return FieldGrid(a_periodic_mesh)


@pytest.fixture
def a_records_db() -> RunRecords:
    """An initialised empty records database"""
    return RunRecords(get_memory_only_sessionmaker())


@pytest.fixture
def a_pipeline(a_state, caplog) -> SimulationPipeline:
    """Pipeline for a_state. Captures all logs"""
    caplog.set_level(logging.DEBUG)
    return SimulationPipeline.from_state(a_state)


@pytest.fixture
def a_config_file(tmp_path) -> Path:
    """Copy of a small run configuration in a temp folder"""
    copy = tmp_path / "small_uniform.ini"
    shutil.copy(RESOURCE_PATH / "small_uniform.ini", copy)
    return copy


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False,
        help="also run the full size simulation tests marked slow",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="full size run, use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
