"""The phases one simulation cycle goes through"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from momentpic.compress import GmmRecord, compress_state
from momentpic.control import ControlPolicy, ControlReport, control_pass
from momentpic.core import BoundaryMode, CompressParams, SimState
from momentpic.exceptions import MomentPICException
from momentpic.krylov import KrylovReport
from momentpic.maxwell import (
    advance_B,
    build_rhs,
    maxwell_operator,
    solve_fields,
)
from momentpic.moments import (
    HatMoments,
    Moments,
    build_hat_moments,
    build_susceptibility,
    gather_moments,
)
from momentpic.mover import BoundaryVerdict, MoverReport, apply_boundaries, push_particles
from momentpic.scenarios import inject_inflow


@dataclass
class CycleContext:
    """Everything one cycle produces besides the new state

    Stages read what earlier stages of the same cycle left here
    """

    cycle: int
    control_reports: List[ControlReport] = field(default_factory=list)
    mover_reports: List[MoverReport] = field(default_factory=list)
    boundary_counts: Counter = field(default_factory=Counter)
    injected: List[int] = field(default_factory=list)
    moments: Optional[Moments] = None
    chi: Optional[np.ndarray] = None
    hat: Optional[HatMoments] = None
    krylov_report: Optional[KrylovReport] = None
    archive_records: List[GmmRecord] = field(default_factory=list)


class Stage:
    """A distinct phase of a simulation cycle

    Notes
    -----
    Responsibilities:
    * A stage reads the state and the context of the running cycle and replaces
      the parts of the state it is responsible for
    * A stage never advances the cycle counter or records diagnostics; that
      is done by the pipeline
    """

    def __init__(self, name: str):
        self.name = name
        self.logger = logging.getLogger(f'stage "{self.name}"')

    def __str__(self):
        return self.name

    def run(self, state: SimState, context: CycleContext):
        raise NotImplementedError()

    def describe(self) -> str:
        """One-line description for status output"""
        return self.name


class MoverStage(Stage):
    """Phase 1: particle control, push, boundary conditions and injection"""

    def __init__(self, name: str = "mover", policy: Optional[ControlPolicy] = None):
        """

        Parameters
        ----------
        name: str, optional
            Human readable name for this stage. Defaults to 'mover'
        policy: ControlPolicy, optional
            Run a particle control pass before every push. Defaults to None,
            meaning no control
        """
        super().__init__(name=name)
        self.policy = policy

    def describe(self) -> str:
        control = "no control" if self.policy is None else (
            f"control theta={self.policy.theta}, {self.policy.granularity.value}"
        )
        return f"{self.name} ({control})"

    def run(self, state: SimState, context: CycleContext):
        config = state.config
        if self.policy is not None:
            _, reports = control_pass(state, self.policy)
            context.control_reports.extend(reports)

        for s, species in enumerate(config.species_params):
            pushed, report = push_particles(
                state.species[s], state.fields, species, config.dt,
                config.mover_params, config.c,
            )
            context.mover_reports.append(report)
            kept, counts = apply_boundaries(
                pushed, state.mesh, state.rng, state.inflow, species, config.c
            )
            context.boundary_counts.update(counts)
            if config.boundary_mode == BoundaryMode.OPEN_INFLOW and state.inflow:
                injected = inject_inflow(config, species, state.inflow, state.rng)
                context.injected.append(len(injected))
                kept = kept.concatenate(injected)
            state.species[s] = kept

        self.logger.debug(
            f"Pushed {state.particle_counts()} particles, "
            f"{self._verdict_summary(context.boundary_counts)}"
        )
        if context.injected:
            self.logger.debug(f"Injected {context.injected} particles")

    @staticmethod
    def _verdict_summary(counts: Dict[BoundaryVerdict, int]) -> str:
        return ", ".join(f"{v.value}: {counts[v]}" for v in BoundaryVerdict if counts[v])


class InterpolationStage(Stage):
    """Phase 2: moments, susceptibility and implicit sources"""

    def __init__(self, name: str = "interpolation"):
        super().__init__(name=name)

    def run(self, state: SimState, context: CycleContext):
        config = state.config
        B = state.fields.B_unique
        context.moments = gather_moments(
            state.species, config.species_params, state.mesh, config.moment_params
        )
        context.chi = build_susceptibility(
            context.moments, B, config.dt, config.species_params, config.c
        )
        context.hat = build_hat_moments(
            context.moments, B, config.dt, config.species_params, config.c,
            state.mesh,
        )
        self.logger.debug("Gathered moments")


class FieldSolverStage(Stage):
    """Phase 3: implicit solve for E^{n+1}, then B^{n+1}

    Raises
    ------
    SolverNotConvergedException
        When the solve fails and the solver is configured to abort
    """

    def __init__(self, name: str = "field_solver"):
        super().__init__(name=name)

    def run(self, state: SimState, context: CycleContext):
        if context.chi is None or context.hat is None:
            raise StageOrderError(
                f"{self.name} needs moments; run the interpolation stage first"
            )
        config = state.config
        grid = state.fields
        operator = maxwell_operator(context.chi, config.dt, config.c, state.mesh)
        rhs = build_rhs(grid, context.hat, config.dt, config.c)
        solution, report = solve_fields(
            operator, rhs, config.solver_params, x0=grid.E_unique.reshape(-1)
        )
        context.krylov_report = report
        E_np1 = state.mesh.unflatten(solution)
        B_np1 = advance_B(grid, E_np1, config.dt, config.c)
        grid.set_E(E_np1)
        grid.set_B(B_np1)
        self.logger.debug(
            f"Solved fields in {report.iterations} iterations, "
            f"residual {report.residual:.2e}"
        )


class CompressionStage(Stage):
    """Phase 3 analytics: mixture fits of every (species, region) on cadence.
    Reads the state only
    """

    def __init__(self, params: CompressParams, name: str = "compression"):
        super().__init__(name=name)
        self.params = params

    def describe(self) -> str:
        if not self.params.every:
            return f"{self.name} (off)"
        return (
            f"{self.name} (every {self.params.every} cycles, "
            f"{self.params.components} components, {self.params.bins} bins)"
        )

    def is_due(self, completed_cycles: int) -> bool:
        return bool(self.params.every) and completed_cycles % self.params.every == 0

    def run(self, state: SimState, context: CycleContext):
        # records carry the number of completed cycles, state.cycle is bumped
        # by the pipeline after all stages ran
        completed = state.cycle + 1
        if not self.is_due(completed):
            return
        context.archive_records = compress_state(state, self.params, cycle=completed)
        self.logger.info(
            f"Compressed {len(context.archive_records)} regions at cycle {completed}"
        )


class StageOrderError(MomentPICException):
    pass
