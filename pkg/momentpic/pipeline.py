"""stages define the phases of a cycle, this module strings them together and
keeps the books on what each cycle did
"""


import logging
import time
from typing import Callable, List, Optional

import numpy as np

from momentpic.control import ControlPolicy, initial_targets
from momentpic.core import DiagnosticsRow, SimState
from momentpic.exceptions import MomentPICException
from momentpic.maxwell import gauss_residual
from momentpic.stages import (
    CompressionStage,
    CycleContext,
    FieldSolverStage,
    InterpolationStage,
    MoverStage,
    Stage,
)

CycleCallback = Callable[[SimState, CycleContext], None]


class Pipeline:
    """A collection of stages that are run in order

    This is a base class that does not define what a cycle records. To add
    that, extend in a Child class

    Responsibilities
    ----------------
    Pipeline can:
    * Inspect stages
    * Run all stages on a state, in order
    * log errors raised by stages, but not necessarily catch

    Pipeline does NOT:
    * Hold the state. It is handed in for each cycle
    * Handle any rollback on error. A failed cycle leaves the state half-updated
    """

    def __init__(self, stages: List[Stage]):
        self.stages = stages

    def get_stage(self, name: str) -> Stage:
        """Return first stage in this pipeline that has the given name

        Parameters
        ----------
        name: str
            Name of the stage

        Raises
        ------
        ObjectNotFound
            If no stage by that name is defined
        """
        try:
            return next(stage for stage in self.stages if stage.name == name)
        except StopIteration as e:
            raise ObjectNotFound(
                f"Stage '{name}' not found in " f"{[x.name for x in self.stages]}"
            ) from e

    def get_status(self) -> str:
        """One line per stage"""
        return "\n".join(
            f"{index}: {stage.describe()}" for index, stage in enumerate(self.stages)
        )

    def run_stages(self, state: SimState, context: CycleContext):
        for stage in self.stages:
            stage.logger.debug(f"Running on cycle {state.cycle}")
            try:
                stage.run(state, context)
            except MomentPICException as e:
                stage.logger.error(f"Failed on cycle {state.cycle}: {e}")
                raise


class SimulationPipeline(Pipeline):
    """Standard moment-implicit cycle: move particles, gather moments, solve
    fields and, when due, compress velocity distributions
    """

    def __init__(
        self,
        mover: MoverStage,
        interpolation: InterpolationStage,
        field_solver: FieldSolverStage,
        compression: CompressionStage,
    ):
        """

        Parameters
        ----------
        mover: MoverStage
            Control, push, boundaries and injection
        interpolation: InterpolationStage
            Moments and implicit sources from the pushed particles
        field_solver: FieldSolverStage
            New E and B
        compression: CompressionStage
            Mixture fits of the new particles, on cadence
        """
        self.mover = mover
        self.interpolation = interpolation
        self.field_solver = field_solver
        self.compression = compression
        super().__init__(stages=[mover, interpolation, field_solver, compression])
        self.logger = logging.getLogger(__name__)

    @classmethod
    def from_state(cls, state: SimState) -> "SimulationPipeline":
        """Pipeline as configured in state.config

        Parameters
        ----------
        state: SimState
            The initial state of the run. When control is on without a fixed
            target, its particle counts set the per species targets. Pass the
            freshly initialised state also when resuming, so that the targets
            do not depend on where the run was restarted
        """
        config = state.config
        policy = None
        if config.control_params.enabled:
            policy = ControlPolicy.from_params(
                config.control_params,
                initial_targets(state, config.control_params.count_region),
            )
        return cls(
            mover=MoverStage(policy=policy),
            interpolation=InterpolationStage(),
            field_solver=FieldSolverStage(),
            compression=CompressionStage(config.compress_params),
        )

    def run_cycle(self, state: SimState) -> CycleContext:
        """Advance state by one cycle, in place

        Appends a DiagnosticsRow to state.diagnostics and increments state.cycle

        Raises
        ------
        MomentPICException:
            If anything goes wrong in a stage that the pipeline cannot handle
            by itself

        Returns
        -------
        CycleContext
            What the stages produced, including control reports and archive
            records
        """
        self.logger.info(f"Running cycle {state.cycle}")
        started = time.perf_counter()
        context = CycleContext(cycle=state.cycle)
        self.run_stages(state, context)
        row = self.diagnostics(state, context, time.perf_counter() - started)
        state.diagnostics.append(row)
        state.advance_cycle()
        self.logger.debug(
            f"Energy {row.total_energy:.6e}, gauss residual "
            f"{row.gauss_residual:.2e}, counts {row.particle_counts}"
        )
        return context

    def run(
        self, state: SimState, n_cycles: int, callback: Optional[CycleCallback] = None
    ) -> SimState:
        """Run n_cycles cycles, calling callback(state, context) after each"""
        for _ in range(n_cycles):
            context = self.run_cycle(state)
            if callback:
                callback(state, context)
        return state

    @staticmethod
    def diagnostics(
        state: SimState, context: CycleContext, wall_time: float = 0.0
    ) -> DiagnosticsRow:
        """Conserved quantities of the state the stages just produced"""
        config = state.config
        momentum = np.zeros(3)
        for particles, species in zip(state.species, config.species_params):
            momentum += particles.momentum(species, config.c)
        residual = float("nan")
        if context.moments is not None:
            residual = gauss_residual(state.fields, context.moments.rho)
        return DiagnosticsRow(
            cycle=state.cycle + 1,
            field_energy=state.fields.field_energy(),
            kinetic_energy=tuple(
                p.kinetic_energy(s, config.c)
                for p, s in zip(state.species, config.species_params)
            ),
            momentum=tuple(float(x) for x in momentum),
            particle_counts=state.particle_counts(),
            gauss_residual=residual,
            krylov_iterations=(
                context.krylov_report.iterations if context.krylov_report else 0
            ),
            wall_time=wall_time,
        )


class ObjectNotFound(MomentPICException):
    pass
