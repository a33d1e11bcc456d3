"""Classes and methods for inspecting a run"""

from typing import Optional, Sequence

from momentpic.checkpoint import read_header
from momentpic.core import DiagnosticsRow, SimState
from momentpic.pipeline import Pipeline
from momentpic.persistence import RunRecords


class RunAdmin:
    """Inspect a run.

    Separate object from pipeline class due to separate goals:

    * Pipeline instances should have methods that favor completeness
    * Admin instances do not have to be complete, but should be quick and useful

    In addition, admin returns strings meant for humans. Pipeline instances work
    with python objects directly
    """

    def __init__(self, pipeline: Pipeline, records: Optional[RunRecords] = None):
        self.pipeline = pipeline
        self.records = records

    def status(self, state: Optional[SimState] = None) -> str:
        """Concise overview of the pipeline and, if given, a state"""
        lines = [self.pipeline.get_status()]
        if state is not None:
            lines.append(str(state))
            if state.diagnostics:
                last = state.diagnostics[-1]
                lines.append(
                    f"last energy {last.total_energy:.6e}, "
                    f"gauss residual {last.gauss_residual:.2e}"
                )
        return "\n".join(lines)

    @staticmethod
    def checkpoint_header(path) -> str:
        """Human readable header of a checkpoint file

        Raises
        ------
        CheckpointFormatError
            If the file is not a checkpoint
        """
        with open(path, "rb") as f:
            return str(read_header(f))

    @staticmethod
    def diagnostics_table(rows: Sequence[DiagnosticsRow]) -> str:
        if not rows:
            return "no diagnostics"
        lines = [
            f"{'cycle':>6} {'total energy':>14} {'field energy':>14} "
            f"{'gauss':>9} {'krylov':>6}  counts"
        ]
        for row in rows:
            lines.append(
                f"{row.cycle:>6} {row.total_energy:>14.6e} {row.field_energy:>14.6e} "
                f"{row.gauss_residual:>9.2e} {row.krylov_iterations:>6}  "
                f"{list(row.particle_counts)}"
            )
        return "\n".join(lines)

    def run_diagnostics(self, run_name: str) -> str:
        """Diagnostics table of a recorded run"""
        if self.records is None:
            return "no records"
        return self.diagnostics_table(self.records.diagnostics_rows(run_name))
