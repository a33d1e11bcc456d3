"""Classes and functions to be able to hold on to run records beyond python
executions
"""
import csv
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Sequence

import sqlalchemy
from sqlalchemy import create_engine
from sqlalchemy.orm.session import sessionmaker

from momentpic.control import ControlReport
from momentpic.core import DiagnosticsRow
from momentpic.exceptions import MomentPICException
from momentpic.orm import Base, ControlRecord, DiagnosticsRecord, SpeciesRecord

Session = sessionmaker()


class RunRecordsSession:
    """An open session to a run records database

    Removes some of the clutter of sqlalchemy backend. Properly typed method
    signatures and handling of session close with context manager

    Examples
    --------
    with RunRecordsSession(sqlalchemy_session) as session:
        session.add_diagnostics("run", row)

    Notes
    -----
    Session is closed automatically after 'with' context is left. Objects returned
    from RunRecordsSession methods can still be used after session close,
    but need to be added again to new session to persist any changes

    See Also
    --------
    You can use RunRecords to generate RunRecordsSession objects
    """

    def __init__(self, session: sqlalchemy.orm.session):
        self.session = session

    def __enter__(self):
        return self

    def __exit__(self, *_, **__):
        self.close()

    def close(self):
        """Keep the fields of returned objects alive after close, then commit"""
        # flush all changes, obtain pk's etc, but do not commit
        self.session.flush()
        # detach all objects from session. Persists all object fields after close
        self.session.expunge_all()
        self.session.commit()
        self.session.close()

    def add_diagnostics(self, run_name: str, row: DiagnosticsRow) -> DiagnosticsRecord:
        record = DiagnosticsRecord(
            run_name=run_name,
            cycle=row.cycle,
            field_energy=row.field_energy,
            momentum_x=row.momentum[0],
            momentum_y=row.momentum[1],
            momentum_z=row.momentum[2],
            gauss_residual=row.gauss_residual,
            krylov_iterations=row.krylov_iterations,
            wall_time=row.wall_time,
            recorded_at=datetime.now(),
            species=[
                SpeciesRecord(species=s, kinetic_energy=energy, particle_count=count)
                for s, (energy, count) in enumerate(
                    zip(row.kinetic_energy, row.particle_counts)
                )
            ],
        )
        self.session.add(record)
        return record

    def add_control_reports(
        self, run_name: str, cycle: int, reports: Sequence[ControlReport]
    ) -> List[ControlRecord]:
        records = [
            ControlRecord(
                run_name=run_name,
                cycle=cycle,
                species=r.species,
                region=r.region,
                action=r.action.value,
                before=r.before,
                after=r.after,
                charge_delta=r.charge_delta,
                energy_delta=r.energy_delta,
                partial=r.partial,
            )
            for r in reports
        ]
        self.session.add_all(records)
        return records

    def get_diagnostics(self, run_name: str) -> List[DiagnosticsRecord]:
        """All diagnostics of a run, by cycle"""
        return (
            self.session.query(DiagnosticsRecord)
            .filter(DiagnosticsRecord.run_name == run_name)
            .order_by(DiagnosticsRecord.cycle)
            .all()
        )

    def get_diagnostics_for_cycle(
        self, run_name: str, cycle: int
    ) -> Optional[DiagnosticsRecord]:
        """Returns None if not found"""
        return (
            self.session.query(DiagnosticsRecord)
            .filter(DiagnosticsRecord.run_name == run_name)
            .filter(DiagnosticsRecord.cycle == cycle)
            .first()
        )

    def get_control_records(self, run_name: str) -> List[ControlRecord]:
        return (
            self.session.query(ControlRecord)
            .filter(ControlRecord.run_name == run_name)
            .order_by(ControlRecord.cycle, ControlRecord.species, ControlRecord.region)
            .all()
        )

    def delete_after(self, run_name: str, cycle: int) -> int:
        """Remove records of cycles later than cycle, for resuming a run from an
        earlier checkpoint. Returns the number of diagnostics rows removed
        """
        later = (
            self.session.query(DiagnosticsRecord)
            .filter(DiagnosticsRecord.run_name == run_name)
            .filter(DiagnosticsRecord.cycle > cycle)
            .all()
        )
        for record in later:
            self.session.delete(record)
        self.session.query(ControlRecord).filter(
            ControlRecord.run_name == run_name
        ).filter(ControlRecord.cycle > cycle).delete()
        return len(later)


def to_diagnostics_row(record: DiagnosticsRecord) -> DiagnosticsRow:
    return DiagnosticsRow(
        cycle=record.cycle,
        field_energy=record.field_energy,
        kinetic_energy=tuple(s.kinetic_energy for s in record.species),
        momentum=(record.momentum_x, record.momentum_y, record.momentum_z),
        particle_counts=tuple(s.particle_count for s in record.species),
        gauss_residual=record.gauss_residual,
        krylov_iterations=record.krylov_iterations,
        wall_time=record.wall_time,
    )


def write_diagnostics_csv(rows: Sequence[DiagnosticsRow], path: Path):
    """Header line, then one line per row

    Raises
    ------
    DBLoadException
        For no rows, the header depends on the species count of a row
    """
    if not rows:
        raise DBLoadException(f"No diagnostics to write to '{path}'")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(rows[0].csv_header())
        for row in rows:
            writer.writerow(row.csv_values())


def get_db_sessionmaker(db_url) -> sqlalchemy.orm.session.sessionmaker:
    """Returns a session on a run records database at the given url.
    Creates db if it does not exist

    Parameters
    ----------
    db_url: String
        Sqlalchemy database url, for example 'sqlite:///out/records.sqlite'.
        See https://docs.sqlalchemy.org/en/13/core/engines.html#database-urls

    Returns
    -------
    sqlalchemy.orm.session.sessionmaker
        Makes sessions on the database at db_url
    """
    engine = create_engine(db_url, echo=False)
    Base.metadata.create_all(engine, checkfirst=True)  # Create if needed
    Session.configure(bind=engine)
    return Session


def get_memory_only_sessionmaker() -> sqlalchemy.orm.session.sessionmaker:
    """Session on db that exists only in memory. Will stop existing when closed"""
    engine = create_engine("sqlite://", echo=False)
    Base.metadata.create_all(engine, checkfirst=True)  # Create if needed
    Session.configure(bind=engine)
    return Session


class RunRecords:
    """A thing that holds persistent records for simulation runs

    This is the object that gets passed around. When actual db
    transactions are needed, use get_session and the 'with' statement:

    records = RunRecords(session_maker)

    with records.get_session() as session:
        session.do_things()
    """

    def __init__(self, session_maker: sqlalchemy.orm.session.sessionmaker):
        self.session_maker = session_maker

    def get_session(self) -> RunRecordsSession:
        return RunRecordsSession(session=self.session_maker())

    def diagnostics_rows(self, run_name: str) -> List[DiagnosticsRow]:
        with self.get_session() as session:
            return [to_diagnostics_row(r) for r in session.get_diagnostics(run_name)]


class DBLoadException(MomentPICException):
    pass
