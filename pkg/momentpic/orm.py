"""Object Relational Map for mapping run diagnostics to database tables"""
from sqlalchemy import ForeignKey
from sqlalchemy.orm import declarative_base, relationship
from sqlalchemy.sql.schema import Column
from sqlalchemy.sql.sqltypes import Boolean, DateTime, Float, Integer, String


Base = declarative_base()


class DiagnosticsRecord(Base):
    """Conserved quantities and solver statistics after one cycle of a run"""

    __tablename__ = "diagnostics_record"

    id = Column(Integer, primary_key=True)
    run_name = Column(String(length=256))
    cycle = Column(Integer)
    field_energy = Column(Float)
    momentum_x = Column(Float)
    momentum_y = Column(Float)
    momentum_z = Column(Float)
    gauss_residual = Column(Float)
    krylov_iterations = Column(Integer)
    wall_time = Column(Float)
    recorded_at = Column(DateTime)

    # loaded together with the row so it survives session close
    species = relationship(
        "SpeciesRecord",
        order_by="SpeciesRecord.species",
        lazy="selectin",
        cascade="all, delete-orphan",
    )


class SpeciesRecord(Base):
    """Per species part of a diagnostics row"""

    __tablename__ = "species_record"

    id = Column(Integer, primary_key=True)
    diagnostics_id = Column(Integer, ForeignKey("diagnostics_record.id"))
    species = Column(Integer)
    kinetic_energy = Column(Float)
    particle_count = Column(Integer)


class ControlRecord(Base):
    """One split or coalesce action on one region"""

    __tablename__ = "control_record"

    id = Column(Integer, primary_key=True)
    run_name = Column(String(length=256))
    cycle = Column(Integer)
    species = Column(Integer)
    region = Column(Integer)
    action = Column(String(length=32))
    before = Column(Integer)
    after = Column(Integer)
    charge_delta = Column(Float)
    energy_delta = Column(Float)
    partial = Column(Boolean)
