"""SQLAlchemy ORM models for experiment results."""

from datetime import datetime

from sqlalchemy import (
    DateTime, Double, ForeignKey, Integer, String, Text, UniqueConstraint,
)
from sqlalchemy.orm import Mapped, mapped_column, relationship

from resultsdb.db import Base


class ExperimentRun(Base):
    __tablename__ = "experiment_runs"
    __table_args__ = (UniqueConstraint("experiment", "digest"),)

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    experiment: Mapped[str] = mapped_column(String(64), index=True)
    x_name: Mapped[str] = mapped_column(String(64))
    config_hash: Mapped[str] = mapped_column(String(64), index=True)
    seed: Mapped[int] = mapped_column(Integer)
    digest: Mapped[str] = mapped_column(String(40))
    csv_name: Mapped[str | None] = mapped_column(String(255))
    config_json: Mapped[str | None] = mapped_column(Text)
    metadata_json: Mapped[str | None] = mapped_column(Text)
    created_at: Mapped[datetime] = mapped_column(DateTime, default=datetime.utcnow)

    points: Mapped[list["SeriesPoint"]] = relationship(
        back_populates="run", cascade="all, delete-orphan"
    )


class SeriesPoint(Base):
    __tablename__ = "series_points"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    run_id: Mapped[int] = mapped_column(Integer, ForeignKey("experiment_runs.id"), index=True)
    series: Mapped[str] = mapped_column(String(128), index=True)
    x: Mapped[float] = mapped_column(Double)
    value: Mapped[float | None] = mapped_column(Double)
    std_error: Mapped[float | None] = mapped_column(Double)

    run: Mapped["ExperimentRun"] = relationship(back_populates="points")
