"""Database connection and session management for the results store."""

import os

from sqlalchemy import URL, Engine, create_engine
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker

DEFAULT_DATABASE_URL = "sqlite:///cellfree_results.db"


class Base(DeclarativeBase):
    pass


_engine: Engine | None = None
_SessionLocal: sessionmaker[Session] | None = None
_engine_url: str | None = None


def get_database_url() -> str:
    """Resolve the database URL from DATABASE_URL, PostgreSQL env vars or SQLite."""
    database_url = os.getenv("DATABASE_URL")
    if database_url:
        return database_url

    pg_env_keys = {"PGHOST", "PGPORT", "PGUSER", "PGPASSWORD", "PGDATABASE"}
    if any(os.getenv(key) for key in pg_env_keys):
        return URL.create(
            "postgresql+psycopg2",
            username=os.getenv("PGUSER", "cellfree"),
            password=os.getenv("PGPASSWORD"),
            host=os.getenv("PGHOST", "127.0.0.1"),
            port=int(os.getenv("PGPORT", "5432")),
            database=os.getenv("PGDATABASE", "cellfree"),
        ).render_as_string(hide_password=False)

    return DEFAULT_DATABASE_URL


def get_engine(url: str | None = None) -> Engine:
    """Return the shared engine, rebuilding it when ``url`` names another database."""
    global _engine, _SessionLocal, _engine_url
    target = url or get_database_url()
    if _engine is None or target != _engine_url:
        if _engine is not None:
            _engine.dispose()
        _engine = create_engine(target, echo=False, pool_pre_ping=True)
        _engine_url = target
        _SessionLocal = None
    return _engine


def get_session(url: str | None = None) -> Session:
    global _SessionLocal
    engine = get_engine(url)
    if _SessionLocal is None:
        _SessionLocal = sessionmaker(bind=engine, autocommit=False, autoflush=False)
    return _SessionLocal()


def init_db(url: str | None = None) -> None:
    """Create all tables if they don't exist."""
    from resultsdb import models  # noqa: F401 – registers models with Base

    Base.metadata.create_all(get_engine(url))
