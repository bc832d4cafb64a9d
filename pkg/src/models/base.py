"""SQLAlchemy base and database utilities for the result database.

This module exposes the `Base` declarative class, a configured `engine`
and a `SessionLocal` factory. `init_db` creates the result tables for
local runs; deployed databases are migrated with alembic instead.

The result database is SQLite by default (see `src.core.config.settings`).
"""

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from src.core.config import settings

# sqlite connections are shared with the verification thread pool
engine = create_engine(
    settings.DATABASE_URL,
    connect_args={"check_same_thread": False}
)

SessionLocal = sessionmaker(
    autocommit=False,
    autoflush=False,
    bind=engine,
)

Base = declarative_base()


def init_db() -> None:
    """Create the run summary and verification report tables if missing."""
    # table classes register themselves on Base when imported
    from src.models import run_summary, verification_record  # noqa: F401

    Base.metadata.create_all(bind=engine)
