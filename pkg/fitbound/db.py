import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from sqlalchemy.engine import Engine
from sqlmodel import Session, SQLModel, create_engine, select

from . import FORMAT_VERSION
from .config import DATABASE_URL, OUT_DIR
from .models import RunRecord

logger = logging.getLogger(__name__)


def build_engine(database_url: Optional[str] = None, out_dir: str = OUT_DIR) -> Engine:
    """Create the ledger engine; defaults to a SQLite file inside the output root."""
    database_url = database_url or DATABASE_URL
    if database_url is None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        database_url = f"sqlite:///{Path(out_dir) / 'runs.db'}"

    connect_args = {}
    # worker threads may touch the session, SQLite must allow it
    if database_url.startswith("sqlite"):
        connect_args = {"check_same_thread": False}

    return create_engine(database_url, echo=False, connect_args=connect_args)


def create_db_and_tables(engine: Engine) -> None:
    """Create database tables"""
    SQLModel.metadata.create_all(engine)


def get_db_session(engine: Engine) -> Session:
    """Get database session for direct use"""
    return Session(engine)


def record_run(
    engine: Engine,
    command: str,
    tag: str,
    exit_code: int,
    output_dir: str,
    config: Dict[str, Any],
    summary: Dict[str, Any],
    seed: Optional[int] = None,
) -> Optional[RunRecord]:
    """
    Append one invocation to the run ledger.

    Ledger problems are logged and swallowed; they never change a command's
    outcome.
    """
    try:
        create_db_and_tables(engine)
        record = RunRecord(
            command=command,
            tag=tag,
            seed=seed,
            exit_code=exit_code,
            format_version=FORMAT_VERSION,
            config_json=json.dumps(config, sort_keys=True, default=str),
            summary_json=json.dumps(summary, sort_keys=True, default=str),
            output_dir=output_dir,
        )
        with get_db_session(engine) as session:
            session.add(record)
            session.commit()
            session.refresh(record)
        logger.info("Recorded %s run %s in the ledger (id=%s)", command, tag, record.id)
        return record
    except Exception as e:
        logger.error("Failed to record %s run in the ledger: %s", command, e)
        return None


def recent_runs(engine: Engine, command: Optional[str] = None, limit: int = 20):
    """Latest ledger rows, newest first."""
    create_db_and_tables(engine)
    with get_db_session(engine) as session:
        statement = select(RunRecord).order_by(RunRecord.id.desc()).limit(limit)
        if command is not None:
            statement = statement.where(RunRecord.command == command)
        return list(session.exec(statement).all())
