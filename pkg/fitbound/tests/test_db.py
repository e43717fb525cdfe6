import json
from unittest.mock import patch

import pytest

from fitbound import FORMAT_VERSION
from fitbound.db import build_engine, create_db_and_tables, get_db_session, recent_runs, record_run
from fitbound.models import RunRecord


@pytest.fixture
def engine(tmp_path):
    return build_engine(out_dir=str(tmp_path))


class TestEngine:
    def test_default_sqlite_inside_out_dir(self, tmp_path):
        engine = build_engine(out_dir=str(tmp_path / "nested"))
        assert str(engine.url) == f"sqlite:///{tmp_path / 'nested' / 'runs.db'}"
        assert (tmp_path / "nested").is_dir()

    def test_explicit_url(self):
        engine = build_engine("sqlite://")
        create_db_and_tables(engine)
        with get_db_session(engine) as session:
            assert session.get(RunRecord, 1) is None


class TestRecordRun:
    def test_round_trip(self, engine):
        record = record_run(engine, "verify", "t1", 0, "runs/verify/t1", {"seed": 2}, {"passed": True}, seed=2)
        assert record is not None and record.id is not None

        [stored] = recent_runs(engine)
        assert (stored.command, stored.tag, stored.exit_code, stored.seed) == ("verify", "t1", 0, 2)
        assert stored.format_version == FORMAT_VERSION
        assert json.loads(stored.config_json) == {"seed": 2}
        assert json.loads(stored.summary_json) == {"passed": True}

    def test_newest_first_and_filtered(self, engine):
        for i, command in enumerate(["verify", "train", "verify"]):
            record_run(engine, command, f"t{i}", 0, "out", {}, {})
        assert [r.tag for r in recent_runs(engine)] == ["t2", "t1", "t0"]
        assert [r.tag for r in recent_runs(engine, command="verify")] == ["t2", "t0"]
        assert [r.tag for r in recent_runs(engine, limit=1)] == ["t2"]

    def test_failures_are_swallowed(self, engine):
        with patch("fitbound.db.get_db_session", side_effect=RuntimeError("locked")):
            assert record_run(engine, "verify", "t", 1, "out", {}, {}) is None
