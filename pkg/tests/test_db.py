import pytest

import db


@pytest.fixture
def ledger(tmp_path, monkeypatch):
    monkeypatch.setattr(db, "DB_PATH", str(tmp_path / "data" / "runs.db"))
    db.init_db()
    db.init_db()
    return tmp_path


def test_runs_and_losses(ledger):
    run_id = db.start_run("train", {"SEED": "0"}, "hash", 0, stage="1")
    assert db.record_losses(run_id, [0.5, 0.25, 0.125]) == 3
    db.finish_run(run_id, "ok", warnings=2)
    assert db.loss_curve(run_id) == [0.5, 0.25, 0.125]
    row = db.list_runs(5)[0]
    assert row["id"] == run_id
    assert row["status"] == "ok"
    assert row["stage"] == "1"
    assert row["loss_count"] == 3
    assert row["last_loss"] == 0.125
    assert row["warnings"] == 2


def test_latest_checkpoint_skips_missing_files(ledger):
    run_id = db.start_run("train", {}, "hash", 0)
    kept = ledger / "stage-1.safetensors"
    kept.write_bytes(b"x")
    db.record_checkpoint(run_id, "1", str(kept))
    db.record_checkpoint(run_id, "2", str(ledger / "gone.safetensors"))
    assert db.latest_checkpoint() == str(kept)
    assert db.latest_checkpoint("1") == str(kept)
    assert db.latest_checkpoint("3") is None


def test_metrics_keep_extras(ledger):
    run_id = db.start_run("eval", {}, "hash", 0)
    db.record_metric(run_id, "000001", 30.0, 0.9, None, {"external": 1.0})
    with db.get_conn() as conn:
        row = conn.execute("SELECT * FROM metrics WHERE run_id=?", (run_id,)).fetchone()
    assert row["clip_id"] == "000001"
    assert row["e_warp"] is None
    assert row["extra_json"] == '{"external": 1.0}'
