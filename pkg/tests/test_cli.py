import hashlib
import json
import os
import signal
import socket
import subprocess
import sys
import time
import urllib.request

import pandas as pd
import pytest

from prosocial_ranking.cli import CONFIG_ENV, main

SIM = {"n_users": 30, "start": "2024-08-25", "n_days": 25, "enroll_start": "2024-08-25", "enroll_end": "2024-08-27"}


def write_config(tmp_path, **extra):
    rec = {"seed": 4, "output_dir": "run", "simulator": SIM, **extra}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(rec))
    return str(path)


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp)
    assert main(["--config", cfg, "simulate"]) == 0
    return tmp, cfg


def digest(directory, names):
    h = hashlib.sha256()
    for n in names:
        h.update((directory / n).read_bytes())
    return h.hexdigest()


def test_simulate_summary_lists_every_arm(simulated, capsys):
    tmp, cfg = simulated
    assert main(["--config", cfg, "simulate", "--out", str(tmp / "again")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert len(summary["rank_change_by_arm"]) == 6
    names = ["panel.csv", "surveys.csv", "roster.csv", "events.jsonl", "config.json"]
    assert digest(tmp / "run", names) == digest(tmp / "again", names)


def test_analyze_metrics_report(simulated, capsys):
    tmp, cfg = simulated
    assert main(["--config", cfg, "analyze", "--pooled-only"]) == 0
    out = capsys.readouterr().out
    assert "== behavior" in out and "== attrition" in out
    assert (tmp / "run" / "tables" / "table_behavior.csv").exists()
    assert main(["--config", cfg, "metrics"]) == 0
    assert pd.read_csv(tmp / "run" / "metrics.csv")["ranker"].nunique() == 6
    assert main(["--config", cfg, "report"]) == 0
    assert "Intervention intensity" in (tmp / "run" / "report.txt").read_text()


def test_missing_column_is_a_user_error(simulated, capsys):
    tmp, cfg = simulated
    panel = pd.read_csv(tmp / "run" / "panel.csv").drop(columns=["start"])
    bad = tmp / "bad_panel.csv"
    panel.to_csv(bad, index=False)
    assert main(["--config", cfg, "analyze", "--panel", str(bad), "--pooled-only"]) == 1
    assert "start" in capsys.readouterr().err


def test_config_errors_exit_one(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(CONFIG_ENV, raising=False)
    assert main(["simulate"]) == 1
    assert CONFIG_ENV in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "nope.json"), "simulate"]) == 1
    p = tmp_path / "noseed.json"
    p.write_text(json.dumps({"simulator": SIM}))
    assert main(["--config", str(p), "simulate"]) == 1
    assert "seed" in capsys.readouterr().err
    p.write_text(json.dumps({"seed": 1, "simulator": {**SIM, "n_users": -1}}))
    assert main(["--config", str(p), "simulate"]) == 1
    p.write_text("{not json")
    assert main(["--config", str(p), "simulate"]) == 1


def test_config_from_environment(simulated, monkeypatch, capsys):
    tmp, cfg = simulated
    monkeypatch.setenv(CONFIG_ENV, cfg)
    assert main(["metrics", "--out", str(tmp / "m.csv")]) == 0
    assert (tmp / "m.csv").exists()


def test_ingest_and_refresh(tmp_path, capsys):
    enr = tmp_path / "enrollments.jsonl"
    enr.write_text(json.dumps({"user_id": "reader", "enrolled_at": "2024-08-01", "arm": "AddNews"}) + "\n")
    cfg = write_config(tmp_path, service={"snapshot": "svc/snap.json", "enrollments": "enrollments.jsonl"})
    items = tmp_path / "items.jsonl"
    with open(items, "w") as fp:
        for k in range(6):
            rec = {"id": f"n{k}", "platform": "Twitter", "text": f"news story {k}", "source": f"tw-news-{k:03d}"}
            fp.write(json.dumps({"item": rec, "scraped_at": 1000.0}) + "\n")
    os.makedirs(tmp_path / "svc")
    assert main(["--config", cfg, "ingest", "--items", str(items)]) == 0
    assert json.loads(capsys.readouterr().out.splitlines()[0])["accepted"] == 6
    assert main(["--config", cfg, "refresh-queues", "--now", "2000", "--platform", "Twitter"]) == 0
    assert json.loads(capsys.readouterr().out) == {"refreshed": 1}
    snap = json.loads((tmp_path / "svc" / "snap.json").read_text())
    assert len(snap["inventory"]["queues"][0]["ids"]) == 6


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _start(cfg):
    proc = subprocess.Popen(
        [sys.executable, "-m", "prosocial_ranking", "--config", cfg, "serve"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    line = proc.stdout.readline()
    assert line.startswith("listening on"), proc.stderr.read()
    return proc


def _post(port, path, body):
    req = urllib.request.Request(f"http://127.0.0.1:{port}{path}", data=json.dumps(body).encode(), method="POST")
    with urllib.request.urlopen(req, timeout=10) as r:
        return json.load(r)


def test_serve_lifecycle_keeps_state_across_restart(tmp_path):
    port = _free_port()
    cfg = write_config(tmp_path, service={"port": port, "snapshot": "svc/snap.json", "events": "svc/events.jsonl"})
    proc = _start(cfg)
    try:
        _post(port, "/enroll", {"user_id": "alice", "enrolled_at": "2024-08-01"})
        slate = {"platform": "Twitter", "kind": "Post", "items": [
            {"id": f"p{k}", "platform": "Twitter", "text": f"post {k}"} for k in range(5)]}
        t0 = time.monotonic()
        resp = _post(port, "/rank", {"user_id": "alice", "slate": slate})
        assert time.monotonic() - t0 >= 0.49
        assert resp["release_offset_ms"] == 500
    finally:
        proc.send_signal(signal.SIGTERM)
        out, err = proc.communicate(timeout=20)
    assert proc.returncode == 0 and "stopped" in out
    snap = json.loads((tmp_path / "svc" / "snap.json").read_text())
    assert [u["enrollment"]["user_id"] for u in snap["users"]] == ["alice"]
    assert len((tmp_path / "svc" / "events.jsonl").read_text().splitlines()) == 1
    proc = _start(cfg)
    try:
        with urllib.request.urlopen(f"http://127.0.0.1:{port}/stats", timeout=10) as r:
            assert json.load(r)["users"] == 1
        assert _post(port, "/rank", {"user_id": "alice", "slate": slate})["deadline_met"]
    finally:
        proc.send_signal(signal.SIGINT)
        proc.communicate(timeout=20)
    assert proc.returncode == 0
    assert len((tmp_path / "svc" / "events.jsonl").read_text().splitlines()) == 2
