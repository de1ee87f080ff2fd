import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from drivesim import frontdoor, scenario_io
from drivesim.env import DrivingEnv, ScenarioConfig
from drivesim.frontdoor import (
    cmd_benchmark,
    cmd_generate,
    cmd_rollout,
    create_app,
    main,
)


class TestGenerate:
    def test_writes_count_files_and_manifest(self, tmp_path):
        out = tmp_path / "maps"
        assert cmd_generate(3, 40, 4, 0, out) == 0
        files = sorted(p.name for p in out.iterdir())
        assert files == ["digests.json", "map_0000.json", "map_0001.json",
                         "map_0002.json", "map_0003.json"]
        digests = json.loads((out / "digests.json").read_text())
        assert len(digests) == 4

    def test_documents_validate_and_import(self, tmp_path):
        cmd_generate(3, 40, 2, 1, tmp_path)
        digests = json.loads((tmp_path / "digests.json").read_text())
        for name, digest in digests.items():
            doc = scenario_io.load_scenario_file(tmp_path / name)
            net, _ = scenario_io.import_scenario(doc)
            assert scenario_io.map_hash(net) == digest

    def test_same_flags_same_manifest(self, tmp_path):
        cmd_generate(3, 40, 3, 5, tmp_path / "a")
        cmd_generate(3, 40, 3, 5, tmp_path / "b")
        assert (tmp_path / "a" / "digests.json").read_text() \
            == (tmp_path / "b" / "digests.json").read_text()

    def test_zero_blocks_usage_error(self, tmp_path):
        assert cmd_generate(0, 40, 1, 0, tmp_path) == 2

    def test_unwritable_dir_fails(self):
        assert cmd_generate(3, 40, 1, 0, "/proc/nowhere") != 0

    def test_seed_env_override(self, tmp_path, monkeypatch):
        cmd_generate(3, 40, 2, 0, tmp_path / "a")
        monkeypatch.setenv("DRIVESIM_SEED", "0")
        cmd_generate(3, 40, 2, 99, tmp_path / "b")
        assert (tmp_path / "a" / "digests.json").read_text() \
            == (tmp_path / "b" / "digests.json").read_text()


class TestRollout:
    def test_zero_policy_never_succeeds(self, capsys):
        assert cmd_rollout("test", "zero", 2, 0,
                           block_sequence=["Straight"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        summary = json.loads(lines[-1])
        assert summary["success_rate"] == 0.0

    def test_idm_policy_succeeds(self, capsys):
        assert cmd_rollout("test", "idm", 3, 0,
                           block_sequence=["Straight", "Curve"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        records = [json.loads(l) for l in lines]
        assert all(r["reason"] == "success" for r in records[:-1])
        assert records[-1]["success_rate"] == 1.0

    def test_unknown_policy(self):
        assert cmd_rollout("test", "teleport", 1, 0,
                           block_sequence=["Straight"]) == 2

    def test_replay_matches_recorded_outcome(self, tmp_path, capsys):
        env = DrivingEnv(ScenarioConfig(
            name="PGMap", block_sequence=("Straight", "Curve"), map_seed=2))
        rec = scenario_io.record_demo(env, seed=1, actions=[(0.0, 0.6)] * 30)
        path = tmp_path / "demo.jsonl"
        rec.save(path)
        assert cmd_rollout("PGMap", "replay", 1, 0, demo_path=path) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        episode, summary = json.loads(lines[0]), json.loads(lines[1])
        assert not summary["diverged"]
        assert episode["steps"] == len(rec.steps)
        assert abs(episode["reward"]
                   - sum(s["reward"] for s in rec.steps)) < 1e-6

    def test_replay_requires_demo(self):
        assert cmd_rollout("PGMap", "replay", 1, 0) == 2


class TestBenchmark:
    def test_zero_steps_usage_error(self):
        assert cmd_benchmark("single_idm10", 0) == 2

    def test_report_shape(self, capsys):
        assert cmd_benchmark("single_idm10", 50) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["steps"] == 50
        assert report["steps_per_s"] > 0
        phases = report["phase_ms_per_step"]
        assert phases["streaming"] == 0.0
        assert set(phases) == {"policy", "physics", "collision", "post",
                               "sensing", "streaming", "other"}

    def test_multi_agent_config_runs(self, capsys):
        assert cmd_benchmark("marl40", 5) == 0
        assert json.loads(capsys.readouterr().out)["steps"] == 5


class TestCliParsing:
    def test_generate_via_main(self, tmp_path):
        assert main(["generate", "--n", "3", "--count", "1",
                     "--out", str(tmp_path)]) == 0

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["frobnicate"])


def lockstep_client(**kw):
    kw.setdefault("config_name", "PGMap")
    kw.setdefault("lockstep", True)
    app = create_app(**kw)
    return TestClient(app)


def send(ws, msg):
    ws.send_text(json.dumps(msg))


def recv(ws):
    return json.loads(ws.receive_text())


class TestServe:
    def test_map_endpoint(self):
        client = lockstep_client()
        doc = client.get("/map").json()
        assert len(doc["lanes"]) > 0
        lane = doc["lanes"][0]
        assert len(lane["left"]) >= 2 and len(lane["right"]) >= 2

    def test_initial_frame_and_stepping(self):
        client = lockstep_client()
        with client.websocket_connect("/session") as ws:
            first = recv(ws)
            assert first["type"] == "frame"
            send(ws, {"type": "control", "steering": 0.0,
                      "throttle_brake": 0.5})
            frame = recv(ws)
            assert frame["step"] == first["step"] + 1
            assert frame["applied_action"] == [0.0, 0.5]
            ids = [b["id"] for b in frame["bodies"]]
            assert len(ids) == len(set(ids))
            assert frame["ego"] in ids

    def test_control_latency_100_of_100(self):
        # every control sent before a step is that step's applied action
        client = lockstep_client()
        with client.websocket_connect("/session") as ws:
            last_step = recv(ws)["step"]
            for k in range(100):
                steering = round(((k % 21) - 10) / 10.0, 2)
                throttle = round(((k % 11) - 5) / 10.0, 2)
                send(ws, {"type": "control", "steering": steering,
                          "throttle_brake": throttle})
                frame = recv(ws)
                assert frame["type"] == "frame"
                assert frame["step"] == last_step + 1
                assert frame["applied_action"] == [steering, throttle]
                last_step = frame["step"]
                if frame["episode_over"]:
                    send(ws, {"type": "reset"})
                    last_step = recv(ws)["step"]

    def test_controls_clamped(self):
        client = lockstep_client()
        with client.websocket_connect("/session") as ws:
            recv(ws)
            send(ws, {"type": "control", "steering": 9.0,
                      "throttle_brake": -4.0})
            frame = recv(ws)
            assert frame["applied_action"] == [1.0, -1.0]

    def test_malformed_message_keeps_session(self):
        client = lockstep_client()
        with client.websocket_connect("/session") as ws:
            recv(ws)
            ws.send_text("{not json")
            assert recv(ws)["type"] == "error"
            send(ws, {"type": "wibble"})
            assert recv(ws)["type"] == "error"
            send(ws, {"type": "control", "steering": "left",
                      "throttle_brake": 1})
            assert recv(ws)["type"] == "error"
            send(ws, {"type": "control", "steering": 0.0,
                      "throttle_brake": 0.3})
            assert recv(ws)["type"] == "frame"

    def test_reset_returns_step_zero(self):
        client = lockstep_client()
        with client.websocket_connect("/session") as ws:
            recv(ws)
            for _ in range(3):
                send(ws, {"type": "control", "steering": 0.0,
                          "throttle_brake": 0.5})
                recv(ws)
            send(ws, {"type": "reset", "seed": 4})
            frame = recv(ws)
            assert frame["step"] == 0
            assert frame["outcome"]["reason"] == "none"

    def test_single_session_at_a_time(self):
        client = lockstep_client()
        with client.websocket_connect("/session") as ws:
            recv(ws)
            with client.websocket_connect("/session") as ws2:
                assert recv(ws2)["type"] == "error"

    def test_recorded_session_replays_clean(self, tmp_path):
        client = lockstep_client(record_dir=tmp_path)
        with client.websocket_connect("/session") as ws:
            recv(ws)
            send(ws, {"type": "record_start", "seed": 2})
            assert recv(ws)["recording"] is True
            record_msg = None
            for k in range(25):
                send(ws, {"type": "control",
                          "steering": round(0.1 * np.sin(k / 5.0), 3),
                          "throttle_brake": 0.6})
                msg = recv(ws)
                while msg["type"] != "frame":
                    if msg["type"] == "record":
                        record_msg = msg
                    msg = recv(ws)
                if msg["episode_over"]:
                    break
            if record_msg is None:
                send(ws, {"type": "record_stop"})
                msg = recv(ws)
                while msg["type"] != "record":
                    msg = recv(ws)
                record_msg = msg
            assert record_msg["active"] is False
        record = scenario_io.DemoRecord.load(record_msg["path"])
        env = frontdoor._build_env("PGMap")
        report = scenario_io.replay_demo(env, record)
        assert not report["diverged"]
        assert report["checked_steps"] == len(record.steps)

    def test_frame_stream_has_no_gaps(self):
        client = lockstep_client()
        with client.websocket_connect("/session") as ws:
            prev = recv(ws)["step"]
            for _ in range(20):
                send(ws, {"type": "control", "steering": 0.0,
                          "throttle_brake": 0.4})
                frame = recv(ws)
                assert frame["step"] == prev + 1
                prev = frame["step"]
