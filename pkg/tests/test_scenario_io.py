import copy
import importlib.resources
import json
import math

import numpy as np
import pytest

from drivesim import env as envmod
from drivesim import procgen, scenario_io
from drivesim.dynamics import Action
from drivesim.env import DrivingEnv, ScenarioConfig, make_replay_env
from drivesim.roadnet import PolylineLane
from drivesim.scenario_io import (
    DemoRecord,
    ImportError_,
    export_scenario,
    import_scenario,
    map_hash,
    observation_digest,
    record_demo,
    replay_demo,
    validate_document,
)


def pg_net(seed=0, blocks=3):
    return procgen.generate_maps(
        procgen.PGConfig(block_count=blocks, map_count=1, seed=seed))[0]


class TestMapHash:
    def test_stable_across_runs(self):
        assert map_hash(pg_net(4)) == map_hash(pg_net(4))

    def test_different_maps_differ(self):
        assert map_hash(pg_net(1)) != map_hash(pg_net(2))


class TestExportImportRoundTrip:
    def test_hash_preserved(self):
        net = pg_net(7)
        doc = export_scenario(net)
        net2, _ = import_scenario(doc)
        assert map_hash(net2) == map_hash(net)

    def test_second_generation_is_fixed_point(self):
        net = pg_net(7)
        net2, _ = import_scenario(export_scenario(net))
        net3, _ = import_scenario(export_scenario(net2))
        assert map_hash(net3) == map_hash(net2)

    def test_relations_preserved(self):
        net = pg_net(5)
        net2, _ = import_scenario(export_scenario(net))
        assert set(net2.lanes) == set(net.lanes)
        for lid, ln in net.lanes.items():
            ln2 = net2.lanes[lid]
            assert sorted(ln2.successors) == sorted(ln.successors)
            assert ln2.left_neighbor == ln.left_neighbor
            assert ln2.right_neighbor == ln.right_neighbor

    def test_tracks_round_trip(self):
        from drivesim.policies import TrajectoryLog

        net = pg_net(1)
        states = np.array([[0.0, 1.0, 0.5, 3.0], [1.0, 1.0, 0.5, 3.0]])
        doc = export_scenario(
            net, tracks={"car": TrajectoryLog(0.5, 0.1, states)})
        _, tracks = import_scenario(doc)
        assert set(tracks) == {"car"}
        assert tracks["car"].start_time == 0.5
        assert np.array_equal(tracks["car"].states, states)


class TestValidation:
    def _minimal(self):
        return {
            "version": 1,
            "map": {"lanes": [{
                "id": "a",
                "waypoints": [[0.0, 0.0], [2.0, 0.0], [4.0, 0.0]],
                "width": 3.5,
            }]},
        }

    def test_minimal_valid(self):
        validate_document(self._minimal())
        net, tracks = import_scenario(self._minimal())
        assert set(net.lanes) == {"a"} and tracks == {}

    def test_bad_version(self):
        doc = self._minimal()
        doc["version"] = 2
        with pytest.raises(ImportError_, match="version"):
            validate_document(doc)

    def test_missing_map_source(self):
        with pytest.raises(ImportError_):
            validate_document({"version": 1, "map": {}})

    def test_single_point_lane_rejected(self):
        doc = self._minimal()
        doc["map"]["lanes"][0]["waypoints"] = [[0.0, 0.0]]
        with pytest.raises(ImportError_, match="waypoints"):
            validate_document(doc)

    def test_unresolved_successor_names_lane(self):
        doc = self._minimal()
        doc["map"]["lanes"][0]["successors"] = ["ghost"]
        with pytest.raises(ImportError_, match="'a'.*'ghost'"):
            import_scenario(doc)

    def test_unresolved_neighbor(self):
        doc = self._minimal()
        doc["map"]["lanes"][0]["left_neighbor"] = "ghost"
        with pytest.raises(ImportError_, match="left_neighbor"):
            import_scenario(doc)

    def test_unresolved_destination(self):
        doc = self._minimal()
        doc["ego_route"] = {"destination_lane": "ghost"}
        with pytest.raises(ImportError_, match="destination"):
            import_scenario(doc)

    def test_pg_config_document(self):
        doc = {"version": 1,
               "map": {"pg": {"type": "block_num", "block_num": 2,
                              "seed": 3}}}
        net, _ = import_scenario(doc)
        assert len(net.blocks) == 3


class TestShippedScenarios:
    def _data_dir(self):
        return importlib.resources.files("drivesim") / "data" / "scenarios"

    def test_at_least_five_ship(self):
        names = [p.name for p in self._data_dir().iterdir()
                 if p.name.endswith(".json") and p.name != "digests.json"]
        assert len(names) >= 5

    def test_all_validate_import_and_match_digests(self):
        data = self._data_dir()
        digests = json.loads((data / "digests.json").read_text())
        assert len(digests) >= 5
        for name, digest in digests.items():
            doc = json.loads((data / name).read_text())
            validate_document(doc)
            net, tracks = import_scenario(doc)
            assert map_hash(net) == digest, name
            assert len(net.lanes) >= 2

    def test_waypoint_spacing_bounded(self):
        data = self._data_dir()
        digests = json.loads((data / "digests.json").read_text())
        for name in digests:
            doc = json.loads((data / name).read_text())
            for lane in doc["map"]["lanes"]:
                wp = np.asarray(lane["waypoints"])
                gaps = np.hypot(*(np.diff(wp, axis=0).T))
                assert gaps.max() <= 2.0 + 1e-6, (name, lane["id"])

    def test_replay_env_runs_on_shipped_scenario(self):
        data = self._data_dir()
        doc = json.loads((data / "highway_merge.json").read_text())
        net, tracks = import_scenario(doc)
        e = make_replay_env(net, tracks, horizon=50)
        obs = e.reset(0)
        assert e.ego_id in obs
        assert "truck" in e.sim.vehicles
        out = e.step({e.ego_id: Action(0.0, 0.5)})[e.ego_id]
        assert out.reason in ("none", "crash_vehicle")


class TestDemoRecord:
    def test_jsonl_round_trip(self):
        rec = DemoRecord({"seed": 3, "env": "PGMap"})
        rec.append_step((0.1, 0.2), 1.0, 0.0, False, "none",
                        np.zeros(4))
        text = rec.to_jsonl()
        back = DemoRecord.from_jsonl(text)
        assert back.header == {"seed": 3, "env": "PGMap"}
        assert back.steps == rec.steps

    def test_header_required(self):
        with pytest.raises(ValueError):
            DemoRecord.from_jsonl('{"type": "step", "t": 0}\n')

    def test_observation_digest_sensitivity(self):
        a = observation_digest(np.array([0.1, 0.2]))
        b = observation_digest(np.array([0.1, 0.2000001]))
        assert a != b
        assert a == observation_digest(np.array([0.1, 0.2]))


class TestRecordReplay:
    def _env(self):
        return DrivingEnv(ScenarioConfig(
            name="PGMap", block_sequence=("Straight", "Curve"),
            traffic_density=0.2, map_seed=2))

    def test_replay_matches_record(self):
        actions = [(0.0, 0.6)] * 40
        rec = record_demo(self._env(), seed=1, actions=actions)
        assert len(rec.steps) > 0
        report = replay_demo(self._env(), rec)
        assert not report["diverged"]
        assert report["first_divergence_step"] is None
        assert report["checked_steps"] == len(rec.steps)

    def test_tampered_record_detected(self):
        actions = [(0.0, 0.6)] * 20
        rec = record_demo(self._env(), seed=1, actions=actions)
        rec.steps[5]["reward"] += 1e-6
        report = replay_demo(self._env(), rec)
        assert report["diverged"]
        assert report["first_divergence_step"] == 5

    def test_callable_action_source(self):
        rec = record_demo(self._env(), seed=0,
                          actions=lambda obs, t: (0.0, 0.5), max_steps=15)
        assert len(rec.steps) <= 15
