"""Neutral scenario document format, canonical map hashing, and demo records.

The document is UTF-8 JSON validated against ``SCENARIO_SCHEMA``.  Lane
centerlines are waypoint polylines (<= 2 m spacing); analytic lanes are
discretized at 1 m chord on export, and the canonical map hash is computed
over that same discretization so an export/import round trip preserves the
digest.
"""

from __future__ import annotations

import hashlib
import json
import math

import jsonschema
import numpy as np

from .roadnet import Lane, PolylineLane, RoadNetwork

HASH_CHORD = 1.0  # chord length for canonical geometry sampling
COORD_DECIMALS = 6

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["version", "map"],
    "properties": {
        "version": {"const": 1},
        "map": {
            "type": "object",
            "properties": {
                "pg": {"type": "object"},
                "lanes": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id", "waypoints", "width"],
                        "properties": {
                            "id": {"type": "string"},
                            "waypoints": {
                                "type": "array",
                                "minItems": 2,
                                "items": {
                                    "type": "array",
                                    "minItems": 2,
                                    "maxItems": 2,
                                    "items": {"type": "number"},
                                },
                            },
                            "width": {"type": "number", "exclusiveMinimum": 0},
                            "line_types": {
                                "type": "array",
                                "minItems": 2,
                                "maxItems": 2,
                                "items": {
                                    "enum": ["broken", "continuous", "none"]
                                },
                            },
                            "successors": {"type": "array", "items": {"type": "string"}},
                            "left_neighbor": {"type": ["string", "null"]},
                            "right_neighbor": {"type": ["string", "null"]},
                            "discretized": {"type": "boolean"},
                        },
                    },
                },
            },
        },
        "tracks": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["start_time", "tick", "states"],
                "properties": {
                    "start_time": {"type": "number"},
                    "tick": {"type": "number", "exclusiveMinimum": 0},
                    "states": {
                        "type": "array",
                        "items": {
                            "type": "array",
                            "minItems": 4,
                            "maxItems": 4,
                            "items": {"type": "number"},
                        },
                    },
                },
            },
        },
        "ego_route": {
            "type": "object",
            "properties": {
                "start_lane": {"type": "string"},
                "destination_lane": {"type": "string"},
                "destination_s": {"type": "number"},
            },
        },
        "metadata": {"type": "object"},
    },
}


class ImportError_(Exception):
    """Scenario document failed validation or referenced missing elements."""


# ---------------------------------------------------------------------------
# Canonical hashing
# ---------------------------------------------------------------------------


def _lane_waypoints(lane: Lane, chord=HASH_CHORD):
    """Canonical waypoint polyline for a lane: verbatim points for polyline
    lanes, fixed-chord sampling for analytic ones."""
    if isinstance(lane, PolylineLane):
        return lane.points
    pts, _ = lane.sample_centerline(chord)
    return pts


def canonical_map_dict(net: RoadNetwork):
    lanes = {}
    for lid in sorted(net.lanes):
        ln = net.lanes[lid]
        wp = np.round(_lane_waypoints(ln), COORD_DECIMALS)
        lanes[lid] = {
            "waypoints": wp.tolist(),
            "width": round(ln.width, COORD_DECIMALS),
            "line_types": list(ln.line_types),
            "successors": sorted(ln.successors),
            "left_neighbor": ln.left_neighbor,
            "right_neighbor": ln.right_neighbor,
        }
    return {"lane_width": round(net.lane_width, COORD_DECIMALS), "lanes": lanes}


def map_hash(net: RoadNetwork) -> str:
    """256-bit digest over canonically ordered, fixed-precision geometry."""
    blob = json.dumps(canonical_map_dict(net), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------


def export_scenario(net: RoadNetwork, tracks=None, ego_route=None, metadata=None):
    """Serialize a network (and optional trajectory logs) to a document."""
    lanes = []
    for lid in sorted(net.lanes):
        ln = net.lanes[lid]
        entry = {
            "id": lid,
            "waypoints": np.round(_lane_waypoints(ln), COORD_DECIMALS).tolist(),
            "width": ln.width,
            "line_types": list(ln.line_types),
            "successors": sorted(ln.successors),
            "left_neighbor": ln.left_neighbor,
            "right_neighbor": ln.right_neighbor,
        }
        if not isinstance(ln, PolylineLane):
            entry["discretized"] = True
        lanes.append(entry)
    doc = {"version": 1, "map": {"lanes": lanes}}
    if tracks:
        doc["tracks"] = {
            str(vid): {
                "start_time": log.start_time,
                "tick": log.tick,
                "states": np.asarray(log.states).tolist(),
            }
            for vid, log in tracks.items()
        }
    if ego_route:
        doc["ego_route"] = dict(ego_route)
    if metadata:
        doc["metadata"] = dict(metadata)
    return doc


def validate_document(doc):
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path)
        raise ImportError_(f"invalid scenario document at /{path}: {e.message}")
    m = doc["map"]
    if "pg" not in m and "lanes" not in m:
        raise ImportError_("map must provide either 'pg' or 'lanes'")


def import_scenario(doc):
    """Build a RoadNetwork (and trajectory logs) from a validated document.

    PG-sourced documents are expanded through the generator; explicit lane
    lists become polyline lanes with the recorded relations.
    """
    from . import procgen  # deferred: procgen does not depend on this module
    from .policies import TrajectoryLog

    validate_document(doc)
    m = doc["map"]
    if "lanes" in m and m["lanes"]:
        ids = {entry["id"] for entry in m["lanes"]}
        net = RoadNetwork(
            lane_width=float(np.mean([e["width"] for e in m["lanes"]]))
        )
        lanes = {}
        for entry in m["lanes"]:
            lid = entry["id"]
            try:
                ln = PolylineLane(
                    lid, entry["waypoints"], entry["width"],
                    line_types=tuple(entry.get("line_types", ("broken", "broken"))),
                )
            except ValueError as e:
                raise ImportError_(f"lane '{lid}': malformed polyline: {e}")
            for suc in entry.get("successors", []):
                if suc not in ids:
                    raise ImportError_(f"lane '{lid}': unresolved successor '{suc}'")
                ln.successors.append(suc)
            for side in ("left_neighbor", "right_neighbor"):
                ref = entry.get(side)
                if ref is not None and ref not in ids:
                    raise ImportError_(f"lane '{lid}': unresolved {side} '{ref}'")
                setattr(ln, side, ref)
            lanes[lid] = ln
        for ln in lanes.values():
            for suc in ln.successors:
                lanes[suc].predecessors.append(ln.id)
        from .roadnet import Block

        block = Block(
            id="imported", block_type="Imported", lanes=lanes,
            sockets=[], spawn_points=[], params={},
        )
        net.blocks.append(block)
        net.lanes.update(lanes)
        net._segments = block.boundary_segments()
        net._append_log.append((block, None, None, [], 0))
    else:
        net = procgen.build_from_config(m["pg"])

    tracks = {}
    for vid, t in (doc.get("tracks") or {}).items():
        tracks[vid] = TrajectoryLog(
            start_time=float(t["start_time"]),
            tick=float(t["tick"]),
            states=np.asarray(t["states"], dtype=float),
        )
    route = doc.get("ego_route")
    if route:
        dest = route.get("destination_lane")
        if dest is not None:
            if dest not in net.lanes:
                raise ImportError_(f"ego_route: unresolved destination lane '{dest}'")
            net.destination = (
                dest, float(route.get("destination_s", net.lanes[dest].length))
            )
    return net, tracks


def load_scenario_file(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def save_scenario_file(doc, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


# ---------------------------------------------------------------------------
# Demonstration records
# ---------------------------------------------------------------------------


class DemoRecord:
    """Replayable episode log: header plus one record per step."""

    def __init__(self, header, steps=None):
        self.header = header
        self.steps = steps or []

    def append_step(self, action, reward, cost, terminated, reason, obs):
        self.steps.append({
            "t": len(self.steps),
            "action": [float(a) for a in action],
            "reward": float(reward),
            "cost": float(cost),
            "terminated": bool(terminated),
            "reason": reason,
            "obs_digest": observation_digest(obs),
        })

    def to_jsonl(self):
        lines = [json.dumps({"type": "header", **self.header}, sort_keys=True)]
        lines += [json.dumps({"type": "step", **s}, sort_keys=True)
                  for s in self.steps]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        lines = [json.loads(l) for l in text.strip().splitlines() if l.strip()]
        if not lines or lines[0].get("type") != "header":
            raise ValueError("demo record must start with a header line")
        header = {k: v for k, v in lines[0].items() if k != "type"}
        steps = [{k: v for k, v in l.items() if k != "type"}
                 for l in lines[1:]]
        return cls(header, steps)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_jsonl())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_jsonl(f.read())


def observation_digest(obs):
    arr = np.round(np.asarray(obs, dtype=float), 9)
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


def record_demo(env, seed, actions, max_steps=None):
    """Drive ``env`` with a sequence (or callable) of ego actions, logging a
    replayable record."""
    obs = env.reset(seed)
    ego = env.ego_id
    record = DemoRecord({"seed": int(seed), "env": env.config.name,
                         "config": env.config.to_dict()})
    t = 0
    while True:
        if max_steps is not None and t >= max_steps:
            break
        if callable(actions):
            action = actions(obs[ego], t)
        else:
            if t >= len(actions):
                break
            action = actions[t]
        outcome = env.step({ego: action})[ego]
        record.append_step(action, outcome.reward, outcome.cost,
                           outcome.terminated, outcome.reason,
                           outcome.observation)
        obs = {ego: outcome.observation}
        t += 1
        if outcome.terminated:
            break
    return record


def replay_demo(env, record):
    """Re-run a recorded episode; report the first divergence, if any."""
    obs = env.reset(int(record.header["seed"]))
    ego = env.ego_id
    divergence = None
    for step in record.steps:
        outcome = env.step({ego: step["action"]})[ego]
        mismatch = (
            abs(outcome.reward - step["reward"]) > 1e-12
            or abs(outcome.cost - step["cost"]) > 1e-12
            or outcome.terminated != step["terminated"]
            or outcome.reason != step["reason"]
            or observation_digest(outcome.observation) != step["obs_digest"]
        )
        if mismatch:
            divergence = step["t"]
            break
        if outcome.terminated:
            break
    return {
        "diverged": divergence is not None,
        "first_divergence_step": divergence,
        "checked_steps": len(record.steps) if divergence is None else divergence + 1,
    }
