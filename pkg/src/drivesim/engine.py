"""Stepped simulation core: an ordered registry of managers that share one
clock, one road network, and one body table.

Each decision step runs the pipeline
``manager actions -> physics substeps -> collision events -> spawn/recycle``.
Managers own their vehicles; the engine owns ordering and time.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import policies, sensing
from .dynamics import (
    PHYSICS_DT,
    SUBSTEPS_PER_STEP,
    Action,
    ObstacleBody,
    VehicleParams,
    VehicleState,
    advance_vehicle,
    clamp_action,
    collision_check,
)
from .roadnet import OffNetworkError, RouteError

DECISION_DT = PHYSICS_DT * SUBSTEPS_PER_STEP  # s, one external step
RECYCLE_RADIUS = 200.0  # m from the nearest agent
SPAWN_CLEARANCE = 15.0  # m, min spacing when placing bodies
SPAWN_TRIES = 10


class RegistryError(KeyError):
    pass


class MissingActionError(KeyError):
    """An externally controlled agent received no action this step."""


class Manager:
    """Base participant in the step pipeline.  Subclasses override hooks."""

    def reset(self, sim):
        pass

    def policy_actions(self, sim):
        """Actions for vehicles this manager drives (id -> Action)."""
        return {}

    def post_physics(self, sim):
        """Spawning, recycling, zone logic; runs after collision detection."""

    def get_state(self):
        return {}

    def set_state(self, state):
        pass


class Simulation:
    def __init__(self, seed=0):
        self.seed = seed
        self._order = []
        self._managers = {}
        self.net = None
        self.static_segments = np.zeros((0, 4))
        self.vehicles = {}
        self.obstacles = {}
        self.time = 0.0
        self.step_count = 0
        self.collisions = set()
        self.phase_ns = {"policy": 0, "physics": 0, "collision": 0,
                         "post": 0, "sensing": 0}
        self.rng = np.random.default_rng(seed)

    # -- registry ----------------------------------------------------------

    def register_manager(self, name, manager):
        if name in self._managers:
            raise RegistryError(f"manager {name!r} already registered")
        self._managers[name] = manager
        self._order.append(name)
        return manager

    def update_manager(self, name, manager):
        if name not in self._managers:
            raise RegistryError(f"manager {name!r} is not registered")
        self._managers[name] = manager
        return manager

    def manager(self, name):
        if name not in self._managers:
            raise RegistryError(f"manager {name!r} is not registered")
        return self._managers[name]

    @property
    def managers(self):
        return [(n, self._managers[n]) for n in self._order]

    # -- body table --------------------------------------------------------

    @property
    def bodies(self):
        out = dict(self.vehicles)
        out.update(self.obstacles)
        return out

    def add_vehicle(self, vid, state):
        if vid in self.vehicles:
            raise ValueError(f"duplicate vehicle id {vid!r}")
        self.vehicles[vid] = state

    def remove_vehicle(self, vid):
        self.vehicles.pop(vid, None)

    def free_of_bodies(self, position, clearance=SPAWN_CLEARANCE, ignore=()):
        p = np.asarray(position, dtype=float)
        for vid, b in self.bodies.items():
            if vid in ignore:
                continue
            if np.hypot(*(p - b.position)) < clearance:
                return False
        return True

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed=None):
        if seed is not None:
            self.seed = seed
        self.rng = np.random.default_rng(self.seed)
        self.vehicles = {}
        self.obstacles = {}
        self.time = 0.0
        self.step_count = 0
        self.collisions = set()
        self.phase_ns = {"policy": 0, "physics": 0, "collision": 0,
                         "post": 0, "sensing": 0}
        for name in self._order:
            self._managers[name].reset(self)
        return self

    def step(self, external_actions=None):
        """One decision step; external agent ids must all receive actions."""
        t0 = time.perf_counter_ns()
        actions = {}
        for name in self._order:
            actions.update(self._managers[name].policy_actions(self))
        self.phase_ns["policy"] += time.perf_counter_ns() - t0
        for vid, raw in (external_actions or {}).items():
            if vid not in self.vehicles:
                raise MissingActionError(f"no such agent {vid!r}")
            actions[vid] = raw if isinstance(raw, Action) else clamp_action(raw)
        agents = self._managers.get("agents")
        if agents is not None:
            for vid in agents.active_ids():
                if vid not in actions:
                    raise MissingActionError(
                        f"agent {vid!r} received no action this step")
        coast = Action(0.0, 0.0)
        t0 = time.perf_counter_ns()
        for vid in sorted(self.vehicles):
            self.vehicles[vid] = advance_vehicle(
                self.vehicles[vid], actions.get(vid, coast), PHYSICS_DT,
                SUBSTEPS_PER_STEP)
        t1 = time.perf_counter_ns()
        self.phase_ns["physics"] += t1 - t0
        self.collisions = collision_check(self.bodies)
        t2 = time.perf_counter_ns()
        self.phase_ns["collision"] += t2 - t1
        for name in self._order:
            self._managers[name].post_physics(self)
        self.phase_ns["post"] += time.perf_counter_ns() - t2
        self.time += DECISION_DT
        self.step_count += 1
        return self.collisions

    def agent_positions(self):
        agents = self._managers.get("agents")
        if agents is None:
            return []
        return [self.vehicles[a].position for a in agents.active_ids()
                if a in self.vehicles]


# ---------------------------------------------------------------------------
# Map management
# ---------------------------------------------------------------------------


class MapManager(Manager):
    """Owns the road network; cycles a fixed map set by seed."""

    def __init__(self, maps):
        if not maps:
            raise ValueError("MapManager needs at least one map")
        self.maps = list(maps)
        self.current_index = None

    def reset(self, sim):
        self.current_index = sim.seed % len(self.maps)
        sim.net = self.maps[self.current_index]
        sim.static_segments = sensing.boundary_segments(sim.net)

    def get_state(self):
        return {"current_index": self.current_index}


def default_destination(net):
    """A lane id in the most recently added block (route goal for the ego)."""
    dest = getattr(net, "destination", None)
    if dest:
        return dest[0] if isinstance(dest, tuple) else dest
    last = net.blocks[-1]
    return sorted(last.lanes)[0]


def reachable_destination(net, start):
    """The farthest dead-end lane reachable from ``start`` (ties by id)."""
    import collections

    dist = {start: 0.0}
    q = collections.deque([start])
    while q:
        lid = q.popleft()
        ln = net.lanes[lid]
        hops = sorted(ln.successors) + [n for n in (ln.left_neighbor,
                                                    ln.right_neighbor) if n]
        for nxt in hops:
            if nxt not in dist:
                step = 0.0 if nxt in (ln.left_neighbor, ln.right_neighbor) \
                    else ln.length
                dist[nxt] = dist[lid] + step
                q.append(nxt)
    ends = [lid for lid in dist if not net.lanes[lid].successors]
    if not ends:
        return start
    return sorted(ends, key=lambda lid: (-dist[lid], lid))[0]


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


class AgentRecord:
    def __init__(self, vid, tracker):
        self.vid = vid
        self.tracker = tracker


class AgentManager(Manager):
    """Externally controlled vehicles with routes and respawn-on-demand."""

    def __init__(self, num_agents=1, params=None, spawn_lane=None,
                 destination=None):
        self.num_agents = num_agents
        self.params = params or VehicleParams()
        self.spawn_lane = spawn_lane
        self.destination = destination
        self.agents = {}
        self._spawned = 0

    def active_ids(self):
        return sorted(self.agents)

    def reset(self, sim):
        self.agents = {}
        self._spawned = 0
        for _ in range(self.num_agents):
            self.spawn_agent(sim)

    def _spawn_slots(self, sim):
        slots = []
        for block in sim.net.blocks:
            for lid, s in block.spawn_points:
                slots.append((lid, s))
        # dense fallback slots so large fleets fit on any map; junction
        # connector lanes (no painted lines) are used only as a last resort
        marked, unmarked = [], []
        for lid in sorted(sim.net.lanes):
            ln = sim.net.lanes[lid]
            bucket = unmarked if ln.line_types == ("none", "none") else marked
            s = 4.0
            while s <= ln.length - 4.0:
                bucket.append((lid, s))
                s += 8.0
        return slots + marked + unmarked

    def _slot_free(self, sim, x, y, h):
        """Room for a vehicle: no body within 6 m ahead/behind and 2 m aside."""
        c, sn = math.cos(h), math.sin(h)
        for body in sim.bodies.values():
            dx = body.position[0] - x
            dy = body.position[1] - y
            if abs(c * dx + sn * dy) < 6.0 and abs(-sn * dx + c * dy) < 2.0:
                return False
        return True

    def spawn_agent(self, sim):
        vid = f"agent{self._spawned}"
        self._spawned += 1
        slots = self._spawn_slots(sim)
        if self.spawn_lane is not None:
            slots = [sl for sl in slots if sl[0] == self.spawn_lane] or slots
        for lid, s in slots:
            x, y, h = sim.net.lanes[lid].point_at(s, 0.0)
            if not self._slot_free(sim, x, y, h):
                continue
            if self.destination is not None:
                dest = self.destination
            elif len(sim.net.blocks) > 1 and lid in sim.net.blocks[0].lanes:
                dest = default_destination(sim.net)
            else:
                dest = reachable_destination(sim.net, lid)
            try:
                route, cps = sim.net.route_search(lid, dest)
            except RouteError:
                try:
                    route, cps = sim.net.route_search(
                        lid, reachable_destination(sim.net, lid))
                except RouteError:
                    continue
            state = VehicleState(position=np.array([x, y]), heading=h,
                                 speed=0.0, body_class="ego",
                                 params=self.params)
            sim.add_vehicle(vid, state)
            dest_s = None
            nd = getattr(sim.net, "destination", None)
            if isinstance(nd, tuple) and route[-1] == nd[0]:
                dest_s = nd[1]
            tracker = sensing.RouteTracker(sim.net, route, cps,
                                           destination_s=dest_s)
            tracker.update(state.position)
            self.agents[vid] = AgentRecord(vid, tracker)
            return vid
        raise RuntimeError("no free spawn slot for a new agent")

    def retire_agent(self, sim, vid, respawn=False):
        sim.remove_vehicle(vid)
        self.agents.pop(vid, None)
        if respawn:
            return self.spawn_agent(sim)
        return None

    def post_physics(self, sim):
        for rec in self.agents.values():
            if rec.vid in sim.vehicles:
                rec.tracker.update(sim.vehicles[rec.vid].position)


# ---------------------------------------------------------------------------
# Scripted traffic
# ---------------------------------------------------------------------------


class TrafficVehicle:
    def __init__(self, vid, route, idm):
        self.vid = vid
        self.route = route  # lane id sequence
        self.idx = 0
        self.idm = idm


class IdmTrafficManager(Manager):
    """Rule-based background traffic that follows lanes and keeps headway.

    The fleet size is ``round(density * total_lane_length / 10)``.  In
    trigger mode vehicles stay frozen until an agent enters their home
    block's bounding box.
    """

    def __init__(self, density=0.1, trigger_mode=False, route_hops=6,
                 speed_jitter=0.2, base_speed=10.0, count=None):
        self.density = density
        self.count = count  # fixed fleet size overriding the density formula
        self.trigger_mode = trigger_mode
        self.route_hops = route_hops
        self.speed_jitter = speed_jitter
        self.base_speed = base_speed
        self.fleet = {}
        self._spawned = 0
        self._zones = {}
        self._armed = set()

    def fleet_size(self, net):
        if self.count is not None:
            return self.count
        total = sum(ln.length for ln in net.lanes.values())
        return int(round(self.density * total / 10.0))

    def _block_bbox(self, block):
        pts = []
        for ln in block.lanes.values():
            for poly in ln.boundary_polylines():
                pts.append(poly)
        allp = np.vstack(pts)
        return allp[:, 0].min(), allp[:, 1].min(), allp[:, 0].max(), allp[:, 1].max()

    def _random_route(self, sim, start):
        route = [start]
        for _ in range(self.route_hops):
            succ = sorted(sim.net.lanes[route[-1]].successors)
            if not succ:
                break
            route.append(succ[int(sim.rng.integers(len(succ)))])
        return route

    def _spawn_one(self, sim):
        slots = []
        for b in sim.net.blocks:
            for lid, s in b.spawn_points:
                slots.append((b.id, lid, s))
        if not slots:
            return None
        for _ in range(SPAWN_TRIES):
            bid, lid, s = slots[int(sim.rng.integers(len(slots)))]
            x, y, h = sim.net.lanes[lid].point_at(s, 0.0)
            if not sim.free_of_bodies((x, y)):
                continue
            vid = f"traffic{self._spawned}"
            self._spawned += 1
            v0 = self.base_speed * (1.0 + self.speed_jitter
                                    * float(sim.rng.uniform(-1.0, 1.0)))
            idm = policies.IdmParams(desired_speed=v0)
            sim.add_vehicle(vid, VehicleState(
                position=np.array([x, y]), heading=h,
                speed=0.0 if self.trigger_mode else v0 * 0.5,
                body_class="traffic"))
            tv = TrafficVehicle(vid, self._random_route(sim, lid), idm)
            tv.home_block = bid
            self.fleet[vid] = tv
            return vid
        return None

    def reset(self, sim):
        self.fleet = {}
        self._spawned = 0
        self._armed = set()
        self._zones = {b.id: self._block_bbox(b) for b in sim.net.blocks} \
            if self.trigger_mode else {}
        for _ in range(self.fleet_size(sim.net)):
            self._spawn_one(sim)

    def _localize(self, sim, tv):
        """(lane, s, l) on the vehicle's route, advancing past lane ends."""
        state = sim.vehicles[tv.vid]
        while True:
            lane = sim.net.lanes[tv.route[tv.idx]]
            s, l = lane.local_coordinates(state.position)
            if s > lane.length and tv.idx + 1 < len(tv.route):
                tv.idx += 1
                continue
            return lane, min(max(s, 0.0), lane.length), l

    def _route_gap_table(self, sim):
        """Leader candidates per lane: id -> list of (occupant id, s, half)."""
        table = {}
        for vid, tv in self.fleet.items():
            lane, s, _ = self._localize(sim, tv)
            table.setdefault(lane.id, []).append(
                (vid, s, sim.vehicles[vid].length / 2.0))
        agents = sim._managers.get("agents")
        if agents is not None:
            for aid in agents.active_ids():
                if aid not in sim.vehicles:
                    continue
                lid, s, l = agents.agents[aid].tracker.last_fix
                if abs(l) <= sim.net.lanes[lid].width:
                    table.setdefault(lid, []).append(
                        (aid, s, sim.vehicles[aid].length / 2.0))
        for oid, ob in sim.obstacles.items():
            try:
                lid, s, l = sim.net.world_to_frenet(ob.position)
            except OffNetworkError:
                continue
            if abs(l) <= sim.net.lanes[lid].width / 2.0:
                table.setdefault(lid, []).append((oid, s, ob.length / 2.0))
        return table

    def _leader(self, sim, tv, lane, s, table):
        """(lead speed, bumper gap) ahead on the route, or (None, None)."""
        half = sim.vehicles[tv.vid].length / 2.0
        ahead = 0.0
        idx = tv.idx
        cur = lane.id
        cur_s = s
        while ahead < policies.LEADER_LOOKAHEAD:
            best = None
            for vid, vs, vhalf in table.get(cur, ()):
                if vid == tv.vid or vs <= cur_s:
                    continue
                if best is None or vs < best[1]:
                    best = (vid, vs, vhalf)
            if best is not None:
                gap = ahead + best[1] - cur_s - best[2] - half
                body = sim.bodies[best[0]]
                if gap <= policies.LEADER_LOOKAHEAD:
                    return body.speed, max(gap, -1.0)
                return None, None
            ahead += sim.net.lanes[cur].length - cur_s
            idx += 1
            if idx >= len(tv.route):
                return None, None
            cur = tv.route[idx]
            cur_s = 0.0
        return None, None

    def _frozen(self, sim, tv):
        if not self.trigger_mode:
            return False
        bid = tv.home_block
        if bid in self._armed:
            return False
        x0, y0, x1, y1 = self._zones[bid]
        for p in sim.agent_positions():
            if x0 <= p[0] <= x1 and y0 <= p[1] <= y1:
                self._armed.add(bid)
                return False
        return True

    def policy_actions(self, sim):
        out = {}
        table = self._route_gap_table(sim)
        for vid in sorted(self.fleet):
            tv = self.fleet[vid]
            if self._frozen(sim, tv):
                out[vid] = Action(0.0, -1.0)
                continue
            state = sim.vehicles[vid]
            lane, s, l = self._localize(sim, tv)
            lead_speed, gap = self._leader(sim, tv, lane, s, table)
            out[vid] = policies.lane_follow_action(
                state, lane, s, l, tv.idm, lead_speed, gap)
        return out

    def post_physics(self, sim):
        anchors = sim.agent_positions()
        doomed = []
        for vid, tv in self.fleet.items():
            state = sim.vehicles[vid]
            lane, s, _ = self._localize(sim, tv)
            route_done = tv.idx == len(tv.route) - 1 and s >= lane.length - 0.5
            far = anchors and all(
                np.hypot(*(state.position - p)) > RECYCLE_RADIUS
                for p in anchors)
            if route_done or far:
                doomed.append(vid)
        for vid in doomed:
            sim.remove_vehicle(vid)
            del self.fleet[vid]
            self._spawn_one(sim)

    def get_state(self):
        return {"fleet_size": len(self.fleet), "spawned": self._spawned}


class ReplayTrafficManager(Manager):
    """Traffic whose poses come verbatim from recorded tracks."""

    def __init__(self, tracks):
        self.tracks = dict(tracks)

    def reset(self, sim):
        for vid in list(self.tracks):
            self._apply(sim, vid, sim.time)

    def _apply(self, sim, vid, t):
        pose = self.tracks[vid].replay_step(t)
        if pose is None:
            sim.remove_vehicle(vid)
            return
        x, y, h, v = pose
        if vid in sim.vehicles:
            state = sim.vehicles[vid]
            state.position = np.array([x, y])
            state.heading = h
            state.speed = v
        else:
            sim.vehicles[vid] = VehicleState(
                position=np.array([x, y]), heading=h, speed=v,
                body_class="traffic")

    def post_physics(self, sim):
        for vid in list(self.tracks):
            self._apply(sim, vid, sim.time + DECISION_DT)


# ---------------------------------------------------------------------------
# Static objects and gates
# ---------------------------------------------------------------------------


class ObjectManager(Manager):
    """Scatters static obstacles on lanes, away from agent spawn areas."""

    KINDS = ("cone", "barrier", "broken_vehicle")

    def __init__(self, count=0):
        self.count = count

    def reset(self, sim):
        placed = 0
        lanes = sorted(sim.net.lanes)
        tries = 0
        while placed < self.count and tries < 50 * max(self.count, 1):
            tries += 1
            lid = lanes[int(sim.rng.integers(len(lanes)))]
            ln = sim.net.lanes[lid]
            s = float(sim.rng.uniform(0.0, ln.length))
            l = float(sim.rng.uniform(-ln.width / 3.0, ln.width / 3.0))
            x, y, h = ln.point_at(s, l)
            if not sim.free_of_bodies((x, y)):
                continue
            kind = self.KINDS[int(sim.rng.integers(len(self.KINDS)))]
            sim.obstacles[f"obj{placed}"] = ObstacleBody(
                kind, np.array([x, y]), h)
            placed += 1


class TollgateManager(Manager):
    """Halt-to-proceed zones on a chosen block; exposes per-agent gate state.

    ``extra_obs(vid)`` returns two channels: inside-zone flag and halt
    progress in [0, 1].
    """

    def __init__(self, block_index=-1, zone_length=20.0):
        self.block_index = block_index
        self.zone_length = zone_length
        self.timers = {}
        self._zone = None

    def reset(self, sim):
        self.timers = {}
        block = sim.net.blocks[self.block_index]
        pts = np.vstack([poly for ln in block.lanes.values()
                         for poly in ln.boundary_polylines()])
        self._zone = (pts[:, 0].min(), pts[:, 1].min(),
                      pts[:, 0].max(), pts[:, 1].max())

    def in_zone(self, position):
        x0, y0, x1, y1 = self._zone
        return x0 <= position[0] <= x1 and y0 <= position[1] <= y1

    def post_physics(self, sim):
        agents = sim._managers.get("agents")
        if agents is None:
            return
        for vid in agents.active_ids():
            state = sim.vehicles.get(vid)
            if state is None:
                continue
            timer = self.timers.setdefault(vid, policies.GateTimer())
            if self.in_zone(state.position):
                timer.update(state.speed, DECISION_DT)

    def passed(self, vid):
        t = self.timers.get(vid)
        return bool(t and t.released)

    def extra_obs(self, sim, vid):
        state = sim.vehicles.get(vid)
        inside = 1.0 if state is not None and self.in_zone(state.position) else 0.0
        t = self.timers.get(vid)
        progress = 1.0 if t and t.released else (
            min(1.0, t.elapsed / policies.HALT_DURATION) if t else 0.0)
        return np.array([inside, progress])
