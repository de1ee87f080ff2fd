"""Episodic driving environments over the simulation engine.

A :class:`DrivingEnv` wraps a :class:`~drivesim.engine.Simulation`, adds the
reward/cost/termination contract, and exposes the dict-in / dict-out step
interface used by training code, the CLI, and the teleoperation server.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import engine, procgen, sensing
from .dynamics import Action, VehicleParams, clamp_action
from .policies import IdmParams, lane_follow_action
from .sensing import LidarConfig

OUT_OF_ROAD_MARGIN = 0.5  # m beyond the outer lane boundary

TERMINAL_SUCCESS = "success"
TERMINAL_CRASH_VEHICLE = "crash_vehicle"
TERMINAL_CRASH_OBJECT = "crash_object"
TERMINAL_OUT_OF_ROAD = "out_of_road"
TERMINAL_HORIZON = "horizon"
NON_TERMINAL = "none"


@dataclass
class ScenarioConfig:
    name: str = "PGMap"
    # map source: either procedural generation or an imported network
    map_count: int = 1
    block_count: int = 3
    map_seed: int = 0
    num_lanes: int = 2
    lane_width: float = 3.5
    block_sequence: tuple = ()
    imported_net: object = None
    replay_tracks: dict = field(default_factory=dict)
    # population
    num_agents: int = 1
    traffic_density: float = 0.0
    traffic_count: int = None  # fixed fleet size overriding the density rule
    trigger_mode: bool = False
    object_count: int = 0
    tollgate: bool = False
    # episode contract
    horizon: int = 1500
    safe_mode: bool = False
    driving_reward: float = 1.0
    speed_reward: float = 0.1
    success_reward: float = 10.0
    failure_penalty: float = 5.0
    v_max: float = 80.0 / 3.6
    allow_reverse: bool = False
    lidar: LidarConfig = field(default_factory=LidarConfig)

    def observation_dim(self):
        extra = 2 if self.tollgate else 0
        return sensing.observation_dim(self.lidar, extra)

    def to_dict(self):
        """JSON-serializable view (imported networks and replay tracks are
        runtime objects and are omitted)."""
        d = {}
        for f in fields(ScenarioConfig):
            if f.name in ("imported_net", "replay_tracks"):
                continue
            v = getattr(self, f.name)
            if f.name == "lidar":
                v = {"num_rays": v.num_rays, "max_range": v.max_range,
                     "include_boundaries": v.include_boundaries,
                     "noise_amplitude": v.noise_amplitude}
            elif f.name == "block_sequence":
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        lidar = d.pop("lidar", None)
        d["block_sequence"] = tuple(d.get("block_sequence", ()))
        cfg = cls(**d)
        if lidar is not None:
            cfg = replace(cfg, lidar=LidarConfig(**lidar))
        return cfg


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    cost: float
    terminated: bool
    reason: str
    info: dict = field(default_factory=dict)


@dataclass
class Metrics:
    episodes: int = 0
    successes: int = 0
    crashes: int = 0
    out_of_road: int = 0
    horizon_hits: int = 0
    total_reward: float = 0.0
    total_cost: float = 0.0

    @property
    def success_rate(self):
        return self.successes / self.episodes if self.episodes else 0.0

    def as_dict(self):
        return {
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "successes": self.successes,
            "crashes": self.crashes,
            "out_of_road": self.out_of_road,
            "horizon_hits": self.horizon_hits,
            "mean_reward": self.total_reward / max(self.episodes, 1),
            "mean_cost": self.total_cost / max(self.episodes, 1),
        }


class EpisodeOverError(RuntimeError):
    pass


class DrivingEnv:
    def __init__(self, config: ScenarioConfig = None):
        self.config = config or ScenarioConfig()
        c = self.config
        self.sim = engine.Simulation()
        if c.imported_net is not None:
            maps = [c.imported_net]
        else:
            seq = list(c.block_sequence)
            maps = procgen.generate_maps(procgen.PGConfig(
                block_count=len(seq) if seq else c.block_count,
                map_count=c.map_count, seed=c.map_seed,
                num_lanes=c.num_lanes, lane_width=c.lane_width,
                sequence=seq or None,
                type="block_sequence" if seq else "block_num",
            ))
        self.sim.register_manager("map", engine.MapManager(maps))
        params = VehicleParams(allow_reverse=c.allow_reverse)
        self.sim.register_manager(
            "agents", engine.AgentManager(num_agents=c.num_agents,
                                          params=params))
        if c.replay_tracks:
            self.sim.register_manager(
                "traffic", engine.ReplayTrafficManager(c.replay_tracks))
        elif c.traffic_density > 0 or c.traffic_count:
            self.sim.register_manager(
                "traffic", engine.IdmTrafficManager(
                    density=c.traffic_density, trigger_mode=c.trigger_mode,
                    count=c.traffic_count))
        if c.object_count > 0:
            self.sim.register_manager(
                "objects", engine.ObjectManager(c.object_count))
        if c.tollgate:
            self.sim.register_manager("tollgate", engine.TollgateManager())
        self._progress = {}
        self._done = {}
        self._episode_over = True

    # -- helpers -----------------------------------------------------------

    @property
    def agents(self):
        return self.sim.manager("agents")

    @property
    def ego_id(self):
        ids = self.agents.active_ids()
        return ids[0] if ids else None

    def _observe(self, vid, scene=None, scan=None):
        c = self.config
        state = self.sim.vehicles[vid]
        tracker = self.agents.agents[vid].tracker
        extra = None
        if c.tollgate:
            extra = self.sim.manager("tollgate").extra_obs(self.sim, vid)
        if scene is None and scan is None:
            scene = sensing.scene_segments(self.sim.bodies,
                                           self.sim.static_segments)
        return sensing.assemble_observation(
            state, self.sim.net, tracker, None, None,
            c.lidar, c.v_max, extra=extra, scene=scene, ego_key=vid,
            scan=scan)

    def _batch_scans(self, scene, vids):
        states = [(self.sim.vehicles[v].position,
                   self.sim.vehicles[v].heading) for v in vids]
        return sensing.scan_batch(states, vids, scene, self.config.lidar)

    def observe(self):
        scene = sensing.scene_segments(self.sim.bodies,
                                       self.sim.static_segments)
        vids = self.agents.active_ids()
        scans = self._batch_scans(scene, vids)
        return {vid: self._observe(vid, scene, scan=scans[i])
                for i, vid in enumerate(vids)}

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed=0):
        self.sim.reset(seed)
        self._progress = {vid: self.agents.agents[vid].tracker.progress
                          for vid in self.agents.active_ids()}
        self._done = {}
        self._episode_over = False
        return self.observe()

    def _classify(self, vid):
        """Step outcome class for one agent, before reward shaping."""
        c = self.config
        sim = self.sim
        tracker = self.agents.agents[vid].tracker
        contacts = {"vehicle": 0, "object": 0, "road": 0}
        for pair in sim.collisions:
            if vid not in pair:
                continue
            (other,) = set(pair) - {vid}
            if other in sim.obstacles:
                contacts["object"] += 1
            else:
                contacts["vehicle"] += 1
        lane_id, s, l = tracker.last_fix
        left, right = sensing.road_half_widths(sim.net, lane_id)
        off = tracker.off_route or l > left + OUT_OF_ROAD_MARGIN \
            or -l > right + OUT_OF_ROAD_MARGIN
        if off:
            contacts["road"] = 1
        arrived = tracker.arrived
        if arrived and c.tollgate:
            arrived = sim.manager("tollgate").passed(vid)
        if arrived:
            return TERMINAL_SUCCESS, contacts
        if contacts["vehicle"] and not c.safe_mode:
            return TERMINAL_CRASH_VEHICLE, contacts
        if contacts["object"] and not c.safe_mode:
            return TERMINAL_CRASH_OBJECT, contacts
        if off:
            return TERMINAL_OUT_OF_ROAD, contacts
        if sim.step_count >= c.horizon:
            return TERMINAL_HORIZON, contacts
        return NON_TERMINAL, contacts

    def compute_reward(self, vid, reason):
        """Dense shaping plus terminal bonus/penalty.

        Non-terminal: forward progress along the route plus a speed
        fraction.  Terminal steps carry only the terminal term.
        """
        c = self.config
        if reason == TERMINAL_SUCCESS:
            return c.success_reward
        if reason in (TERMINAL_CRASH_VEHICLE, TERMINAL_CRASH_OBJECT,
                      TERMINAL_OUT_OF_ROAD):
            return -c.failure_penalty
        if reason == TERMINAL_HORIZON:
            return 0.0
        tracker = self.agents.agents[vid].tracker
        d_now = tracker.progress
        d_prev = self._progress.get(vid, d_now)
        speed = self.sim.vehicles[vid].speed
        return (c.driving_reward * (d_now - d_prev)
                + c.speed_reward * speed / c.v_max)

    def step(self, actions):
        if self._episode_over:
            raise EpisodeOverError("call reset() before stepping again")
        acts = {vid: a if isinstance(a, Action) else clamp_action(a)
                for vid, a in (actions or {}).items()}
        self.sim.step(acts)
        t0 = time.perf_counter_ns()
        scene = sensing.scene_segments(self.sim.bodies,
                                       self.sim.static_segments)
        vids = list(self.agents.active_ids())
        scans = self._batch_scans(scene, vids)
        self.sim.phase_ns["sensing"] += time.perf_counter_ns() - t0
        outcomes = {}
        for i, vid in enumerate(vids):
            reason, contacts = self._classify(vid)
            terminated = reason != NON_TERMINAL
            reward = self.compute_reward(vid, reason)
            cost = float(contacts["vehicle"] + contacts["object"]
                         + contacts["road"])
            t0 = time.perf_counter_ns()
            obs = self._observe(vid, scene, scan=scans[i])
            self.sim.phase_ns["sensing"] += time.perf_counter_ns() - t0
            info = {"contacts": contacts,
                    "progress": self.agents.agents[vid].tracker.progress}
            outcomes[vid] = StepOutcome(obs, reward, cost, terminated,
                                        reason, info)
            self._progress[vid] = info["progress"]
            if terminated:
                if self.config.num_agents > 1:
                    new_id = self.agents.retire_agent(self.sim, vid,
                                                      respawn=True)
                    tr = self.agents.agents[new_id].tracker
                    self._progress[new_id] = tr.progress
                    outcomes[vid].info["respawned_as"] = new_id
                else:
                    self._episode_over = True
        return outcomes

    # -- evaluation --------------------------------------------------------

    def evaluate(self, policy, episodes=10, seed0=0, max_steps=None):
        """Run a scripted policy (obs, env, agent_id) -> action over several
        episodes and aggregate outcome counts."""
        m = Metrics()
        limit = max_steps or self.config.horizon + 1
        for ep in range(episodes):
            obs = self.reset(seed0 + ep)
            ep_reward = 0.0
            ep_cost = 0.0
            for _ in range(limit):
                vid = self.ego_id
                action = policy(obs[vid], self, vid)
                out = self.step({vid: action})[vid]
                obs = {vid: out.observation}
                ep_reward += out.reward
                ep_cost += out.cost
                if out.terminated:
                    if out.reason == TERMINAL_SUCCESS:
                        m.successes += 1
                    elif out.reason in (TERMINAL_CRASH_VEHICLE,
                                        TERMINAL_CRASH_OBJECT):
                        m.crashes += 1
                    elif out.reason == TERMINAL_OUT_OF_ROAD:
                        m.out_of_road += 1
                    else:
                        m.horizon_hits += 1
                    break
            m.episodes += 1
            m.total_reward += ep_reward
            m.total_cost += ep_cost
        return m


def rule_follower_policy(idm_params=None):
    """Lane-keeping + car-following controller usable as an ego policy."""
    idm = idm_params or IdmParams()

    def policy(obs, env: DrivingEnv, vid):
        sim = env.sim
        state = sim.vehicles[vid]
        tracker = env.agents.agents[vid].tracker
        lane_id, s, l = tracker.last_fix
        lane = sim.net.lanes[lane_id]
        # follow the planned route: aim at the next route lane near the end
        idx = tracker.lane_idx
        if s > lane.length - 1.0 and idx + 1 < len(tracker.lane_ids):
            lane = sim.net.lanes[tracker.lane_ids[idx + 1]]
            s, l = lane.local_coordinates(state.position)
            s = min(max(s, 0.0), lane.length)
        lead_speed, gap = _nearest_ahead(sim, vid, tracker)
        return lane_follow_action(state, lane, s, l, idm, lead_speed, gap)

    return policy


_BODY_CACHE = {}


def _body_arrays(sim):
    """Per-step snapshot of body ids, positions, half lengths, speeds."""
    key = (id(sim), sim.step_count, len(sim.vehicles), len(sim.obstacles))
    hit = _BODY_CACHE.get("snap")
    if hit is not None and hit[0] == key:
        return hit[1]
    bodies = sim.bodies
    ids = sorted(bodies)
    pos = np.array([bodies[o].position for o in ids]) if ids \
        else np.zeros((0, 2))
    half = np.array([bodies[o].length for o in ids]) / 2.0 if ids \
        else np.zeros(0)
    speed = np.array([bodies[o].speed for o in ids]) if ids else np.zeros(0)
    snap = (ids, pos, half, speed)
    _BODY_CACHE["snap"] = (key, snap)
    return snap


def _nearest_ahead(sim, vid, tracker, lookahead=40.0):
    """Closest body ahead of the agent within a corridor along its heading."""
    me = sim.vehicles[vid]
    ids, pos, half, speed = _body_arrays(sim)
    if len(ids) < 2:
        return (None, None)
    c, s = math.cos(me.heading), math.sin(me.heading)
    dx = pos[:, 0] - me.position[0]
    dy = pos[:, 1] - me.position[1]
    ahead = c * dx + s * dy
    lateral = np.abs(s * dx - c * dy)
    ok = (ahead > 0.0) & (ahead <= lookahead) & (lateral < 2.0)
    me_idx = ids.index(vid) if vid in ids else -1
    if me_idx >= 0:
        ok[me_idx] = False
    if not ok.any():
        return (None, None)
    gaps = np.where(ok, ahead - me.length / 2.0 - half, np.inf)
    k = int(np.argmin(gaps))
    return float(speed[k]), float(gaps[k])


# ---------------------------------------------------------------------------
# Named scenario suites
# ---------------------------------------------------------------------------


NAMED_CONFIGS = {
    "PGMap": ScenarioConfig(name="PGMap", block_count=3),
    "SingleAgentPG": ScenarioConfig(
        name="SingleAgentPG", block_count=3, traffic_density=0.1),
    "SafeExploration": ScenarioConfig(
        name="SafeExploration", block_count=3, traffic_density=0.1,
        object_count=6, safe_mode=True),
    "Roundabout": ScenarioConfig(
        name="Roundabout", block_sequence=("Straight", "Roundabout"),
        num_lanes=3, num_agents=40, horizon=1000),
    "Intersection": ScenarioConfig(
        name="Intersection", block_sequence=("Straight", "Intersection"),
        num_lanes=3, num_agents=30, horizon=1000),
    "Tollgate": ScenarioConfig(
        name="Tollgate", block_sequence=("Straight", "Straight", "Straight"),
        num_lanes=3, num_agents=40, horizon=1000, tollgate=True),
    "Bottleneck": ScenarioConfig(
        name="Bottleneck", block_sequence=("Straight", "Fork", "Straight"),
        num_lanes=3, num_agents=20, horizon=1000),
    "ParkingLot": ScenarioConfig(
        name="ParkingLot", block_sequence=("Straight", "TIntersection"),
        num_agents=10, horizon=1000, allow_reverse=True),
}


def make_named_env(name, **overrides):
    if name not in NAMED_CONFIGS:
        raise KeyError(f"unknown scenario {name!r}; "
                       f"choose from {sorted(NAMED_CONFIGS)}")
    cfg = replace(NAMED_CONFIGS[name], **overrides)
    if cfg.num_agents > 1:
        cfg = replace(cfg, lidar=LidarConfig(num_rays=72), horizon=1000)
    return DrivingEnv(cfg)


def make_replay_env(net, tracks, **overrides):
    """Environment over an imported map with recorded background traffic."""
    cfg = ScenarioConfig(name="RealReplay", imported_net=net,
                         replay_tracks=tracks, **overrides)
    return DrivingEnv(cfg)
