"""Command-line entry points and the teleoperation streaming server.

Subcommands:

* ``generate``  — write procedurally generated scenario documents to disk.
* ``rollout``   — run scripted policies over episodes and print metrics.
* ``benchmark`` — measure headless steps/second with a per-phase breakdown.
* ``serve``     — stream frames to, and accept controls from, a web client.

The serve protocol exchanges JSON text messages over one websocket
(``/session``); message names: ``frame``, ``control``, ``reset``,
``record_start``, ``record_stop``, ``record``, ``error``.  The static road
geometry is fetched once from ``GET /map``.  See ``docs/protocol.md``.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import procgen, scenario_io
from .dynamics import Action, clamp_action
from .env import (
    NAMED_CONFIGS,
    DrivingEnv,
    ScenarioConfig,
    make_named_env,
    rule_follower_policy,
)

DEFAULT_PORT = 8700
FRAME_PERIOD = 0.1  # s, decision rate of the live session loop

# Workloads the benchmark command can run, by name.  Named environment
# configurations (PGMap, Roundabout, ...) are accepted as well.
BENCHMARK_CONFIGS = {
    # single ego plus a fixed 10-vehicle rule-based fleet
    "single_idm10": ScenarioConfig(
        name="single_idm10", block_count=3, map_count=1, traffic_count=10),
    # 40 externally driven agents on a procedurally generated map
    "marl40": ScenarioConfig(
        name="marl40", block_sequence=("Straight", "Roundabout", "Straight"),
        num_lanes=3, num_agents=40, horizon=1000),
}


def _resolve_seed(seed):
    """Environment variable DRIVESIM_SEED beats the command-line value."""
    override = os.environ.get("DRIVESIM_SEED")
    return int(override) if override else seed


def _fail(msg, code=1):
    print(f"error: {msg}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(n, tries, count, seed, out_dir):
    """Write ``count`` scenario documents plus a digest manifest.

    Returns a process exit code.
    """
    if n <= 0:
        return _fail("--n must be a positive block count", 2)
    if count <= 0:
        return _fail("--count must be positive", 2)
    seed = _resolve_seed(seed)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        return _fail(f"output directory not writable: {exc}")
    cfg = procgen.PGConfig(block_count=n, map_count=count, seed=seed,
                           max_tries=tries)
    nets = procgen.generate_maps(cfg)
    digests = {}
    width = max(4, len(str(count - 1)))
    for i, net in enumerate(nets):
        doc = scenario_io.export_scenario(
            net, metadata={"generator": "pg", "blocks": n, "seed": seed,
                           "index": i})
        name = f"map_{i:0{width}d}.json"
        scenario_io.save_scenario_file(doc, out / name)
        digests[name] = scenario_io.map_hash(net)
    (out / "digests.json").write_text(
        json.dumps(digests, indent=2, sort_keys=True) + "\n")
    print(f"wrote {count} scenario documents to {out}")
    return 0


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------

def _build_env(name):
    if name in NAMED_CONFIGS:
        return make_named_env(name)
    raise KeyError(f"unknown environment {name!r}, "
                   f"choose from {sorted(NAMED_CONFIGS)}")


def cmd_rollout(env_name, policy_name, episodes, seed, demo_path=None,
                block_sequence=None, out=None):
    """Run a scripted policy; print one episode record per line + a summary."""
    out = out or sys.stdout
    seed = _resolve_seed(seed)
    if policy_name == "replay":
        if not demo_path:
            return _fail("policy 'replay' requires --demo FILE", 2)
        record = scenario_io.DemoRecord.load(demo_path)
        if "config" in record.header:
            env = DrivingEnv(ScenarioConfig.from_dict(record.header["config"]))
        else:
            env = _build_env(record.header.get("env", env_name))
        report = replay = scenario_io.replay_demo(env, record)
        last = record.steps[-1] if record.steps else {}
        line = {"episode": 0, "seed": record.header.get("seed"),
                "reason": last.get("reason", "none"),
                "reward": round(sum(s["reward"] for s in record.steps), 9),
                "cost": round(sum(s["cost"] for s in record.steps), 9),
                "steps": len(record.steps)}
        print(json.dumps(line), file=out)
        print(json.dumps({"episodes": 1,
                          "diverged": replay["diverged"],
                          "first_divergence_step":
                              replay["first_divergence_step"],
                          "checked_steps": replay["checked_steps"]}),
              file=out)
        return 1 if report["diverged"] else 0

    if policy_name == "zero":
        policy = lambda obs, env, vid: Action(0.0, 0.0)  # noqa: E731
    elif policy_name == "idm":
        policy = rule_follower_policy()
    else:
        return _fail(f"unknown policy {policy_name!r}; "
                     "choose from idm, zero, replay", 2)

    if block_sequence:
        env = DrivingEnv(ScenarioConfig(
            name=env_name, block_sequence=tuple(block_sequence),
            map_count=episodes))
    else:
        env = _build_env(env_name)
    if env.config.num_agents > 1:
        return _fail("rollout drives a single ego; "
                     f"{env_name!r} is a multi-agent environment", 2)
    totals = {"episodes": 0, "successes": 0, "crashes": 0, "out_of_road": 0,
              "horizon_hits": 0, "reward": 0.0, "cost": 0.0}
    for ep in range(episodes):
        obs = env.reset(seed + ep)
        ep_reward = ep_cost = 0.0
        reason = "horizon"
        steps = 0
        for _ in range(env.config.horizon + 1):
            vid = env.ego_id
            outcome = env.step({vid: policy(obs[vid], env, vid)})[vid]
            obs = {vid: outcome.observation}
            ep_reward += outcome.reward
            ep_cost += outcome.cost
            steps += 1
            if outcome.terminated:
                reason = outcome.reason
                break
        totals["episodes"] += 1
        totals["reward"] += ep_reward
        totals["cost"] += ep_cost
        key = {"success": "successes", "crash_vehicle": "crashes",
               "crash_object": "crashes",
               "out_of_road": "out_of_road"}.get(reason, "horizon_hits")
        totals[key] += 1
        print(json.dumps({"episode": ep, "seed": seed + ep, "reason": reason,
                          "reward": round(ep_reward, 6),
                          "cost": round(ep_cost, 6), "steps": steps}),
              file=out)
    totals["success_rate"] = totals["successes"] / max(1, totals["episodes"])
    print(json.dumps(totals), file=out)
    return 0


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def _benchmark_env(config_name):
    if config_name in BENCHMARK_CONFIGS:
        return DrivingEnv(BENCHMARK_CONFIGS[config_name])
    return _build_env(config_name)


def cmd_benchmark(config_name, steps, out=None):
    """Run the headless stepping loop and report steps/s + phase breakdown."""
    out = out or sys.stdout
    if steps <= 0:
        return _fail("--steps must be positive", 2)
    env = _benchmark_env(config_name)
    single = env.config.num_agents == 1
    policy = rule_follower_policy() if single else None
    phase_totals = dict.fromkeys(
        ("policy", "physics", "collision", "post", "sensing"), 0)

    def flush_phases():
        for k, v in env.sim.phase_ns.items():
            phase_totals[k] += v

    seed = _resolve_seed(0)
    obs = env.reset(seed)
    done = 0
    start = time.perf_counter()
    while done < steps:
        if single:
            vid = env.ego_id
            outcome = env.step({vid: policy(obs[vid], env, vid)})[vid]
            obs = {vid: outcome.observation}
            if outcome.terminated:
                flush_phases()
                seed += 1
                obs = env.reset(seed)
        else:
            acts = {vid: Action(0.0, 0.5)
                    for vid in env.agents.active_ids()}
            outcomes = env.step(acts)
            if all(o.terminated for o in outcomes.values()):
                flush_phases()
                seed += 1
                env.reset(seed)
        done += 1
    elapsed = time.perf_counter() - start
    flush_phases()
    tracked = sum(phase_totals.values()) / 1e9
    report = {
        "config": config_name,
        "steps": done,
        "elapsed_s": round(elapsed, 3),
        "steps_per_s": round(done / elapsed, 2),
        "phase_ms_per_step": {
            **{k: round(v / done / 1e6, 4) for k, v in phase_totals.items()},
            "streaming": 0.0,
            "other": round(max(0.0, elapsed - tracked) / done * 1e3, 4),
        },
    }
    print(json.dumps(report, indent=2), file=out)
    return 0


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

def map_document(net):
    """Static geometry for the client: per-lane boundary polylines."""
    lanes = []
    pts = []
    for lid in sorted(net.lanes):
        ln = net.lanes[lid]
        left, right = ln.boundary_polylines()
        lanes.append({
            "id": lid,
            "left": np.round(left, 3).tolist(),
            "right": np.round(right, 3).tolist(),
            "line_types": list(ln.line_types),
        })
        pts.append(left)
        pts.append(right)
    allp = np.vstack(pts)
    return {"lanes": lanes,
            "bounds": [np.round(allp.min(axis=0), 3).tolist(),
                       np.round(allp.max(axis=0), 3).tolist()]}


class ServerSession:
    """State machine shared by the lockstep and real-time session loops."""

    def __init__(self, env, seed=0, record_dir="."):
        self.env = env
        self.seed = seed
        self.record_dir = Path(record_dir)
        self.held = Action(0.0, 0.0)
        self.last_outcome = None
        self.awaiting_reset = True
        self.record = None
        self.record_count = 0
        self.started = False

    # -- lifecycle ---------------------------------------------------------

    def ensure_started(self):
        """First connect resets; reconnects resume the paused episode."""
        if not self.started:
            self.reset(self.seed)
        return self.frame()

    def reset(self, seed=None):
        if seed is not None:
            self.seed = int(seed)
        self.record = None
        self.env.reset(self.seed)
        self.held = Action(0.0, 0.0)
        self.last_outcome = None
        self.awaiting_reset = False
        self.started = True

    def step_once(self):
        """Advance one decision step with the held action.

        Returns the messages to emit (always ends with a frame).
        """
        if self.awaiting_reset:
            return [{"type": "error",
                     "message": "episode over; send reset"}]
        ego = self.env.ego_id
        acts = {vid: Action(0.0, 0.0) for vid in self.env.agents.active_ids()}
        acts[ego] = self.held
        outcome = self.env.step(acts)[ego]
        self.last_outcome = outcome
        extra = []
        if self.record is not None:
            self.record.append_step(
                (self.held.steering, self.held.throttle_brake),
                outcome.reward, outcome.cost, outcome.terminated,
                outcome.reason, outcome.observation)
        if outcome.terminated:
            self.awaiting_reset = True
            if self.record is not None:
                extra.append(self._finish_recording())
        return extra + [self.frame()]

    # -- recording ---------------------------------------------------------

    def start_recording(self, seed=None):
        """Recording restarts the episode so the capture replays from reset."""
        self.reset(self.seed if seed is None else seed)
        self.record = scenario_io.DemoRecord(
            {"seed": int(self.seed), "env": self.env.config.name,
             "config": self.env.config.to_dict()})
        return [self.frame()]

    def _finish_recording(self):
        self.record_dir.mkdir(parents=True, exist_ok=True)
        path = self.record_dir / f"session_{self.record_count:04d}.jsonl"
        self.record_count += 1
        self.record.save(path)
        self.record = None
        return {"type": "record", "active": False, "path": str(path)}

    def stop_recording(self):
        if self.record is None:
            return [{"type": "record", "active": False, "path": None}]
        return [self._finish_recording()]

    # -- messages ----------------------------------------------------------

    def frame(self):
        sim = self.env.sim
        agent_ids = set(self.env.agents.active_ids())
        bodies = []
        for vid in sorted(sim.vehicles):
            v = sim.vehicles[vid]
            bodies.append({
                "id": vid,
                "cls": "agent" if vid in agent_ids else "traffic",
                "x": round(float(v.position[0]), 3),
                "y": round(float(v.position[1]), 3),
                "heading": round(float(v.heading), 4),
                "speed": round(float(v.speed), 3),
                "length": v.length, "width": v.width,
            })
        for oid in sorted(sim.obstacles):
            ob = sim.obstacles[oid]
            bodies.append({
                "id": oid, "cls": f"object:{ob.kind}",
                "x": round(float(ob.position[0]), 3),
                "y": round(float(ob.position[1]), 3),
                "heading": round(float(ob.heading), 4),
                "speed": 0.0, "length": ob.length, "width": ob.width,
            })
        ego = self.env.ego_id
        checkpoints = []
        if ego is not None:
            tracker = self.env.agents.agents[ego].tracker
            nxt = tracker.checkpoints[tracker.next_checkpoint:
                                      tracker.next_checkpoint + 3]
            checkpoints = [np.round(cp, 3).tolist() for cp in nxt]
        o = self.last_outcome
        outcome = {"reward": 0.0, "cost": 0.0, "reason": "none",
                   "terminated": False}
        if o is not None:
            outcome = {"reward": round(o.reward, 9), "cost": o.cost,
                       "reason": o.reason, "terminated": o.terminated}
        return {
            "type": "frame",
            "step": sim.step_count,
            "time": round(sim.time, 6),
            "ego": ego,
            "bodies": bodies,
            "checkpoints": checkpoints,
            "outcome": outcome,
            "recording": self.record is not None,
            "applied_action": [self.held.steering, self.held.throttle_brake],
            "episode_over": self.awaiting_reset,
        }

    def handle(self, raw, stepping):
        """Process one inbound text message.

        ``stepping=True`` (lockstep mode) advances the world on every control
        message; in real-time mode controls only update the held action and
        the paced loop does the stepping.  Returns messages to emit.
        """
        try:
            msg = json.loads(raw)
            if not isinstance(msg, dict):
                raise ValueError("message must be an object")
            mtype = msg.get("type")
        except ValueError as exc:
            return [{"type": "error", "message": f"malformed message: {exc}"}]
        if mtype == "control":
            try:
                steering = float(msg["steering"])
                throttle = float(msg["throttle_brake"])
            except (KeyError, TypeError, ValueError):
                return [{"type": "error",
                         "message": "control requires numeric steering "
                                    "and throttle_brake"}]
            self.held = clamp_action((steering, throttle))
            return self.step_once() if stepping else []
        if mtype == "reset":
            self.reset(msg.get("seed"))
            return [self.frame()]
        if mtype == "record_start":
            return self.start_recording(msg.get("seed"))
        if mtype == "record_stop":
            return self.stop_recording()
        if mtype == "step" and stepping:
            return self.step_once()
        return [{"type": "error", "message": f"unknown message type {mtype!r}"}]


def create_app(config_name="PGMap", seed=0, lockstep=False, record_dir=".",
               ui_dir=None):
    """Build the streaming server application.

    ``lockstep=True`` disables real-time pacing: the world advances exactly
    once per inbound control (or ``step``) message, which makes session
    behavior fully deterministic for tests.
    """
    env = _build_env(config_name)
    session = ServerSession(env, seed=_resolve_seed(seed),
                            record_dir=record_dir)
    app = FastAPI(title="drivesim teleoperation server")
    app.state.session = session
    app.state.busy = False

    @app.get("/map")
    def get_map():
        session.ensure_started()
        return map_document(env.sim.net)

    @app.get("/info")
    def get_info():
        return {"config": config_name, "horizon": env.config.horizon,
                "frame_period_s": FRAME_PERIOD, "lockstep": lockstep}

    async def _send(ws, messages):
        for m in messages:
            await ws.send_text(json.dumps(m))

    async def _lockstep_loop(ws):
        await _send(ws, [session.ensure_started()])
        while True:
            raw = await ws.receive_text()
            await _send(ws, session.handle(raw, stepping=True))

    async def _realtime_loop(ws):
        await _send(ws, [session.ensure_started()])
        inbox: asyncio.Queue = asyncio.Queue()

        async def receiver():
            while True:
                inbox.put_nowait(await ws.receive_text())

        recv_task = asyncio.create_task(receiver())
        try:
            next_t = time.monotonic() + FRAME_PERIOD
            while True:
                while not inbox.empty():
                    await _send(ws, session.handle(inbox.get_nowait(),
                                                   stepping=False))
                if not session.awaiting_reset:
                    await _send(ws, session.step_once())
                if recv_task.done():
                    recv_task.result()  # surface the disconnect
                await asyncio.sleep(max(0.0, next_t - time.monotonic()))
                next_t += FRAME_PERIOD
        finally:
            recv_task.cancel()

    @app.websocket("/session")
    async def ws_session(ws: WebSocket):
        await ws.accept()
        if app.state.busy:
            await _send(ws, [{"type": "error",
                              "message": "a session is already active"}])
            await ws.close()
            return
        app.state.busy = True
        try:
            if lockstep:
                await _lockstep_loop(ws)
            else:
                await _realtime_loop(ws)
        except WebSocketDisconnect:
            pass  # episode stays paused; a reconnect resumes it
        finally:
            app.state.busy = False

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def cmd_serve(config_name, port, seed, record_dir, ui_dir=None):
    import uvicorn

    app = create_app(config_name, seed=seed, record_dir=record_dir,
                     ui_dir=ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="drivesim",
        description="Procedural driving simulator command-line interface.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write scenario documents")
    g.add_argument("--n", type=int, default=3, help="blocks per map")
    g.add_argument("--tries", type=int, default=40,
                   help="max docking attempts per block")
    g.add_argument("--count", type=int, default=1, help="number of maps")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="maps", help="output directory")

    r = sub.add_parser("rollout", help="run scripted policies")
    r.add_argument("--env", default="PGMap",
                   help=f"named environment: {sorted(NAMED_CONFIGS)}")
    r.add_argument("--policy", default="idm",
                   help="one of idm, zero, replay")
    r.add_argument("--episodes", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--demo", default=None,
                   help="demo record file for --policy replay")
    r.add_argument("--blocks", default=None,
                   help="comma-separated block sequence overriding --env")

    b = sub.add_parser("benchmark", help="measure steps/second")
    b.add_argument("--config", default="single_idm10",
                   help=f"workload: {sorted(BENCHMARK_CONFIGS)} "
                        "or a named environment")
    b.add_argument("--steps", type=int, default=10_000)

    s = sub.add_parser("serve", help="run the teleoperation server")
    s.add_argument("--config", default="PGMap")
    s.add_argument("--port", type=int, default=DEFAULT_PORT)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--record-dir", default="demos")
    s.add_argument("--ui", default=None,
                   help="directory with the built web client to host at /")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "generate":
        return cmd_generate(args.n, args.tries, args.count, args.seed,
                            args.out)
    if args.command == "rollout":
        blocks = args.blocks.split(",") if args.blocks else None
        return cmd_rollout(args.env, args.policy, args.episodes, args.seed,
                           demo_path=args.demo, block_sequence=blocks)
    if args.command == "benchmark":
        return cmd_benchmark(args.config, args.steps)
    if args.command == "serve":
        return cmd_serve(args.config, args.port, args.seed, args.record_dir,
                         ui_dir=args.ui)
    return 2


if __name__ == "__main__":
    sys.exit(main())
