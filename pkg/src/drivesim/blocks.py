"""Builders for the seven road block types plus the initial spawn block.

Every builder lays the block out in a local frame with the entry anchor at
the origin and traffic flowing in +x, returning an undocked Block.  Lane
count is inherited from the socket the block will dock to, so only the
remaining shape parameters live in each type's parameter space.
"""

from __future__ import annotations

import math

import numpy as np

from .roadnet import (
    ArcLane,
    Block,
    PolylineLane,
    Socket,
    StraightLane,
    heading_vec,
    normal_vec,
    wrap_angle,
)

BLOCK_TYPES = (
    "Straight",
    "Ramp",
    "Fork",
    "Roundabout",
    "Curve",
    "TIntersection",
    "Intersection",
)

# Per-type parameter bounds; "choice" entries are sampled uniformly from the
# listed options, everything else uniformly from [low, high].
PARAM_SPACES = {
    "Straight": {"length": (40.0, 80.0)},
    "Curve": {
        "radius": (20.0, 50.0),
        "angle": (math.pi / 6.0, math.pi / 2.0),
        "turn": ("choice", (1, -1)),
    },
    "Ramp": {"length": (60.0, 90.0), "side": ("choice", ("enter", "exit"))},
    "Fork": {"length": (40.0, 60.0), "delta": ("choice", (1, -1))},
    "Roundabout": {"ring_radius": (12.0, 18.0), "gap": (8.0, 12.0)},
    "TIntersection": {"turn_radius": (6.0, 10.0)},
    "Intersection": {"turn_radius": (6.0, 10.0)},
    "FirstBlock": {},
}

MAX_LANES = 3
FIRST_BLOCK_LENGTH = 60.0


def lane_offsets(n, width):
    """Centerline lateral offsets, leftmost first."""
    return [((n - 1) / 2.0 - i) * width for i in range(n)]


def _edge_lines(i, n):
    left = "continuous" if i == 0 else "broken"
    right = "continuous" if i == n - 1 else "broken"
    return (left, right)


def _link_neighbors(lanes_in_order):
    for a, b in zip(lanes_in_order, lanes_in_order[1:]):
        a.right_neighbor = b.id
        b.left_neighbor = a.id


def _spawn_points(lanes, margin=8.0, spacing=10.0):
    pts = []
    for ln in lanes:
        s = spacing
        while s <= ln.length - margin:
            pts.append((ln.id, s))
            s += spacing
    return pts


def _bezier(p0, h0, p1, h1, chord=1.0):
    """Cubic Bezier polyline between two poses, tangent-aligned at both ends."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = float(np.hypot(*(p1 - p0)))
    k = d / 3.0
    c0 = p0 + k * heading_vec(h0)
    c1 = p1 - k * heading_vec(h1)
    n = max(8, int(math.ceil(1.5 * d / chord)))
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = (
        (1 - t) ** 3 * p0
        + 3 * (1 - t) ** 2 * t * c0
        + 3 * (1 - t) * t**2 * c1
        + t**3 * p1
    )
    return pts


# ---------------------------------------------------------------------------
# Simple road pieces
# ---------------------------------------------------------------------------


def build_first_block(bid, num_lanes, width, params=None):
    length = FIRST_BLOCK_LENGTH
    lanes = []
    for i, off in enumerate(lane_offsets(num_lanes, width)):
        lanes.append(
            StraightLane(f"{bid}.l{i}", (0.0, off), 0.0, length, width,
                         line_types=_edge_lines(i, num_lanes))
        )
    _link_neighbors(lanes)
    out = Socket((length, 0.0, 0.0), tuple((ln.id,) for ln in lanes), "out")
    return Block(
        id=bid,
        block_type="FirstBlock",
        lanes={ln.id: ln for ln in lanes},
        sockets=[out],
        spawn_points=_spawn_points(lanes),
        params={"length": length, "num_lanes": num_lanes},
        nodes=[f"{bid}.start", f"{bid}.end"],
    )


def build_straight(bid, num_lanes, width, params):
    length = params["length"]
    lanes = []
    for i, off in enumerate(lane_offsets(num_lanes, width)):
        lanes.append(
            StraightLane(f"{bid}.l{i}", (0.0, off), 0.0, length, width,
                         line_types=_edge_lines(i, num_lanes))
        )
    _link_neighbors(lanes)
    entry = Socket((0.0, 0.0, 0.0), tuple((ln.id,) for ln in lanes), "in")
    exit_ = Socket((length, 0.0, 0.0), tuple((ln.id,) for ln in lanes), "out")
    return Block(
        id=bid, block_type="Straight",
        lanes={ln.id: ln for ln in lanes},
        sockets=[entry, exit_],
        spawn_points=_spawn_points(lanes),
        params=dict(params),
        nodes=[f"{bid}.start", f"{bid}.end"],
    )


def build_curve(bid, num_lanes, width, params):
    radius, angle, turn = params["radius"], params["angle"], params["turn"]
    lanes = []
    for i, off in enumerate(lane_offsets(num_lanes, width)):
        r_i = radius - turn * off
        lanes.append(
            ArcLane(f"{bid}.l{i}", (0.0, off), 0.0, r_i, r_i * angle, turn, width,
                    line_types=_edge_lines(i, num_lanes))
        )
    _link_neighbors(lanes)
    center_end = ArcLane("tmp", (0.0, 0.0), 0.0, radius, radius * angle, turn, width)
    ex, ey, eh = center_end.end_pose()
    entry = Socket((0.0, 0.0, 0.0), tuple((ln.id,) for ln in lanes), "in")
    exit_ = Socket((ex, ey, wrap_angle(eh)), tuple((ln.id,) for ln in lanes), "out")
    return Block(
        id=bid, block_type="Curve",
        lanes={ln.id: ln for ln in lanes},
        sockets=[entry, exit_],
        spawn_points=_spawn_points(lanes),
        params=dict(params),
        nodes=[f"{bid}.start", f"{bid}.end"],
    )


def build_ramp(bid, num_lanes, width, params):
    """Main road with an acceleration (enter) or deceleration (exit) stub."""
    length, side = params["length"], params["side"]
    half = length / 2.0
    offs = lane_offsets(num_lanes, width)
    sec1, sec2 = [], []
    for i, off in enumerate(offs):
        a = StraightLane(f"{bid}.a{i}", (0.0, off), 0.0, half, width,
                         line_types=_edge_lines(i, num_lanes))
        b = StraightLane(f"{bid}.b{i}", (half, off), 0.0, half, width,
                         line_types=_edge_lines(i, num_lanes))
        a.successors.append(b.id)
        b.predecessors.append(a.id)
        sec1.append(a)
        sec2.append(b)
    _link_neighbors(sec1)
    _link_neighbors(sec2)
    right_off = offs[-1]
    stub_out = (half + 0.45 * length, right_off - 0.35 * length)
    if side == "exit":
        pts = _bezier((half, right_off), 0.0, stub_out, -math.pi / 5.0)
        stub = PolylineLane(f"{bid}.ramp", pts, width,
                            line_types=("broken", "continuous"))
        stub.predecessors.append(sec1[-1].id)
        sec1[-1].successors.append(stub.id)
    else:
        stub_in = (half - 0.45 * length, right_off - 0.35 * length)
        pts = _bezier(stub_in, math.pi / 5.0, (half, right_off), 0.0)
        stub = PolylineLane(f"{bid}.ramp", pts, width,
                            line_types=("broken", "continuous"))
        stub.successors.append(sec2[-1].id)
        sec2[-1].predecessors.append(stub.id)
    lanes = sec1 + sec2 + [stub]
    entry = Socket((0.0, 0.0, 0.0), tuple((ln.id,) for ln in sec1), "in")
    exit_ = Socket((length, 0.0, 0.0), tuple((ln.id,) for ln in sec2), "out")
    return Block(
        id=bid, block_type="Ramp",
        lanes={ln.id: ln for ln in lanes},
        sockets=[entry, exit_],
        spawn_points=_spawn_points(sec1 + sec2),
        params=dict(params),
        nodes=[f"{bid}.start", f"{bid}.mid", f"{bid}.end"],
    )


def build_fork(bid, num_lanes, width, params):
    """Lane-count change: delta = +1 splits off a new lane, -1 merges one."""
    length = params["length"]
    delta = params["delta"]
    if num_lanes <= 1:
        delta = 1
    elif num_lanes >= MAX_LANES:
        delta = -1
    m = num_lanes + delta
    offs_in = lane_offsets(num_lanes, width)
    offs_out = lane_offsets(m, width)
    through = min(num_lanes, m)
    main = []
    for i in range(through):
        pts = _bezier((0.0, offs_in[i]), 0.0, (length, offs_out[i]), 0.0)
        main.append(
            PolylineLane(f"{bid}.l{i}", pts, width,
                         line_types=_edge_lines(i, max(num_lanes, m)))
        )
    extra = []
    if delta > 0:
        # gained lane appears at half length, already at its final offset
        ln = StraightLane(f"{bid}.gain", (length / 2.0, offs_out[m - 1]), 0.0,
                          length / 2.0, width, line_types=("broken", "continuous"))
        extra.append(ln)
    else:
        # rightmost entry lane tapers onto its neighbor and ends
        pts = _bezier((0.0, offs_in[num_lanes - 1]), 0.0,
                      (length / 2.0, offs_out[m - 1]), 0.0)
        ln = PolylineLane(f"{bid}.merge", pts, width,
                          line_types=("broken", "continuous"))
        extra.append(ln)
    _link_neighbors(main + ([extra[0]] if delta > 0 else []))
    if delta < 0:
        main[-1].right_neighbor = extra[0].id
        extra[0].left_neighbor = main[-1].id
    entry_lanes = main + ([extra[0]] if delta < 0 else [])
    exit_lanes = main + ([extra[0]] if delta > 0 else [])
    lanes = main + extra
    entry = Socket((0.0, 0.0, 0.0), tuple((ln.id,) for ln in entry_lanes), "in")
    exit_ = Socket((length, 0.0, 0.0), tuple((ln.id,) for ln in exit_lanes), "out")
    return Block(
        id=bid, block_type="Fork",
        lanes={ln.id: ln for ln in lanes},
        sockets=[entry, exit_],
        spawn_points=_spawn_points(main),
        params={"length": length, "delta": delta},
        nodes=[f"{bid}.start", f"{bid}.end"],
    )


# ---------------------------------------------------------------------------
# Junctions
# ---------------------------------------------------------------------------


def _junction_exits(H, branches):
    """Anchor poses of junction exits; branches from {left, straight, right}."""
    poses = {
        "left": (H, H, math.pi / 2.0),
        "straight": (2.0 * H, 0.0, 0.0),
        "right": (H, -H, -math.pi / 2.0),
    }
    return {b: poses[b] for b in branches}


def _turn_connectors(bid, num_lanes, width, H, branches):
    """Analytic per-lane connectors from the entry to each exit branch."""
    offs = lane_offsets(num_lanes, width)
    fams = {b: [] for b in branches}
    for i, off in enumerate(offs):
        if "left" in branches:
            r = H - off
            fams["left"].append(
                ArcLane(f"{bid}.left{i}", (0.0, off), 0.0, r, r * math.pi / 2.0,
                        1, width, line_types=("none", "none"))
            )
        if "straight" in branches:
            fams["straight"].append(
                StraightLane(f"{bid}.str{i}", (0.0, off), 0.0, 2.0 * H, width,
                             line_types=("none", "none"))
            )
        if "right" in branches:
            r = H + off
            fams["right"].append(
                ArcLane(f"{bid}.right{i}", (0.0, off), 0.0, r, r * math.pi / 2.0,
                        -1, width, line_types=("none", "none"))
            )
    return fams


def _junction_block(bid, btype, num_lanes, width, H, branches, params,
                    connectors=None):
    fams = connectors if connectors is not None else _turn_connectors(
        bid, num_lanes, width, H, branches)
    for fam in fams.values():
        _link_neighbors(fam)
    lanes = [ln for fam in fams.values() for ln in fam]
    exits = _junction_exits(H, branches)
    entry_slots = tuple(
        tuple(fams[b][i].id for b in branches) for i in range(num_lanes)
    )
    sockets = [Socket((0.0, 0.0, 0.0), entry_slots, "in")]
    for b in branches:
        sockets.append(
            Socket(exits[b], tuple((ln.id,) for ln in fams[b]), "out")
        )
    return Block(
        id=bid, block_type=btype,
        lanes={ln.id: ln for ln in lanes},
        sockets=sockets,
        spawn_points=_spawn_points(lanes, margin=5.0, spacing=12.0),
        params=dict(params),
        nodes=[f"{bid}.center"] + [f"{bid}.{b}" for b in branches],
    )


def build_intersection(bid, num_lanes, width, params):
    H = num_lanes * width / 2.0 + params["turn_radius"] + 2.0
    return _junction_block(bid, "Intersection", num_lanes, width, H,
                           ("left", "straight", "right"), params)


def build_t_intersection(bid, num_lanes, width, params):
    H = num_lanes * width / 2.0 + params["turn_radius"] + 2.0
    return _junction_block(bid, "TIntersection", num_lanes, width, H,
                           ("left", "right"), params)


def build_roundabout(bid, num_lanes, width, params):
    """Circular junction: every path enters the ring at 225 degrees, runs
    counterclockwise, and departs 45 degrees before its exit direction."""
    ring = params["ring_radius"]
    H = ring + params["gap"] + num_lanes * width / 2.0
    C = np.array([H, 0.0])
    offs = lane_offsets(num_lanes, width)
    exits = _junction_exits(H, ("left", "straight", "right"))
    depart = {"right": math.radians(-115.0), "straight": math.radians(-45.0),
              "left": math.radians(45.0)}
    join = math.radians(-135.0)
    fams = {b: [] for b in ("left", "straight", "right")}
    for i, off in enumerate(offs):
        r = ring - off
        for b in ("left", "straight", "right"):
            a0, a1 = join, depart[b]
            ring_in = C + r * heading_vec(a0)
            ring_out = C + r * heading_vec(a1)
            arc_angles = np.linspace(a0, a1 + (2 * math.pi if a1 < a0 else 0.0),
                                     max(6, int(r * abs(a1 - a0) / 1.0)))
            arc_pts = C + r * np.stack(
                [np.cos(arc_angles), np.sin(arc_angles)], axis=1)
            ax, ay, ah = exits[b]
            end = np.array([ax, ay]) + off * normal_vec(ah)
            pts = np.vstack([
                _bezier((0.0, off), 0.0, ring_in, a0 + math.pi / 2.0),
                arc_pts[1:],
                _bezier(ring_out, a1 + math.pi / 2.0, end, ah)[1:],
            ])
            fams[b].append(
                PolylineLane(f"{bid}.{b}{i}", pts, width, line_types=("none", "none"))
            )
    return _junction_block(bid, "Roundabout", num_lanes, width, H,
                           ("left", "straight", "right"), params,
                           connectors=fams)


BUILDERS = {
    "FirstBlock": build_first_block,
    "Straight": build_straight,
    "Curve": build_curve,
    "Ramp": build_ramp,
    "Fork": build_fork,
    "Roundabout": build_roundabout,
    "TIntersection": build_t_intersection,
    "Intersection": build_intersection,
}


def build_block(block_type, bid, num_lanes, width, params):
    if block_type not in BUILDERS:
        raise ValueError(f"unknown block type: {block_type}")
    if block_type == "FirstBlock":
        return build_first_block(bid, num_lanes, width)
    return BUILDERS[block_type](bid, num_lanes, width, params)


def sample_params(block_type, rng):
    """Draw a parameter vector uniformly from the block type's space."""
    space = PARAM_SPACES[block_type]
    params = {}
    for name, spec in space.items():
        if isinstance(spec, tuple) and spec and spec[0] == "choice":
            params[name] = spec[1][int(rng.integers(len(spec[1])))]
        else:
            lo, hi = spec
            params[name] = float(rng.uniform(lo, hi))
    return params
