"""Vehicle motion (kinematic bicycle), rigid obstacle bodies, and collisions.

All functions are pure value-to-value; the engine owns mutation and ordering.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

PHYSICS_DT = 0.02  # s, one physics substep
SUBSTEPS_PER_STEP = 5  # one decision step = 0.1 s


@dataclass
class VehicleParams:
    wheelbase: float = 2.5  # m
    length: float = 4.5
    width: float = 1.8
    max_steer: float = math.radians(40.0)
    steer_rate: float = math.radians(120.0)  # rad/s actuator limit
    max_accel: float = 2.6  # m/s^2
    max_brake: float = 7.0
    max_speed: float = 80.0 / 3.6  # m/s, physical cap
    drag: float = 0.0  # 1/s, linear speed decay
    allow_reverse: bool = False
    max_reverse_speed: float = 3.0


@dataclass
class VehicleState:
    position: np.ndarray  # (x, y), geometric center
    heading: float
    speed: float = 0.0
    steering_angle: float = 0.0
    body_class: str = "traffic"  # ego | traffic | obstacle_vehicle
    params: VehicleParams = field(default_factory=VehicleParams)

    def copy(self):
        return replace(self, position=self.position.copy())

    @property
    def length(self):
        return self.params.length

    @property
    def width(self):
        return self.params.width

    @property
    def velocity(self):
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])


@dataclass(frozen=True)
class Action:
    steering: float  # [-1, 1], positive steers left
    throttle_brake: float  # [-1, 1], positive accelerates

    def as_tuple(self):
        return (self.steering, self.throttle_brake)


OBSTACLE_EXTENTS = {
    # kind -> (length, width) in meters
    "cone": (0.4, 0.4),
    "barrier": (2.0, 0.6),
    "broken_vehicle": (4.5, 1.8),
}


@dataclass
class ObstacleBody:
    kind: str  # cone | barrier | broken_vehicle
    position: np.ndarray
    heading: float

    @property
    def length(self):
        return OBSTACLE_EXTENTS[self.kind][0]

    @property
    def width(self):
        return OBSTACLE_EXTENTS[self.kind][1]

    @property
    def speed(self):
        return 0.0


def clamp_action(raw) -> Action:
    """Componentwise clamp to [-1, 1]; NaN components map to 0 with a warning."""
    vals = []
    for name, v in zip(("steering", "throttle_brake"), raw):
        v = float(v)
        if math.isnan(v):
            log.warning("NaN in action component %s; substituting 0", name)
            v = 0.0
        vals.append(min(1.0, max(-1.0, v)))
    return Action(*vals)


def step_vehicle(state: VehicleState, action: Action, dt: float) -> VehicleState:
    """Advance one vehicle by ``dt`` with the kinematic bicycle model.

    Steering tracks ``action.steering * max_steer`` under the actuator rate
    limit; longitudinal acceleration is throttle * max_accel (or brake *
    max_brake).  Speed is clamped at zero unless reverse is enabled.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = state.params
    target = action.steering * p.max_steer
    d_max = p.steer_rate * dt
    steer = state.steering_angle + min(d_max, max(-d_max, target - state.steering_angle))

    if action.throttle_brake >= 0:
        accel = action.throttle_brake * p.max_accel
    else:
        accel = action.throttle_brake * p.max_brake
    speed = state.speed + accel * dt
    if p.drag > 0:
        speed -= p.drag * state.speed * dt
    lo = -p.max_reverse_speed if p.allow_reverse else 0.0
    speed = min(p.max_speed, max(lo, speed))

    heading = state.heading + speed * math.tan(steer) / p.wheelbase * dt
    position = state.position + speed * dt * np.array(
        [math.cos(state.heading), math.sin(state.heading)]
    )
    return replace(state, position=position, heading=heading,
                   speed=speed, steering_angle=steer)


def advance_vehicle(state: VehicleState, action: Action, dt: float,
                    substeps: int) -> VehicleState:
    """Integrate ``substeps`` physics steps of size ``dt`` in one call.

    Bit-identical to applying :func:`step_vehicle` ``substeps`` times, but
    allocates a single output state.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = state.params
    x, y = float(state.position[0]), float(state.position[1])
    heading = state.heading
    speed = state.speed
    steer = state.steering_angle
    target = action.steering * p.max_steer
    d_max = p.steer_rate * dt
    if action.throttle_brake >= 0:
        accel = action.throttle_brake * p.max_accel
    else:
        accel = action.throttle_brake * p.max_brake
    lo = -p.max_reverse_speed if p.allow_reverse else 0.0
    for _ in range(substeps):
        steer = steer + min(d_max, max(-d_max, target - steer))
        new_speed = speed + accel * dt
        if p.drag > 0:
            new_speed -= p.drag * speed * dt
        new_speed = min(p.max_speed, max(lo, new_speed))
        new_heading = heading + new_speed * math.tan(steer) / p.wheelbase * dt
        x = x + new_speed * dt * math.cos(heading)
        y = y + new_speed * dt * math.sin(heading)
        heading = new_heading
        speed = new_speed
    return replace(state, position=np.array([x, y]), heading=heading,
                   speed=speed, steering_angle=steer)


# ---------------------------------------------------------------------------
# Oriented-rectangle collision detection
# ---------------------------------------------------------------------------


def body_corners(body):
    """The four corners of a body's oriented bounding rectangle."""
    c, s = math.cos(body.heading), math.sin(body.heading)
    hl, hw = body.length / 2.0, body.width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return body.position + local @ rot.T


def _sat_overlap(ca, cb):
    """Separating-axis test for two convex quads given as corner arrays."""
    for corners in (ca, cb):
        edges = np.roll(corners, -1, axis=0) - corners
        axes = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
        pa = ca @ axes.T
        pb = cb @ axes.T
        if ((pa.max(axis=0) < pb.min(axis=0)) | (pb.max(axis=0) < pa.min(axis=0))).any():
            return False
    return True


def collision_check(bodies):
    """All overlapping pairs among oriented rectangles.

    ``bodies`` maps id -> body (anything with position/heading/length/width).
    Returns a set of frozensets {id_a, id_b}; symmetric, no self-pairs.
    """
    ids = sorted(bodies)
    if len(ids) < 2:
        return set()
    blist = [bodies[i] for i in ids]
    centers = np.array([b.position for b in blist])
    lengths = np.array([b.length for b in blist])
    widths = np.array([b.width for b in blist])
    radii = np.hypot(lengths, widths) / 2.0
    d2 = np.sum((centers[:, None] - centers[None, :]) ** 2, axis=2)
    limit = (radii[:, None] + radii[None, :]) ** 2
    ii, jj = np.where(np.triu(d2 <= limit, k=1))
    if len(ii) == 0:
        return set()
    # corners for every body touched by a candidate pair, in one shot
    h = np.array([b.heading for b in blist])
    c, s = np.cos(h), np.sin(h)
    hl, hw = lengths / 2.0, widths / 2.0
    lx = np.stack([hl, -hl, -hl, hl], axis=1)
    ly = np.stack([hw, hw, -hw, -hw], axis=1)
    corners = np.stack(
        [centers[:, 0:1] + c[:, None] * lx - s[:, None] * ly,
         centers[:, 1:2] + s[:, None] * lx + c[:, None] * ly], axis=2)
    ca, cb = corners[ii], corners[jj]  # (P, 4, 2) each
    # separating-axis test batched over the P candidate pairs
    ea = np.roll(ca, -1, axis=1) - ca
    eb = np.roll(cb, -1, axis=1) - cb
    axes = np.concatenate(
        [np.stack([-ea[..., 1], ea[..., 0]], axis=2),
         np.stack([-eb[..., 1], eb[..., 0]], axis=2)], axis=1)  # (P, 8, 2)
    pa = np.einsum("pkc,pac->pka", ca, axes)  # (P, 4, 8)
    pb = np.einsum("pkc,pac->pka", cb, axes)
    separated = ((pa.max(axis=1) < pb.min(axis=1))
                 | (pb.max(axis=1) < pa.min(axis=1))).any(axis=1)
    return {frozenset((ids[a], ids[b]))
            for a, b, sep in zip(ii, jj, separated) if not sep}
