"""Built-in driving behaviors: car following, lane keeping, lane changes,
trajectory replay, and the tollgate halt protocol.

These produce normalized actions compatible with the vehicle actuator
limits, so scripted traffic obeys the same physics as external agents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Action, clamp_action
from .roadnet import wrap_angle

LEADER_LOOKAHEAD = 60.0  # m, car-following search horizon
LANE_CHANGE_GAIN_THRESHOLD = 0.1  # m/s^2 advantage required to change lanes
HALT_SPEED = 0.1  # m/s, "stopped" threshold for gate clearance
HALT_DURATION = 3.0  # s of continuous standstill required


@dataclass
class IdmParams:
    desired_speed: float = 10.0  # m/s
    time_headway: float = 1.5  # s
    min_gap: float = 2.0  # m
    accel: float = 2.0  # m/s^2, comfortable acceleration
    decel: float = 2.0  # m/s^2, comfortable braking
    emergency_decel: float = 7.0  # m/s^2, hard cap
    exponent: float = 4.0


def idm_acceleration(speed, params: IdmParams, lead_speed=None, gap=None):
    """Intelligent-driver-model acceleration for one follower.

    With no leader the free-road term alone applies; with a leader the
    desired-gap interaction term brakes as the bumper gap closes.  A
    non-positive gap commands the emergency deceleration.
    """
    p = params
    free = 1.0 - (max(speed, 0.0) / p.desired_speed) ** p.exponent
    if lead_speed is None or gap is None:
        acc = p.accel * free
    else:
        if gap <= 0:
            return -p.emergency_decel
        dv = speed - lead_speed
        s_star = p.min_gap + max(
            0.0, speed * p.time_headway + speed * dv / (2.0 * math.sqrt(p.accel * p.decel))
        )
        acc = p.accel * (free - (s_star / gap) ** 2)
    return min(p.accel, max(-p.emergency_decel, acc))


def find_leader(route_positions, ego_id, lookahead=LEADER_LOOKAHEAD):
    """Nearest vehicle ahead of the ego along its longitudinal axis.

    ``route_positions`` maps vehicle id -> (arc position d, half length).
    Returns (leader_id, bumper gap) or (None, None).
    """
    d_ego, half_ego = route_positions[ego_id]
    best = (None, None)
    for vid, (d, half) in route_positions.items():
        if vid == ego_id or d <= d_ego:
            continue
        gap = d - d_ego - half - half_ego
        if gap <= lookahead and (best[1] is None or gap < best[1]):
            best = (vid, gap)
    return best


def lane_change_decision(params: IdmParams, ego_speed,
                         current_lead, target_lead, target_follower):
    """Whether moving to the adjacent lane is both worthwhile and safe.

    Each of ``current_lead`` / ``target_lead`` / ``target_follower`` is a
    (speed, bumper gap) pair or None.  The change is worthwhile when the
    ego's car-following acceleration improves by more than a fixed gain,
    and safe when the new follower is not forced to brake beyond its
    comfortable deceleration.
    """
    def acc(lead, speed):
        if lead is None:
            return idm_acceleration(speed, params)
        return idm_acceleration(speed, params, lead[0], lead[1])

    gain = acc(target_lead, ego_speed) - acc(current_lead, ego_speed)
    if gain <= LANE_CHANGE_GAIN_THRESHOLD:
        return False
    if target_follower is not None:
        f_speed, f_gap = target_follower
        if f_gap <= 0:
            return False
        if idm_acceleration(f_speed, params, ego_speed, f_gap) < -params.decel:
            return False
    return True


# ---------------------------------------------------------------------------
# Lane keeping
# ---------------------------------------------------------------------------


@dataclass
class LaneKeepGains:
    lateral: float = 0.35  # rad per meter of offset
    heading: float = 1.2  # rad per rad of heading error
    lookahead_time: float = 0.4  # s, preview along the lane


def lane_keep_steering(vehicle, lane, s, l, gains: LaneKeepGains = LaneKeepGains()):
    """Normalized steering command steering back to the lane centerline."""
    preview = min(lane.length, s + max(vehicle.speed, 1.0) * gains.lookahead_time)
    herr = wrap_angle(vehicle.heading - lane.heading_at(preview))
    steer = -(gains.lateral * l + gains.heading * herr)
    return min(1.0, max(-1.0, steer / vehicle.params.max_steer))


def accel_to_pedal(accel, params):
    """Map a desired acceleration to a normalized throttle/brake command."""
    if accel >= 0:
        return min(1.0, accel / params.max_accel)
    return max(-1.0, accel / params.max_brake)


def lane_follow_action(vehicle, lane, s, l, idm: IdmParams,
                       lead_speed=None, gap=None,
                       gains: LaneKeepGains = LaneKeepGains()) -> Action:
    """Full action: lane-keeping steering plus car-following speed control."""
    steer = lane_keep_steering(vehicle, lane, s, l, gains)
    acc = idm_acceleration(vehicle.speed, idm, lead_speed, gap)
    return clamp_action((steer, accel_to_pedal(acc, vehicle.params)))


# ---------------------------------------------------------------------------
# Trajectory replay
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryLog:
    """A recorded track: rows of (x, y, heading, speed) at a fixed tick."""

    start_time: float
    tick: float
    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 4)
        if self.tick <= 0:
            raise ValueError("tick must be positive")

    @property
    def end_time(self):
        return self.start_time + (len(self.states) - 1) * self.tick

    def replay_step(self, t):
        """Pose at time ``t``: exact at native ticks, linearly interpolated
        between them, None outside the recorded span."""
        if len(self.states) == 0 or t < self.start_time - 1e-9 \
                or t > self.end_time + 1e-9:
            return None
        u = (t - self.start_time) / self.tick
        i = int(math.floor(u + 1e-9))
        i = min(max(i, 0), len(self.states) - 1)
        frac = u - i
        if frac <= 1e-9 or i == len(self.states) - 1:
            return tuple(self.states[i])
        a, b = self.states[i], self.states[i + 1]
        heading = a[2] + wrap_angle(b[2] - a[2]) * frac
        out = a + (b - a) * frac
        return (out[0], out[1], heading, out[3])


# ---------------------------------------------------------------------------
# Tollgate clearance
# ---------------------------------------------------------------------------


@dataclass
class GateTimer:
    """Tracks the continuous-standstill requirement inside a gate zone."""

    elapsed: float = 0.0
    released: bool = False

    def update(self, speed, dt):
        if self.released:
            return True
        if abs(speed) < HALT_SPEED:
            self.elapsed += dt
            if self.elapsed >= HALT_DURATION - 1e-9:
                self.released = True
        else:
            self.elapsed = 0.0
        return self.released

    def reset(self):
        self.elapsed = 0.0
        self.released = False
