"""Lidar raycasting, route tracking, and observation assembly.

The observation fed to external policies is the concatenation
``lidar || ego state || navigation`` with every component in [-1, 1]
(lidar in [0, 1]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import body_corners
from .roadnet import wrap_angle

EGO_STATE_DIM = 5
NAV_DIM = 4  # two checkpoints, (x, y) each
CHECKPOINT_RADIUS = 5.0  # m, completion distance
CHECKPOINT_NORM = 50.0  # m, navigation normalization scale


@dataclass
class LidarConfig:
    num_rays: int = 240
    max_range: float = 50.0
    include_boundaries: bool = True
    noise_amplitude: float = 0.0  # uniform additive noise, off by default

    def __post_init__(self):
        if self.num_rays < 1 or self.max_range <= 0:
            raise ValueError("lidar needs num_rays >= 1 and max_range > 0")


def body_segments(body):
    """Outline of a body as 4 segments [x1, y1, x2, y2]."""
    c = body_corners(body)
    n = np.roll(c, -1, axis=0)
    return np.hstack([c, n])


def boundary_segments(net):
    """Solid (sidewalk-like) boundary segments of a road network."""
    segs = []
    for ln in net.lanes.values():
        left, right = None, None
        if ln.line_types[0] == "continuous":
            left = ln.boundary_polylines()[0]
        if ln.line_types[1] == "continuous":
            right = ln.boundary_polylines()[1]
        for poly in (left, right):
            if poly is not None:
                segs.append(np.hstack([poly[:-1], poly[1:]]))
    return np.vstack(segs) if segs else np.zeros((0, 4))


def scene_segments(bodies, static_segments=None):
    """Shared per-step lidar geometry for a whole scene.

    Returns (segments (K, 4), owners (K,), id_index) where ``owners[k]`` is
    the index of the owning body in ``id_index`` (-1 for static geometry),
    so one build serves every vehicle's scan via an exclusion mask.
    """
    ids = sorted(bodies)
    parts = []
    owner_parts = []
    if static_segments is not None and len(static_segments):
        parts.append(np.asarray(static_segments, dtype=float))
        owner_parts.append(np.full(len(static_segments), -1))
    if ids:
        pos = np.array([bodies[i].position for i in ids], dtype=float)
        h = np.array([bodies[i].heading for i in ids])
        hl = np.array([bodies[i].length for i in ids]) / 2.0
        hw = np.array([bodies[i].width for i in ids]) / 2.0
        c, s = np.cos(h), np.sin(h)
        lx = np.stack([hl, -hl, -hl, hl], axis=1)
        ly = np.stack([hw, hw, -hw, -hw], axis=1)
        x = pos[:, 0:1] + c[:, None] * lx - s[:, None] * ly
        y = pos[:, 1:2] + s[:, None] * lx + c[:, None] * ly
        x2 = np.roll(x, -1, axis=1)
        y2 = np.roll(y, -1, axis=1)
        parts.append(np.stack([x, y, x2, y2], axis=2).reshape(-1, 4))
        owner_parts.append(np.repeat(np.arange(len(ids)), 4))
    if not parts:
        return np.zeros((0, 4)), np.zeros(0, dtype=int), ids, \
            np.zeros((0, 2)), np.zeros(0)
    segments = np.vstack(parts)
    owners = np.concatenate(owner_parts)
    mid = (segments[:, 0:2] + segments[:, 2:4]) / 2.0
    seg_r = np.hypot(segments[:, 2] - segments[:, 0],
                     segments[:, 3] - segments[:, 1]) / 2.0
    return segments, owners, ids, mid, seg_r


def scan_from_scene(position, heading, scene, exclude_id, cfg: LidarConfig,
                    rng=None):
    """Normalized lidar over a prebuilt scene, skipping the ego's own body."""
    segments, owners, ids, mid, seg_r = scene
    if len(segments):
        keep = np.hypot(mid[:, 0] - position[0],
                        mid[:, 1] - position[1]) <= cfg.max_range + seg_r
        if exclude_id in ids:
            keep &= owners != ids.index(exclude_id)
        segments = segments[keep]
    dist = raycast_fan(position, heading, cfg.num_rays, segments,
                       cfg.max_range)
    out = dist / cfg.max_range
    if cfg.noise_amplitude > 0 and rng is not None:
        out = out + rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude,
                                size=out.shape)
    return np.clip(out, 0.0, 1.0)


def scan_batch(states, ego_keys, scene, cfg: LidarConfig):
    """Normalized lidar for many vehicles over one prebuilt scene.

    ``states`` is a sequence of (position, heading); ``ego_keys[i]`` is the
    body id excluded from vehicle i's scan.  Row i equals
    :func:`scan_from_scene` on the same vehicle — the arithmetic is the
    per-pair fan raycast, just flattened across vehicles so the whole step
    costs one set of array operations.
    """
    segments, owners, ids, mid, seg_r = scene
    count = len(states)
    n = cfg.num_rays
    out = np.full((count, n), float(cfg.max_range))
    m = len(segments)
    if m == 0 or count == 0:
        return out / cfg.max_range
    px = np.array([s[0][0] for s in states], dtype=float)
    py = np.array([s[0][1] for s in states], dtype=float)
    ph = np.array([s[1] for s in states], dtype=float)
    keep = np.hypot(mid[None, :, 0] - px[:, None],
                    mid[None, :, 1] - py[:, None]) \
        <= cfg.max_range + seg_r[None, :]
    index = {k: i for i, k in enumerate(ids)}
    excl = np.array([index.get(k, -2) for k in ego_keys])
    keep &= owners[None, :] != excl[:, None]
    ai, si = np.nonzero(keep)
    if len(ai):
        ox, oy, hh = px[ai], py[ai], ph[ai]
        ax = segments[si, 0] - ox
        ay = segments[si, 1] - oy
        bx = segments[si, 2] - ox
        by = segments[si, 3] - oy
        ta = np.arctan2(ay, ax) - hh
        tb = np.arctan2(by, bx) - hh
        diff = np.mod(tb - ta + math.pi, 2.0 * math.pi) - math.pi
        start = np.where(diff >= 0, ta, tb)
        arc = np.abs(diff)
        step = 2.0 * math.pi / n
        start = np.mod(start, 2.0 * math.pi)
        k0 = np.ceil(start / step - 1e-9)
        cnt = (np.floor((start + arc) / step + 1e-9) - k0 + 1).astype(np.int64)
        np.clip(cnt, 0, n, out=cnt)
        total = int(cnt.sum())
        if total:
            pair = np.repeat(np.arange(len(ai)), cnt)
            offsets = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            rays = (np.repeat(k0.astype(np.int64), cnt) + offsets) % n
            ang = hh[pair] + step * rays
            dx, dy = np.cos(ang), np.sin(ang)
            ex = bx[pair] - ax[pair]
            ey = by[pair] - ay[pair]
            denom = dx * ey - dy * ex
            with np.errstate(divide="ignore", invalid="ignore"):
                r = (ax[pair] * ey - ay[pair] * ex) / denom
                t = (ax[pair] * dy - ay[pair] * dx) / denom
            ok = (np.abs(denom) > 1e-12) & (r >= 0) & (t >= 0) & (t <= 1)
            flat = ai[pair[ok]] * n + rays[ok]
            np.minimum.at(out.reshape(-1), flat, r[ok])
            np.minimum(out, cfg.max_range, out=out)
    return np.clip(out / cfg.max_range, 0.0, 1.0)


def raycast_fan(origin, heading, num_rays, segments, max_range):
    """Evenly spaced 360-degree raycast via angular binning.

    Ray k points at ``heading + 2*pi*k/num_rays``.  Each segment is only
    intersected with the rays inside the angular arc it subtends from the
    origin, so the work scales with angular coverage instead of
    rays x segments.  Distances match :func:`raycast` on the same rays.
    """
    out = np.full(num_rays, max_range)
    m = len(segments)
    if m == 0:
        return out
    ox, oy = float(origin[0]), float(origin[1])
    ax = segments[:, 0] - ox
    ay = segments[:, 1] - oy
    bx = segments[:, 2] - ox
    by = segments[:, 3] - oy
    ta = np.arctan2(ay, ax) - heading
    tb = np.arctan2(by, bx) - heading
    diff = np.mod(tb - ta + math.pi, 2.0 * math.pi) - math.pi
    start = np.where(diff >= 0, ta, tb)
    arc = np.abs(diff)
    step = 2.0 * math.pi / num_rays
    start = np.mod(start, 2.0 * math.pi)
    k0 = np.ceil(start / step - 1e-9)
    cnt = (np.floor((start + arc) / step + 1e-9) - k0 + 1).astype(np.int64)
    np.clip(cnt, 0, num_rays, out=cnt)
    total = int(cnt.sum())
    if total == 0:
        return out
    seg = np.repeat(np.arange(m), cnt)
    offsets = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    rays = (np.repeat(k0.astype(np.int64), cnt) + offsets) % num_rays
    ang = heading + step * rays
    dx, dy = np.cos(ang), np.sin(ang)
    ex = bx[seg] - ax[seg]
    ey = by[seg] - ay[seg]
    denom = dx * ey - dy * ex
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (ax[seg] * ey - ay[seg] * ex) / denom
        t = (ax[seg] * dy - ay[seg] * dx) / denom
    ok = (np.abs(denom) > 1e-12) & (r >= 0) & (t >= 0) & (t <= 1)
    np.minimum.at(out, rays[ok], r[ok])
    np.minimum(out, max_range, out=out)
    return out


def raycast(origin, angles, segments, max_range):
    """Distance to the first segment hit along each ray (max_range if none)."""
    n = len(angles)
    if len(segments) == 0:
        return np.full(n, max_range)
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (N, 2)
    a = segments[:, 0:2]
    e = segments[:, 2:4] - a  # (M, 2)
    ao = a - np.asarray(origin)  # (M, 2)
    # solve origin + r*d = a + t*e
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    num_r = ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]
    num_t = ao[None, :, 0] * d[:, None, 1] - ao[None, :, 1] * d[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num_r / denom
        t = num_t / denom
    valid = (np.abs(denom) > 1e-12) & (r >= 0) & (t >= 0) & (t <= 1)
    r = np.where(valid, r, np.inf)
    return np.minimum(r.min(axis=1), max_range)


def lidar_scan(ego, bodies, static_segments, cfg: LidarConfig, rng=None):
    """Normalized lidar vector: ray i points at heading + 2*pi*i/num_rays."""
    table = {k: b for k, b in enumerate(bodies) if b is not ego}
    scene = scene_segments(table, static_segments)
    return scan_from_scene(ego.position, ego.heading, scene, None, cfg, rng)


# ---------------------------------------------------------------------------
# Route tracking and navigation observation
# ---------------------------------------------------------------------------


class RouteTracker:
    """Tracks an agent's progress along a lane route.

    Maintains the current route lane, the longitudinal progress d (meters of
    route arc length), and which sparse checkpoints have been completed.
    """

    def __init__(self, net, lane_ids, checkpoints, destination_s=None):
        self.net = net
        self.lane_ids = list(lane_ids)
        self.checkpoints = [np.asarray(cp[:2], dtype=float) for cp in checkpoints]
        self.next_checkpoint = 0
        self.lane_idx = 0
        self.offsets = []
        acc = 0.0
        for i, lid in enumerate(self.lane_ids):
            self.offsets.append(acc)
            ln = net.lanes[lid]
            nxt = self.lane_ids[i + 1] if i + 1 < len(self.lane_ids) else None
            if nxt is not None and nxt in (ln.left_neighbor, ln.right_neighbor):
                continue  # lateral hop, no longitudinal progress
            acc += ln.length
        self.destination_lane = self.lane_ids[-1]
        self.destination_s = (destination_s if destination_s is not None
                              else net.lanes[self.destination_lane].length)
        self.total_length = self.offsets[-1] + self.destination_s
        self.last_fix = (self.lane_ids[0], 0.0, 0.0)
        self.off_route = False

    def localize(self, position):
        """(lane_id, s, l) of the best route lane near the last known index."""
        lo = max(0, self.lane_idx - 1)
        hi = min(len(self.lane_ids), self.lane_idx + 3)
        best = None
        for i in range(lo, hi):
            ln = self.net.lanes[self.lane_ids[i]]
            s, l = ln.local_coordinates(position)
            if s < -1.0 or s > ln.length + 1.0 or abs(l) > 2.0 * ln.width:
                continue
            key = abs(l)
            if best is None or key < best[0]:
                best = (key, i, min(max(s, 0.0), ln.length), l)
        if best is None:
            self.off_route = True
            return self.last_fix
        _, i, s, l = best
        self.lane_idx = i
        self.off_route = False
        self.last_fix = (self.lane_ids[i], s, l)
        return self.last_fix

    @property
    def progress(self):
        lid, s, _ = self.last_fix
        return self.offsets[self.lane_idx] + s

    def update(self, position):
        """Localize and retire passed checkpoints; returns (lane_id, s, l)."""
        fix = self.localize(position)
        pos = np.asarray(position, dtype=float)
        while self.next_checkpoint < len(self.checkpoints) - 1:
            cp = self.checkpoints[self.next_checkpoint]
            passed_by_distance = np.hypot(*(pos - cp)) <= CHECKPOINT_RADIUS
            passed_by_arc = self.progress >= 50.0 * (self.next_checkpoint + 1) + 1.0
            if passed_by_distance or passed_by_arc:
                self.next_checkpoint += 1
            else:
                break
        return fix

    def upcoming_checkpoints(self):
        i = min(self.next_checkpoint, len(self.checkpoints) - 1)
        j = min(i + 1, len(self.checkpoints) - 1)
        return self.checkpoints[i], self.checkpoints[j]

    @property
    def arrived(self):
        lid, s, _ = self.last_fix
        return (lid == self.destination_lane and s >= self.destination_s - 1e-6) \
            or self.progress >= self.total_length - 1e-6


def road_half_widths(net, lane_id):
    """(left, right) distance from the lane centerline to the road edge."""
    ln = net.lanes[lane_id]
    kl = 0
    cur = ln
    while cur.left_neighbor:
        cur = net.lanes[cur.left_neighbor]
        kl += 1
    kr = 0
    cur = ln
    while cur.right_neighbor:
        cur = net.lanes[cur.right_neighbor]
        kr += 1
    return (kl + 0.5) * ln.width, (kr + 0.5) * ln.width


def ego_state_vector(ego, net, fix, v_max):
    """5-component ego summary, each clipped to [-1, 1].

    Components: normalized steering, heading error to the lane tangent,
    speed fraction, and distance to the left / right lane boundary as a
    fraction of lane width.
    """
    lane_id, s, l = fix
    ln = net.lanes[lane_id]
    lane_heading = ln.heading_at(s)
    herr = wrap_angle(ego.heading - lane_heading) / math.pi
    steer = ego.steering_angle / ego.params.max_steer
    speed = ego.speed / v_max
    left = (ln.width / 2.0 - l) / ln.width
    right = (ln.width / 2.0 + l) / ln.width
    return np.clip(np.array([steer, herr, speed, left, right]), -1.0, 1.0)


def navigation_obs(tracker: RouteTracker, ego):
    """Relative positions of the next two checkpoints in the ego frame,
    normalized by the checkpoint spacing and clipped to [-1, 1]."""
    cps = tracker.upcoming_checkpoints()
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    out = []
    for cp in cps:
        d = cp - ego.position
        out.extend([c * d[0] + s * d[1], -s * d[0] + c * d[1]])
    return np.clip(np.array(out) / CHECKPOINT_NORM, -1.0, 1.0)


def observation_dim(lidar_cfg: LidarConfig, extra=0):
    return lidar_cfg.num_rays + EGO_STATE_DIM + NAV_DIM + extra


def assemble_observation(ego, net, tracker, bodies, static_segments,
                         lidar_cfg, v_max, extra=None, rng=None,
                         scene=None, ego_key=None, scan=None):
    """Full observation vector: lidar || ego state || navigation [|| extra].

    Pass a prebuilt ``scene`` (from :func:`scene_segments`) plus the ego's
    body id to share raycast geometry across many vehicles in one step, or a
    precomputed normalized ``scan`` row (from :func:`scan_batch`).
    """
    fix = tracker.last_fix
    if scan is not None:
        pass
    elif scene is not None:
        scan = scan_from_scene(ego.position, ego.heading, scene, ego_key,
                               lidar_cfg, rng)
    else:
        scan = lidar_scan(ego, bodies, static_segments, lidar_cfg, rng)
    parts = [
        scan,
        ego_state_vector(ego, net, fix, v_max),
        navigation_obs(tracker, ego),
    ]
    if extra is not None:
        parts.append(np.clip(np.asarray(extra, dtype=float), -1.0, 1.0))
    return np.concatenate(parts)
