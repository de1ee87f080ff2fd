"""Lane geometry, road blocks, the lane-graph network, Frenet queries and routing.

Coordinate conventions used everywhere:
  - world frame is x-east / y-north, headings in radians (0 = +x, CCW positive)
  - longitudinal s runs along a lane centerline from its start
  - lateral l is positive to the LEFT of the travel direction
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# Boundary polylines are sampled at this chord length for crossing tests.
BOUNDARY_CHORD = 2.0
# Segments closer than this are treated as intersecting (conservative).
CROSSOVER_TOL = 1e-3


class OffNetworkError(Exception):
    """Raised when a point cannot be localized on any lane."""


class DockingError(Exception):
    """Raised when two sockets cannot be joined."""


class RouteError(Exception):
    """Raised when no route exists between two lanes."""


def wrap_angle(theta):
    """Wrap an angle to [-pi, pi)."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


def heading_vec(theta):
    return np.array([math.cos(theta), math.sin(theta)])


def normal_vec(theta):
    """Unit normal pointing to the left of the heading."""
    return np.array([-math.sin(theta), math.cos(theta)])


def rotate(points, theta):
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return np.asarray(points) @ rot.T


# ---------------------------------------------------------------------------
# Lanes
# ---------------------------------------------------------------------------


class Lane:
    """Base class for a single directed lane with a parametric centerline."""

    def __init__(self, lane_id, width, line_types=("broken", "broken")):
        if width <= 0:
            raise ValueError("lane width must be positive")
        self.id = lane_id
        self.width = float(width)
        self.line_types = tuple(line_types)
        self.successors: list[str] = []
        self.predecessors: list[str] = []
        self.left_neighbor: str | None = None
        self.right_neighbor: str | None = None

    # -- geometry interface -------------------------------------------------

    @property
    def length(self) -> float:
        raise NotImplementedError

    def position(self, s, l):
        raise NotImplementedError

    def heading_at(self, s) -> float:
        raise NotImplementedError

    def local_coordinates(self, point):
        """Project a world point onto this lane, returning (s, l)."""
        raise NotImplementedError

    def transformed(self, theta, translation) -> "Lane":
        """Return a copy rigidly rotated by theta about the origin, then shifted."""
        raise NotImplementedError

    # -- shared helpers -----------------------------------------------------

    def point_at(self, s, l):
        """World pose (x, y, heading) at longitudinal s, lateral offset l."""
        if s < -1e-9 or s > self.length + 1e-9:
            raise ValueError(f"s={s} out of range [0, {self.length}] on lane {self.id}")
        s = min(max(s, 0.0), self.length)
        x, y = self.position(s, l)
        return x, y, self.heading_at(s)

    def start_pose(self):
        return self.point_at(0.0, 0.0)

    def end_pose(self):
        return self.point_at(self.length, 0.0)

    def sample_centerline(self, chord=BOUNDARY_CHORD):
        n = max(2, int(math.ceil(self.length / chord)) + 1)
        ss = np.linspace(0.0, self.length, n)
        return np.array([self.position(s, 0.0) for s in ss]), ss

    def boundary_polylines(self, chord=BOUNDARY_CHORD):
        """Left and right boundary polylines sampled at the given chord length."""
        n = max(2, int(math.ceil(self.length / chord)) + 1)
        ss = np.linspace(0.0, self.length, n)
        half = self.width / 2.0
        left = np.array([self.position(s, half) for s in ss])
        right = np.array([self.position(s, -half) for s in ss])
        return left, right

    def copy_links_from(self, other):
        self.successors = list(other.successors)
        self.predecessors = list(other.predecessors)
        self.left_neighbor = other.left_neighbor
        self.right_neighbor = other.right_neighbor
        return self


class StraightLane(Lane):
    def __init__(self, lane_id, start, heading, length, width, **kw):
        super().__init__(lane_id, width, **kw)
        if length <= 0:
            raise ValueError("lane length must be positive")
        self.start = np.asarray(start, dtype=float)
        self.heading = float(heading)
        self._length = float(length)
        self._dir = heading_vec(self.heading)
        self._nrm = normal_vec(self.heading)

    @property
    def length(self):
        return self._length

    def position(self, s, l):
        return self.start + s * self._dir + l * self._nrm

    def heading_at(self, s):
        return self.heading

    def local_coordinates(self, point):
        d = np.asarray(point, dtype=float) - self.start
        return float(d @ self._dir), float(d @ self._nrm)

    def transformed(self, theta, translation):
        out = StraightLane(
            self.id,
            rotate(self.start, theta) + translation,
            self.heading + theta,
            self._length,
            self.width,
            line_types=self.line_types,
        )
        return out.copy_links_from(self)


class ArcLane(Lane):
    """Circular-arc lane. direction +1 turns left, -1 turns right."""

    def __init__(self, lane_id, start, heading, radius, arc_length, direction, width, **kw):
        super().__init__(lane_id, width, **kw)
        if radius <= 0 or arc_length <= 0:
            raise ValueError("arc radius and length must be positive")
        if direction not in (1, -1):
            raise ValueError("direction must be +1 (left) or -1 (right)")
        self.start = np.asarray(start, dtype=float)
        self.heading = float(heading)
        self.radius = float(radius)
        self.direction = int(direction)
        self._length = float(arc_length)
        self.center = self.start + self.radius * self.direction * normal_vec(self.heading)
        self._angle0 = math.atan2(*(self.start - self.center)[::-1])

    @property
    def length(self):
        return self._length

    def heading_at(self, s):
        return self.heading + self.direction * s / self.radius

    def position(self, s, l):
        ang = self._angle0 + self.direction * s / self.radius
        h = self.heading_at(s)
        base = self.center + self.radius * np.array([math.cos(ang), math.sin(ang)])
        return base + l * normal_vec(h)

    def local_coordinates(self, point):
        v = np.asarray(point, dtype=float) - self.center
        rho = float(np.hypot(*v))
        ang = math.atan2(v[1], v[0])
        s = self.direction * wrap_angle(ang - self._angle0) * self.radius
        if s < 0 and s > -self.radius * 1e-9:
            s = 0.0
        l = self.direction * (self.radius - rho)
        return float(s), float(l)

    def transformed(self, theta, translation):
        out = ArcLane(
            self.id,
            rotate(self.start, theta) + translation,
            self.heading + theta,
            self.radius,
            self._length,
            self.direction,
            self.width,
            line_types=self.line_types,
        )
        return out.copy_links_from(self)


class PolylineLane(Lane):
    """Piecewise-linear centerline, used by connector lanes and imported maps."""

    def __init__(self, lane_id, points, width, **kw):
        super().__init__(lane_id, width, **kw)
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two points")
        seg = np.diff(pts, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        keep = seglen > 1e-9
        if not keep.all():
            pts = np.vstack([pts[0], pts[1:][keep]])
            seg = np.diff(pts, axis=0)
            seglen = np.hypot(seg[:, 0], seg[:, 1])
        self.points = pts
        self._seg = seg
        self._seglen = seglen
        self._cum = np.concatenate([[0.0], np.cumsum(seglen)])
        self._headings = np.arctan2(seg[:, 1], seg[:, 0])

    @property
    def length(self):
        return float(self._cum[-1])

    def _segment_index(self, s):
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        return min(max(i, 0), len(self._seglen) - 1)

    def heading_at(self, s):
        return float(self._headings[self._segment_index(s)])

    def position(self, s, l):
        i = self._segment_index(s)
        t = (s - self._cum[i]) / self._seglen[i]
        base = self.points[i] + t * self._seg[i]
        return base + l * normal_vec(self._headings[i])

    def local_coordinates(self, point):
        p = np.asarray(point, dtype=float)
        rel = p - self.points[:-1]
        t_raw = np.einsum("ij,ij->i", rel, self._seg) / self._seglen**2
        t = np.clip(t_raw, 0.0, 1.0)
        proj = self.points[:-1] + t[:, None] * self._seg
        d2 = np.sum((p - proj) ** 2, axis=1)
        i = int(np.argmin(d2))
        # report the unclamped arc length at the end segments so callers can
        # reject points longitudinally beyond the polyline
        ti = t_raw[i] if (i == 0 and t_raw[i] < 0) or \
            (i == len(self._seg) - 1 and t_raw[i] > 1) else t[i]
        s = float(self._cum[i] + ti * self._seglen[i])
        nrm = normal_vec(self._headings[i])
        l = float((p - (self.points[i] + t[i] * self._seg[i])) @ nrm)
        return s, l

    def transformed(self, theta, translation):
        out = PolylineLane(
            self.id,
            rotate(self.points, theta) + translation,
            self.width,
            line_types=self.line_types,
        )
        return out.copy_links_from(self)


# ---------------------------------------------------------------------------
# Sockets and blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Socket:
    """Anchor pose where blocks dock.

    ``slots`` groups the member lane ids by lateral position, ordered left to
    right; one slot can hold several lanes when a junction fans an entry lane
    out to multiple exits.  ``heading`` is the traffic-flow direction across
    the anchor.
    """

    anchor: tuple  # (x, y, heading)
    slots: tuple  # tuple of tuples of lane ids
    direction: str  # "in" | "out"

    @property
    def lane_ids(self):
        return tuple(lid for slot in self.slots for lid in slot)

    @property
    def heading(self):
        return self.anchor[2]

    @property
    def outward_heading(self):
        """Heading pointing away from the owning block (undirected-graph view)."""
        if self.direction == "in":
            return wrap_angle(self.anchor[2] + math.pi)
        return wrap_angle(self.anchor[2])

    @property
    def num_slots(self):
        return len(self.slots)

    def transformed(self, theta, translation):
        x, y = rotate(np.array(self.anchor[:2]), theta) + translation
        return Socket((float(x), float(y), wrap_angle(self.anchor[2] + theta)),
                      self.slots, self.direction)


@dataclass
class Block:
    """One parameterized road piece.

    Blocks are built in a local frame with the entry socket anchored at the
    origin heading +x, then rigidly transformed when docked.  ``sockets[0]``
    is the entry (inbound) socket except for the spawn block, which only has
    an outbound socket.
    """

    id: str
    block_type: str
    lanes: dict  # lane id -> Lane
    sockets: list  # list[Socket]
    spawn_points: list  # list of (lane_id, s)
    params: dict
    nodes: list = field(default_factory=list)

    @property
    def entry_socket(self):
        for s in self.sockets:
            if s.direction == "in":
                return s
        return None

    @property
    def exit_sockets(self):
        return [s for s in self.sockets if s.direction == "out"]

    def transformed(self, theta, translation):
        return Block(
            id=self.id,
            block_type=self.block_type,
            lanes={lid: ln.transformed(theta, translation) for lid, ln in self.lanes.items()},
            sockets=[s.transformed(theta, translation) for s in self.sockets],
            spawn_points=list(self.spawn_points),
            params=dict(self.params),
            nodes=list(self.nodes),
        )

    def boundary_segments(self, chord=BOUNDARY_CHORD):
        """All boundary polyline segments of the block as an (N, 4) array."""
        segs = []
        for ln in self.lanes.values():
            for poly in ln.boundary_polylines(chord):
                segs.append(np.hstack([poly[:-1], poly[1:]]))
        return np.vstack(segs) if segs else np.zeros((0, 4))


def dock_socket(block, own_socket, target):
    """Rigidly transform a block so its inbound socket mates with ``target``.

    After docking the two anchor poses coincide and the outward headings of
    the facing sockets are supplementary (differ by pi).
    """
    if own_socket.direction != "in":
        raise DockingError("own socket must be inbound")
    if target.direction != "out":
        raise DockingError("target socket must be outbound")
    if own_socket.num_slots != target.num_slots:
        raise DockingError(
            f"socket lane counts incompatible: {own_socket.num_slots} vs {target.num_slots}"
        )
    theta = wrap_angle(target.heading - own_socket.heading)
    anchor = rotate(np.array(own_socket.anchor[:2]), theta)
    translation = np.array(target.anchor[:2]) - anchor
    return block.transformed(theta, translation)


# ---------------------------------------------------------------------------
# Segment intersection (crossover testing)
# ---------------------------------------------------------------------------


def _point_segment_dist(px, py, ax, ay, bx, by):
    """Vectorized distance from points to segments (broadcastable arrays)."""
    abx, aby = bx - ax, by - ay
    apx, apy = px - ax, py - ay
    denom = abx * abx + aby * aby
    num = apx * abx + apy * aby
    denom, num = np.broadcast_arrays(denom, num)
    t = np.clip(np.divide(num, denom, where=denom > 0,
                          out=np.zeros_like(num, dtype=float)), 0.0, 1.0)
    dx = apx - t * abx
    dy = apy - t * aby
    return np.hypot(dx, dy)


def segments_close(seg_a, seg_b, tol=CROSSOVER_TOL):
    """Pairwise test: does any segment of ``seg_a`` pass within ``tol`` of any
    of ``seg_b``?  Returns the (x, y) near-contact points.

    Both inputs are (N, 4) arrays of [x1, y1, x2, y2] rows.
    """
    if len(seg_a) == 0 or len(seg_b) == 0:
        return np.zeros((0, 2))
    a = seg_a[:, None, :]
    b = seg_b[None, :, :]
    x1, y1, x2, y2 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    x3, y3, x4, y4 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]

    d1x, d1y = x2 - x1, y2 - y1
    d2x, d2y = x4 - x3, y4 - y3
    denom = d1x * d2y - d1y * d2x
    ex, ey = x3 - x1, y3 - y1
    t = np.divide(ex * d2y - ey * d2x, denom, where=np.abs(denom) > 1e-12,
                  out=np.full_like(denom, np.nan))
    u = np.divide(ex * d1y - ey * d1x, denom, where=np.abs(denom) > 1e-12,
                  out=np.full_like(denom, np.nan))
    proper = (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)

    # near-miss / tangency: check the four endpoint-to-segment distances
    close = (
        (_point_segment_dist(x1, y1, x3, y3, x4, y4) <= tol)
        | (_point_segment_dist(x2, y2, x3, y3, x4, y4) <= tol)
        | (_point_segment_dist(x3, y3, x1, y1, x2, y2) <= tol)
        | (_point_segment_dist(x4, y4, x1, y1, x2, y2) <= tol)
    )
    hit = proper | close
    if not hit.any():
        return np.zeros((0, 2))
    ti = np.where(np.isnan(t), 0.0, t)
    px = x1 + ti * d1x
    py = y1 + ti * d1y
    return np.stack([px[hit], py[hit]], axis=1)


# ---------------------------------------------------------------------------
# RoadNetwork
# ---------------------------------------------------------------------------


class RoadNetwork:
    """Undirected lane graph assembled from docked blocks.

    Mutating operations are ``append_block`` and ``pop_last_block``; the
    latter exactly undoes the former.  Everything else is read-only.
    """

    def __init__(self, lane_width=3.5):
        self.lane_width = float(lane_width)
        self.blocks: list[Block] = []
        self.lanes: dict[str, Lane] = {}
        self.open_sockets: list[Socket] = []
        self.destination = None  # (lane_id, s)
        self._segments = np.zeros((0, 4))
        self._append_log = []  # per-append undo records

    # -- construction -------------------------------------------------------

    def append_block(self, block, target_socket=None):
        """Merge a docked, crossover-free block into the network.

        ``target_socket`` is the open outbound socket the block was docked to
        (None only for the initial spawn block).
        """
        linked = []
        if target_socket is not None:
            if target_socket not in self.open_sockets:
                raise DockingError("target socket is not open")
            entry = block.entry_socket
            for out_slot, in_slot in zip(target_socket.slots, entry.slots):
                for prev_id in out_slot:
                    for new_id in in_slot:
                        self.lanes[prev_id].successors.append(new_id)
                        block.lanes[new_id].predecessors.append(prev_id)
                        linked.append((prev_id, new_id))
        self.blocks.append(block)
        self.lanes.update(block.lanes)
        socket_idx = None
        if target_socket is not None:
            socket_idx = self.open_sockets.index(target_socket)
            self.open_sockets.pop(socket_idx)
        self.open_sockets.extend(block.exit_sockets)
        nseg_before = len(self._segments)
        self._segments = np.vstack([self._segments, block.boundary_segments()])
        self._append_log.append(
            (block, target_socket, socket_idx, linked, nseg_before)
        )
        return self

    def pop_last_block(self):
        """Exactly undo the most recent append."""
        if len(self.blocks) <= 1:
            raise ValueError("cannot pop the initial spawn block")
        block, target_socket, socket_idx, linked, nseg_before = self._append_log.pop()
        self.blocks.pop()
        for lid in block.lanes:
            del self.lanes[lid]
        for prev_id, new_id in linked:
            self.lanes[prev_id].successors.remove(new_id)
        self.open_sockets = [s for s in self.open_sockets if s not in block.exit_sockets]
        if target_socket is not None:
            self.open_sockets.insert(socket_idx, target_socket)
        self._segments = self._segments[:nseg_before]
        return self

    # -- queries ------------------------------------------------------------

    @property
    def total_lane_length(self):
        return sum(ln.length for ln in self.lanes.values())

    def crossover_test(self, candidate, joint_socket=None):
        """True iff the candidate block's boundaries cross the network's.

        Contacts within one lane width of the docking seam are ignored;
        the seam is the anchor line across the full road width.
        """
        cand = candidate.boundary_segments()
        if len(self._segments) == 0 or len(cand) == 0:
            return False
        # coarse bounding-box prefilter on the network segments
        cx0 = np.minimum(cand[:, 0].min(), cand[:, 2].min()) - 1.0
        cx1 = np.maximum(cand[:, 0].max(), cand[:, 2].max()) + 1.0
        cy0 = np.minimum(cand[:, 1].min(), cand[:, 3].min()) - 1.0
        cy1 = np.maximum(cand[:, 1].max(), cand[:, 3].max()) + 1.0
        net = self._segments
        mask = ~(
            (np.maximum(net[:, 0], net[:, 2]) < cx0)
            | (np.minimum(net[:, 0], net[:, 2]) > cx1)
            | (np.maximum(net[:, 1], net[:, 3]) < cy0)
            | (np.minimum(net[:, 1], net[:, 3]) > cy1)
        )
        net = net[mask]
        hits = segments_close(cand, net)
        if len(hits) == 0:
            return False
        if joint_socket is None:
            joint_socket = candidate.entry_socket
        if joint_socket is not None:
            x, y, h = joint_socket.anchor
            half = joint_socket.num_slots * self.lane_width / 2.0
            n = normal_vec(h)
            a = np.array([x, y]) - half * n
            b = np.array([x, y]) + half * n
            d = _point_segment_dist(hits[:, 0], hits[:, 1],
                                    np.full(len(hits), a[0]), np.full(len(hits), a[1]),
                                    np.full(len(hits), b[0]), np.full(len(hits), b[1]))
            hits = hits[d > self.lane_width]
        return len(hits) > 0

    def world_to_frenet(self, point, hint_lane=None):
        """Locate a world point: returns (lane_id, s, l) minimizing |l|.

        With a hint, only the hint lane and its graph neighbors are searched.
        """
        point = np.asarray(point, dtype=float)
        if hint_lane is not None and hint_lane in self.lanes:
            ids = {hint_lane}
            ln = self.lanes[hint_lane]
            ids.update(ln.successors)
            ids.update(ln.predecessors)
            for nb in (ln.left_neighbor, ln.right_neighbor):
                if nb:
                    ids.add(nb)
                    ids.update(self.lanes[nb].successors)
            candidates = sorted(ids)
        else:
            candidates = sorted(self.lanes)
        best = None
        for lid in candidates:
            ln = self.lanes[lid]
            s, l = ln.local_coordinates(point)
            if s < -1e-6 or s > ln.length + 1e-6:
                continue
            if abs(l) > 2.0 * ln.width:
                continue
            key = (round(abs(l), 9), lid)
            if best is None or key < best[0]:
                best = (key, lid, min(max(s, 0.0), ln.length), l)
        if best is None:
            if hint_lane is not None:
                return self.world_to_frenet(point, hint_lane=None)
            raise OffNetworkError(f"point {point.tolist()} is not on any lane")
        return best[1], best[2], best[3]

    def route_search(self, start, goal, checkpoint_spacing=50.0, goal_s=None):
        """Shortest lane-hop route from ``start`` to ``goal`` plus checkpoints.

        Hops follow successor links and left/right neighbors; ties are broken
        by lowest lane id.  Checkpoints are placed every ``checkpoint_spacing``
        meters of arc length along the route, the last one at the destination.
        """
        if start not in self.lanes or goal not in self.lanes:
            raise RouteError(f"unknown lane in route query: {start} -> {goal}")
        parent = {start: None}
        frontier = [start]
        while frontier and goal not in parent:
            nxt = []
            for lid in frontier:
                ln = self.lanes[lid]
                hops = list(ln.successors)
                for nb in (ln.left_neighbor, ln.right_neighbor):
                    if nb:
                        hops.append(nb)
                for h in sorted(hops):
                    if h not in parent:
                        parent[h] = lid
                        nxt.append(h)
            frontier = nxt
        if goal not in parent:
            raise RouteError(f"no route from {start} to {goal}")
        route = []
        cur = goal
        while cur is not None:
            route.append(cur)
            cur = parent[cur]
        route.reverse()

        if goal_s is None:
            goal_s = self.lanes[goal].length
        checkpoints = []
        dist_acc = 0.0
        next_cp = checkpoint_spacing
        for i, lid in enumerate(route):
            ln = self.lanes[lid]
            end_s = goal_s if i == len(route) - 1 else ln.length
            is_lane_change = (
                i + 1 < len(route)
                and route[i + 1] in (ln.left_neighbor, ln.right_neighbor)
            )
            if is_lane_change:
                continue  # lateral hop: no longitudinal progress on this lane
            while next_cp <= dist_acc + end_s:
                s_local = next_cp - dist_acc
                checkpoints.append(tuple(ln.point_at(s_local, 0.0)))
                next_cp += checkpoint_spacing
            dist_acc += end_s
        dest_pose = tuple(self.lanes[goal].point_at(goal_s, 0.0))
        if not checkpoints or np.hypot(
            checkpoints[-1][0] - dest_pose[0], checkpoints[-1][1] - dest_pose[1]
        ) > 1e-6:
            checkpoints.append(dest_pose)
        return route, checkpoints
