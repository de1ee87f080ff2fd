"""Search-based incremental map generation.

Maps are grown block by block: each candidate is docked onto a randomly
chosen open socket, kept if its boundaries do not cross the existing
network, and reverted otherwise with backtracking.  All randomness flows
through numpy's PCG64 generator seeded from a 64-bit seed, forked per
generation attempt so every map is independently reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import blocks
from .roadnet import DockingError, RoadNetwork, dock_socket


class ConfigError(Exception):
    pass


class GenerationExhausted(Exception):
    """Raised when the retry budget is spent without producing enough maps."""


@dataclass
class PGConfig:
    max_tries: int = 40  # candidate attempts per block before backtracking
    block_count: int = 3  # blocks per map beyond the spawn block
    map_count: int = 1
    type: str = "block_num"  # "block_num" | "block_sequence"
    sequence: list | None = None
    seed: int = 0
    num_lanes: int = 2
    lane_width: float = 3.5

    def validate(self):
        if self.max_tries < 1 or self.block_count < 1 or self.map_count < 1:
            raise ConfigError("max_tries, block_count and map_count must be >= 1")
        if self.type not in ("block_num", "block_sequence"):
            raise ConfigError(f"unknown map config type: {self.type}")
        if self.type == "block_sequence":
            if not self.sequence:
                raise ConfigError("block_sequence config requires a sequence")
            if len(self.sequence) != self.block_count:
                raise ConfigError(
                    f"sequence length {len(self.sequence)} != block count {self.block_count}"
                )
            for t in self.sequence:
                if t not in blocks.BLOCK_TYPES:
                    raise ConfigError(f"unknown block type in sequence: {t}")
        if not (1 <= self.num_lanes <= blocks.MAX_LANES):
            raise ConfigError(f"num_lanes must be in [1, {blocks.MAX_LANES}]")
        return self


def make_rng(seed, fork=None):
    """Seeded PCG64 generator; ``fork`` derives an independent child stream."""
    ss = np.random.SeedSequence(seed) if fork is None else \
        np.random.SeedSequence(seed, spawn_key=(fork,))
    return np.random.Generator(np.random.PCG64(ss))


def get_new_block(rng, forced_type=None, num_lanes=2, lane_width=3.5, bid="b?"):
    """Random undocked block: uniform type (unless forced), uniform params."""
    if forced_type is None:
        btype = blocks.BLOCK_TYPES[int(rng.integers(len(blocks.BLOCK_TYPES)))]
    else:
        if forced_type not in blocks.BLOCK_TYPES:
            raise ConfigError(f"unknown block type: {forced_type}")
        btype = forced_type
    params = blocks.sample_params(btype, rng)
    return blocks.build_block(btype, bid, num_lanes, lane_width, params)


def new_network(num_lanes=2, lane_width=3.5):
    net = RoadNetwork(lane_width=lane_width)
    net.append_block(blocks.build_first_block("b0", num_lanes, lane_width))
    return net


def big(max_tries, net, block_count, rng, sequence=None):
    """Grow ``net`` to ``block_count`` blocks beyond the spawn block.

    Returns (net, success).  On failure the network is restored to its input
    state.  Backtracking uses an explicit stack of per-level try budgets, one
    level per appended block.
    """
    base = len(net.blocks) - 1
    stack = [max_tries]
    while True:
        depth = len(net.blocks) - 1
        if depth >= block_count:
            return net, True
        if stack[-1] <= 0:
            stack.pop()
            if not stack:
                return net, False
            net.pop_last_block()
            continue
        stack[-1] -= 1
        target = net.open_sockets[int(rng.integers(len(net.open_sockets)))]
        forced = sequence[depth] if sequence is not None else None
        bid = f"b{depth + 1}"
        block = get_new_block(rng, forced, target.num_slots, net.lane_width, bid)
        entry = block.entry_socket
        try:
            docked = dock_socket(block, entry, target)
        except DockingError:
            continue
        if net.crossover_test(docked):
            continue
        net.append_block(docked, target)
        stack.append(max_tries)


def generate_map(cfg, attempt_rng):
    """One BIG attempt from a fresh spawn-block network."""
    net = new_network(cfg.num_lanes, cfg.lane_width)
    seq = cfg.sequence if cfg.type == "block_sequence" else None
    return big(cfg.max_tries, net, cfg.block_count, attempt_rng, seq)


def generate_maps(cfg: PGConfig):
    """Produce exactly ``cfg.map_count`` maps, retrying failed attempts."""
    cfg.validate()
    maps = []
    attempt = 0
    budget = 1000 * cfg.map_count
    while len(maps) < cfg.map_count:
        if attempt >= budget:
            raise GenerationExhausted(
                f"gave up after {attempt} attempts ({len(maps)} maps built)"
            )
        rng = make_rng(cfg.seed, fork=attempt)
        attempt += 1
        net, ok = generate_map(cfg, rng)
        if ok:
            maps.append(net)
    return maps


def build_from_config(map_config) -> RoadNetwork:
    """Build a single map from a declarative config mapping."""
    if not isinstance(map_config, dict):
        raise ConfigError("map config must be a mapping")
    cfg = PGConfig(
        max_tries=int(map_config.get("max_tries", 40)),
        block_count=int(
            map_config.get("block_num",
                           len(map_config.get("sequence") or []) or 3)
        ),
        map_count=1,
        type=map_config.get("type", "block_num"),
        sequence=map_config.get("sequence"),
        seed=int(map_config.get("seed", 0)),
        num_lanes=int(map_config.get("num_lanes", 2)),
        lane_width=float(map_config.get("lane_width", 3.5)),
    )
    return generate_maps(cfg)[0]
