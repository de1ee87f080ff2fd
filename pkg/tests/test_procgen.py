import collections

import numpy as np
import pytest

from drivesim import blocks, procgen, scenario_io
from drivesim.procgen import ConfigError, PGConfig


class TestGetNewBlock:
    def test_forced_type(self):
        rng = procgen.make_rng(0)
        b = procgen.get_new_block(rng, "Straight", 2, 3.5, "b1")
        assert b.block_type == "Straight"
        assert len(b.sockets) == 2
        lo, hi = blocks.PARAM_SPACES["Straight"]["length"]
        assert lo <= b.params["length"] <= hi

    def test_uniform_type_frequencies(self):
        rng = procgen.make_rng(0)
        counts = collections.Counter(
            procgen.get_new_block(rng, None, 1, 3.5).block_type
            for _ in range(7000)
        )
        assert set(counts) == set(blocks.BLOCK_TYPES)
        for t, c in counts.items():
            assert 800 <= c <= 1200, (t, c)

    def test_determinism(self):
        b1 = procgen.get_new_block(procgen.make_rng(9), None, 2, 3.5, "b1")
        b2 = procgen.get_new_block(procgen.make_rng(9), None, 2, 3.5, "b1")
        assert b1.block_type == b2.block_type
        assert b1.params == b2.params


class TestBig:
    def test_target_already_reached(self):
        net = procgen.new_network()
        rng = procgen.make_rng(0)
        out, ok = procgen.big(10, net, 0, rng)
        assert ok and out is net and len(net.blocks) == 1

    def test_exhaustion_restores_network(self):
        # roads 1 block long can never fit an n=2 sequence docked back into
        # themselves; force failure with a candidate that always collides
        net = procgen.new_network(1, 3.5)
        before = scenario_io.map_hash(net)

        class CollidingRng:
            def integers(self, n):
                return 0

            def uniform(self, lo, hi):
                return lo

        # monkeypatch-free adversarial setup: sequence of U-turn curves that
        # must curl back over the spawn road within one try
        rng = procgen.make_rng(1)
        orig = net.crossover_test
        net.crossover_test = lambda b: True
        out, ok = procgen.big(1, net, 2, rng)
        net.crossover_test = orig
        assert not ok
        assert scenario_io.map_hash(net) == before

    def test_success_block_count_and_oracle(self):
        rng = procgen.make_rng(0)
        net = procgen.new_network()
        net, ok = procgen.big(40, net, 3, rng)
        assert ok
        assert len(net.blocks) == 4
        assert crossfree_oracle(net)


def crossfree_oracle(net):
    """Independent brute-force boundary-crossing check using shapely."""
    from shapely.geometry import LineString, Point

    joints = []
    for rec in net._append_log:
        _, target, *_ = rec
        if target is not None:
            joints.append((Point(target.anchor[:2]),
                           target.num_slots * net.lane_width / 2 + net.lane_width))
    per_block = []
    for b in net.blocks:
        polys = []
        for ln in b.lanes.values():
            for poly in ln.boundary_polylines():
                polys.append(LineString(poly))
        per_block.append(polys)
    for i in range(len(per_block)):
        for j in range(i + 1, len(per_block)):
            for p in per_block[i]:
                for q in per_block[j]:
                    if p.distance(q) <= 1e-3:
                        inter = p.buffer(1e-3).intersection(q)
                        rep = inter.centroid if not inter.is_empty else None
                        if rep is None or rep.is_empty:
                            continue
                        if not any(rep.distance(c) <= r for c, r in joints):
                            return False
    return True


class TestGenerateMaps:
    def test_count_and_distinct_hashes(self):
        maps = procgen.generate_maps(
            PGConfig(max_tries=40, block_count=3, map_count=5, seed=7))
        assert len(maps) == 5
        hashes = [scenario_io.map_hash(m) for m in maps]
        assert len(set(hashes)) == 5
        for m in maps:
            assert len(m.blocks) == 4

    def test_single_map_single_block(self):
        maps = procgen.generate_maps(PGConfig(block_count=1, map_count=1, seed=0))
        assert len(maps) == 1
        assert len(maps[0].blocks) == 2

    def test_determinism(self):
        cfg = PGConfig(block_count=3, map_count=3, seed=42)
        h1 = [scenario_io.map_hash(m) for m in procgen.generate_maps(cfg)]
        h2 = [scenario_io.map_hash(m) for m in procgen.generate_maps(cfg)]
        assert h1 == h2


class TestBuildFromConfig:
    def test_block_sequence_same_order_different_shapes(self):
        seq = ["Curve", "Straight", "TIntersection"]
        m1 = procgen.build_from_config({"type": "block_sequence", "sequence": seq,
                                        "block_num": 3, "seed": 1})
        m2 = procgen.build_from_config({"type": "block_sequence", "sequence": seq,
                                        "block_num": 3, "seed": 2})
        types1 = [b.block_type for b in m1.blocks[1:]]
        types2 = [b.block_type for b in m2.blocks[1:]]
        assert types1 == seq and types2 == seq
        assert scenario_io.map_hash(m1) != scenario_io.map_hash(m2)

    def test_block_num(self):
        m = procgen.build_from_config({"type": "block_num", "block_num": 5, "seed": 0})
        assert len(m.blocks) == 6

    def test_sequence_length_mismatch(self):
        with pytest.raises(ConfigError):
            procgen.build_from_config({
                "type": "block_sequence", "sequence": ["Straight"],
                "block_num": 3, "seed": 0,
            })

    def test_unknown_type(self):
        with pytest.raises(ConfigError):
            procgen.build_from_config({"type": "bogus", "seed": 0})
