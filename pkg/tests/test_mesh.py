from __future__ import annotations

import hashlib
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interpuf import gf2
from interpuf.config import RunConfig
from interpuf.errors import DimensionMismatchError, InfeasibleError, InsufficientStableBitsError, SingularMatrixError
from interpuf.mesh import (
    InputHash, MeshTopology, RaceEngine, RouterConfig, build_route_digest, describe, enrollment_challenges,
    enumerate_path_pairs, fmix32, generate_config, input_hash, load_description, make_input_hash, race,
    response_combine, serialize_bits, wrap_challenge,
)
from interpuf.puf import instantiate_device
from interpuf.rng import stream
from interpuf.scenario import build_interposer
from interpuf.metrics import pairwise_hd


def all_inputs(n):
    return np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.uint8)


class TestTopology:
    def test_stage_count_is_tiles_plus_links(self):
        m = MeshTopology(4, 4)
        assert (m.n_tiles, m.n_links, m.n_stages) == (16, 24, 40)
        assert MeshTopology().n_stages == 256 + 480

    def test_link_stage_indices_unique(self):
        m = MeshTopology(5, 7)
        stages = {m.link_stage(t, n) for t in range(m.n_tiles) for n in m.neighbours(t)}
        assert stages == set(range(m.n_tiles, m.n_stages))

    def test_fully_connected(self):
        m = MeshTopology(6, 5)
        seen, todo = {0}, [0]
        while todo:
            for n in m.neighbours(todo.pop()):
                if n not in seen:
                    seen.add(n)
                    todo.append(n)
        assert len(seen) == m.n_tiles


class TestRouterConfig:
    def test_deterministic(self):
        a, b = generate_config(42, 30), generate_config(42, 30)
        assert np.array_equal(a.permutation, b.permutation)
        assert np.array_equal(a.polarity_mask, b.polarity_mask)
        assert np.array_equal(a.mixing_matrix, b.mixing_matrix)

    def test_mixing_full_rank_for_100_ids(self):
        assert all(gf2.rank(generate_config(i, 40).mixing_matrix) == 40 for i in range(100))

    def test_mixing_is_banded(self):
        m = generate_config(3, 60).mixing_matrix
        i, j = np.nonzero(m)
        # L and U each reach two diagonals, so their product stays within four.
        assert np.all(np.abs(i - j) <= 4)

    def test_permutation_inverse(self):
        cfg = generate_config(9, 50)
        assert np.array_equal(cfg.permutation[cfg.inverse_permutation], np.arange(50))
        assert np.array_equal(cfg.inverse_permutation[cfg.permutation], np.arange(50))

    def test_polarity_sparse(self):
        rate = np.mean([generate_config(i, 64).polarity_mask.mean() for i in range(200)])
        assert abs(rate - 1 / 16) < 0.01

    def test_identity_wrap(self, rng):
        c = rng.integers(0, 2, 20)
        assert np.array_equal(wrap_challenge(RouterConfig.identity(20), c), c)

    def test_round_trip_1000(self, rng):
        cfg = generate_config(5, 40)
        c = rng.integers(0, 2, (1000, 40))
        assert np.array_equal(cfg.unwrap(cfg.wrap(c)), c)

    def test_exhaustive_bijection_n12(self):
        cfg = generate_config(17, 12)
        out = cfg.wrap(all_inputs(12))
        assert len({tuple(r) for r in out}) == 4096

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            generate_config(1, 10).wrap(np.zeros(11, dtype=np.uint8))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**40), st.integers(2, 120))
    def test_round_trip_property(self, cid, width):
        cfg = generate_config(cid, width)
        c = stream(cid, "x").integers(0, 2, (8, width))
        assert np.array_equal(cfg.unwrap(cfg.wrap(c)), c)


class TestInputHash:
    def test_identity(self, rng):
        c = rng.integers(0, 2, 16)
        assert np.array_equal(input_hash(np.eye(16, dtype=np.uint8), c), c)

    def test_inverse_round_trip(self, rng):
        h = make_input_hash(3, 40)
        c = rng.integers(0, 2, (1000, 40))
        assert np.array_equal(h.invert(h.apply(c)), c)
        assert np.array_equal(gf2.matmul(h.matrix, h.inverse), np.eye(40, dtype=np.uint8))

    def test_singular_rejected(self):
        m = np.eye(4, dtype=np.uint8)
        m[3] = m[2]
        with pytest.raises(SingularMatrixError):
            InputHash(m)

    def test_exhaustive_permutation_and_uniform_bits_n12(self):
        h = make_input_hash(8, 12)
        out = h.apply(all_inputs(12))
        assert len({tuple(r) for r in out}) == 4096
        # A bijection on the space makes every output bit exactly balanced: chi-square is 0.
        ones = out.sum(axis=0)
        chi2 = ((ones - 2048) ** 2 / 2048 + (4096 - ones - 2048) ** 2 / 2048)
        assert np.all(chi2 == 0)


class TestPathPairs:
    @pytest.mark.parametrize("count", [40, 80])
    def test_candidate_counts(self, count):
        pairs = enumerate_path_pairs(MeshTopology(), count, (20, 30), seed=1)
        assert len(pairs) == 8 * count
        assert len({(p.source, p.sink) for p in pairs}) == count

    def test_paths_valid_and_equal_length(self):
        m = MeshTopology()
        for p in enumerate_path_pairs(m, 10, (20, 30), seed=2):
            assert 20 <= m.distance(p.source, p.sink) <= 30
            assert len(p.path_a) == len(p.path_b) == p.hops + 1
            assert p.path_a != p.path_b
            for path in (p.path_a, p.path_b):
                assert path[0] == p.source and path[-1] == p.sink
                assert all(m.distance(a, b) == 1 for a, b in zip(path, path[1:]))

    def test_infeasible_on_small_mesh(self):
        with pytest.raises(InfeasibleError):
            enumerate_path_pairs(MeshTopology(2, 2), 4, (20, 30))

    def test_description_round_trip(self, tmp_path):
        m = MeshTopology()
        pairs = enumerate_path_pairs(m, 3, seed=4)
        path = tmp_path / "mesh.json"
        path.write_text(json.dumps(describe(m, generate_config(5, m.n_stages), pairs)))
        m2, cid, pairs2 = load_description(path)
        assert (m2, cid, pairs2) == (m, 5, pairs)


@pytest.fixture(scope="module")
def setup():
    m = MeshTopology()
    pairs = enumerate_path_pairs(m, 4, seed=3)
    return m, pairs, generate_config(11, m.n_stages)


class TestRace:
    def test_deterministic(self, setup):
        m, pairs, cfg = setup
        dev = instantiate_device(1, 4, m.n_stages, 0.0)
        ch = stream(0, "c").integers(0, 2, pairs[0].depth)
        assert race(dev, cfg, pairs[0], ch, m) == race(instantiate_device(1, 4, m.n_stages, 0.0), cfg, pairs[0], ch, m)

    def test_devices_differ(self, setup):
        m, pairs, cfg = setup
        ch = stream(0, "c").integers(0, 2, (256, pairs[0].depth))
        e1 = RaceEngine(instantiate_device(1, 4, m.n_stages, 0.0), m, cfg)
        e2 = RaceEngine(instantiate_device(2, 4, m.n_stages, 0.0), m, cfg)
        assert any(e1.race(pairs[0], c) != e2.race(pairs[0], c) for c in ch)

    def test_noise_free_repeats(self, setup):
        m, pairs, cfg = setup
        eng = RaceEngine(instantiate_device(1, 4, m.n_stages, 0.0), m, cfg)
        ch = stream(0, "c").integers(0, 2, pairs[1].depth)
        assert len({eng.race(pairs[1], ch, np.random.default_rng(i)) for i in range(16)}) == 1

    def test_wrong_width(self, setup):
        m, pairs, cfg = setup
        with pytest.raises(DimensionMismatchError):
            race(instantiate_device(1, 4, m.n_stages), cfg, pairs[0], np.zeros(5, dtype=np.uint8), m)

    def test_swap_negates_odd_k(self, setup):
        m, pairs, cfg = setup
        eng = RaceEngine(instantiate_device(1, 5, m.n_stages, 0.0), m, cfg)
        for p in pairs[:8]:
            for c in stream(1, "c").integers(0, 2, (50, p.depth)):
                assert eng.race(p, c) != eng.race(p.swapped(), c)

    def test_swap_preserves_even_k(self, setup):
        # Every chain margin changes sign, so an even number of chain flips cancels in the XOR.
        m, pairs, cfg = setup
        eng = RaceEngine(instantiate_device(1, 4, m.n_stages, 0.0), m, cfg)
        for p in pairs[:8]:
            for c in stream(1, "c").integers(0, 2, (50, p.depth)):
                assert eng.race(p, c) == eng.race(p.swapped(), c)


class TestDigest:
    def test_deterministic_at_zero_noise(self):
        m = MeshTopology()
        dev = instantiate_device(5, 4, m.n_stages, 0.0)
        pairs = enumerate_path_pairs(m, 40, seed=5)
        cfg = generate_config(5, m.n_stages)
        ch = enrollment_challenges(5, pairs)
        d1 = build_route_digest(dev, cfg, pairs, ch, 5, 0.2, stream(1, "a"), m)
        d2 = build_route_digest(dev, cfg, pairs, ch, 5, 0.2, stream(2, "b"), m)
        assert d1.digest == d2.digest and d1.stable_count == 320
        assert d1.digest == hashlib.sha256(serialize_bits(d1.stable_bits)).digest()
        assert set(d1.report()) == {"device_id", "candidate_count", "stable_count", "retention", "digest_hex"}

    def test_insufficient_stable_bits(self):
        m = MeshTopology()
        pairs = enumerate_path_pairs(m, 13, seed=5)[:100]
        with pytest.raises(InsufficientStableBitsError):
            build_route_digest(instantiate_device(5, 4, m.n_stages, 0.0), generate_config(1, m.n_stages), pairs,
                               enrollment_challenges(5, pairs), 5, 0.0, stream(0), m)

    def test_serialization_layout(self):
        assert serialize_bits([1, 0, 1]) == b"\x00\x00\x00\x03\xa0"

    def test_default_retention_in_band(self):
        cfg = RunConfig()
        d = build_interposer(cfg, 0).digest(cfg)
        assert d.candidate_count == 640
        assert 0.60 <= d.retention <= 0.95
        assert d.stable_count >= 256

    @pytest.mark.slow
    def test_devices_give_unrelated_digests(self):
        m = MeshTopology()
        pairs = enumerate_path_pairs(m, 40, seed=5)
        cfg = generate_config(5, m.n_stages)
        ch = enrollment_challenges(5, pairs)
        digests = [build_route_digest(instantiate_device(s, 4, m.n_stages, 0.0), cfg, pairs, ch, 5, 0.2,
                                      stream(s), m).digest for s in range(12)]
        bits = np.unpackbits(np.frombuffer(b"".join(digests), dtype=np.uint8).reshape(12, 32), axis=1)
        assert 0.45 <= pairwise_hd(bits).mean() <= 0.55

    def test_single_bit_flip_avalanche(self, rng):
        dists = []
        for _ in range(1000):
            bits = rng.integers(0, 2, 256)
            flipped = bits.copy()
            flipped[rng.integers(256)] ^= 1
            a = np.unpackbits(np.frombuffer(hashlib.sha256(serialize_bits(bits)).digest(), dtype=np.uint8))
            b = np.unpackbits(np.frombuffer(hashlib.sha256(serialize_bits(flipped)).digest(), dtype=np.uint8))
            dists.append(np.sum(a != b))
        assert 112 <= np.mean(dists) <= 144


class TestCombiner:
    def test_zero_window_constant(self):
        sym, n = response_combine(np.zeros(32, dtype=np.uint8))
        expected = int(fmix32(np.array([0x9E3779B9], dtype=np.uint32))[0])
        bits = [(expected >> (31 - i)) & 1 for i in range(32)]
        assert n == 32 and list(sym) == [1 - 2 * b for b in bits]

    def test_fmix32_known_value(self):
        # MurmurHash3 fmix32(1) reference value.
        assert int(fmix32(np.array([1], dtype=np.uint32))[0]) == 0x514E28B7

    def test_avalanche(self, rng):
        changes = []
        for _ in range(1000):
            bits = rng.integers(0, 2, 32)
            flipped = bits.copy()
            flipped[rng.integers(32)] ^= 1
            changes.append(np.sum(response_combine(bits)[0] != response_combine(flipped)[0]))
        assert np.mean(changes) >= 10

    def test_padding_and_length(self, rng):
        bits = rng.integers(0, 2, 70)
        sym, n = response_combine(bits)
        assert n == 70 and sym.size == 96
        padded = np.concatenate([bits, np.zeros(26, dtype=np.int64)])
        assert np.array_equal(sym, response_combine(padded)[0])

    def test_identical_inputs(self, rng):
        bits = rng.integers(0, 2, 64)
        assert np.array_equal(response_combine(bits)[0], response_combine(bits.copy())[0])

    def test_fmix32_bijective_on_sample(self, rng):
        x = rng.integers(0, 2**32, 100_000, dtype=np.uint64).astype(np.uint32)
        x = np.unique(x)
        assert np.unique(fmix32(x)).size == x.size
