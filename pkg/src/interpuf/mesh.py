"""Manhattan-mesh routing fabric: router transforms, A/B path races and the route digest.

Stage indices of a mesh put every tile first (row-major) and then every
link: horizontal links row by row, then vertical links row by row. A
monotone path through h hops therefore visits 2h + 1 stages
(tile, link, tile, ..., tile).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gf2
from .errors import DimensionMismatchError, InfeasibleError, InsufficientStableBitsError, SingularMatrixError
from .puf import DeviceModel, evaluate_noisefree, evaluate_noisy, lift, phi_map, read_votes, vote
from .rng import derive_seed, stream

PERMUTATIONS_PER_PAIR = 8
DIGEST_BITS = 256
POLARITY_RATE = 1 / 16
COMBINER_WINDOW = 32
_GOLDEN = 0x9E3779B9


# -- topology -----------------------------------------------------------------


@dataclass(frozen=True)
class MeshTopology:
    rows: int = 16
    cols: int = 16

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InfeasibleError("mesh needs at least one tile")

    @property
    def n_tiles(self) -> int:
        return self.rows * self.cols

    @property
    def n_links(self) -> int:
        return self.rows * (self.cols - 1) + (self.rows - 1) * self.cols

    @property
    def n_stages(self) -> int:
        return self.n_tiles + self.n_links

    def tile(self, r: int, c: int) -> int:
        return r * self.cols + c

    def coords(self, tile: int) -> tuple[int, int]:
        return divmod(tile, self.cols)

    def distance(self, a: int, b: int) -> int:
        (r1, c1), (r2, c2) = self.coords(a), self.coords(b)
        return abs(r1 - r2) + abs(c1 - c2)

    def link_stage(self, a: int, b: int) -> int:
        """Stage index of the link joining neighbouring tiles ``a`` and ``b``."""
        (r1, c1), (r2, c2) = self.coords(min(a, b)), self.coords(max(a, b))
        if r1 == r2 and c2 == c1 + 1:
            return self.n_tiles + r1 * (self.cols - 1) + c1
        if c1 == c2 and r2 == r1 + 1:
            return self.n_tiles + self.rows * (self.cols - 1) + r1 * self.cols + c1
        raise ValueError(f"tiles {a} and {b} are not neighbours")

    def neighbours(self, tile: int) -> list[int]:
        r, c = self.coords(tile)
        out = []
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            if 0 <= r + dr < self.rows and 0 <= c + dc < self.cols:
                out.append(self.tile(r + dr, c + dc))
        return out

    def path_stages(self, path: Sequence[int]) -> list[int]:
        stages = [path[0]]
        for a, b in zip(path, path[1:]):
            stages += [self.link_stage(a, b), b]
        return stages


# -- router configuration -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class RouterConfig:
    """Stage permutation, sparse polarity flips and banded GF(2) mixing for one width."""

    config_id: int
    permutation: np.ndarray
    polarity_mask: np.ndarray
    mixing_matrix: np.ndarray

    def __post_init__(self):
        n = self.width
        if sorted(self.permutation.tolist()) != list(range(n)):
            raise ValueError("permutation is not a bijection")
        if self.polarity_mask.shape != (n,) or self.mixing_matrix.shape != (n, n):
            raise DimensionMismatchError("transform widths disagree")
        if not gf2.is_invertible(self.mixing_matrix):
            raise SingularMatrixError("mixing matrix is singular")

    @property
    def width(self) -> int:
        return int(self.permutation.size)

    @cached_property
    def inverse_permutation(self) -> np.ndarray:
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(self.width)
        return inv

    @cached_property
    def mixing_inverse(self) -> np.ndarray:
        return gf2.inverse(self.mixing_matrix)

    @classmethod
    def identity(cls, width: int, config_id: int = 0) -> "RouterConfig":
        return cls(config_id, np.arange(width), np.zeros(width, dtype=np.uint8), np.eye(width, dtype=np.uint8))

    def _check(self, bits) -> np.ndarray:
        x = np.asarray(bits, dtype=np.uint8)
        if x.shape[-1] != self.width:
            raise DimensionMismatchError(f"challenge width {x.shape[-1]} != stage depth {self.width}")
        return x

    def wrap(self, raw) -> np.ndarray:
        """Mix, flip polarities, then permute stage order."""
        y = gf2.matvec(self.mixing_matrix, self._check(raw)) ^ self.polarity_mask
        return y[..., self.permutation]

    def unwrap(self, wrapped) -> np.ndarray:
        y = self._check(wrapped)[..., self.inverse_permutation] ^ self.polarity_mask
        return gf2.matvec(self.mixing_inverse, y)


def generate_config(config_id: int, width: int) -> RouterConfig:
    rng = stream(config_id, "router", width)
    permutation = rng.permutation(width)
    polarity = (rng.random(width) < POLARITY_RATE).astype(np.uint8)
    mixing = gf2.banded_invertible(width, rng)
    return RouterConfig(config_id, permutation, polarity, mixing)


def wrap_challenge(cfg: RouterConfig, raw) -> np.ndarray:
    return cfg.wrap(raw)


@dataclass(frozen=True, eq=False)
class InputHash:
    """Invertible GF(2) matrix applied to external challenges."""

    matrix: np.ndarray

    def __post_init__(self):
        if not gf2.is_invertible(self.matrix):
            raise SingularMatrixError("input hash matrix must be invertible")

    @cached_property
    def inverse(self) -> np.ndarray:
        return gf2.inverse(self.matrix)

    def apply(self, challenge) -> np.ndarray:
        return gf2.matvec(self.matrix, challenge)

    def invert(self, hashed) -> np.ndarray:
        return gf2.matvec(self.inverse, hashed)


def make_input_hash(seed: int, width: int) -> InputHash:
    return InputHash(gf2.random_invertible(width, stream(seed, "input-hash", width)))


def input_hash(h: InputHash | np.ndarray, challenge) -> np.ndarray:
    h = h if isinstance(h, InputHash) else InputHash(np.asarray(h, dtype=np.uint8))
    return h.apply(challenge)


# -- path pairs ---------------------------------------------------------------


@dataclass(frozen=True)
class PathPair:
    source: int
    sink: int
    path_a: tuple[int, ...]
    path_b: tuple[int, ...]
    permutation_index: int

    @property
    def hops(self) -> int:
        return len(self.path_a) - 1

    @property
    def depth(self) -> int:
        return 2 * self.hops + 1

    def swapped(self) -> "PathPair":
        return PathPair(self.source, self.sink, self.path_b, self.path_a, self.permutation_index)

    def key(self) -> dict:
        return {"source": self.source, "sink": self.sink, "permutation_index": self.permutation_index}


def _random_monotone_path(mesh: MeshTopology, source: int, sink: int, rng: np.random.Generator) -> tuple[int, ...]:
    (r1, c1), (r2, c2) = mesh.coords(source), mesh.coords(sink)
    dr, dc = int(np.sign(r2 - r1)), int(np.sign(c2 - c1))
    moves = [(dr, 0)] * abs(r2 - r1) + [(0, dc)] * abs(c2 - c1)
    rng.shuffle(moves)
    r, c = r1, c1
    path = [source]
    for mr, mc in moves:
        r, c = r + mr, c + mc
        path.append(mesh.tile(r, c))
    return tuple(path)


def path_permutations(mesh: MeshTopology, source: int, sink: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """The 8 distinct (A, B) shortest-path combinations for a source/sink pair."""
    (r1, c1), (r2, c2) = mesh.coords(source), mesh.coords(sink)
    dr, dc = abs(r2 - r1), abs(c2 - c1)
    if math.comb(dr + dc, dr) < 4:
        raise InfeasibleError("source/sink pair admits too few distinct shortest paths")
    rng = stream(source, "paths", sink, mesh.rows, mesh.cols)
    combos: list = []
    while len(combos) < PERMUTATIONS_PER_PAIR:
        a = _random_monotone_path(mesh, source, sink, rng)
        b = _random_monotone_path(mesh, source, sink, rng)
        if a != b and (a, b) not in combos:
            combos.append((a, b))
    return combos


def make_pair(mesh: MeshTopology, source: int, sink: int, permutation_index: int) -> PathPair:
    a, b = path_permutations(mesh, source, sink)[permutation_index]
    return PathPair(source, sink, a, b, permutation_index)


def enumerate_path_pairs(mesh: MeshTopology, count: int, hop_range: tuple[int, int] = (20, 30),
                         seed: int = 0) -> list[PathPair]:
    """``count`` source/sink pairs with distance in ``hop_range``, 8 permutations each."""
    lo, hi = hop_range
    if lo > hi or lo < 2 or lo > (mesh.rows - 1) + (mesh.cols - 1):
        raise InfeasibleError(f"hop range {hop_range} infeasible on a {mesh.rows}x{mesh.cols} mesh")
    rng = stream(seed, "pair-endpoints", mesh.rows, mesh.cols)
    chosen: list[tuple[int, int]] = []
    attempts = 0
    while len(chosen) < count:
        attempts += 1
        if attempts > 10000 * max(count, 1):
            raise InfeasibleError("could not find enough distinct source/sink pairs")
        s, t = (int(x) for x in rng.integers(0, mesh.n_tiles, size=2))
        d = mesh.distance(s, t)
        (r1, c1), (r2, c2) = mesh.coords(s), mesh.coords(t)
        if not lo <= d <= hi or r1 == r2 or c1 == c2 or (s, t) in chosen:
            continue
        if math.comb(d, abs(r2 - r1)) < 4:
            continue
        chosen.append((s, t))
    pairs = []
    for s, t in chosen:
        for k, (a, b) in enumerate(path_permutations(mesh, s, t)):
            pairs.append(PathPair(s, t, a, b, k))
    return pairs


# -- races --------------------------------------------------------------------


def race_config(cfg: RouterConfig, pair: PathPair) -> RouterConfig:
    """Per-race transform derived from the mesh config and the pair identity."""
    return generate_config(
        derive_seed(cfg.config_id, "race", pair.source, pair.sink, pair.permutation_index), pair.depth
    )


def race_device(dev: DeviceModel, mesh: MeshTopology, pair: PathPair, corner: int | None = None) -> DeviceModel:
    """Differential model of one race: stage i contributes w[a_i] - w[b_i].

    The arbiter bias is shared by both paths and cancels. Tap couplings are
    scaled by the stage difference at their first tap so the whole margin
    changes sign when A and B are exchanged.
    """
    if dev.n_stages < mesh.n_stages:
        raise DimensionMismatchError("device has fewer stages than the mesh")
    w, taps = dev.corner_weights(corner)
    a = mesh.path_stages(pair.path_a)
    b = mesh.path_stages(pair.path_b)
    diff = w[:, a] - w[:, b]
    eff = np.concatenate([diff, np.zeros((dev.k_chains, 1))], axis=1)
    depth = pair.depth
    tap_pairs = [(i % depth, j % depth) for i, j in dev.tap_pairs]
    tap_eff = taps * diff[:, [p for p, _ in tap_pairs]] if tap_pairs else None
    return DeviceModel.from_weights(eff, tap_pairs, tap_eff, dev.noise_eps, dev.device_id, dev.seed)


@dataclass
class RaceEngine:
    """Caches per-race configs and differential models for one device on one mesh."""

    dev: DeviceModel
    mesh: MeshTopology
    cfg: RouterConfig
    _configs: dict = field(default_factory=dict, repr=False)
    _models: dict = field(default_factory=dict, repr=False)

    def config_for(self, pair: PathPair) -> RouterConfig:
        key = (pair.source, pair.sink, pair.permutation_index)
        if key not in self._configs:
            self._configs[key] = race_config(self.cfg, pair)
        return self._configs[key]

    def model_for(self, pair: PathPair, corner: int | None = None) -> DeviceModel:
        key = (pair.source, pair.sink, pair.permutation_index, pair.path_a, corner)
        if key not in self._models:
            self._models[key] = race_device(self.dev, self.mesh, pair, corner)
        return self._models[key]

    def features(self, pair: PathPair, challenge) -> np.ndarray:
        c = np.asarray(challenge, dtype=np.uint8)
        if c.shape[-1] != pair.depth:
            raise DimensionMismatchError(f"challenge width {c.shape[-1]} != stage depth {pair.depth}")
        return phi_map(self.config_for(pair).wrap(c))

    def race(self, pair: PathPair, challenge, rng: np.random.Generator | None = None) -> int:
        model = self.model_for(pair)
        f = self.features(pair, challenge)
        return evaluate_noisefree(model, f) if rng is None else evaluate_noisy(model, f, rng)

    def votes(self, pair: PathPair, challenge, repetitions: int, rng: np.random.Generator,
              sweep_corners: bool = False) -> np.ndarray:
        f = self.features(pair, challenge)
        if not sweep_corners:
            return read_votes(self.model_for(pair), f, repetitions, rng)
        clean = np.array([evaluate_noisefree(self.model_for(pair, r), f) for r in range(repetitions)], dtype=np.uint8)
        return clean ^ (rng.random(repetitions) < self.dev.noise_eps).astype(np.uint8)


def race(dev: DeviceModel, cfg: RouterConfig, pair: PathPair, challenge, mesh: MeshTopology | None = None,
         rng: np.random.Generator | None = None) -> int:
    mesh = mesh or MeshTopology()
    return RaceEngine(dev, mesh, cfg).race(pair, challenge, rng)


def enrollment_challenges(seed: int, pairs: Sequence[PathPair]) -> list[np.ndarray]:
    """One deterministic challenge per candidate race."""
    return [stream(seed, "enroll-challenge", i).integers(0, 2, p.depth, dtype=np.uint8) for i, p in enumerate(pairs)]


# -- digest -------------------------------------------------------------------


def serialize_bits(bits: Sequence[int]) -> bytes:
    """32-bit big-endian bit count followed by the bits packed MSB-first."""
    b = np.asarray(bits, dtype=np.uint8)
    return len(b).to_bytes(4, "big") + np.packbits(b).tobytes()


@dataclass(frozen=True)
class RouteDigest:
    device_id: str
    candidate_count: int
    stable_count: int
    digest: bytes
    stable_bits: tuple[int, ...] = field(repr=False, default=())

    @property
    def retention(self) -> float:
        return self.stable_count / self.candidate_count if self.candidate_count else 0.0

    def report(self) -> dict:
        return {
            "device_id": self.device_id,
            "candidate_count": self.candidate_count,
            "stable_count": self.stable_count,
            "retention": round(self.retention, 6),
            "digest_hex": self.digest.hex(),
        }


def candidate_votes(engine: RaceEngine, pairs: Sequence[PathPair], challenges, repetitions: int,
                    rng: np.random.Generator, sweep_corners: bool = True) -> np.ndarray:
    return np.stack([engine.votes(p, c, repetitions, rng, sweep_corners) for p, c in zip(pairs, challenges)])


def build_route_digest(dev: DeviceModel, cfg: RouterConfig, pairs: Sequence[PathPair], challenges,
                       repetitions: int, tau: float, rng: np.random.Generator,
                       mesh: MeshTopology | None = None, sweep_corners: bool = True,
                       n_bits: int = DIGEST_BITS) -> RouteDigest:
    """Majority-vote every candidate, keep flip_rate <= tau, hash the first ``n_bits`` survivors."""
    if len(pairs) != len(challenges):
        raise DimensionMismatchError("one challenge per candidate pair is required")
    engine = RaceEngine(dev, mesh or MeshTopology(), cfg)
    votes = candidate_votes(engine, pairs, challenges, repetitions, rng, sweep_corners)
    bits, rates = vote(votes)
    stable = bits[rates <= tau]
    if stable.size < n_bits:
        raise InsufficientStableBitsError(f"{stable.size} stable bits survived, {n_bits} needed")
    kept = stable[:n_bits]
    digest = hashlib.sha256(serialize_bits(kept)).digest()
    return RouteDigest(dev.device_id, len(pairs), int(stable.size), digest, tuple(int(x) for x in kept))


# -- response combiner --------------------------------------------------------


def fmix32(h: np.ndarray) -> np.ndarray:
    """MurmurHash3 finaliser: a bijection on 32-bit words with full avalanche."""
    h = np.asarray(h, dtype=np.uint32).copy()
    h ^= h >> np.uint32(16)
    h *= np.uint32(0x85EBCA6B)
    h ^= h >> np.uint32(13)
    h *= np.uint32(0xC2B2AE35)
    h ^= h >> np.uint32(16)
    return h


def response_combine(stable_bits, window: int = COMBINER_WINDOW) -> tuple[np.ndarray, int]:
    """Diffuse each 32-bit window and emit +/-1 symbols (bit 0 -> +1).

    The tail window is zero-padded; the original bit length is returned
    alongside the symbols.
    """
    if window != 32:
        raise ValueError("the combiner diffuses 32-bit words")
    bits = np.asarray(stable_bits, dtype=np.uint8).reshape(-1)
    n = bits.size
    padded = np.zeros(((n + 31) // 32) * 32, dtype=np.uint8)
    padded[:n] = bits
    words = np.packbits(padded.reshape(-1, 4, 8), axis=-1).reshape(-1, 4)
    values = words.astype(">u1").view(">u4").reshape(-1).astype(np.uint32)
    mixed = fmix32(values ^ np.uint32(_GOLDEN))
    out_bits = np.unpackbits(mixed.astype(">u4").view(np.uint8).reshape(-1, 4), axis=1)
    return (1 - 2 * out_bits.astype(np.int8)).reshape(-1), n


# -- description files --------------------------------------------------------


def describe(mesh: MeshTopology, cfg: RouterConfig, pairs: Sequence[PathPair]) -> dict:
    return {"rows": mesh.rows, "cols": mesh.cols, "config_id": cfg.config_id,
            "pairs": [p.key() for p in pairs]}


def load_description(data: dict | str | Path) -> tuple[MeshTopology, int, list[PathPair]]:
    if not isinstance(data, dict):
        data = json.loads(Path(data).read_text())
    mesh = MeshTopology(int(data["rows"]), int(data["cols"]))
    pairs = [make_pair(mesh, int(p["source"]), int(p["sink"]), int(p["permutation_index"])) for p in data["pairs"]]
    return mesh, int(data["config_id"]), pairs
