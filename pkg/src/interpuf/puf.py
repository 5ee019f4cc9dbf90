"""Additive-delay XOR arbiter PUF with lifted tap features, noise and majority voting.

Response convention: a chain whose delay margin is >= 0 outputs bit 0,
a negative margin outputs bit 1, and the device response is the XOR of the
chain bits. Margins of exactly zero therefore resolve to the +1 side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError
from .rng import stream

MIN_CHAINS = 4
DEFAULT_TAU = 0.2
DEFAULT_R = 5
DEFAULT_EPS = 0.02
DEFAULT_TAPS = 4


@dataclass(frozen=True, eq=False)
class DeviceModel:
    """One simulated chip: K chains of (n_stages + 1) delay weights plus tap couplings.

    ``pvt_sigma`` scales the per-corner weight perturbation used when votes
    are spread over supply/temperature corners (see ``corner_weights``).
    """

    device_id: str
    seed: int
    k_chains: int
    n_stages: int
    weights: np.ndarray
    tap_pairs: tuple[tuple[int, int], ...] = ()
    tap_weights: np.ndarray | None = None
    noise_eps: float = 0.0
    pvt_sigma: float = 0.0
    _corners: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.k_chains < 1:
            raise InvalidParameterError("need at least one chain")
        if self.n_stages < 1:
            raise InvalidParameterError("need at least one stage")
        if not 0.0 <= self.noise_eps < 0.5:
            raise InvalidParameterError("noise_eps must lie in [0, 0.5)")
        if self.weights.shape != (self.k_chains, self.n_stages + 1):
            raise DimensionMismatchError(
                f"weights must be {(self.k_chains, self.n_stages + 1)}, got {self.weights.shape}"
            )
        taps = self.tap_weights if self.tap_weights is not None else np.zeros((self.k_chains, 0))
        if taps.shape != (self.k_chains, len(self.tap_pairs)):
            raise DimensionMismatchError("tap_weights must be (k_chains, n_taps)")
        for i, j in self.tap_pairs:
            if not (0 <= i <= self.n_stages and 0 <= j <= self.n_stages):
                raise DimensionMismatchError(f"tap pair {(i, j)} outside feature range")
        object.__setattr__(self, "tap_weights", taps)
        self.weights.setflags(write=False)
        taps.setflags(write=False)

    @classmethod
    def from_weights(cls, weights, tap_pairs: Sequence[tuple[int, int]] = (), tap_weights=None,
                     noise_eps: float = 0.0, device_id: str = "custom", seed: int = 0,
                     pvt_sigma: float = 0.0) -> "DeviceModel":
        """Wrap explicit weights; unlike ``instantiate_device`` any K >= 1 is allowed."""
        w = np.array(weights, dtype=float, ndmin=2)
        taps = None if tap_weights is None else np.array(tap_weights, dtype=float, ndmin=2)
        return cls(device_id, seed, w.shape[0], w.shape[1] - 1, w, tuple(map(tuple, tap_pairs)),
                   taps, noise_eps, pvt_sigma)

    @property
    def n_taps(self) -> int:
        return len(self.tap_pairs)

    def corner_weights(self, corner: int | None) -> tuple[np.ndarray, np.ndarray]:
        """Weights at a PVT corner; ``None`` is the nominal corner."""
        if corner is None or self.pvt_sigma == 0.0:
            return self.weights, self.tap_weights
        cached = self._corners.get(corner)
        if cached is None:
            rng = stream(self.seed, "pvt-corner", corner)
            w = self.weights + self.pvt_sigma * rng.standard_normal(self.weights.shape)
            t = self.tap_weights + self.pvt_sigma * rng.standard_normal(self.tap_weights.shape)
            cached = (w, t)
            self._corners[corner] = cached
        return cached


def instantiate_device(seed: int, k_chains: int = 4, n_stages: int = 40, noise_eps: float = DEFAULT_EPS,
                       n_taps: int = DEFAULT_TAPS, pvt_sigma: float = 0.0,
                       device_id: str | None = None) -> DeviceModel:
    """Draw a device: chain k's weights come from the stream (seed, "weights", k)."""
    if k_chains < MIN_CHAINS:
        raise InvalidParameterError(f"k_chains must be >= {MIN_CHAINS}")
    if n_stages < 2:
        raise InvalidParameterError("n_stages must be >= 2")
    if not 0.0 <= noise_eps < 0.5:
        raise InvalidParameterError("noise_eps must lie in [0, 0.5)")
    weights = np.stack([stream(seed, "weights", k).standard_normal(n_stages + 1) for k in range(k_chains)])
    rng = stream(seed, "taps")
    pairs = []
    while len(pairs) < n_taps:
        i, j = sorted(int(x) for x in rng.choice(n_stages, size=2, replace=False))
        if (i, j) not in pairs:
            pairs.append((i, j))
    tap_weights = np.stack([stream(seed, "tap-weights", k).standard_normal(n_taps) for k in range(k_chains)])
    return DeviceModel(device_id or f"dev-{seed}", seed, k_chains, n_stages, weights, tuple(pairs),
                       tap_weights, noise_eps, pvt_sigma)


# -- features -----------------------------------------------------------------


def phi_map(raw_bits) -> np.ndarray:
    """Parity transform: phi_i = prod_{j >= i} (1 - 2 c_j), plus a trailing 1.

    Accepts one challenge or a (batch, n) array.
    """
    c = np.asarray(raw_bits)
    if c.ndim not in (1, 2):
        raise DimensionMismatchError("challenge must be a vector or a batch")
    signs = 1.0 - 2.0 * c.astype(float)
    phi = np.cumprod(signs[..., ::-1], axis=-1)[..., ::-1]
    ones = np.ones(phi.shape[:-1] + (1,))
    return np.concatenate([phi, ones], axis=-1)


def lift(features: np.ndarray, tap_pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    """Pairwise tap products phi_i * phi_j for each tap pair."""
    f = np.asarray(features, dtype=float)
    if not tap_pairs:
        return np.zeros(f.shape[:-1] + (0,))
    idx = np.asarray(tap_pairs)
    return f[..., idx[:, 0]] * f[..., idx[:, 1]]


def chain_margins(dev: DeviceModel, features, lifted=None, corner: int | None = None) -> np.ndarray:
    """Delay margin of every chain, shape (..., K)."""
    f = np.asarray(features, dtype=float)
    if f.shape[-1] != dev.n_stages + 1:
        raise DimensionMismatchError(f"features need width {dev.n_stages + 1}, got {f.shape[-1]}")
    lifted = lift(f, dev.tap_pairs) if lifted is None else np.asarray(lifted, dtype=float)
    if lifted.shape[-1] != dev.n_taps:
        raise DimensionMismatchError(f"lifted features need width {dev.n_taps}")
    w, t = dev.corner_weights(corner)
    return f @ w.T + lifted @ t.T


def chain_bits(margins: np.ndarray) -> np.ndarray:
    return (margins < 0).astype(np.uint8)


def evaluate_noisefree(dev: DeviceModel, features, lifted=None, corner: int | None = None):
    """XOR of the K chain bits; returns an int for one challenge, an array for a batch."""
    bits = np.bitwise_xor.reduce(chain_bits(chain_margins(dev, features, lifted, corner)), axis=-1)
    return int(bits) if bits.ndim == 0 else bits


def evaluate_noisy(dev: DeviceModel, features, rng: np.random.Generator, lifted=None,
                   corner: int | None = None):
    clean = evaluate_noisefree(dev, features, lifted, corner)
    flips = rng.random(np.shape(clean)) < dev.noise_eps
    out = np.bitwise_xor(clean, flips.astype(np.uint8))
    return int(out) if np.ndim(out) == 0 else out


def read_votes(dev: DeviceModel, features, repetitions: int, rng: np.random.Generator,
               sweep_corners: bool = False, lifted=None) -> np.ndarray:
    """R noisy reads, shape (..., R). With ``sweep_corners`` read r uses PVT corner r."""
    f = np.asarray(features, dtype=float)
    lifted = lift(f, dev.tap_pairs) if lifted is None else lifted
    if sweep_corners:
        clean = np.stack([evaluate_noisefree(dev, f, lifted, corner=r) for r in range(repetitions)], axis=-1)
    else:
        base = np.asarray(evaluate_noisefree(dev, f, lifted), dtype=np.uint8)
        clean = np.repeat(base[..., None], repetitions, axis=-1)
    flips = (rng.random(clean.shape) < dev.noise_eps).astype(np.uint8)
    return (clean ^ flips).astype(np.uint8)


def vote(votes) -> tuple[np.ndarray, np.ndarray]:
    """Majority bit and minority fraction along the last axis (R must be odd)."""
    v = np.asarray(votes, dtype=np.uint8)
    r = v.shape[-1]
    if r % 2 == 0:
        raise InvalidParameterError("repetitions must be odd")
    ones = v.sum(axis=-1)
    bit = (2 * ones > r).astype(np.uint8)
    minority = np.minimum(ones, r - ones)
    return bit, minority / r


def majority_vote(dev: DeviceModel, features, repetitions: int, rng: np.random.Generator,
                  sweep_corners: bool = False):
    """(majority bit, flip_rate) over R reads; batched when features is 2-D."""
    if repetitions < 1 or repetitions % 2 == 0:
        raise InvalidParameterError("repetitions must be odd and >= 1")
    bit, rate = vote(read_votes(dev, features, repetitions, rng, sweep_corners))
    if np.ndim(bit) == 0:
        return int(bit), float(rate)
    return bit, rate


# -- records ------------------------------------------------------------------


@dataclass(frozen=True)
class ChallengeRecord:
    raw_bits: tuple[int, ...]
    lifted_features: tuple[float, ...]
    repetitions: int
    votes: tuple[int, ...]
    flip_rate: float
    stable: bool

    @property
    def response(self) -> int:
        return int(2 * sum(self.votes) > self.repetitions)

    @property
    def challenge_hex(self) -> str:
        return bits_to_hex(self.raw_bits)


def make_records(dev: DeviceModel, challenges, repetitions: int, rng: np.random.Generator,
                 tau: float = DEFAULT_TAU, sweep_corners: bool = False) -> list[ChallengeRecord]:
    c = np.atleast_2d(np.asarray(challenges, dtype=np.uint8))
    phi = phi_map(c)
    lifted = lift(phi, dev.tap_pairs)
    votes = read_votes(dev, phi, repetitions, rng, sweep_corners, lifted)
    _, rates = vote(votes)
    feats = np.concatenate([phi, lifted], axis=1)
    return [
        ChallengeRecord(tuple(int(x) for x in c[i]), tuple(float(x) for x in feats[i]), repetitions,
                        tuple(int(x) for x in votes[i]), float(rates[i]), bool(rates[i] <= tau))
        for i in range(c.shape[0])
    ]


def stability_filter(records: Sequence[ChallengeRecord], tau: float = DEFAULT_TAU) -> tuple[list[ChallengeRecord], float]:
    """Records with flip_rate <= tau in input order, and the retained fraction."""
    kept = [r for r in records if r.flip_rate <= tau]
    return kept, (len(kept) / len(records) if records else 0.0)


def bits_to_hex(bits: Iterable[int]) -> str:
    """MSB-first hex; the bit string is left-padded with zeros to a nibble boundary."""
    bits = list(bits)
    pad = (-len(bits)) % 4
    value = int("".join(map(str, [0] * pad + bits)) or "0", 2)
    return format(value, f"0{(len(bits) + pad) // 4}x")


def write_crp_csv(path: str | Path, device_id: str, records: Sequence[ChallengeRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["device_id", "challenge_hex", "response_bit", "flip_rate", "stable"])
        for r in records:
            w.writerow([device_id, r.challenge_hex, r.response, f"{r.flip_rate:.6f}", int(r.stable)])
