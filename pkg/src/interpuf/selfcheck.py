"""Golden-free route self-check: Z* threshold per path pair and population outlier flags.

Delay model: a stage on a route contributes ``nominal + process_sigma * w0[s]``
when its switchbox is crossed, where ``w0`` is the device's first chain of
stage weights; setting it straight saves ``delta_cross_straight``. Route A
stays all-cross while the first Z stages of route B are set straight. B wins a
read when its delay is not larger than A's (ties go to B), and each read's
winner is flipped with the device's noise probability.

Z* is the smallest Z at which B wins the majority of M reads at both Z and
Z + 1. In the deterministic model that is ceil((D_B - D_A) / delta) clamped
at zero. With ``symmetric=True`` a baseline where B already wins is scanned on
route A instead and reported as a non-positive Z*, so delay added to
either route moves Z*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError, TooFewRecordsError
from .mesh import MeshTopology, PathPair
from .puf import DeviceModel

NOMINAL_STAGE_DELAY = 1.0
PROCESS_SIGMA = 0.02
DELTA_FRACTION = 0.3  # cross-to-straight saving as a fraction of the nominal stage delay
MIN_RECORDS = 8


@dataclass(frozen=True)
class DelayModel:
    nominal: float = NOMINAL_STAGE_DELAY
    process_sigma: float = PROCESS_SIGMA
    delta_cross_straight: float = DELTA_FRACTION * NOMINAL_STAGE_DELAY

    def __post_init__(self):
        if self.delta_cross_straight <= 0:
            raise InvalidParameterError("a crossed stage must be slower than a straight one")

    def route_delay(self, dev: DeviceModel, mesh: MeshTopology, path: Sequence[int]) -> float:
        stages = mesh.path_stages(path)
        return float(np.sum(self.nominal + self.process_sigma * dev.weights[0, stages]))


def pair_id(pair: PathPair) -> str:
    return f"{pair.source}-{pair.sink}-{pair.permutation_index}"


@dataclass(frozen=True)
class ZRecord:
    pair_id: str
    z_star: int | None  # None is the never-wins sentinel
    reads: int
    epoch: int = 0

    @property
    def never_wins(self) -> bool:
        return self.z_star is None


@dataclass
class RouteProbe:
    """Race oracle for one pair: answers "does B win?" for a given flip count.

    ``tamper_a``/``tamper_b`` add delay to a route, in absolute delay units.
    """

    gap: float  # D_B - D_A at the all-cross baseline, tamper included
    depth: int
    delta: float
    noise_eps: float

    @classmethod
    def for_pair(cls, dev: DeviceModel, mesh: MeshTopology, pair: PathPair, model: DelayModel,
                 tamper_a: float = 0.0, tamper_b: float = 0.0) -> "RouteProbe":
        d_a = model.route_delay(dev, mesh, pair.path_a) + tamper_a
        d_b = model.route_delay(dev, mesh, pair.path_b) + tamper_b
        return cls(d_b - d_a, pair.depth, model.delta_cross_straight, dev.noise_eps)

    def b_wins(self, z: int) -> bool:
        """Noise-free outcome with the first z stages of B straight (negative z: of A)."""
        return self.gap - z * self.delta <= 0 if z >= 0 else self.gap + (-z) * self.delta <= 0

    def majority_b(self, z: int, reads: int, rng: np.random.Generator | None) -> bool:
        clean = self.b_wins(z)
        if rng is None or self.noise_eps == 0:
            return clean
        flips = int(np.count_nonzero(rng.random(reads) < self.noise_eps))
        return clean if 2 * flips < reads else not clean


def measure_z_star(probe: RouteProbe, reads: int = 5, rng: np.random.Generator | None = None,
                   pair_name: str = "", epoch: int = 0, symmetric: bool = False) -> ZRecord:
    """Linear scan for the smallest consistently-winning Z."""
    if reads < 1 or reads % 2 == 0:
        raise InvalidParameterError("read depth M must be odd")
    n = probe.depth
    wins = [probe.majority_b(0, reads, rng)]
    if symmetric and wins[0] and probe.majority_b(1, reads, rng):
        # B already wins: count how many route-A stages must go straight for A to win.
        for z in range(1, n + 1):
            if not probe.majority_b(-z, reads, rng) and not probe.majority_b(-z - 1, reads, rng):
                return ZRecord(pair_name, 1 - z, reads, epoch)
        return ZRecord(pair_name, None, reads, epoch)
    for z in range(0, n + 1):
        if len(wins) <= z + 1:
            wins.append(probe.majority_b(z + 1, reads, rng) if z + 1 <= n else True)
        if wins[z] and wins[z + 1]:
            return ZRecord(pair_name, z, reads, epoch)
    return ZRecord(pair_name, None, reads, epoch)


def brute_force_z_star(probe: RouteProbe, symmetric: bool = False) -> int | None:
    """Reference: evaluate every Z noise-free and take the first win (no consistency rule needed)."""
    if symmetric and probe.b_wins(0):
        for z in range(1, probe.depth + 1):
            if not probe.b_wins(-z):
                return 1 - z
        return None
    for z in range(0, probe.depth + 1):
        if probe.b_wins(z):
            return z
    return None


def analytic_z_star(gap: float, delta: float) -> int:
    """ceil(gap / delta) for gap >= 0, else 0."""
    return max(0, math.ceil(gap / delta - 1e-12))


@dataclass(frozen=True)
class BandPolicy:
    sigma_multiple: float = 3.0
    floor: float = 1.0

    def band(self, z_std: float) -> float:
        return max(self.sigma_multiple * z_std, self.floor)


@dataclass(frozen=True)
class ZProfile:
    records: tuple[ZRecord, ...]
    z_avg: float
    z_std: float
    band: float
    epoch: int = 0

    def is_outlier(self, z_star: int | None) -> bool:
        return z_star is None or abs(z_star - self.z_avg) > self.band

    def flagged(self) -> list[str]:
        return [r.pair_id for r in self.records if self.is_outlier(r.z_star)]

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "pairs": [{"pair_id": r.pair_id, "z_star": r.z_star, "M": r.reads} for r in self.records],
            "z_avg": round(self.z_avg, 9),
            "z_std": round(self.z_std, 9),
            "band": round(self.band, 9),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ZProfile":
        epoch = int(data.get("epoch", 0))
        records = tuple(ZRecord(p["pair_id"], p["z_star"], int(p["M"]), epoch) for p in data["pairs"])
        return cls(records, float(data["z_avg"]), float(data["z_std"]), float(data["band"]), epoch)


def build_profile(records: Sequence[ZRecord], policy: BandPolicy = BandPolicy(), epoch: int = 0) -> ZProfile:
    values = np.array([r.z_star for r in records if r.z_star is not None], dtype=float)
    if values.size < MIN_RECORDS:
        raise TooFewRecordsError(f"need at least {MIN_RECORDS} measured pairs, got {values.size}")
    z_avg = float(values.mean())
    z_std = float(values.std())
    return ZProfile(tuple(records), z_avg, z_std, policy.band(z_std), epoch)


@dataclass
class RecheckReport:
    epoch: int
    flagged: list[str]
    deltas: list[int | None]
    records: list[ZRecord] = field(repr=False, default_factory=list)

    def to_json(self) -> dict:
        return {"epoch": self.epoch, "flagged": self.flagged, "deltas": self.deltas}


def recheck(probes: Sequence[RouteProbe], profile: ZProfile, reads: int = 5,
            rng: np.random.Generator | None = None, epoch: int = 0, symmetric: bool = False) -> RecheckReport:
    """Re-measure each enrolled pair and flag those outside the stored band.

    Works from the stored profile and fresh race outcomes only.
    """
    if len(probes) != len(profile.records):
        raise InvalidParameterError("one probe per profiled pair is required")
    flagged, deltas, fresh = [], [], []
    for probe, old in zip(probes, profile.records):
        rec = measure_z_star(probe, reads, rng, old.pair_id, epoch, symmetric)
        fresh.append(rec)
        if profile.is_outlier(rec.z_star):
            flagged.append(rec.pair_id)
        deltas.append(None if rec.z_star is None or old.z_star is None else rec.z_star - old.z_star)
    return RecheckReport(epoch, flagged, deltas, fresh)


def probes_for(dev: DeviceModel, mesh: MeshTopology, pairs: Sequence[PathPair], model: DelayModel = DelayModel(),
               tamper: dict[int, tuple[float, float]] | None = None) -> list[RouteProbe]:
    """Probes for every pair; ``tamper`` maps pair index -> (extra delay on A, extra delay on B)."""
    tamper = tamper or {}
    return [RouteProbe.for_pair(dev, mesh, p, model, *tamper.get(i, (0.0, 0.0))) for i, p in enumerate(pairs)]
