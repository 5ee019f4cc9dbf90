"""PUF quality metrics on majority-voted bits, plus token proxy statistics.

Response matrices are (devices, challenges) arrays of 0/1 with a shared
challenge order. Tokens are compared only through the labeled proxy
``token_hd_distribution``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError
from .grid import GridPUF
from .puf import vote


def _bits(x, ndim: int) -> np.ndarray:
    a = np.asarray(x, dtype=np.uint8)
    if a.ndim != ndim or a.size == 0:
        raise InvalidParameterError(f"expected a non-empty {ndim}-D bit array")
    return a


def uniformity(responses) -> tuple[float, float]:
    """Per-device fraction of ones; mean and std across devices."""
    frac = _bits(np.atleast_2d(responses), 2).mean(axis=1)
    return float(frac.mean()), float(frac.std())


def bias(responses) -> tuple[float, float]:
    dev = np.abs(_bits(np.atleast_2d(responses), 2).mean(axis=1) - 0.5)
    return float(dev.mean()), float(dev.std())


def pairwise_hd(vectors) -> np.ndarray:
    """Fractional Hamming distance of every unordered pair of rows."""
    v = _bits(vectors, 2).astype(np.float64)
    n, width = v.shape
    if n < 2:
        raise InvalidParameterError("need at least two vectors")
    dist = (v @ (1 - v).T + (1 - v) @ v.T) / width
    return dist[np.triu_indices(n, 1)]


def uniqueness(responses) -> tuple[float, float]:
    r = _bits(responses, 2)
    if r.shape[0] < 2:
        raise InvalidParameterError("uniqueness needs at least two devices")
    hd = pairwise_hd(r)
    return float(hd.mean()), float(hd.std())


def reliability_and_intra_hd(reads) -> tuple[float, float, float]:
    """(reliability, intra-HD mean, intra-HD std) from a (challenges, R) read matrix.

    The reference is the per-challenge majority; each read vector's
    fractional distance to it is one intra-HD sample, and reliability is the
    mean agreement (1 - intra-HD mean).
    """
    r = _bits(reads, 2)
    if r.shape[1] < 2:
        raise InvalidParameterError("need at least two reads per challenge")
    if r.shape[1] % 2 == 0:
        raise InvalidParameterError("an odd read count keeps the majority reference defined")
    reference, _ = vote(r)
    per_read = (r != reference[:, None]).mean(axis=0)
    return float(1.0 - per_read.mean()), float(per_read.mean()), float(per_read.std())


def bit_aliasing(responses) -> tuple[float, np.ndarray]:
    """Mean over challenge positions of the fraction of devices answering 1."""
    per_position = _bits(responses, 2).mean(axis=0)
    return float(per_position.mean()), per_position


def bit_flip_sensitivity(respond: Callable[[np.ndarray], np.ndarray], challenges,
                         rng: np.random.Generator) -> float:
    """Probability that flipping one uniformly chosen challenge bit flips the response."""
    c = _bits(challenges, 2)
    flipped = c.copy()
    flipped[np.arange(c.shape[0]), rng.integers(0, c.shape[1], c.shape[0])] ^= 1
    return float(np.mean(np.asarray(respond(c)) != np.asarray(respond(flipped))))


def token_hd_distribution(tokens: Sequence[bytes], bins: int = 50) -> tuple[np.ndarray, np.ndarray, float]:
    """Proxy metric on session tokens: histogram counts, bin edges and mean pairwise HD."""
    if len(tokens) < 2:
        raise InvalidParameterError("need at least two tokens")
    lengths = {len(t) for t in tokens}
    if len(lengths) != 1:
        raise DimensionMismatchError("tokens differ in length")
    bits = np.unpackbits(np.frombuffer(b"".join(tokens), dtype=np.uint8).reshape(len(tokens), -1), axis=1)
    hd = pairwise_hd(bits)
    counts, edges = np.histogram(hd, bins=bins, range=(0.0, 1.0))
    return counts, edges, float(hd.mean())


@dataclass(frozen=True)
class MetricsReport:
    uniformity_mean: float
    uniformity_std: float
    bias_mean: float
    bias_std: float
    uniqueness_mean: float
    uniqueness_std: float
    reliability: float
    intra_hd_mean: float
    intra_hd_std: float
    bit_aliasing: float
    bit_flip_sensitivity: float
    devices: int
    challenges: int
    repetitions: int

    def to_json(self) -> dict:
        out = asdict(self)
        return {k: round(v, 6) if isinstance(v, float) else v for k, v in out.items()}

    def in_unit_interval(self) -> bool:
        return all(0.0 <= v <= 1.0 for k, v in asdict(self).items() if isinstance(v, float))


def evaluate_population(pufs: Sequence[GridPUF], challenges, repetitions: int,
                        rng: np.random.Generator) -> MetricsReport:
    """All metrics before tokenization, from majority-voted bits of every device."""
    c = _bits(challenges, 2)
    if len(pufs) < 2:
        raise InvalidParameterError("population metrics need at least two devices")
    voted, rel, intra = [], [], []
    for p in pufs:
        reads = p.reads(c, repetitions, rng)
        bits, _ = vote(reads)
        voted.append(bits)
        r, h, _ = reliability_and_intra_hd(reads)
        rel.append(r)
        intra.append(h)
    voted = np.stack(voted)
    u_mean, u_std = uniformity(voted)
    b_mean, b_std = bias(voted)
    q_mean, q_std = uniqueness(voted)
    alias, _ = bit_aliasing(voted)
    sens = float(np.mean([bit_flip_sensitivity(p.responses, c, rng) for p in pufs]))
    return MetricsReport(u_mean, u_std, b_mean, b_std, q_mean, q_std, float(np.mean(rel)),
                         float(np.mean(intra)), float(np.std(intra)), alias, sens,
                         len(pufs), c.shape[0], repetitions)
