"""Interposer PUF as seen from its challenge port on a small mesh.

A challenge c of width N (the stage count of the mesh) goes through the
input hash H, the router transform and the parity map before reaching the
lifted XOR-of-K delay model. ``hardened=False`` skips H and the router so the
chains see phi(c) directly, which is the plain arbiter baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import InputHash, MeshTopology, RouterConfig, generate_config, make_input_hash
from .puf import DEFAULT_EPS, DEFAULT_TAPS, DeviceModel, evaluate_noisefree, instantiate_device, phi_map, read_votes
from .rng import derive_seed, stream

GRID_ROWS = 4
GRID_COLS = 4


@dataclass(frozen=True, eq=False)
class GridPUF:
    dev: DeviceModel
    input_hash: InputHash | None
    router: RouterConfig | None

    @property
    def width(self) -> int:
        return self.dev.n_stages

    @property
    def hardened(self) -> bool:
        return self.input_hash is not None

    def features(self, challenges) -> np.ndarray:
        c = np.asarray(challenges, dtype=np.uint8)
        if self.input_hash is not None:
            c = self.router.wrap(self.input_hash.apply(c))
        return phi_map(c)

    def responses(self, challenges) -> np.ndarray:
        return np.asarray(evaluate_noisefree(self.dev, self.features(challenges)), dtype=np.uint8)

    def reads(self, challenges, repetitions: int, rng: np.random.Generator) -> np.ndarray:
        """Noisy reads at the nominal corner, shape (n, R)."""
        return read_votes(self.dev, self.features(np.atleast_2d(challenges)), repetitions, rng)


def make_grid_puf(seed: int, rows: int = GRID_ROWS, cols: int = GRID_COLS, k_chains: int = 4,
                  noise_eps: float = DEFAULT_EPS, n_taps: int = DEFAULT_TAPS, hardened: bool = True,
                  device_id: str | None = None) -> GridPUF:
    width = MeshTopology(rows, cols).n_stages
    dev = instantiate_device(seed, k_chains, width, noise_eps, n_taps, device_id=device_id)
    if not hardened:
        return GridPUF(dev, None, None)
    return GridPUF(dev, make_input_hash(seed, width), generate_config(derive_seed(seed, "grid-router"), width))


def plain_arbiter(seed: int, width: int, k_chains: int = 1, noise_eps: float = 0.0) -> GridPUF:
    """Unhardened XOR arbiter without taps; K = 1 is the textbook learnable baseline."""
    weights = np.stack([stream(seed, "weights", k).standard_normal(width + 1) for k in range(k_chains)])
    return GridPUF(DeviceModel.from_weights(weights, noise_eps=noise_eps, device_id=f"plain-{seed}", seed=seed),
                   None, None)


def random_challenges(seed: int, count: int, width: int, label: str = "challenges") -> np.ndarray:
    return stream(seed, label, width).integers(0, 2, size=(count, width), dtype=np.uint8)
