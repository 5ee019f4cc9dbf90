"""Deterministic construction of devices, chiplets and protocol parties from a RunConfig."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import RunConfig
from .grid import GridPUF, make_grid_puf
from .mesh import (
    MeshTopology, PathPair, RaceEngine, RouteDigest, RouterConfig, build_route_digest, enrollment_challenges,
    enumerate_path_pairs, generate_config,
)
from .protocol import ChipletParty, HmacSigner, chiplet_identity
from .puf import DeviceModel, instantiate_device
from .rng import derive_seed, stream

SELFCHECK_STRIDE = 8  # one permutation per source/sink pair


@dataclass
class Interposer:
    """One simulated interposer: PUF device, mesh, router config and enrolled candidate races."""

    dev: DeviceModel
    mesh: MeshTopology
    router: RouterConfig
    pairs: list[PathPair]
    challenges: list[np.ndarray]

    def engine(self) -> RaceEngine:
        return RaceEngine(self.dev, self.mesh, self.router)

    def digest(self, cfg: RunConfig) -> RouteDigest:
        return build_route_digest(self.dev, self.router, self.pairs, self.challenges, cfg.repetitions, cfg.tau,
                                  stream(cfg.seed, "enroll-reads", self.dev.seed), self.mesh)

    def selfcheck_pairs(self, count: int) -> list[PathPair]:
        return self.pairs[::SELFCHECK_STRIDE][:count]


def device_seed(cfg: RunConfig, index: int) -> int:
    return derive_seed(cfg.seed, "device", index)


def build_interposer(cfg: RunConfig, index: int = 0) -> Interposer:
    seed = device_seed(cfg, index)
    mesh = MeshTopology(cfg.mesh_rows, cfg.mesh_cols)
    dev = instantiate_device(seed, cfg.k_chains, mesh.n_stages, cfg.noise_eps, cfg.n_taps,
                             pvt_sigma=cfg.pvt_sigma, device_id=f"dev-{index}")
    pairs = enumerate_path_pairs(mesh, cfg.pairs, (cfg.hop_min, cfg.hop_max), seed)
    router = generate_config(derive_seed(seed, "router"), mesh.n_stages)
    return Interposer(dev, mesh, router, pairs, enrollment_challenges(seed, pairs))


def grid_population(cfg: RunConfig) -> list[GridPUF]:
    return [make_grid_puf(device_seed(cfg, i), cfg.grid_rows, cfg.grid_cols, cfg.k_chains, cfg.noise_eps,
                          cfg.n_taps, device_id=f"dev-{i}") for i in range(cfg.devices)]


def signer_for(cfg: RunConfig) -> HmacSigner:
    return HmacSigner(hashlib.sha256(b"test-hsm" + cfg.seed.to_bytes(8, "big")).digest())


def chiplets_for(cfg: RunConfig, impostor: bool = False, indices: Sequence[int] | None = None) -> list[ChipletParty]:
    label = "impostor" if impostor else "chiplet"
    idx = range(cfg.chiplets) if indices is None else indices
    return [ChipletParty(i, chiplet_identity(cfg.seed, i, label), rng=stream(cfg.seed, "chiplet-link", i))
            for i in idx]
