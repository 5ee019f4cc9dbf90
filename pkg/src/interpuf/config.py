"""Run configuration: every knob that determines a CLI run's output bytes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import InvalidParameterError
from .mesh import MeshTopology

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 2024
    # interposer used for enrollment and authentication
    mesh_rows: int = 16
    mesh_cols: int = 16
    pairs: int = 80
    hop_min: int = 20
    hop_max: int = 30
    pvt_sigma: float = 0.2
    # small grid used for metrics and attacks (N = stage count of the grid)
    grid_rows: int = 4
    grid_cols: int = 4
    devices: int = 5
    k_chains: int = 4
    n_taps: int = 4
    noise_eps: float = 0.02
    repetitions: int = 5  # enrollment reads per candidate race
    runtime_repetitions: int = 5  # reads behind the runtime PUF_OK check
    tau: float = 0.2
    # protocol
    chiplets: int = 2
    policy: str = "all"
    # self-check
    selfcheck_pairs: int = 20
    selfcheck_reads: int = 5
    # metrics and attacks
    metrics_challenges: int = 2000
    token_sessions: int = 200
    n_train: int = 8000
    n_test: int = 3000
    mlp_epochs: int = 1000
    out: str = "runs/default"

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise InvalidParameterError(f"config schema {self.schema_version} is not {SCHEMA_VERSION}")
        for name in ("repetitions", "runtime_repetitions"):
            value = getattr(self, name)
            if value < 1 or value % 2 == 0:
                raise InvalidParameterError(f"{name} must be odd")
        if self.devices < 2:
            raise InvalidParameterError("population metrics need at least two devices")
        if self.chiplets < 1:
            raise InvalidParameterError("need at least one chiplet")

    @property
    def n_stages(self) -> int:
        """Challenge width N of the metrics grid."""
        return MeshTopology(self.grid_rows, self.grid_cols).n_stages

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def override(self, **changes) -> "RunConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})
