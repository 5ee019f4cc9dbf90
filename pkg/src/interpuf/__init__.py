"""Interposer delay-PUF simulator and constant-round chiplet authentication engine."""

from .config import RunConfig
from .errors import InterPUFError
from .mesh import MeshTopology, RouterConfig, build_route_digest, enumerate_path_pairs, generate_config
from .protocol import authenticate_chiplet, bind_session, enroll, quorum_decide
from .puf import DeviceModel, evaluate_noisefree, evaluate_noisy, instantiate_device, majority_vote, phi_map

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "InterPUFError",
    "MeshTopology", "RouterConfig", "build_route_digest", "enumerate_path_pairs", "generate_config",
    "authenticate_chiplet", "bind_session", "enroll", "quorum_decide",
    "DeviceModel", "evaluate_noisefree", "evaluate_noisy", "instantiate_device", "majority_vote", "phi_map",
]
