"""Hashing, boolean circuits, garbling and oblivious transfer."""

from .circuit import BooleanCircuit, CircuitBuilder, load_bristol, write_bristol
from .fcircuit import FULL, TOY_LAYOUT, FieldLayout, build_f_i_circuit, commitment, f_i_native
from .garble import GarbledCircuit, GarblerSecrets, evaluate_garbled, garble, plan_garbling
from .ot import TrustedDealerOT, establish_link, oblivious_transfer
from .primitives import hkdf_derive, session_salt, sha256

__all__ = [
    "BooleanCircuit", "CircuitBuilder", "load_bristol", "write_bristol",
    "FULL", "TOY_LAYOUT", "FieldLayout", "build_f_i_circuit", "commitment", "f_i_native",
    "GarbledCircuit", "GarblerSecrets", "evaluate_garbled", "garble", "plan_garbling",
    "TrustedDealerOT", "establish_link", "oblivious_transfer",
    "hkdf_derive", "session_salt", "sha256",
]
