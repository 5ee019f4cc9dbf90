"""The per-chiplet authentication function as a boolean circuit.

    G' = H(ID || SIG || R* || EnrollTag)
    b  = (G' == G) and PUF_OK
    T' = H(G' || s || Nonce)

ID and SIG belong to the evaluator (chiplet); R* and G to the garbler
(interposer); s, Nonce and PUF_OK are public.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .circuit import BooleanCircuit, CircuitBuilder, constant_bits
from .primitives import bits_to_bytes, bytes_to_bits, sha256
from .sha2 import SHA256, TOY, Sha2Circuit, Sha2Spec, reference_digest

CIRCUIT_VERSION = 1


@dataclass(frozen=True)
class FieldLayout:
    """Versioned field widths (bits) and the hash instance for one f_i variant."""

    hash_spec: Sha2Spec
    id_bits: int
    sig_bits: int
    rstar_bits: int
    tag_bits: int
    salt_bits: int
    nonce_bits: int
    enroll_tag: int
    name: str

    @property
    def digest_bits(self) -> int:
        return self.hash_spec.digest_bits

    def widths(self) -> dict[str, int]:
        return {
            "id": self.id_bits, "sig": self.sig_bits, "rstar": self.rstar_bits,
            "g": self.digest_bits, "salt": self.salt_bits, "nonce": self.nonce_bits, "puf_ok": 1,
        }

    @property
    def tag_bytes(self) -> bytes:
        return self.enroll_tag.to_bytes(self.tag_bits // 8, "big")


FULL = FieldLayout(
    hash_spec=SHA256, id_bits=128, sig_bits=256, rstar_bits=256, tag_bits=64,
    salt_bits=256, nonce_bits=128, enroll_tag=int.from_bytes(b"IPUFENR1", "big"), name="f_i-v1",
)

# 8-bit fields over 4-bit-word SHA: small enough to enumerate ID x SIG x PUF_OK.
TOY_LAYOUT = FieldLayout(
    hash_spec=TOY, id_bits=8, sig_bits=8, rstar_bits=8, tag_bits=8,
    salt_bits=8, nonce_bits=8, enroll_tag=0xE1, name="f_i-toy",
)

ROLES = {"id": "evaluator", "sig": "evaluator", "rstar": "garbler", "g": "garbler",
         "salt": "public", "nonce": "public", "puf_ok": "public"}


def _build(layout: FieldLayout) -> BooleanCircuit:
    b = CircuitBuilder(name=layout.name)
    wires = {name: b.input(name, width, ROLES[name]) for name, width in layout.widths().items()}
    sha = Sha2Circuit(b, layout.hash_spec)
    tag = constant_bits(layout.enroll_tag, layout.tag_bits)
    g_prime = sha.digest(wires["id"] + wires["sig"] + wires["rstar"] + tag)
    token = sha.digest(g_prime + wires["salt"] + wires["nonce"])
    match = b.equal(g_prime, wires["g"])
    b.output("b", [b.and_(match, wires["puf_ok"][0])])
    b.output("token", token)
    return b.build()


@lru_cache(maxsize=4)
def build_f_i_circuit(layout: FieldLayout = FULL) -> BooleanCircuit:
    """Build (once per layout) the circuit producing outputs ``b`` and ``token``."""
    circuit = _build(layout)
    circuit.validate()
    return circuit


def _hash(layout: FieldLayout, data: bytes) -> bytes:
    if layout.hash_spec == SHA256:
        return sha256(data)
    return bits_to_bytes(reference_digest(list(bytes_to_bits(data)), layout.hash_spec))


def commitment(layout: FieldLayout, ident: bytes, sig: bytes, rstar: bytes) -> bytes:
    """G = H(ID || SIG || R* || EnrollTag), computed natively."""
    return _hash(layout, ident + sig + rstar + layout.tag_bytes)


def f_i_native(layout: FieldLayout, ident: bytes, sig: bytes, rstar: bytes, g: bytes,
               salt: bytes, nonce: bytes, puf_ok: bool) -> tuple[bool, bytes]:
    """Reference evaluation of f_i on byte strings using the native hash."""
    g_prime = commitment(layout, ident, sig, rstar)
    token = _hash(layout, g_prime + salt + nonce)
    return bool(puf_ok) and g_prime == g, token


def circuit_inputs(layout: FieldLayout, **fields) -> dict[str, np.ndarray]:
    """Bit vectors for each named input from bytes (``puf_ok`` from a bool)."""
    out = {}
    for name, width in layout.widths().items():
        value = fields[name]
        if name == "puf_ok":
            out[name] = np.array([1 if value else 0], dtype=np.uint8)
            continue
        bits = bytes_to_bits(value)
        if bits.size != width:
            raise ValueError(f"field {name} must be {width} bits, got {bits.size}")
        out[name] = bits
    return out
