"""Hashing and key derivation used throughout the protocol."""

from __future__ import annotations

import hashlib

import numpy as np
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..errors import InvalidParameterError

DIGEST_BYTES = 32
HKDF_MAX_BYTES = 255 * DIGEST_BYTES


def sha256(message: bytes) -> bytes:
    return hashlib.sha256(message).digest()


def hkdf_derive(prk_source: bytes, info: bytes, out_len: int = 32, salt: bytes | None = None) -> bytes:
    """HKDF-SHA256 extract-then-expand with ``prk_source`` as input keying material."""
    if not 0 < out_len <= HKDF_MAX_BYTES:
        raise InvalidParameterError(f"out_len must be in 1..{HKDF_MAX_BYTES}")
    return HKDF(algorithm=hashes.SHA256(), length=out_len, salt=salt, info=info).derive(prk_source)


def session_salt(rstar: bytes, challenge: bytes, epoch: int) -> bytes:
    """s = HKDF(R*, ch || Epoch) with the epoch as a big-endian 64-bit counter."""
    return hkdf_derive(rstar, challenge + epoch.to_bytes(8, "big"), 32)


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bits_to_bytes(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def hamming_fraction(a: bytes, b: bytes) -> float:
    if len(a) != len(b):
        raise InvalidParameterError("operands differ in length")
    return float(np.count_nonzero(bytes_to_bits(bytes(x ^ y for x, y in zip(a, b))))) / (8 * len(a))
