"""AES-128 encryption in numba, used as the fixed-key permutation for garbling.

Blocks are four big-endian uint32 words, the layout the T-table formulation
works in. Only encryption is needed. ``cryptography`` is the test oracle.
"""

from __future__ import annotations

import numba
import numpy as np


def _xtime(x: int) -> int:
    x <<= 1
    return (x ^ 0x11B) if x & 0x100 else x


def _gmul(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a = _xtime(a)
        b >>= 1
    return out


def _make_sbox() -> np.ndarray:
    inv = [0] * 256
    for x in range(1, 256):
        for y in range(1, 256):
            if _gmul(x, y) == 1:
                inv[x] = y
                break
    sbox = np.empty(256, dtype=np.uint32)
    for x in range(256):
        b = inv[x]
        s = b
        for shift in range(1, 5):
            s ^= ((b << shift) | (b >> (8 - shift))) & 0xFF
        sbox[x] = s ^ 0x63
    return sbox


SBOX = _make_sbox()


def _make_tables() -> np.ndarray:
    te = np.empty((4, 256), dtype=np.uint32)
    for x in range(256):
        s = int(SBOX[x])
        word = (_gmul(s, 2) << 24) | (s << 16) | (s << 8) | _gmul(s, 3)
        for r in range(4):
            te[r, x] = ((word >> (8 * r)) | (word << (32 - 8 * r))) & 0xFFFFFFFF
    return te


TE = _make_tables()
_RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)


def expand_key(key: bytes) -> np.ndarray:
    """AES-128 key schedule as 44 big-endian words."""
    if len(key) != 16:
        raise ValueError("AES-128 needs a 16-byte key")
    w = [int.from_bytes(key[4 * i : 4 * i + 4], "big") for i in range(4)]
    for i in range(4, 44):
        t = w[i - 1]
        if i % 4 == 0:
            t = ((t << 8) | (t >> 24)) & 0xFFFFFFFF
            t = (int(SBOX[t >> 24]) << 24) | (int(SBOX[(t >> 16) & 0xFF]) << 16) \
                | (int(SBOX[(t >> 8) & 0xFF]) << 8) | int(SBOX[t & 0xFF])
            t ^= _RCON[i // 4 - 1] << 24
        w.append(w[i - 4] ^ t)
    return np.asarray(w, dtype=np.uint32)


@numba.njit(cache=True, inline="always")
def encrypt_block(rk, te, sbox, x0, x1, x2, x3):
    s0 = x0 ^ rk[0]
    s1 = x1 ^ rk[1]
    s2 = x2 ^ rk[2]
    s3 = x3 ^ rk[3]
    for r in range(1, 10):
        k = 4 * r
        t0 = te[0, s0 >> 24] ^ te[1, (s1 >> 16) & 0xFF] ^ te[2, (s2 >> 8) & 0xFF] ^ te[3, s3 & 0xFF] ^ rk[k]
        t1 = te[0, s1 >> 24] ^ te[1, (s2 >> 16) & 0xFF] ^ te[2, (s3 >> 8) & 0xFF] ^ te[3, s0 & 0xFF] ^ rk[k + 1]
        t2 = te[0, s2 >> 24] ^ te[1, (s3 >> 16) & 0xFF] ^ te[2, (s0 >> 8) & 0xFF] ^ te[3, s1 & 0xFF] ^ rk[k + 2]
        t3 = te[0, s3 >> 24] ^ te[1, (s0 >> 16) & 0xFF] ^ te[2, (s1 >> 8) & 0xFF] ^ te[3, s2 & 0xFF] ^ rk[k + 3]
        s0, s1, s2, s3 = t0, t1, t2, t3
    o0 = (sbox[s0 >> 24] << 24) ^ (sbox[(s1 >> 16) & 0xFF] << 16) ^ (sbox[(s2 >> 8) & 0xFF] << 8) ^ sbox[s3 & 0xFF] ^ rk[40]
    o1 = (sbox[s1 >> 24] << 24) ^ (sbox[(s2 >> 16) & 0xFF] << 16) ^ (sbox[(s3 >> 8) & 0xFF] << 8) ^ sbox[s0 & 0xFF] ^ rk[41]
    o2 = (sbox[s2 >> 24] << 24) ^ (sbox[(s3 >> 16) & 0xFF] << 16) ^ (sbox[(s0 >> 8) & 0xFF] << 8) ^ sbox[s1 & 0xFF] ^ rk[42]
    o3 = (sbox[s3 >> 24] << 24) ^ (sbox[(s0 >> 16) & 0xFF] << 16) ^ (sbox[(s1 >> 8) & 0xFF] << 8) ^ sbox[s2 & 0xFF] ^ rk[43]
    return np.uint32(o0), np.uint32(o1), np.uint32(o2), np.uint32(o3)


@numba.njit(cache=True)
def _encrypt_many(rk, te, sbox, blocks, out):
    for i in range(blocks.shape[0]):
        a, b, c, d = encrypt_block(rk, te, sbox, blocks[i, 0], blocks[i, 1], blocks[i, 2], blocks[i, 3])
        out[i, 0] = a
        out[i, 1] = b
        out[i, 2] = c
        out[i, 3] = d


def encrypt_blocks(round_keys: np.ndarray, data: bytes) -> bytes:
    """ECB-encrypt ``data`` (a multiple of 16 bytes)."""
    if len(data) % 16:
        raise ValueError("data must be whole blocks")
    blocks = np.frombuffer(data, dtype=">u4").astype(np.uint32).reshape(-1, 4)
    out = np.empty_like(blocks)
    _encrypt_many(round_keys, TE, SBOX, blocks, out)
    return out.astype(">u4").tobytes()
