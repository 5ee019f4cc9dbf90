"""SHA-2 style compression as a boolean circuit, plus a bit-level reference.

``SHA256`` reproduces FIPS 180-4 SHA-256 exactly. ``TOY`` keeps the same
structure with 4-bit words and 16 rounds; it exists so garbling can be
checked exhaustively on small instances.

Inside the circuit a word is a list of wires with index 0 as the least
significant bit. Message and digest bit strings are MSB-first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .circuit import ONE, ZERO, CircuitBuilder

_K256 = (
    0x428A2F98, 0x71374491, 0xB5C0FBCF, 0xE9B5DBA5, 0x3956C25B, 0x59F111F1, 0x923F82A4, 0xAB1C5ED5,
    0xD807AA98, 0x12835B01, 0x243185BE, 0x550C7DC3, 0x72BE5D74, 0x80DEB1FE, 0x9BDC06A7, 0xC19BF174,
    0xE49B69C1, 0xEFBE4786, 0x0FC19DC6, 0x240CA1CC, 0x2DE92C6F, 0x4A7484AA, 0x5CB0A9DC, 0x76F988DA,
    0x983E5152, 0xA831C66D, 0xB00327C8, 0xBF597FC7, 0xC6E00BF3, 0xD5A79147, 0x06CA6351, 0x14292967,
    0x27B70A85, 0x2E1B2138, 0x4D2C6DFC, 0x53380D13, 0x650A7354, 0x766A0ABB, 0x81C2C92E, 0x92722C85,
    0xA2BFE8A1, 0xA81A664B, 0xC24B8B70, 0xC76C51A3, 0xD192E819, 0xD6990624, 0xF40E3585, 0x106AA070,
    0x19A4C116, 0x1E376C08, 0x2748774C, 0x34B0BCB5, 0x391C0CB3, 0x4ED8AA4A, 0x5B9CCA4F, 0x682E6FF3,
    0x748F82EE, 0x78A5636F, 0x84C87814, 0x8CC70208, 0x90BEFFFA, 0xA4506CEB, 0xBEF9A3F7, 0xC67178F2,
)
_IV256 = (0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A, 0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19)


@dataclass(frozen=True)
class Sha2Spec:
    word_bits: int
    rounds: int
    iv: tuple[int, ...]
    k: tuple[int, ...]
    big_sigma0: tuple[int, int, int]
    big_sigma1: tuple[int, int, int]
    small_sigma0: tuple[int, int, int]  # two rotations then a shift
    small_sigma1: tuple[int, int, int]

    @property
    def block_bits(self) -> int:
        return 16 * self.word_bits

    @property
    def digest_bits(self) -> int:
        return 8 * self.word_bits

    @property
    def mask(self) -> int:
        return (1 << self.word_bits) - 1

    def n_blocks(self, message_bits: int) -> int:
        # one '1' bit plus a two-word length field
        return (message_bits + 1 + 2 * self.word_bits + self.block_bits - 1) // self.block_bits


SHA256 = Sha2Spec(
    word_bits=32, rounds=64, iv=_IV256, k=_K256,
    big_sigma0=(2, 13, 22), big_sigma1=(6, 11, 25),
    small_sigma0=(7, 18, 3), small_sigma1=(17, 19, 10),
)

TOY = Sha2Spec(
    word_bits=4, rounds=16,
    iv=tuple(v >> 28 for v in _IV256), k=tuple(v >> 28 for v in _K256[:16]),
    big_sigma0=(1, 2, 3), big_sigma1=(1, 3, 2),
    small_sigma0=(1, 2, 1), small_sigma1=(2, 3, 1),
)


def pad_message(bits: Sequence[int], spec: Sha2Spec) -> list[int]:
    """Merkle-Damgard padding for a bit message (MSB-first)."""
    n = len(bits)
    total = spec.n_blocks(n) * spec.block_bits
    length_field = [(n >> (2 * spec.word_bits - 1 - i)) & 1 for i in range(2 * spec.word_bits)]
    return list(bits) + [1] + [0] * (total - n - 1 - len(length_field)) + length_field


# -- reference ----------------------------------------------------------------


def _rotr(x: int, r: int, w: int) -> int:
    return ((x >> r) | (x << (w - r))) & ((1 << w) - 1)


def reference_digest(bits: Sequence[int], spec: Sha2Spec = SHA256) -> list[int]:
    """Bit-level reference hash; for ``SHA256`` this equals hashlib's output."""
    w, mask = spec.word_bits, spec.mask
    padded = pad_message(bits, spec)
    state = list(spec.iv)
    for start in range(0, len(padded), spec.block_bits):
        block = padded[start : start + spec.block_bits]
        words = [int("".join(map(str, block[i * w : (i + 1) * w])), 2) for i in range(16)]
        for t in range(16, spec.rounds):
            r1, r2, s = spec.small_sigma0
            s0 = _rotr(words[t - 15], r1, w) ^ _rotr(words[t - 15], r2, w) ^ (words[t - 15] >> s)
            r1, r2, s = spec.small_sigma1
            s1 = _rotr(words[t - 2], r1, w) ^ _rotr(words[t - 2], r2, w) ^ (words[t - 2] >> s)
            words.append((words[t - 16] + s0 + words[t - 7] + s1) & mask)
        a, b, c, d, e, f, g, h = state
        for t in range(spec.rounds):
            big1 = 0
            for r in spec.big_sigma1:
                big1 ^= _rotr(e, r, w)
            ch = (e & f) ^ (~e & mask & g)
            t1 = (h + big1 + ch + spec.k[t] + words[t]) & mask
            big0 = 0
            for r in spec.big_sigma0:
                big0 ^= _rotr(a, r, w)
            maj = (a & b) ^ (a & c) ^ (b & c)
            t2 = (big0 + maj) & mask
            h, g, f, e, d, c, b, a = g, f, e, (d + t1) & mask, c, b, a, (t1 + t2) & mask
        state = [(x + y) & mask for x, y in zip(state, (a, b, c, d, e, f, g, h))]
    return [(v >> (w - 1 - i)) & 1 for v in state for i in range(w)]


# -- circuit ------------------------------------------------------------------

Word = list[int]


class Sha2Circuit:
    """Word-level helpers that emit gates into a ``CircuitBuilder``."""

    def __init__(self, builder: CircuitBuilder, spec: Sha2Spec = SHA256):
        self.b = builder
        self.spec = spec

    def const(self, value: int) -> Word:
        return [ONE if (value >> i) & 1 else ZERO for i in range(self.spec.word_bits)]

    def from_msb_bits(self, bits: Sequence[int]) -> Word:
        return list(reversed(bits))

    def to_msb_bits(self, word: Word) -> list[int]:
        return list(reversed(word))

    def xor(self, *words: Word) -> Word:
        out = words[0]
        for other in words[1:]:
            out = [self.b.xor(x, y) for x, y in zip(out, other)]
        return out

    def rotr(self, x: Word, r: int) -> Word:
        n = len(x)
        return [x[(i + r) % n] for i in range(n)]

    def shr(self, x: Word, r: int) -> Word:
        n = len(x)
        return [x[i + r] if i + r < n else ZERO for i in range(n)]

    def add(self, x: Word, y: Word) -> Word:
        """Ripple-carry addition mod 2^w; one AND per carried bit."""
        b = self.b
        n = len(x)
        out = [b.xor(x[0], y[0])]
        carry = b.and_(x[0], y[0])
        for i in range(1, n):
            t = b.xor(x[i], y[i])
            out.append(b.xor(t, carry))
            if i < n - 1:
                carry = b.xor(x[i], b.and_(t, b.xor(x[i], carry)))
        return out

    def add_many(self, *words: Word) -> Word:
        acc = words[0]
        for w in words[1:]:
            acc = self.add(acc, w)
        return acc

    def ch(self, e: Word, f: Word, g: Word) -> Word:
        b = self.b
        return [b.xor(gi, b.and_(ei, b.xor(fi, gi))) for ei, fi, gi in zip(e, f, g)]

    def maj(self, x: Word, y: Word, z: Word) -> Word:
        b = self.b
        return [b.xor(xi, b.and_(b.xor(xi, yi), b.xor(xi, zi))) for xi, yi, zi in zip(x, y, z)]

    def big_sigma(self, x: Word, rots: tuple[int, int, int]) -> Word:
        return self.xor(*(self.rotr(x, r) for r in rots))

    def small_sigma(self, x: Word, params: tuple[int, int, int]) -> Word:
        r1, r2, s = params
        return self.xor(self.rotr(x, r1), self.rotr(x, r2), self.shr(x, s))

    def compress(self, state: list[Word], block: list[Word]) -> list[Word]:
        spec = self.spec
        w = list(block)
        for t in range(16, spec.rounds):
            w.append(self.add_many(
                self.small_sigma(w[t - 2], spec.small_sigma1), w[t - 7],
                self.small_sigma(w[t - 15], spec.small_sigma0), w[t - 16],
            ))
        a, b, c, d, e, f, g, h = state
        for t in range(spec.rounds):
            # K and W first so constant/known parts fold before meeting the state
            t1 = self.add_many(
                self.add(self.const(spec.k[t]), w[t]), h,
                self.big_sigma(e, spec.big_sigma1), self.ch(e, f, g),
            )
            t2 = self.add(self.big_sigma(a, spec.big_sigma0), self.maj(a, b, c))
            h, g, f, e, d, c, b, a = g, f, e, self.add(d, t1), c, b, a, self.add(t1, t2)
        return [self.add(x, y) for x, y in zip(state, (a, b, c, d, e, f, g, h))]

    def digest(self, message_bits: Sequence[int]) -> list[int]:
        """Hash a fixed-length message of wires/constants; returns MSB-first digest wires."""
        spec = self.spec
        padded = pad_message_wires(message_bits, spec)
        state = [self.const(v) for v in spec.iv]
        wb = spec.word_bits
        for start in range(0, len(padded), spec.block_bits):
            chunk = padded[start : start + spec.block_bits]
            block = [self.from_msb_bits(chunk[i * wb : (i + 1) * wb]) for i in range(16)]
            state = self.compress(state, block)
        return [bit for word in state for bit in self.to_msb_bits(word)]


def pad_message_wires(message: Sequence[int], spec: Sha2Spec) -> list[int]:
    """Padding where the message entries are wires; appended bits become constants."""
    n = len(message)
    tail = pad_message([0] * n, spec)[n:]
    return list(message) + [ONE if bit else ZERO for bit in tail]
