"""1-out-of-2 oblivious transfer of 128-bit labels.

Two interchangeable back ends:

* ``TrustedDealerOT`` hands the chosen label straight to the receiver and
  remembers which labels left the dealer, for deterministic tests.
* The ``Extension*`` pair runs a Diffie-Hellman base OT (the "simplest OT"
  of Chou and Orlandi) once per link over the 2048-bit MODP group, then
  IKNP extension per session so every transfer costs symmetric crypto only.

In the extension the *interposer* (label sender) plays base-OT receiver
and the *chiplet* (label receiver) plays base-OT sender, as IKNP requires.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass, field

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..errors import LengthMismatchError, TransportError
from ..transport import Transport
from .wire import decode_message, encode_message

KAPPA = 128

# RFC 3526 group 14; q = (p - 1) / 2 is prime and 2 generates the order-q subgroup.
MODP_P = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A0879"
    "8E3404DDEF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B"
    "0BFF5CB6F406B7EDEE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA4836"
    "1C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804"
    "F1746C08CA18217C32905E462E36CE3BE39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6"
    "955817183995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
MODP_Q = (MODP_P - 1) // 2
MODP_G = 2
_ELEM_BYTES = 256
EXPONENT_BITS = 256


def _check_lengths(labels0: np.ndarray, labels1: np.ndarray, choices: np.ndarray) -> None:
    if labels0.shape != labels1.shape or labels0.shape[0] != choices.size:
        raise LengthMismatchError(
            f"{labels0.shape[0]}/{labels1.shape[0]} label pairs for {choices.size} choice bits"
        )


def _as_labels(x) -> np.ndarray:
    return np.asarray(x, dtype=np.uint32).reshape(-1, 4)


def _label_bytes(labels: np.ndarray) -> np.ndarray:
    return labels.astype(">u4").view(np.uint8).reshape(-1, 16)


def _bytes_labels(raw: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(raw).view(">u4").astype(np.uint32).reshape(-1, 4)


# -- test mode ----------------------------------------------------------------


@dataclass
class TrustedDealerOT:
    """Ideal OT functionality; records every (index, bit) it released."""

    released: list[tuple[int, int]] = field(default_factory=list)

    def transfer(self, labels0, labels1, choices) -> np.ndarray:
        labels0, labels1 = _as_labels(labels0), _as_labels(labels1)
        choices = np.asarray(choices, dtype=np.uint8).reshape(-1)
        _check_lengths(labels0, labels1, choices)
        self.released.extend((i, int(c)) for i, c in enumerate(choices))
        return np.where(choices[:, None] == 1, labels1, labels0)

    def was_released(self, index: int, bit: int) -> bool:
        return (index, bit) in self.released


# -- base OT ------------------------------------------------------------------


def _random_exponent(rng: np.random.Generator | None) -> int:
    raw = secrets.token_bytes(EXPONENT_BITS // 8) if rng is None else rng.bytes(EXPONENT_BITS // 8)
    return int.from_bytes(raw, "big") % MODP_Q or 1


def _elem(x: int) -> bytes:
    return x.to_bytes(_ELEM_BYTES, "big")


def _group_element(raw: bytes) -> int:
    x = int.from_bytes(raw, "big")
    if not 1 < x < MODP_P - 1:
        raise TransportError("group element out of range")
    return x


def _base_key(j: int, a_elem: bytes, shared: int) -> bytes:
    return hashlib.sha256(b"base-ot" + j.to_bytes(2, "big") + a_elem + _elem(shared)).digest()[:16]


def _prg(seed: bytes, counter: int, n_bytes: int) -> np.ndarray:
    """AES-CTR keystream; each session counter owns a disjoint 2^64-block window."""
    enc = Cipher(algorithms.AES(seed), modes.CTR((counter << 64).to_bytes(16, "big"))).encryptor()
    return np.frombuffer(enc.update(bytes(n_bytes)), dtype=np.uint8)


def _row_hash(counter: int, index: int, row: bytes) -> bytes:
    return hashlib.sha256(counter.to_bytes(8, "big") + index.to_bytes(4, "big") + row).digest()[:16]


@dataclass
class ExtensionReceiver:
    """Chiplet side: holds both base seeds per column and the choice bits."""

    exponent: int
    a_elem: bytes
    seeds0: list[bytes] = field(default_factory=list)
    seeds1: list[bytes] = field(default_factory=list)
    _pending: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    @classmethod
    def start(cls, rng: np.random.Generator | None = None) -> tuple["ExtensionReceiver", bytes]:
        a = _random_exponent(rng)
        a_elem = _elem(pow(MODP_G, a, MODP_P))
        return cls(a, a_elem), encode_message("base-ot-1", {"A": a_elem})

    def finish_base(self, message: bytes) -> None:
        kind, sec = decode_message(message)
        if kind != "base-ot-2":
            raise TransportError(f"expected base-ot-2, got {kind}")
        raw = sec["B"]
        if len(raw) != KAPPA * _ELEM_BYTES:
            raise LengthMismatchError("base OT needs one element per column")
        a_inv = pow(int.from_bytes(self.a_elem, "big"), -1, MODP_P)
        for j in range(KAPPA):
            b = _group_element(raw[j * _ELEM_BYTES : (j + 1) * _ELEM_BYTES])
            self.seeds0.append(_base_key(j, self.a_elem, pow(b, self.exponent, MODP_P)))
            self.seeds1.append(_base_key(j, self.a_elem, pow(b * a_inv % MODP_P, self.exponent, MODP_P)))

    def request(self, counter: int, choices) -> bytes:
        """First extension flow: the masked column matrix U."""
        choices = np.asarray(choices, dtype=np.uint8).reshape(-1)
        m = choices.size
        n_bytes = (m + 7) // 8
        r = np.packbits(choices)
        t = np.stack([_prg(s, counter, n_bytes) for s in self.seeds0])
        u = t ^ np.stack([_prg(s, counter, n_bytes) for s in self.seeds1]) ^ r[None, :]
        self._pending[counter] = (choices, t)
        return encode_message("ot-u", {"m": m.to_bytes(4, "big"), "U": u.tobytes()})

    def finish(self, counter: int, message: bytes) -> np.ndarray:
        kind, sec = decode_message(message)
        if kind != "ot-y":
            raise TransportError(f"expected ot-y, got {kind}")
        choices, t = self._pending.pop(counter)
        m = choices.size
        y = np.frombuffer(sec["Y"], dtype=np.uint8)
        if y.size != 2 * 16 * m:
            raise LengthMismatchError("ciphertext count does not match choice count")
        y = y.reshape(m, 2, 16)
        t_rows = _rows(t, m)
        out = np.empty((m, 16), dtype=np.uint8)
        for i in range(m):
            pad = np.frombuffer(_row_hash(counter, i, t_rows[i].tobytes()), dtype=np.uint8)
            out[i] = y[i, choices[i]] ^ pad
        return _bytes_labels(out)


def _rows(columns: np.ndarray, m: int) -> np.ndarray:
    """(KAPPA, m/8) packed columns -> (m, 16) packed rows."""
    bits = np.unpackbits(columns, axis=1)[:, :m]
    return np.packbits(bits.T, axis=1)


@dataclass
class ExtensionSender:
    """Interposer side: secret column selector s and the matching base seeds."""

    s_bits: np.ndarray
    seeds: list[bytes]

    @classmethod
    def respond_base(cls, message: bytes, rng: np.random.Generator | None = None) -> tuple["ExtensionSender", bytes]:
        kind, sec = decode_message(message)
        if kind != "base-ot-1":
            raise TransportError(f"expected base-ot-1, got {kind}")
        a_elem = sec["A"]
        a = _group_element(a_elem)
        raw = secrets.token_bytes(KAPPA // 8) if rng is None else rng.bytes(KAPPA // 8)
        s_bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
        out, seeds = [], []
        for j in range(KAPPA):
            b = _random_exponent(rng)
            gb = pow(MODP_G, b, MODP_P)
            out.append(_elem(gb * a % MODP_P if s_bits[j] else gb))
            seeds.append(_base_key(j, a_elem, pow(a, b, MODP_P)))
        return cls(s_bits, seeds), encode_message("base-ot-2", {"B": b"".join(out)})

    def respond(self, counter: int, message: bytes, labels0, labels1) -> bytes:
        """Second extension flow: both labels masked under row hashes."""
        kind, sec = decode_message(message)
        if kind != "ot-u":
            raise TransportError(f"expected ot-u, got {kind}")
        labels0, labels1 = _as_labels(labels0), _as_labels(labels1)
        m = int.from_bytes(sec["m"], "big")
        _check_lengths(labels0, labels1, np.zeros(m, dtype=np.uint8))
        n_bytes = (m + 7) // 8
        u = np.frombuffer(sec["U"], dtype=np.uint8)
        if u.size != KAPPA * n_bytes:
            raise LengthMismatchError("U matrix has the wrong shape")
        u = u.reshape(KAPPA, n_bytes)
        q = np.stack([_prg(seed, counter, n_bytes) for seed in self.seeds])
        q = q ^ (u * self.s_bits[:, None].astype(np.uint8))
        q_rows = _rows(q, m)
        s_row = np.packbits(self.s_bits)
        x0, x1 = _label_bytes(labels0), _label_bytes(labels1)
        y = np.empty((m, 2, 16), dtype=np.uint8)
        for i in range(m):
            y[i, 0] = x0[i] ^ np.frombuffer(_row_hash(counter, i, q_rows[i].tobytes()), dtype=np.uint8)
            y[i, 1] = x1[i] ^ np.frombuffer(_row_hash(counter, i, (q_rows[i] ^ s_row).tobytes()), dtype=np.uint8)
        return encode_message("ot-y", {"Y": y.tobytes()})


def establish_link(transport: Transport, rng_interposer=None, rng_chiplet=None) -> tuple[ExtensionSender, ExtensionReceiver]:
    """Run the one-time base OT over ``transport``; returns (interposer, chiplet) states."""
    receiver, msg = ExtensionReceiver.start(rng_chiplet)
    transport.send("chiplet", msg)
    sender, reply = ExtensionSender.respond_base(transport.receive("interposer"), rng_interposer)
    transport.send("interposer", reply)
    receiver.finish_base(transport.receive("chiplet"))
    return sender, receiver


def oblivious_transfer(labels0, labels1, choices, transport: Transport | None = None,
                       dealer: TrustedDealerOT | None = None, link=None, counter: int = 0) -> np.ndarray:
    """Transfer ``labels{choice}`` for every position; returns the receiver's labels.

    With ``dealer`` the ideal functionality is used. Otherwise an extension
    link (established on demand) carries one IKNP batch over ``transport``.
    """
    labels0, labels1 = _as_labels(labels0), _as_labels(labels1)
    choices = np.asarray(choices, dtype=np.uint8).reshape(-1)
    _check_lengths(labels0, labels1, choices)
    if dealer is not None:
        return dealer.transfer(labels0, labels1, choices)
    transport = transport or Transport()
    sender, receiver = link or establish_link(transport)
    transport.send("chiplet", receiver.request(counter, choices))
    transport.send("interposer", sender.respond(counter, transport.receive("interposer"), labels0, labels1))
    return receiver.finish(counter, transport.receive("chiplet"))
