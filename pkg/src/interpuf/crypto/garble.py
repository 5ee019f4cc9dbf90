"""Half-gates garbling with free-XOR and point-and-permute.

Labels are 128-bit values held as four big-endian uint32 words. The
permute bit of a label is the low bit of its last word, and the global
offset ``delta`` has that bit set.

Wires are split statically into two classes. *Known* wires carry values
the garbler can compute alone (its own inputs, public inputs, constants
and anything derived only from those). *Mixed* wires depend on evaluator
input. Known-only gates are computed in the clear by the garbler and never
reach the evaluator. XOR of a known bit into a mixed wire is absorbed into
the garbler's zero label. AND of a known bit with a mixed wire is a single
generator half-gate (one ciphertext). AND of two mixed wires is a full
half-gates AND (two ciphertexts). No labels are transmitted for garbler or
public inputs.

Gate hashing is the tweakable circular correlation-robust construction
H(x, i) = P(P(x) ^ i) ^ P(x) with P fixed-key AES-128.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping

import numba
import numpy as np

from ..errors import UndecodableLabelError
from .aes import SBOX, TE, encrypt_block, expand_key
from .circuit import AND, INV, ONE, XOR, ZERO, BooleanCircuit
from .primitives import sha256

LABEL_BYTES = 16
FIXED_KEY = sha256(b"interpuf fixed-key garbling v1")[:16]
_RK = expand_key(FIXED_KEY)

# gate program opcodes
K_XOR, K_AND, K_INV = 0, 1, 2          # garbler-only, evaluated in the clear
M_XOR, KM_XOR, M_INV = 3, 4, 5         # free
KM_AND, MM_AND = 6, 7                  # one and two ciphertexts

_ROWS = {KM_AND: 1, MM_AND: 2}


@dataclass(frozen=True, eq=False)
class GarblingPlan:
    """Wire classification and gate program for one circuit, shared by both parties."""

    circuit: BooleanCircuit
    known: np.ndarray           # bool per wire
    op: np.ndarray
    a: np.ndarray               # mixed operand first for KM_* gates
    b: np.ndarray
    out: np.ndarray
    row: np.ndarray             # first table row per gate, -1 if none
    n_rows: int
    eval_wires: np.ndarray      # evaluator input wires in declaration order

    @property
    def table_bytes(self) -> int:
        return self.n_rows * LABEL_BYTES

    def op_counts(self) -> dict[str, int]:
        names = ("K_XOR", "K_AND", "K_INV", "M_XOR", "KM_XOR", "M_INV", "KM_AND", "MM_AND")
        counts = np.bincount(self.op, minlength=8)
        return {n: int(c) for n, c in zip(names, counts)}

    def output_mixed(self, name: str) -> np.ndarray:
        return np.array([w >= 0 and not self.known[w] for w in self.circuit.outputs[name]], dtype=bool)


_PLANS: dict[int, GarblingPlan] = {}


def plan_garbling(circuit: BooleanCircuit) -> GarblingPlan:
    """Classify wires and compile the gate program (memoised per circuit object)."""
    cached = _PLANS.get(id(circuit))
    if cached is not None and cached.circuit is circuit:
        return cached
    known = np.zeros(circuit.n_wires, dtype=bool)
    for spec in circuit.inputs.values():
        if spec.role != "evaluator":
            known[list(spec.wires)] = True
    kinds, ins_a, ins_b, outs = circuit.kinds, circuit.in_a, circuit.in_b, circuit.out
    n = circuit.n_gates
    op = np.empty(n, dtype=np.uint8)
    a = ins_a.copy()
    b = ins_b.copy()
    row = np.full(n, -1, dtype=np.int64)
    rows = 0
    for g in range(n):
        k, x, y = int(kinds[g]), int(ins_a[g]), int(ins_b[g])
        kx = known[x]
        ky = known[y] if k != INV else kx
        if kx and ky:
            op[g] = (K_XOR, K_AND, K_INV)[k]
            known[outs[g]] = True
            continue
        if k == INV:
            op[g] = M_INV
            continue
        if kx:  # put the mixed operand first
            a[g], b[g] = y, x
        if kx or ky:
            op[g] = KM_XOR if k == XOR else KM_AND
        else:
            op[g] = M_XOR if k == XOR else MM_AND
        if op[g] in _ROWS:
            row[g] = rows
            rows += _ROWS[int(op[g])]
    plan = GarblingPlan(
        circuit=circuit, known=known, op=op, a=a, b=b, out=outs.copy(), row=row,
        n_rows=rows, eval_wires=circuit.input_wires("evaluator"),
    )
    _PLANS[id(circuit)] = plan
    return plan


# -- kernels ------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _hash(rk, te, sbox, x0, x1, x2, x3, tweak):
    u0, u1, u2, u3 = encrypt_block(rk, te, sbox, x0, x1, x2, x3)
    v0, v1, v2, v3 = encrypt_block(
        rk, te, sbox, u0, u1, u2 ^ np.uint32(tweak >> 32), u3 ^ np.uint32(tweak & 0xFFFFFFFF)
    )
    return v0 ^ u0, v1 ^ u1, v2 ^ u2, v3 ^ u3


@numba.njit(cache=True)
def _garble_kernel(op, ga, gb, go, grow, labels, known, delta, tables, rk, te, sbox):
    d0, d1, d2, d3 = delta[0], delta[1], delta[2], delta[3]
    for g in range(op.size):
        o = op[g]
        x = ga[g]
        y = gb[g]
        z = go[g]
        if o == 0:
            known[z] = known[x] ^ known[y]
        elif o == 1:
            known[z] = known[x] & known[y]
        elif o == 2:
            known[z] = known[x] ^ 1
        elif o == 3:
            for i in range(4):
                labels[z, i] = labels[x, i] ^ labels[y, i]
        elif o == 4:
            m = np.uint32(0xFFFFFFFF) if known[y] else np.uint32(0)
            for i in range(4):
                labels[z, i] = labels[x, i] ^ (delta[i] & m)
        elif o == 5:
            for i in range(4):
                labels[z, i] = labels[x, i] ^ delta[i]
        elif o == 6:
            tw = np.uint64(2 * g)
            h0 = _hash(rk, te, sbox, labels[x, 0], labels[x, 1], labels[x, 2], labels[x, 3], tw)
            h1 = _hash(rk, te, sbox, labels[x, 0] ^ d0, labels[x, 1] ^ d1, labels[x, 2] ^ d2, labels[x, 3] ^ d3, tw)
            m = np.uint32(0xFFFFFFFF) if known[y] else np.uint32(0)
            pa = np.uint32(0xFFFFFFFF) if labels[x, 3] & 1 else np.uint32(0)
            j = grow[g]
            for i in range(4):
                t = h0[i] ^ h1[i] ^ (delta[i] & m)
                tables[j, i] = t
                labels[z, i] = h0[i] ^ (t & pa)
        else:
            tg = np.uint64(2 * g)
            te_ = np.uint64(2 * g + 1)
            ha0 = _hash(rk, te, sbox, labels[x, 0], labels[x, 1], labels[x, 2], labels[x, 3], tg)
            ha1 = _hash(rk, te, sbox, labels[x, 0] ^ d0, labels[x, 1] ^ d1, labels[x, 2] ^ d2, labels[x, 3] ^ d3, tg)
            hb0 = _hash(rk, te, sbox, labels[y, 0], labels[y, 1], labels[y, 2], labels[y, 3], te_)
            hb1 = _hash(rk, te, sbox, labels[y, 0] ^ d0, labels[y, 1] ^ d1, labels[y, 2] ^ d2, labels[y, 3] ^ d3, te_)
            pa = np.uint32(0xFFFFFFFF) if labels[x, 3] & 1 else np.uint32(0)
            pb = np.uint32(0xFFFFFFFF) if labels[y, 3] & 1 else np.uint32(0)
            j = grow[g]
            for i in range(4):
                tgi = ha0[i] ^ ha1[i] ^ (delta[i] & pb)
                tei = hb0[i] ^ hb1[i] ^ labels[x, i]
                tables[j, i] = tgi
                tables[j + 1, i] = tei
                wg = ha0[i] ^ (tgi & pa)
                we = hb0[i] ^ ((tei ^ labels[x, i]) & pb)
                labels[z, i] = wg ^ we


@numba.njit(cache=True)
def _evaluate_kernel(op, ga, gb, go, grow, labels, tables, rk, te, sbox):
    for g in range(op.size):
        o = op[g]
        if o <= 2:
            continue
        x = ga[g]
        y = gb[g]
        z = go[g]
        if o == 3:
            for i in range(4):
                labels[z, i] = labels[x, i] ^ labels[y, i]
        elif o == 4 or o == 5:
            for i in range(4):
                labels[z, i] = labels[x, i]
        elif o == 6:
            h = _hash(rk, te, sbox, labels[x, 0], labels[x, 1], labels[x, 2], labels[x, 3], np.uint64(2 * g))
            sa = np.uint32(0xFFFFFFFF) if labels[x, 3] & 1 else np.uint32(0)
            j = grow[g]
            for i in range(4):
                labels[z, i] = h[i] ^ (tables[j, i] & sa)
        else:
            ha = _hash(rk, te, sbox, labels[x, 0], labels[x, 1], labels[x, 2], labels[x, 3], np.uint64(2 * g))
            hb = _hash(rk, te, sbox, labels[y, 0], labels[y, 1], labels[y, 2], labels[y, 3], np.uint64(2 * g + 1))
            sa = np.uint32(0xFFFFFFFF) if labels[x, 3] & 1 else np.uint32(0)
            sb = np.uint32(0xFFFFFFFF) if labels[y, 3] & 1 else np.uint32(0)
            j = grow[g]
            for i in range(4):
                wg = ha[i] ^ (tables[j, i] & sa)
                we = hb[i] ^ ((tables[j + 1, i] ^ labels[x, i]) & sb)
                labels[z, i] = wg ^ we


# -- garbler / evaluator API --------------------------------------------------


@dataclass
class GarbledCircuit:
    """What the garbler sends: circuit identity, sizes and the ciphertext rows."""

    circuit_name: str
    n_wires: int
    n_gates: int
    tables: np.ndarray  # (rows, 4) uint32

    MAGIC = b"IPGC"
    VERSION = 1

    def to_bytes(self) -> bytes:
        name = self.circuit_name.encode()
        body = self.tables.astype(">u4").tobytes()
        header = struct.pack(">4sHIIIH", self.MAGIC, self.VERSION, self.n_wires, self.n_gates,
                             self.tables.shape[0], len(name))
        return header + name + struct.pack(">Q", len(body)) + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "GarbledCircuit":
        head = struct.calcsize(">4sHIIIH")
        magic, version, n_wires, n_gates, rows, name_len = struct.unpack(">4sHIIIH", data[:head])
        if magic != cls.MAGIC or version != cls.VERSION:
            raise ValueError("not a garbled circuit of a supported version")
        name = data[head : head + name_len].decode()
        pos = head + name_len
        (body_len,) = struct.unpack(">Q", data[pos : pos + 8])
        body = data[pos + 8 : pos + 8 + body_len]
        if body_len != rows * LABEL_BYTES or len(body) != body_len:
            raise ValueError("truncated garbled tables")
        tables = np.frombuffer(body, dtype=">u4").astype(np.uint32).reshape(rows, 4)
        return cls(name, n_wires, n_gates, tables)

    @property
    def size_bytes(self) -> int:
        return len(self.to_bytes())


@dataclass
class GarblerSecrets:
    """State the garbler keeps: delta, all zero labels, and the clear known values."""

    delta: np.ndarray
    zero_labels: np.ndarray
    known_values: np.ndarray
    plan: GarblingPlan = field(repr=False)

    def input_label_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(label0, label1) rows for every evaluator input wire, for the OT sender."""
        zero = self.zero_labels[self.plan.eval_wires]
        return zero, zero ^ self.delta

    def decode(self, output_labels: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Map evaluator output labels back to bits.

        ``output_labels[name]`` holds one label per *mixed* output wire, in
        output order. Constant and garbler-known output bits are filled in
        from the garbler's own view.
        """
        result = {}
        for name, wires in self.plan.circuit.outputs.items():
            labels = np.asarray(output_labels[name], dtype=np.uint32).reshape(-1, 4)
            bits = np.empty(len(wires), dtype=np.uint8)
            k = 0
            for i, w in enumerate(wires):
                if w == ZERO or w == ONE:
                    bits[i] = 1 if w == ONE else 0
                elif self.plan.known[w]:
                    bits[i] = self.known_values[w]
                else:
                    if k >= labels.shape[0]:
                        raise UndecodableLabelError(f"missing label for output {name}[{i}]")
                    lab = labels[k]
                    k += 1
                    zero = self.zero_labels[w]
                    if np.array_equal(lab, zero):
                        bits[i] = 0
                    elif np.array_equal(lab, zero ^ self.delta):
                        bits[i] = 1
                    else:
                        raise UndecodableLabelError(f"output {name}[{i}] matches neither label")
            result[name] = bits
        return result


def random_labels(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, 1 << 32, size=(n, 4), dtype=np.uint32)


def garble(circuit: BooleanCircuit, known_inputs: Mapping[str, np.ndarray],
           rng: np.random.Generator) -> tuple[GarbledCircuit, GarblerSecrets]:
    """Garble ``circuit`` with the garbler's private and the public inputs folded in.

    ``known_inputs`` maps every garbler- and public-role input name to its bits.
    """
    plan = plan_garbling(circuit)
    known_values = np.zeros(circuit.n_wires, dtype=np.uint8)
    for name, spec in circuit.inputs.items():
        if spec.role == "evaluator":
            continue
        bits = np.asarray(known_inputs[name], dtype=np.uint8).reshape(-1)
        if bits.size != spec.width:
            raise ValueError(f"input {name} needs {spec.width} bits")
        known_values[list(spec.wires)] = bits & 1
    delta = random_labels(rng, 1)[0]
    delta[3] |= 1
    labels = np.zeros((circuit.n_wires, 4), dtype=np.uint32)
    labels[plan.eval_wires] = random_labels(rng, plan.eval_wires.size)
    tables = np.zeros((plan.n_rows, 4), dtype=np.uint32)
    _garble_kernel(plan.op, plan.a, plan.b, plan.out, plan.row, labels, known_values, delta, tables,
                   _RK, TE, SBOX)
    gc = GarbledCircuit(circuit.name, circuit.n_wires, circuit.n_gates, tables)
    return gc, GarblerSecrets(delta, labels, known_values, plan)


def evaluate_garbled(circuit: BooleanCircuit, gc: GarbledCircuit,
                     input_labels: np.ndarray) -> dict[str, np.ndarray]:
    """Evaluate with one label per evaluator input wire; returns mixed-output labels."""
    plan = plan_garbling(circuit)
    input_labels = np.asarray(input_labels, dtype=np.uint32).reshape(-1, 4)
    if input_labels.shape[0] != plan.eval_wires.size:
        raise ValueError(f"expected {plan.eval_wires.size} input labels")
    if gc.tables.shape != (plan.n_rows, 4):
        raise ValueError("garbled tables do not fit this circuit")
    labels = np.zeros((circuit.n_wires, 4), dtype=np.uint32)
    labels[plan.eval_wires] = input_labels
    _evaluate_kernel(plan.op, plan.a, plan.b, plan.out, plan.row, labels, gc.tables, _RK, TE, SBOX)
    out = {}
    for name, wires in circuit.outputs.items():
        mixed = [w for w in wires if w >= 0 and not plan.known[w]]
        out[name] = labels[mixed].copy()
    return out


def labels_to_bytes(labels: np.ndarray) -> bytes:
    return np.asarray(labels, dtype=np.uint32).astype(">u4").tobytes()


def labels_from_bytes(data: bytes) -> np.ndarray:
    if len(data) % LABEL_BYTES:
        raise ValueError("label block is not a whole number of labels")
    return np.frombuffer(data, dtype=">u4").astype(np.uint32).reshape(-1, 4)
