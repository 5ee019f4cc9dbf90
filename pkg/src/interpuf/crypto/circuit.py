"""Boolean circuits over {AND, XOR, INV}: construction, plaintext evaluation, Bristol I/O.

Wires are non-negative integers. The builder folds constants on the fly, so
the two constants ``ZERO`` and ``ONE`` never appear as gate inputs in a
built circuit; they can still appear in output maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numba
import numpy as np

ZERO = -1
ONE = -2

XOR, AND, INV = 0, 1, 2
_KIND_NAMES = {XOR: "XOR", AND: "AND", INV: "INV"}

ROLES = ("garbler", "evaluator", "public")


@dataclass(frozen=True)
class InputSpec:
    role: str
    wires: tuple[int, ...]

    @property
    def width(self) -> int:
        return len(self.wires)


@dataclass(frozen=True, eq=False)
class BooleanCircuit:
    """A topologically ordered gate list with named, role-tagged inputs.

    Every input wire and every gate output is assigned exactly once, and
    gates only read wires assigned earlier.
    """

    n_wires: int
    kinds: np.ndarray
    in_a: np.ndarray
    in_b: np.ndarray
    out: np.ndarray
    inputs: Mapping[str, InputSpec]
    outputs: Mapping[str, tuple[int, ...]]
    name: str = "circuit"

    @property
    def n_gates(self) -> int:
        return int(self.kinds.size)

    def gate_counts(self) -> dict[str, int]:
        counts = np.bincount(self.kinds, minlength=3)
        return {_KIND_NAMES[k]: int(counts[k]) for k in range(3)}

    def input_wires(self, role: str | None = None) -> np.ndarray:
        wires = [w for spec in self.inputs.values() if role in (None, spec.role) for w in spec.wires]
        return np.asarray(wires, dtype=np.int64)

    def validate(self) -> None:
        """Raise ``ValueError`` unless the circuit is well formed."""
        assigned = np.zeros(self.n_wires, dtype=bool)
        for spec in self.inputs.values():
            if spec.role not in ROLES:
                raise ValueError(f"unknown input role {spec.role!r}")
            for w in spec.wires:
                if assigned[w]:
                    raise ValueError(f"input wire {w} assigned twice")
                assigned[w] = True
        for g in range(self.n_gates):
            a, b, o = int(self.in_a[g]), int(self.in_b[g]), int(self.out[g])
            if not assigned[a] or (self.kinds[g] != INV and not assigned[b]):
                raise ValueError(f"gate {g} reads an unassigned wire")
            if assigned[o]:
                raise ValueError(f"gate {g} re-assigns wire {o}")
            assigned[o] = True
        for name, wires in self.outputs.items():
            for w in wires:
                if w >= 0 and not assigned[w]:
                    raise ValueError(f"output {name} uses unassigned wire {w}")

    # -- plaintext evaluation -------------------------------------------------

    def evaluate(self, values: Mapping[str, Sequence[int] | np.ndarray]) -> dict[str, np.ndarray]:
        """Evaluate on one assignment; each input is a bit vector."""
        batched = {k: np.asarray(v, dtype=np.uint8)[None, :] for k, v in values.items()}
        return {k: v[0] for k, v in self.evaluate_batch(batched).items()}

    def evaluate_batch(self, values: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Evaluate many assignments at once.

        ``values[name]`` has shape ``(batch, width)``. Evaluation is
        bit-sliced: 64 assignments travel through each gate as one word.
        """
        batch = None
        for name, spec in self.inputs.items():
            arr = np.asarray(values[name], dtype=np.uint8)
            if arr.ndim != 2 or arr.shape[1] != spec.width:
                raise ValueError(f"input {name} must have shape (batch, {spec.width})")
            if batch is None:
                batch = arr.shape[0]
            elif arr.shape[0] != batch:
                raise ValueError("inconsistent batch sizes")
        if batch is None:
            raise ValueError("circuit has no inputs")
        n_words = (batch + 63) // 64
        state = np.zeros((self.n_wires, n_words), dtype=np.uint64)
        for name, spec in self.inputs.items():
            arr = np.asarray(values[name], dtype=np.uint8)
            state[list(spec.wires)] = _pack_columns(arr, n_words)
        _eval_sliced(self.kinds, self.in_a, self.in_b, self.out, state)
        result = {}
        for name, wires in self.outputs.items():
            cols = np.empty((len(wires), n_words), dtype=np.uint64)
            for i, w in enumerate(wires):
                if w == ZERO:
                    cols[i] = 0
                elif w == ONE:
                    cols[i] = np.uint64(0xFFFFFFFFFFFFFFFF)
                else:
                    cols[i] = state[w]
            result[name] = _unpack_columns(cols, batch)
        return result


def _pack_columns(bits: np.ndarray, n_words: int) -> np.ndarray:
    """(batch, width) bits -> (width, n_words) uint64, assignment j at bit j%64 of word j//64."""
    batch, width = bits.shape
    padded = np.zeros((n_words * 64, width), dtype=np.uint8)
    padded[:batch] = bits
    as_bytes = np.packbits(padded.T.reshape(width, n_words, 64), axis=2, bitorder="little")
    return np.ascontiguousarray(as_bytes).view("<u8").reshape(width, n_words).astype(np.uint64)


def _unpack_columns(cols: np.ndarray, batch: int) -> np.ndarray:
    width, n_words = cols.shape
    raw = cols.astype("<u8").view(np.uint8).reshape(width, n_words * 8)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :batch]
    return bits.T.copy()


@numba.njit(cache=True)
def _eval_sliced(kinds, in_a, in_b, out, state):
    ones = np.uint64(0xFFFFFFFFFFFFFFFF)
    n_words = state.shape[1]
    for g in range(kinds.size):
        a = in_a[g]
        o = out[g]
        k = kinds[g]
        if k == 0:
            b = in_b[g]
            for w in range(n_words):
                state[o, w] = state[a, w] ^ state[b, w]
        elif k == 1:
            b = in_b[g]
            for w in range(n_words):
                state[o, w] = state[a, w] & state[b, w]
        else:
            for w in range(n_words):
                state[o, w] = state[a, w] ^ ones


# -- construction -------------------------------------------------------------


@dataclass
class CircuitBuilder:
    """Incremental gate-list builder with constant folding.

    ``xor``/``and_``/``inv`` accept wires or the ``ZERO``/``ONE`` constants and
    return either a fresh wire or a folded result, so constant-heavy regions
    (padding blocks, IVs) cost nothing.
    """

    name: str = "circuit"
    n_wires: int = 0
    _kinds: list[int] = field(default_factory=list)
    _a: list[int] = field(default_factory=list)
    _b: list[int] = field(default_factory=list)
    _out: list[int] = field(default_factory=list)
    _inputs: dict[str, InputSpec] = field(default_factory=dict)
    _outputs: dict[str, tuple[int, ...]] = field(default_factory=dict)
    _inv_of: dict[int, int] = field(default_factory=dict)

    def input(self, name: str, width: int, role: str) -> list[int]:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        if name in self._inputs:
            raise ValueError(f"duplicate input {name!r}")
        wires = list(range(self.n_wires, self.n_wires + width))
        self.n_wires += width
        self._inputs[name] = InputSpec(role, tuple(wires))
        return wires

    def output(self, name: str, wires: Iterable[int]) -> None:
        self._outputs[name] = tuple(wires)

    def _emit(self, kind: int, a: int, b: int) -> int:
        o = self.n_wires
        self.n_wires += 1
        self._kinds.append(kind)
        self._a.append(a)
        self._b.append(b)
        self._out.append(o)
        return o

    def xor(self, a: int, b: int) -> int:
        if a == ZERO:
            return b
        if b == ZERO:
            return a
        if a == ONE:
            return self.inv(b)
        if b == ONE:
            return self.inv(a)
        if a == b:
            return ZERO
        if self._inv_of.get(a) == b:
            return ONE
        return self._emit(XOR, a, b)

    def and_(self, a: int, b: int) -> int:
        if a == ZERO or b == ZERO:
            return ZERO
        if a == ONE:
            return b
        if b == ONE:
            return a
        if a == b:
            return a
        if self._inv_of.get(a) == b:
            return ZERO
        return self._emit(AND, a, b)

    def inv(self, a: int) -> int:
        if a == ZERO:
            return ONE
        if a == ONE:
            return ZERO
        if a in self._inv_of:
            return self._inv_of[a]
        o = self._emit(INV, a, a)
        self._inv_of[a] = o
        self._inv_of[o] = a
        return o

    def or_(self, a: int, b: int) -> int:
        return self.inv(self.and_(self.inv(a), self.inv(b)))

    def and_all(self, wires: Sequence[int]) -> int:
        """Balanced AND tree (keeps multiplicative depth logarithmic)."""
        level = list(wires)
        if not level:
            return ONE
        while len(level) > 1:
            nxt = [self.and_(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
            if len(level) % 2:
                nxt.append(level[-1])
            level = nxt
        return level[0]

    def equal(self, xs: Sequence[int], ys: Sequence[int]) -> int:
        if len(xs) != len(ys):
            raise ValueError("equality over different widths")
        return self.and_all([self.inv(self.xor(x, y)) for x, y in zip(xs, ys)])

    def build(self) -> BooleanCircuit:
        circuit = BooleanCircuit(
            n_wires=self.n_wires,
            kinds=np.asarray(self._kinds, dtype=np.uint8),
            in_a=np.asarray(self._a, dtype=np.int64),
            in_b=np.asarray(self._b, dtype=np.int64),
            out=np.asarray(self._out, dtype=np.int64),
            inputs=dict(self._inputs),
            outputs=dict(self._outputs),
            name=self.name,
        )
        return circuit


def constant_bits(value: int, width: int) -> list[int]:
    """MSB-first constant wires for an integer."""
    return [ONE if (value >> (width - 1 - i)) & 1 else ZERO for i in range(width)]


# -- Bristol fashion ----------------------------------------------------------


def load_bristol(path: str | Path, roles: Sequence[str] | None = None) -> BooleanCircuit:
    """Parse a Bristol-fashion circuit file.

    Inputs are named ``in0, in1, ...`` and outputs ``out0, out1, ...``;
    ``roles`` assigns a role per input (default: garbler, evaluator, public...).
    Supports XOR, AND, INV, and EQW (wire copy, lowered to a double INV).
    """
    tokens = Path(path).read_text().split("\n")
    lines = [ln.split() for ln in tokens if ln.strip()]
    n_gates, n_wires = int(lines[0][0]), int(lines[0][1])
    niv = int(lines[1][0])
    in_widths = [int(x) for x in lines[1][1 : 1 + niv]]
    nov = int(lines[2][0])
    out_widths = [int(x) for x in lines[2][1 : 1 + nov]]
    roles = list(roles) if roles is not None else [ROLES[min(i, 2)] for i in range(niv)]
    if len(roles) != niv:
        raise ValueError("one role per input required")

    inputs: dict[str, InputSpec] = {}
    start = 0
    for i, width in enumerate(in_widths):
        inputs[f"in{i}"] = InputSpec(roles[i], tuple(range(start, start + width)))
        start += width

    kinds, in_a, in_b, out = [], [], [], []
    remap: dict[int, int] = {}
    next_wire = n_wires
    for parts in lines[3 : 3 + n_gates]:
        n_in, n_out = int(parts[0]), int(parts[1])
        args = [int(x) for x in parts[2 : 2 + n_in + n_out]]
        op = parts[2 + n_in + n_out]
        srcs = [remap.get(x, x) for x in args[:n_in]]
        dst = args[n_in]
        if op in ("XOR", "AND"):
            kinds.append(XOR if op == "XOR" else AND)
            in_a.append(srcs[0])
            in_b.append(srcs[1])
            out.append(dst)
        elif op in ("INV", "NOT"):
            kinds.append(INV)
            in_a.append(srcs[0])
            in_b.append(srcs[0])
            out.append(dst)
        elif op == "EQW":
            tmp = next_wire
            next_wire += 1
            kinds += [INV, INV]
            in_a += [srcs[0], tmp]
            in_b += [srcs[0], tmp]
            out += [tmp, dst]
        else:
            raise ValueError(f"unsupported Bristol gate {op!r}")

    outputs: dict[str, tuple[int, ...]] = {}
    end = n_wires
    for i, width in reversed(list(enumerate(out_widths))):
        outputs[f"out{i}"] = tuple(range(end - width, end))
        end -= width
    outputs = dict(sorted(outputs.items(), key=lambda kv: int(kv[0][3:])))

    order = np.argsort(_topological_rank(out, in_a, in_b, kinds, next_wire, inputs), kind="stable")
    circuit = BooleanCircuit(
        n_wires=next_wire,
        kinds=np.asarray(kinds, dtype=np.uint8)[order],
        in_a=np.asarray(in_a, dtype=np.int64)[order],
        in_b=np.asarray(in_b, dtype=np.int64)[order],
        out=np.asarray(out, dtype=np.int64)[order],
        inputs=inputs,
        outputs=outputs,
        name=Path(path).stem,
    )
    circuit.validate()
    return circuit


def _topological_rank(out, in_a, in_b, kinds, n_wires, inputs) -> np.ndarray:
    # Bristol files are already ordered in practice; this only guards EQW lowering.
    level = np.full(n_wires, -1, dtype=np.int64)
    for spec in inputs.values():
        level[list(spec.wires)] = 0
    ranks = np.empty(len(out), dtype=np.int64)
    pending = list(range(len(out)))
    while pending:
        nxt = []
        for g in pending:
            la = level[in_a[g]]
            lb = level[in_b[g]]
            if la < 0 or lb < 0:
                nxt.append(g)
                continue
            level[out[g]] = max(la, lb) + 1
            ranks[g] = level[out[g]]
        if len(nxt) == len(pending):
            raise ValueError("circuit has a cycle or reads an undefined wire")
        pending = nxt
    return ranks


def write_bristol(circuit: BooleanCircuit, path: str | Path) -> None:
    """Write a circuit in Bristol fashion.

    Wires are renumbered so inputs come first and the outputs occupy the
    highest indices, as the format requires; each output bit is copied onto
    its trailing wire by XOR with a materialised zero.
    """
    mapping: dict[int, int] = {}
    nxt = 0
    for spec in circuit.inputs.values():
        for w in spec.wires:
            mapping[w] = nxt
            nxt += 1
    ops: list[tuple[str, list[int], int]] = []
    for g in range(circuit.n_gates):
        k = int(circuit.kinds[g])
        srcs = [int(circuit.in_a[g])] if k == INV else [int(circuit.in_a[g]), int(circuit.in_b[g])]
        mapping[int(circuit.out[g])] = nxt
        ops.append((_KIND_NAMES[k], [mapping[s] for s in srcs], nxt))
        nxt += 1

    first = mapping[next(iter(circuit.inputs.values())).wires[0]]
    zero, one = nxt, nxt + 1
    ops.append(("XOR", [first, first], zero))
    ops.append(("INV", [zero], one))
    nxt += 2
    sources = [
        zero if w == ZERO else one if w == ONE else mapping[w]
        for wires in circuit.outputs.values()
        for w in wires
    ]
    for i, src in enumerate(sources):
        ops.append(("XOR", [src, zero], nxt + i))
    total = nxt + len(sources)

    in_widths = [spec.width for spec in circuit.inputs.values()]
    out_widths = [len(w) for w in circuit.outputs.values()]
    text = [
        f"{len(ops)} {total}",
        " ".join(map(str, [len(in_widths), *in_widths])),
        " ".join(map(str, [len(out_widths), *out_widths])),
        "",
    ]
    text += [f"{len(s)} 1 {' '.join(map(str, s))} {o} {op}" for op, s, o in ops]
    Path(path).write_text("\n".join(text) + "\n")
