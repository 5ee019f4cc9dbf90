"""Enrollment, session binding, two-party chiplet authentication, quorum and logging.

Message flow of one authentication (interposer I, chiplet C):

    I -> C  garbled f_i tables + public inputs (s, Nonce, PUF_OK)
    C -> I  OT extension matrix for the chiplet's (ID, SIG) bits
    I -> C  OT ciphertexts carrying the input labels
    C -> I  output labels

Two round trips regardless of circuit size. The base OTs that seed the
extension run once per chiplet link, before any session.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .crypto import fcircuit
from .crypto.fcircuit import FULL, FieldLayout, build_f_i_circuit, circuit_inputs
from .crypto.garble import (
    GarbledCircuit, evaluate_garbled, garble, labels_from_bytes, labels_to_bytes, plan_garbling,
)
from .crypto.ot import ExtensionReceiver, ExtensionSender, TrustedDealerOT
from .crypto.primitives import bits_to_bytes, bytes_to_bits, session_salt, sha256
from .crypto.wire import decode_message, encode_message
from .errors import (
    InvalidParameterError, PhaseError, ReplayError, SignatureError, StaleEpochError, TransportError,
    UndecodableLabelError,
)
from .mesh import PathPair, RaceEngine, RouteDigest
from .puf import vote
from .rng import stream
from .selfcheck import ZProfile
from .transport import Transport

DIGEST_VERSION = 1
PUF_PROOF_CYCLES = 6      # one scheduling cycle + five evaluation cycles
SHA256_CYCLES = 96        # 16 schedule + 64 compression + 16 I/O
CHALLENGE_BYTES = 16
NONCE_BYTES = 16


# -- signer -------------------------------------------------------------------


class Signer(ABC):
    """Stand-in for the HSM that attests enrollment manifests."""

    key_id: str

    @abstractmethod
    def sign(self, message: bytes) -> bytes: ...

    @abstractmethod
    def verify(self, message: bytes, signature: bytes) -> bool: ...


class HmacSigner(Signer):
    """Deterministic test signer: HMAC-SHA256 under a fixed key."""

    def __init__(self, key: bytes, key_id: str = "test-hmac"):
        self._key = key
        self.key_id = key_id

    def sign(self, message: bytes) -> bytes:
        return hmac.new(self._key, message, hashlib.sha256).digest()

    def verify(self, message: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(message), signature)

    def __repr__(self) -> str:
        return f"HmacSigner(key_id={self.key_id!r})"


# -- parties ------------------------------------------------------------------


@dataclass(frozen=True)
class ChipletIdentity:
    ident: bytes = field(repr=False)
    sig: bytes = field(repr=False)

    def __post_init__(self):
        if len(self.ident) != 16 or len(self.sig) != 32:
            raise InvalidParameterError("ID is 128 bits and SIG 256 bits")


def chiplet_identity(seed: int, index: int, label: str = "chiplet") -> ChipletIdentity:
    """Secrets for a simulated chiplet, rebuilt from the seed; never persisted."""
    rng = stream(seed, label, index)
    return ChipletIdentity(rng.bytes(16), rng.bytes(32))


class ChipletParty:
    """The evaluator. Its identity is only ever used as OT choice bits and for G_i."""

    def __init__(self, index: int, identity: ChipletIdentity, layout: FieldLayout = FULL,
                 rng: np.random.Generator | None = None):
        self.index = index
        self._identity = identity
        self.layout = layout
        self._rng = rng
        self._ot: ExtensionReceiver | None = None
        self._gc: GarbledCircuit | None = None
        self._counter = 0

    def __repr__(self) -> str:
        return f"ChipletParty(index={self.index})"

    def commit(self, rstar: bytes) -> bytes:
        return fcircuit.commitment(self.layout, self._identity.ident, self._identity.sig, rstar)

    def _choice_bits(self) -> np.ndarray:
        return np.concatenate([bytes_to_bits(self._identity.ident), bytes_to_bits(self._identity.sig)])

    # link setup
    def start_link(self) -> bytes:
        self._ot, msg = ExtensionReceiver.start(self._rng)
        return msg

    def finish_link(self, message: bytes) -> None:
        self._ot.finish_base(message)

    @property
    def linked(self) -> bool:
        return self._ot is not None and bool(self._ot.seeds0)

    # session
    def on_garbled(self, message: bytes, dealer: TrustedDealerOT | None = None, labels=None) -> bytes | None:
        kind, sec = decode_message(message)
        if kind != "session-garbled":
            raise TransportError(f"unexpected {kind}")
        self._gc = GarbledCircuit.from_bytes(sec["gc"])
        self._counter = int.from_bytes(sec["epoch"], "big")
        if dealer is not None:
            return None
        return self._ot.request(self._counter, self._choice_bits())

    def on_labels(self, message: bytes | None, dealer_labels: np.ndarray | None = None) -> bytes:
        labels = dealer_labels if message is None else self._ot.finish(self._counter, message)
        circuit = build_f_i_circuit(self.layout)
        out = evaluate_garbled(circuit, self._gc, labels)
        self._gc = None
        return encode_message("session-output", {name: labels_to_bytes(v) for name, v in out.items()})


@dataclass
class GarblerSession:
    secrets: object
    gc_bytes: int


class InterposerParty:
    """The garbler. Holds R* and the manifest commitments."""

    def __init__(self, device_id: str, rstar: bytes, commitments: Mapping[int, bytes],
                 layout: FieldLayout = FULL):
        self.device_id = device_id
        self._rstar = rstar
        self.commitments = dict(commitments)
        self.layout = layout
        self._links: dict[int, ExtensionSender] = {}

    def __repr__(self) -> str:
        return f"InterposerParty(device_id={self.device_id!r})"

    def accept_link(self, chiplet: int, message: bytes, rng=None) -> bytes:
        sender, reply = ExtensionSender.respond_base(message, rng)
        self._links[chiplet] = sender
        return reply

    def linked(self, chiplet: int) -> bool:
        return chiplet in self._links

    def garble_for(self, session: "SessionState", rng: np.random.Generator) -> tuple[bytes, GarblerSession]:
        circuit = build_f_i_circuit(self.layout)
        bits = circuit_inputs(
            self.layout, id=bytes(self.layout.id_bits // 8), sig=bytes(self.layout.sig_bits // 8),
            rstar=self._rstar, g=self.commitments[session.chiplet], salt=session.salt,
            nonce=session.nonce, puf_ok=session.puf_ok,
        )
        known = {k: bits[k] for k in ("rstar", "g", "salt", "nonce", "puf_ok")}
        gc, secrets = garble(circuit, known, rng)
        gc_raw = gc.to_bytes()
        msg = encode_message("session-garbled", {
            "epoch": session.epoch.to_bytes(8, "big"),
            "chiplet": session.chiplet.to_bytes(2, "big"),
            "gc": gc_raw,
            "salt": session.salt,
            "nonce": session.nonce,
            "puf_ok": bytes([1 if session.puf_ok else 0]),
        })
        return msg, GarblerSession(secrets, len(gc_raw))

    def answer_ot(self, chiplet: int, counter: int, message: bytes, state: GarblerSession) -> bytes:
        l0, l1 = state.secrets.input_label_pairs()
        return self._links[chiplet].respond(counter, message, l0, l1)

    def decode(self, message: bytes, state: GarblerSession) -> tuple[bool, bytes]:
        kind, sec = decode_message(message)
        if kind != "session-output":
            raise TransportError(f"unexpected {kind}")
        out = state.secrets.decode({name: labels_from_bytes(raw) for name, raw in sec.items()})
        return bool(out["b"][0]), bits_to_bytes(out["token"])


# -- manifest -----------------------------------------------------------------


@dataclass
class EnrollmentManifest:
    device_id: str
    rstar: bytes
    digest_version: int
    trace: dict[str, str]
    commitments: dict[int, bytes]
    transcript_hash: bytes
    signer_id: str = ""
    signature: bytes = b""

    def body(self) -> dict:
        return {
            "device_id": self.device_id,
            "rstar_hex": self.rstar.hex(),
            "digest_version": self.digest_version,
            "trace": dict(sorted(self.trace.items())),
            "commitments": {str(i): g.hex() for i, g in sorted(self.commitments.items())},
            "transcript_hash_hex": self.transcript_hash.hex(),
            "signer_id": self.signer_id,
        }

    def signed_bytes(self) -> bytes:
        return json.dumps(self.body(), sort_keys=True, separators=(",", ":")).encode()

    def to_json(self) -> dict:
        return {**self.body(), "signature_hex": self.signature.hex()}

    @classmethod
    def from_json(cls, data: dict) -> "EnrollmentManifest":
        return cls(
            device_id=data["device_id"], rstar=bytes.fromhex(data["rstar_hex"]),
            digest_version=int(data["digest_version"]), trace=dict(data["trace"]),
            commitments={int(i): bytes.fromhex(g) for i, g in data["commitments"].items()},
            transcript_hash=bytes.fromhex(data["transcript_hash_hex"]), signer_id=data["signer_id"],
            signature=bytes.fromhex(data["signature_hex"]),
        )

    def verify(self, signer: Signer) -> None:
        if self.signer_id != signer.key_id or not signer.verify(self.signed_bytes(), self.signature):
            raise SignatureError("manifest signature does not verify")


def enroll(digest: RouteDigest, chiplets: Sequence[ChipletParty], signer: Signer,
           trace: Mapping[str, str] | None = None) -> EnrollmentManifest:
    """Bind each chiplet to R* through its commitment and sign the result.

    Only G_i leaves a chiplet. The transcript hash covers R*'s digest-report
    fields and every commitment in index order.
    """
    rstar = digest.digest
    commitments = {c.index: c.commit(rstar) for c in chiplets}
    transcript = hashlib.sha256()
    transcript.update(json.dumps(digest.report(), sort_keys=True).encode())
    for i, g in sorted(commitments.items()):
        transcript.update(i.to_bytes(2, "big") + g)
    manifest = EnrollmentManifest(
        device_id=digest.device_id, rstar=rstar, digest_version=DIGEST_VERSION,
        trace=dict(trace or {}), commitments=commitments, transcript_hash=transcript.digest(),
        signer_id=signer.key_id,
    )
    manifest.signature = signer.sign(manifest.signed_bytes())
    return manifest


# -- repository ---------------------------------------------------------------


@dataclass(frozen=True)
class AuditRecord:
    chiplet: int
    challenge: bytes
    epoch: int
    nonce: bytes
    token: bytes

    def to_json(self) -> dict:
        return {"chiplet": self.chiplet, "ch_hex": self.challenge.hex(), "epoch": self.epoch,
                "nonce_hex": self.nonce.hex(), "token_hex": self.token.hex()}


class Repository:
    """Directory store: manifest, self-check profile, mesh description, epoch state, logs."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _write_json(self, name: str, data) -> None:
        (self.root / name).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

    def _read_json(self, name: str):
        return json.loads((self.root / name).read_text())

    def has(self, name: str) -> bool:
        return (self.root / name).exists()

    def save_manifest(self, manifest: EnrollmentManifest) -> None:
        self._write_json("manifest.json", manifest.to_json())

    def load_manifest(self, signer: Signer) -> EnrollmentManifest:
        manifest = EnrollmentManifest.from_json(self._read_json("manifest.json"))
        manifest.verify(signer)
        return manifest

    def save_profile(self, profile: ZProfile) -> None:
        self._write_json("profile.json", profile.to_json())

    def load_profile(self) -> ZProfile:
        return ZProfile.from_json(self._read_json("profile.json"))

    def save_mesh(self, description: dict) -> None:
        self._write_json("mesh.json", description)

    def load_mesh(self) -> dict:
        return self._read_json("mesh.json")

    @property
    def last_epoch(self) -> int:
        return int(self._read_json("state.json")["last_epoch"]) if self.has("state.json") else 0

    def advance_epoch(self, epoch: int) -> None:
        if epoch <= self.last_epoch:
            raise StaleEpochError(f"epoch {epoch} is not newer than {self.last_epoch}")
        self._write_json("state.json", {"last_epoch": epoch})

    def append_audit(self, record: AuditRecord) -> None:
        with open(self.root / "audit.jsonl", "a") as fh:
            fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")

    def audit_records(self) -> list[dict]:
        path = self.root / "audit.jsonl"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text().splitlines() if line]

    def logged(self, epoch: int, nonce: bytes) -> bool:
        return any(r["epoch"] == epoch and r["nonce_hex"] == nonce.hex() for r in self.audit_records())

    def raise_alarm(self, kind: str, detail: dict) -> None:
        with open(self.root / "alarms.jsonl", "a") as fh:
            fh.write(json.dumps({"kind": kind, **detail}, sort_keys=True) + "\n")


@dataclass
class MemoryLog:
    """Repository stand-in for fast in-memory simulations."""

    last_epoch: int = 0
    records: list[AuditRecord] = field(default_factory=list)
    alarms: list[dict] = field(default_factory=list)
    _seen: set = field(default_factory=set)

    def advance_epoch(self, epoch: int) -> None:
        if epoch <= self.last_epoch:
            raise StaleEpochError(f"epoch {epoch} is not newer than {self.last_epoch}")
        self.last_epoch = epoch

    def append_audit(self, record: AuditRecord) -> None:
        self.records.append(record)
        self._seen.add((record.epoch, record.nonce))

    def logged(self, epoch: int, nonce: bytes) -> bool:
        return (epoch, nonce) in self._seen

    def raise_alarm(self, kind: str, detail: dict) -> None:
        self.alarms.append({"kind": kind, **detail})


# -- sessions -----------------------------------------------------------------


class Phase(enum.IntEnum):
    BOUND = 0
    GARBLED = 1
    TRANSFERRED = 2
    EVALUATED = 3
    DECIDED = 4


@dataclass
class SessionState:
    session_id: str
    chiplet: int
    challenge: bytes
    epoch: int
    nonce: bytes
    salt: bytes
    puf_ok: bool
    phase: Phase = Phase.BOUND
    transcript: list[tuple[str, int]] = field(default_factory=list)  # (sender, bytes)
    decision: tuple[bool, bytes] | None = None
    rounds: int = 0
    messages: int = 0
    garbled_bytes: int = 0
    ran_2pc: bool = False

    def advance(self, phase: Phase) -> None:
        if phase <= self.phase:
            raise PhaseError(f"cannot move from {self.phase.name} to {phase.name}")
        self.phase = phase

    def report(self) -> dict:
        b, token = self.decision if self.decision else (False, b"")
        return {
            "session_id": self.session_id,
            "chiplet": self.chiplet,
            "epoch": self.epoch,
            "nonce_hex": self.nonce.hex(),
            "puf_ok": self.puf_ok,
            "b": int(b),
            "token_hex": token.hex(),
            "rounds": self.rounds,
            "garbled_bytes": self.garbled_bytes,
            "cycles": {k: v for k, v in cycle_cost(1, 1).items() if k in ("puf", "sha")},
        }


def session_challenge(ch: bytes, pairs: Sequence[PathPair]) -> tuple[int, np.ndarray]:
    """Map the public session challenge to (candidate index, race challenge bits)."""
    index = int.from_bytes(sha256(b"select" + ch)[:4], "big") % len(pairs)
    depth = pairs[index].depth
    stream_bytes = b"".join(sha256(b"expand" + ch + bytes([i])) for i in range((depth + 255) // 256))
    return index, bytes_to_bits(stream_bytes)[:depth]


def puf_stability_check(engine: RaceEngine, pairs: Sequence[PathPair], ch: bytes, repetitions: int,
                        tau: float, rng: np.random.Generator) -> bool:
    """PUF_OK: the race selected by ``ch`` must read stably at runtime."""
    index, bits = session_challenge(ch, pairs)
    _, rate = vote(engine.votes(pairs[index], bits, repetitions, rng))
    return bool(rate <= tau)


def bind_session(manifest: EnrollmentManifest, chiplet: int, ch: bytes, epoch: int, puf_ok: bool,
                 log, rng: np.random.Generator, nonce: bytes | None = None) -> SessionState:
    """Derive the salt, pick a nonce and fix PUF_OK for one chiplet session.

    A caller-supplied ``nonce`` that was already logged with this epoch is a
    replay; an epoch not newer than the last one is stale. Both are rejected
    before any 2PC work.
    """
    if nonce is not None and log.logged(epoch, nonce):
        raise ReplayError(f"(epoch {epoch}, nonce {nonce.hex()}) was already used")
    log.advance_epoch(epoch)
    if nonce is None:
        nonce = rng.bytes(NONCE_BYTES)
        while log.logged(epoch, nonce):
            nonce = rng.bytes(NONCE_BYTES)
    salt = session_salt(manifest.rstar, ch, epoch)
    sid = sha256(manifest.device_id.encode() + chiplet.to_bytes(2, "big") + epoch.to_bytes(8, "big") + nonce)[:8].hex()
    return SessionState(sid, chiplet, ch, epoch, nonce, salt, bool(puf_ok))


def link_chiplet(interposer: InterposerParty, chiplet: ChipletParty, rng_interposer=None) -> int:
    """One-time base OT between the parties; returns bytes exchanged."""
    t = Transport()
    t.send("chiplet", chiplet.start_link())
    t.send("interposer", interposer.accept_link(chiplet.index, t.receive("interposer"), rng_interposer))
    chiplet.finish_link(t.receive("chiplet"))
    return t.bytes_sent


def authenticate_chiplet(session: SessionState, interposer: InterposerParty, chiplet: ChipletParty,
                         transport: Transport, rng: np.random.Generator, log=None,
                         dealer: TrustedDealerOT | None = None) -> tuple[bool, bytes]:
    """Run the garbled-circuit exchange and decide; PUF_OK = 0 short-circuits to reject."""
    if session.phase != Phase.BOUND:
        raise PhaseError("session must be freshly bound")
    if not session.puf_ok:
        session.decision = (False, b"")
        session.advance(Phase.DECIDED)
        return session.decision
    if dealer is None and not (interposer.linked(chiplet.index) and chiplet.linked):
        link_chiplet(interposer, chiplet)
    start = len(transport.transcript)
    session.ran_2pc = True

    msg, gstate = interposer.garble_for(session, rng)
    session.garbled_bytes = gstate.gc_bytes
    transport.send("interposer", msg)
    session.advance(Phase.GARBLED)

    request = chiplet.on_garbled(transport.receive("chiplet"), dealer)
    if dealer is None:
        transport.send("chiplet", request)
        transport.send("interposer", interposer.answer_ot(chiplet.index, session.epoch,
                                                         transport.receive("interposer"), gstate))
        reply = chiplet.on_labels(transport.receive("chiplet"))
    else:
        l0, l1 = gstate.secrets.input_label_pairs()
        reply = chiplet.on_labels(None, dealer.transfer(l0, l1, chiplet._choice_bits()))
    session.advance(Phase.TRANSFERRED)

    transport.send("chiplet", reply)
    session.advance(Phase.EVALUATED)
    try:
        b, token = interposer.decode(transport.receive("interposer"), gstate)
    except UndecodableLabelError as exc:
        b, token = False, b""
        if log is not None:
            log.raise_alarm("undecodable-output", {"chiplet": session.chiplet, "epoch": session.epoch,
                                                   "reason": str(exc)})
    session.decision = (b, token)
    sub = Transport(transcript=transport.transcript[start:])
    session.messages, session.rounds = sub.messages, sub.rounds
    session.transcript = [(s, len(p)) for s, p in sub.transcript]
    session.advance(Phase.DECIDED)
    if b and log is not None:
        log.append_audit(AuditRecord(session.chiplet, session.challenge, session.epoch, session.nonce, token))
    return b, token


# -- policy and costs ---------------------------------------------------------


def quorum_decide(results: Mapping[int, bool], policy: str = "all") -> bool:
    """Evaluate "all", "any" or "m-of-n" over the per-chiplet accept bits."""
    if not results:
        raise InvalidParameterError("no chiplet results to decide on")
    accepts = sum(bool(b) for b in results.values())
    if policy == "all":
        return accepts == len(results)
    if policy == "any":
        return accepts > 0
    m = re.fullmatch(r"(\d+)-of-(\d+)", policy)
    if not m:
        raise InvalidParameterError(f"unknown policy {policy!r}")
    need, total = int(m.group(1)), int(m.group(2))
    if total != len(results) or not 0 < need <= total:
        raise InvalidParameterError(f"policy {policy} does not fit {len(results)} chiplets")
    return accepts >= need


def cycle_cost(puf_proofs: int = 1, digests: int = 1) -> dict[str, int]:
    return {
        "puf": PUF_PROOF_CYCLES * puf_proofs,
        "sha": SHA256_CYCLES * digests,
        "rechecks_per_window": SHA256_CYCLES // PUF_PROOF_CYCLES,
    }


def cost_report(session: SessionState) -> dict:
    """Modeled cycles plus the measured 2PC footprint of one completed session."""
    if session.phase != Phase.DECIDED:
        raise PhaseError("session not complete")
    return {**cycle_cost(1, 1), "garbled_bytes": session.garbled_bytes,
            "garbled_mb": round(session.garbled_bytes / 1e6, 6), "rounds": session.rounds,
            "messages": session.messages}


def garbled_size_bytes(layout: FieldLayout = FULL) -> int:
    """Serialized garbled-circuit size for f_i without running a session."""
    plan = plan_garbling(build_f_i_circuit(layout))
    return GarbledCircuit(layout.name, plan.circuit.n_wires, plan.circuit.n_gates,
                          np.zeros((plan.n_rows, 4), dtype=np.uint32)).size_bytes
