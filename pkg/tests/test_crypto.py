from __future__ import annotations

import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interpuf.crypto.aes import expand_key, encrypt_blocks
from interpuf.crypto.circuit import CircuitBuilder, load_bristol, write_bristol
from interpuf.crypto.fcircuit import (
    FULL, TOY_LAYOUT, build_f_i_circuit, circuit_inputs, commitment, f_i_native,
)
from interpuf.crypto.garble import (
    GarbledCircuit, evaluate_garbled, garble, labels_from_bytes, labels_to_bytes, plan_garbling,
)
from interpuf.crypto.ot import ExtensionReceiver, ExtensionSender, TrustedDealerOT, oblivious_transfer
from interpuf.crypto.primitives import (
    bits_to_bytes, bytes_to_bits, hamming_fraction, hkdf_derive, session_salt, sha256,
)
from interpuf.crypto.sha2 import SHA256, TOY, Sha2Circuit, reference_digest
from interpuf.crypto.wire import decode_message, encode_message
from interpuf.errors import InvalidParameterError, LengthMismatchError, TransportError, UndecodableLabelError
from interpuf.transport import Transport


# -- hashing and key derivation ---------------------------------------------


def test_sha256_known_vectors():
    assert sha256(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert sha256(b"abc").hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_sha256_avalanche():
    rng = np.random.default_rng(3)
    fractions = []
    for _ in range(200):
        msg = bytearray(rng.bytes(48))
        base = sha256(bytes(msg))
        bit = int(rng.integers(0, 8 * len(msg)))
        msg[bit // 8] ^= 0x80 >> (bit % 8)
        fractions.append(hamming_fraction(base, sha256(bytes(msg))))
    assert abs(np.mean(fractions) - 0.5) < 0.02


def test_hkdf_rfc5869_case1():
    okm = hkdf_derive(bytes([0x0B] * 22), bytes(range(0xF0, 0xFA)), 42, salt=bytes(range(0x0D)))
    assert okm.hex() == (
        "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865"
    )


@pytest.mark.parametrize("length", [0, 255 * 32 + 1])
def test_hkdf_rejects_bad_length(length):
    with pytest.raises(InvalidParameterError):
        hkdf_derive(b"k", b"info", length)


def test_session_salts_unique_across_epochs():
    rstar = bytes(range(32))
    salts = {session_salt(rstar, b"\x01" * 16, e) for e in range(1000)}
    assert len(salts) == 1000
    assert session_salt(rstar, b"\x01" * 16, 7) == session_salt(rstar, b"\x01" * 16, 7)
    assert session_salt(rstar, b"\x02" * 16, 7) != session_salt(rstar, b"\x01" * 16, 7)


@settings(max_examples=40, deadline=None)
@given(st.binary(max_size=200))
def test_reference_sha256_matches_hashlib(msg):
    assert bits_to_bytes(reference_digest(list(bytes_to_bits(msg)), SHA256)) == hashlib.sha256(msg).digest()


def test_bit_helpers_round_trip():
    data = bytes(range(256))
    assert bits_to_bytes(bytes_to_bits(data)) == data
    with pytest.raises(InvalidParameterError):
        hamming_fraction(b"ab", b"a")


def test_aes_fips197_vector():
    rk = expand_key(bytes(range(16)))
    ct = encrypt_blocks(rk, bytes.fromhex("00112233445566778899aabbccddeeff"))
    assert ct.hex() == "69c4e0d86a7b0430d8cdb78070b4c55a"


# -- boolean circuits ---------------------------------------------------------


def _sha_circuit(spec, msg_bits: int):
    b = CircuitBuilder(name="sha")
    m = b.input("m", msg_bits, "evaluator")
    b.output("d", Sha2Circuit(b, spec).digest(m))
    return b.build()


def test_sha256_circuit_matches_hashlib():
    circuit = _sha_circuit(SHA256, 8 * 70)  # two compression blocks
    rng = np.random.default_rng(1)
    msgs = [rng.bytes(70) for _ in range(4)]
    out = circuit.evaluate_batch({"m": np.stack([bytes_to_bits(m) for m in msgs])})["d"]
    for m, row in zip(msgs, out):
        assert bits_to_bytes(row) == hashlib.sha256(m).digest()


def test_toy_sha_circuit_matches_reference():
    circuit = _sha_circuit(TOY, 24)
    rng = np.random.default_rng(2)
    bits = rng.integers(0, 2, (64, 24), dtype=np.uint8)
    out = circuit.evaluate_batch({"m": bits})["d"]
    for row, o in zip(bits, out):
        assert list(o) == reference_digest(list(row), TOY)


def _random_circuit(seed: int, n_in: int = 6, n_gates: int = 40):
    rng = np.random.default_rng(seed)
    b = CircuitBuilder(name=f"rand{seed}")
    ev = b.input("x", n_in, "evaluator")
    gb = b.input("y", 3, "garbler")
    pub = b.input("p", 2, "public")
    wires = list(ev) + list(gb) + list(pub)
    for _ in range(n_gates):
        kind = rng.integers(0, 4)
        a, c = (wires[int(i)] for i in rng.integers(0, len(wires), 2))
        wires.append([b.xor, b.and_, b.or_, lambda u, _v: b.inv(u)][kind](a, c))
    b.output("o", wires[-8:])
    return b.build()


def _garbled_run(circuit, inputs, rng):
    known = {n: inputs[n] for n, s in circuit.inputs.items() if s.role != "evaluator"}
    gc, secrets = garble(circuit, known, rng)
    l0, l1 = secrets.input_label_pairs()
    choice = np.concatenate([inputs[n] for n, s in circuit.inputs.items() if s.role == "evaluator"])
    labels = np.where(choice[:, None] == 1, l1, l0)
    return gc, secrets, labels


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_garbled_evaluation_matches_plaintext(seed):
    circuit = _random_circuit(seed)
    rng = np.random.default_rng(seed)
    for _ in range(4):
        inputs = {n: rng.integers(0, 2, s.width, dtype=np.uint8) for n, s in circuit.inputs.items()}
        gc, secrets, labels = _garbled_run(circuit, inputs, rng)
        decoded = secrets.decode(evaluate_garbled(circuit, gc, labels))
        assert np.array_equal(decoded["o"], circuit.evaluate(inputs)["o"])


def test_fresh_garbling_changes_tables_not_outputs():
    circuit = _random_circuit(11)
    inputs = {n: np.ones(s.width, dtype=np.uint8) for n, s in circuit.inputs.items()}
    runs = [_garbled_run(circuit, inputs, np.random.default_rng(s)) for s in (1, 2)]
    assert runs[0][0].tables.size and not np.array_equal(runs[0][0].tables, runs[1][0].tables)
    outs = [sec.decode(evaluate_garbled(circuit, gc, lab))["o"] for gc, sec, lab in runs]
    assert np.array_equal(outs[0], outs[1])


def test_xor_only_circuit_has_no_tables():
    b = CircuitBuilder(name="xor")
    x = b.input("x", 8, "evaluator")
    b.output("o", [b.xor(x[i], x[i + 1]) for i in range(7)] + [b.inv(x[0])])
    circuit = b.build()
    assert plan_garbling(circuit).table_bytes == 0
    gc, secrets, labels = _garbled_run(circuit, {"x": np.arange(8, dtype=np.uint8) & 1}, np.random.default_rng(0))
    assert gc.tables.shape[0] == 0
    assert np.array_equal(secrets.decode(evaluate_garbled(circuit, gc, labels))["o"],
                          circuit.evaluate({"x": np.arange(8, dtype=np.uint8) & 1})["o"])


def test_and_costs_two_rows():
    b = CircuitBuilder(name="and")
    x = b.input("x", 2, "evaluator")
    b.output("o", [b.and_(x[0], x[1])])
    plan = plan_garbling(b.build())
    assert plan.n_rows == 2 and plan.table_bytes == 32


def test_garbled_circuit_serialisation():
    circuit = _random_circuit(5)
    inputs = {n: np.zeros(s.width, dtype=np.uint8) for n, s in circuit.inputs.items()}
    gc, _, labels = _garbled_run(circuit, inputs, np.random.default_rng(0))
    raw = gc.to_bytes()
    back = GarbledCircuit.from_bytes(raw)
    assert np.array_equal(back.tables, gc.tables) and back.circuit_name == gc.circuit_name
    assert gc.size_bytes == len(raw)
    with pytest.raises(ValueError):
        GarbledCircuit.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        GarbledCircuit.from_bytes(raw[:-1])
    assert np.array_equal(labels_from_bytes(labels_to_bytes(labels)), labels)


def test_bristol_round_trip(tmp_path):
    circuit = _random_circuit(9)
    path = tmp_path / "c.txt"
    write_bristol(circuit, path)
    loaded = load_bristol(path, roles=["evaluator", "garbler", "public"])
    rng = np.random.default_rng(4)
    for _ in range(20):
        inputs = {n: rng.integers(0, 2, s.width, dtype=np.uint8) for n, s in circuit.inputs.items()}
        renamed = {f"in{i}": v for i, v in enumerate(inputs.values())}
        assert np.array_equal(loaded.evaluate(renamed)["out0"], circuit.evaluate(inputs)["o"])


# -- the authentication circuit ----------------------------------------------


def _toy_fields(rng):
    ident, sig, rstar = rng.bytes(1), rng.bytes(1), rng.bytes(1)
    return dict(id=ident, sig=sig, rstar=rstar, g=commitment(TOY_LAYOUT, ident, sig, rstar),
                salt=rng.bytes(1), nonce=rng.bytes(1), puf_ok=True)


def test_full_circuit_plaintext_matches_native():
    circuit = build_f_i_circuit(FULL)
    rng = np.random.default_rng(8)
    ident, sig, rstar = rng.bytes(16), rng.bytes(32), rng.bytes(32)
    fields = dict(id=ident, sig=sig, rstar=rstar, g=commitment(FULL, ident, sig, rstar),
                  salt=rng.bytes(32), nonce=rng.bytes(16), puf_ok=True)
    out = circuit.evaluate(circuit_inputs(FULL, **fields))
    ok, token = f_i_native(FULL, **{("ident" if k == "id" else k): v for k, v in fields.items()})
    assert ok and out["b"][0] == 1 and bits_to_bytes(out["token"]) == token

    flipped = dict(fields, sig=bytes([sig[0] ^ 1]) + sig[1:])
    assert circuit.evaluate(circuit_inputs(FULL, **flipped))["b"][0] == 0
    assert circuit.evaluate(circuit_inputs(FULL, **dict(fields, puf_ok=False)))["b"][0] == 0


def test_circuit_inputs_checks_widths():
    with pytest.raises(ValueError):
        circuit_inputs(TOY_LAYOUT, id=b"ab", sig=b"a", rstar=b"a", g=b"abcd", salt=b"a", nonce=b"a", puf_ok=1)


def test_toy_garbled_matches_native():
    circuit = build_f_i_circuit(TOY_LAYOUT)
    rng = np.random.default_rng(12)
    for trial in range(30):
        fields = _toy_fields(rng)
        if trial % 3 == 1:
            fields["sig"] = bytes([fields["sig"][0] ^ 0x10])
        if trial % 5 == 2:
            fields["puf_ok"] = False
        gc, secrets, labels = _garbled_run(circuit, circuit_inputs(TOY_LAYOUT, **fields), rng)
        out = secrets.decode(evaluate_garbled(circuit, gc, labels))
        ok, token = f_i_native(TOY_LAYOUT, fields["id"], fields["sig"], fields["rstar"], fields["g"],
                               fields["salt"], fields["nonce"], fields["puf_ok"])
        assert bool(out["b"][0]) == ok and bits_to_bytes(out["token"]) == token


def test_corrupted_table_never_decodes_wrongly():
    circuit = build_f_i_circuit(TOY_LAYOUT)
    rng = np.random.default_rng(21)
    fields = _toy_fields(rng)
    inputs = circuit_inputs(TOY_LAYOUT, **fields)
    expected = circuit.evaluate(inputs)
    rejected = 0
    for _ in range(200):
        gc, secrets, labels = _garbled_run(circuit, inputs, rng)
        tables = gc.tables.copy()
        tables[int(rng.integers(0, tables.shape[0])), int(rng.integers(0, 4))] ^= np.uint32(1 << int(rng.integers(0, 32)))
        bad = GarbledCircuit(gc.circuit_name, gc.n_wires, gc.n_gates, tables)
        try:
            out = secrets.decode(evaluate_garbled(circuit, bad, labels))
        except UndecodableLabelError:
            rejected += 1
            continue
        assert all(np.array_equal(out[k], expected[k]) for k in expected)
    # half-gate rows are only read for one value of the evaluator's select bit
    assert rejected > 50


def test_swapped_input_labels_cannot_forge_acceptance():
    circuit = build_f_i_circuit(TOY_LAYOUT)
    rng = np.random.default_rng(5)
    fields = _toy_fields(rng)
    inputs = circuit_inputs(TOY_LAYOUT, **fields)
    gc, secrets, labels = _garbled_run(circuit, inputs, rng)
    choice = np.concatenate([inputs["id"], inputs["sig"]])
    for i in range(16):
        for j in range(i + 1, 16):
            swapped = labels.copy()
            swapped[[i, j]] = swapped[[j, i]]
            perm = choice.copy()
            perm[[i, j]] = perm[[j, i]]
            try:
                b = secrets.decode(evaluate_garbled(circuit, gc, swapped))["b"][0]
            except UndecodableLabelError:
                b = 0
            if b:
                assert np.array_equal(perm, choice)


def test_toy_circuit_exhaustive_on_slice():
    # the plaintext circuit agrees with the native function over every SIG for a fixed ID
    circuit = build_f_i_circuit(TOY_LAYOUT)
    rng = np.random.default_rng(6)
    fields = _toy_fields(rng)
    batch = {k: np.tile(v, (256, 1)) for k, v in circuit_inputs(TOY_LAYOUT, **fields).items()}
    batch["sig"] = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1)
    b = circuit.evaluate_batch(batch)["b"][:, 0]
    assert b.sum() == 1 and b[fields["sig"][0]] == 1


# -- oblivious transfer -------------------------------------------------------


def test_dealer_releases_only_chosen_labels():
    rng = np.random.default_rng(0)
    l0, l1 = rng.integers(0, 1 << 32, (8, 4), dtype=np.uint32), rng.integers(0, 1 << 32, (8, 4), dtype=np.uint32)
    choices = np.array([0, 1, 1, 0, 1, 0, 0, 1], dtype=np.uint8)
    dealer = TrustedDealerOT()
    got = oblivious_transfer(l0, l1, choices, dealer=dealer)
    assert np.array_equal(got, np.where(choices[:, None] == 1, l1, l0))
    for i, c in enumerate(choices):
        assert dealer.was_released(i, int(c)) and not dealer.was_released(i, 1 - int(c))


def test_ot_length_mismatch():
    l0 = np.zeros((4, 4), dtype=np.uint32)
    with pytest.raises(LengthMismatchError):
        oblivious_transfer(l0, l0, np.zeros(5, dtype=np.uint8), dealer=TrustedDealerOT())


def test_iknp_extension_transfers_512_labels():
    rng = np.random.default_rng(7)
    transport = Transport()
    receiver, msg = ExtensionReceiver.start(rng)
    sender, reply = ExtensionSender.respond_base(msg, rng)
    receiver.finish_base(reply)
    l0, l1 = rng.integers(0, 1 << 32, (512, 4), dtype=np.uint32), rng.integers(0, 1 << 32, (512, 4), dtype=np.uint32)
    for counter in range(2):
        choices = rng.integers(0, 2, 512, dtype=np.uint8)
        got = oblivious_transfer(l0, l1, choices, transport=transport, link=(sender, receiver), counter=counter)
        assert np.array_equal(got, np.where(choices[:, None] == 1, l1, l0))
    assert transport.rounds == 2 and transport.messages == 4


# -- framing ------------------------------------------------------------------


@settings(max_examples=50)
@given(st.text(max_size=20), st.dictionaries(st.text(min_size=1, max_size=10), st.binary(max_size=64), max_size=5))
def test_wire_round_trip(kind, sections):
    raw = encode_message(kind, sections)
    assert decode_message(raw) == (kind, sections)


def test_wire_rejects_damage():
    raw = encode_message("k", {"a": b"xyz"})
    for bad in (raw[:-1], raw + b"\x00", b"XXX" + raw[3:], raw[:4]):
        with pytest.raises(TransportError):
            decode_message(bad)
