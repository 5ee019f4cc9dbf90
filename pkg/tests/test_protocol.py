from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from interpuf.config import RunConfig
from interpuf.crypto.fcircuit import FULL, commitment, f_i_native
from interpuf.crypto.ot import TrustedDealerOT
from interpuf.crypto.wire import decode_message
from interpuf.errors import (
    InvalidParameterError, PhaseError, ReplayError, SignatureError, StaleEpochError, UndecodableLabelError,
)
from interpuf.protocol import (
    PUF_PROOF_CYCLES, SHA256_CYCLES, AuditRecord, ChipletParty, EnrollmentManifest, HmacSigner,
    InterposerParty, MemoryLog, Phase, Repository, authenticate_chiplet, bind_session, chiplet_identity,
    cost_report, cycle_cost, enroll, garbled_size_bytes, link_chiplet, puf_stability_check, quorum_decide,
    session_challenge,
)
from interpuf.scenario import build_interposer, chiplets_for, signer_for
from interpuf.transport import Transport

CFG = RunConfig(seed=77)
CH = bytes(range(16))


@pytest.fixture(scope="module")
def interposer():
    return build_interposer(CFG)


@pytest.fixture(scope="module")
def digest(interposer):
    return interposer.digest(CFG)


@pytest.fixture
def manifest(digest):
    return enroll(digest, chiplets_for(CFG), signer_for(CFG), {"run": "test"})


def _parties(manifest, impostor=False):
    return InterposerParty(manifest.device_id, manifest.rstar, manifest.commitments), chiplets_for(CFG, impostor)


def _run(manifest, chiplet, log, epoch, dealer=True, interposer=None, puf_ok=True, transport=None, seed=0):
    interposer = interposer or InterposerParty(manifest.device_id, manifest.rstar, manifest.commitments)
    rng = np.random.default_rng(seed)
    session = bind_session(manifest, chiplet.index, CH, epoch, puf_ok, log, rng)
    transport = transport or Transport()
    b, token = authenticate_chiplet(session, interposer, chiplet, transport, rng, log,
                                    TrustedDealerOT() if dealer else None)
    return session, b, token, transport


# -- enrollment ---------------------------------------------------------------


def test_enrollment_commits_each_chiplet(manifest, digest):
    assert sorted(manifest.commitments) == [0, 1]
    for c in chiplets_for(CFG):
        ident = chiplet_identity(CFG.seed, c.index)
        assert manifest.commitments[c.index] == commitment(FULL, ident.ident, ident.sig, digest.digest)
    assert manifest.rstar == digest.digest
    manifest.verify(signer_for(CFG))


def test_enrollment_is_deterministic(digest):
    a = enroll(digest, chiplets_for(CFG), signer_for(CFG))
    b = enroll(digest, chiplets_for(CFG), signer_for(CFG))
    assert a.to_json() == b.to_json()


def test_manifest_tamper_detected(manifest):
    signer = signer_for(CFG)
    data = manifest.to_json()
    data["commitments"]["0"] = "00" * 32
    with pytest.raises(SignatureError):
        EnrollmentManifest.from_json(data).verify(signer)
    with pytest.raises(SignatureError):
        manifest.verify(HmacSigner(b"other key"))
    with pytest.raises(SignatureError):
        manifest.verify(HmacSigner(signer._key, key_id="someone-else"))


def test_identity_repr_hides_secrets():
    ident = chiplet_identity(1, 0)
    assert ident.ident.hex() not in repr(ident) and ident.sig.hex() not in repr(ident)
    with pytest.raises(InvalidParameterError):
        type(ident)(b"short", b"x" * 32)


# -- session binding ----------------------------------------------------------


def test_bind_session_epoch_and_replay(manifest):
    log = MemoryLog()
    rng = np.random.default_rng(0)
    s1 = bind_session(manifest, 0, CH, 1, True, log, rng)
    assert s1.phase == Phase.BOUND and len(s1.nonce) == 16 and len(s1.salt) == 32
    with pytest.raises(StaleEpochError):
        bind_session(manifest, 0, CH, 1, True, log, rng)
    log.append_audit(AuditRecord(0, CH, 2, b"n" * 16, b"t"))
    with pytest.raises(ReplayError):
        bind_session(manifest, 0, CH, 2, True, log, rng, nonce=b"n" * 16)
    s3 = bind_session(manifest, 0, CH, 3, True, log, rng)
    assert s3.salt != s1.salt and s3.session_id != s1.session_id


def test_phase_machine_only_moves_forward(manifest):
    s = bind_session(manifest, 0, CH, 1, True, MemoryLog(), np.random.default_rng(0))
    s.advance(Phase.GARBLED)
    with pytest.raises(PhaseError):
        s.advance(Phase.BOUND)
    with pytest.raises(PhaseError):
        cost_report(s)


def test_session_challenge_selects_in_range(interposer):
    seen = set()
    for i in range(200):
        idx, bits = session_challenge(i.to_bytes(16, "big"), interposer.pairs)
        assert 0 <= idx < len(interposer.pairs) and bits.size == interposer.pairs[idx].depth
        seen.add(idx)
    # 200 uniform draws over 640 candidates hit about 640 * (1 - exp(-200 / 640)) = 172 distinct ones
    assert len(seen) > 150
    assert session_challenge(CH, interposer.pairs)[0] == session_challenge(CH, interposer.pairs)[0]


def test_puf_stability_check_passes_nominal_device(interposer):
    ok = [puf_stability_check(interposer.engine(), interposer.pairs, i.to_bytes(16, "big"), CFG.repetitions,
                              CFG.tau, np.random.default_rng(i)) for i in range(30)]
    assert sum(ok) >= 24


# -- authentication -----------------------------------------------------------


def test_genuine_chiplets_accept_and_tokens_match_native(manifest):
    log = MemoryLog()
    for epoch, chiplet in enumerate(chiplets_for(CFG), start=1):
        session, b, token, transport = _run(manifest, chiplet, log, epoch)
        ident = chiplet_identity(CFG.seed, chiplet.index)
        ok, expected = f_i_native(FULL, ident.ident, ident.sig, manifest.rstar, manifest.commitments[chiplet.index],
                                  session.salt, session.nonce, True)
        assert b and ok and token == expected
        assert session.phase == Phase.DECIDED and session.ran_2pc
    assert len(log.records) == 2


def test_impostor_rejected_without_audit(manifest):
    log = MemoryLog()
    session, b, token, _ = _run(manifest, chiplets_for(CFG, impostor=True)[0], log, 1)
    assert not b and session.ran_2pc and log.records == []


def test_forged_commitment_rejects(manifest):
    forged = InterposerParty(manifest.device_id, manifest.rstar, {0: bytes(32), 1: manifest.commitments[1]})
    _, b, _, _ = _run(manifest, chiplets_for(CFG)[0], MemoryLog(), 1, interposer=forged)
    assert not b


def test_puf_not_ok_rejects_before_2pc(manifest):
    session, b, token, transport = _run(manifest, chiplets_for(CFG)[0], MemoryLog(), 1, puf_ok=False)
    assert not b and token == b"" and not session.ran_2pc and transport.messages == 0


def test_tokens_fresh_per_session(manifest):
    log = MemoryLog()
    chiplet = chiplets_for(CFG)[0]
    tokens = {_run(manifest, chiplet, log, e, seed=e)[2] for e in range(1, 6)}
    assert len(tokens) == 5


def test_real_ot_session_two_rounds(manifest):
    ip, chiplets = _parties(manifest)
    link_chiplet(ip, chiplets[0], np.random.default_rng(1))
    session, b, token, transport = _run(manifest, chiplets[0], MemoryLog(), 1, dealer=False, interposer=ip)
    assert b
    assert session.rounds == 2 and session.messages == 4
    report = cost_report(session)
    assert report["garbled_bytes"] == garbled_size_bytes() and report["rounds"] == 2
    kinds = [decode_message(p)[0] for _, p in transport.transcript]
    assert kinds == ["session-garbled", "ot-u", "ot-y", "session-output"]


def test_replayed_transcript_is_rejected(manifest):
    # a recorded chiplet output does not decode under a fresh garbling
    ip, chiplets = _parties(manifest)
    log = MemoryLog()
    _, b, _, old = _run(manifest, chiplets[0], log, 1, interposer=ip)
    assert b
    session = bind_session(manifest, 0, CH, 2, True, log, np.random.default_rng(9))
    msg, gstate = ip.garble_for(session, np.random.default_rng(9))
    replayed = old.transcript[-1][1]
    with pytest.raises(UndecodableLabelError):
        ip.decode(replayed, gstate)


def test_undecodable_output_raises_alarm(manifest, tmp_path, monkeypatch):
    ip, chiplets = _parties(manifest)
    repo = Repository(tmp_path)
    chiplet = chiplets[0]
    original = ChipletParty.on_labels

    def tampered(self, message, dealer_labels=None):
        return original(self, message, dealer_labels ^ np.uint32(1))

    monkeypatch.setattr(ChipletParty, "on_labels", tampered)
    session = bind_session(manifest, 0, CH, 1, True, repo, np.random.default_rng(0))
    b, _ = authenticate_chiplet(session, ip, chiplet, Transport(), np.random.default_rng(0), repo, TrustedDealerOT())
    assert not b
    alarms = (tmp_path / "alarms.jsonl").read_text().splitlines()
    assert json.loads(alarms[0])["kind"] == "undecodable-output"
    assert repo.audit_records() == []


# -- policy and costs ---------------------------------------------------------


@pytest.mark.parametrize("results,policy,expected", [
    ({0: True, 1: True}, "all", True),
    ({0: True, 1: False}, "all", False),
    ({0: False, 1: False}, "any", False),
    ({0: False, 1: True}, "any", True),
    ({0: True, 1: False, 2: True}, "2-of-3", True),
    ({0: True, 1: False, 2: False}, "2-of-3", False),
])
def test_quorum_policies(results, policy, expected):
    assert quorum_decide(results, policy) is expected


@pytest.mark.parametrize("policy", ["most", "3-of-2", "0-of-2", "2-of-3"])
def test_quorum_rejects_bad_policy(policy):
    with pytest.raises(InvalidParameterError):
        quorum_decide({0: True, 1: True}, policy)


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_cycle_cost_is_additive(p1, d1, p2, d2):
    a, b, c = cycle_cost(p1, d1), cycle_cost(p2, d2), cycle_cost(p1 + p2, d1 + d2)
    assert c["puf"] == a["puf"] + b["puf"] and c["sha"] == a["sha"] + b["sha"]


def test_cycle_constants():
    cost = cycle_cost()
    assert cost == {"puf": PUF_PROOF_CYCLES, "sha": SHA256_CYCLES, "rechecks_per_window": 16}


# -- persistence and secrecy --------------------------------------------------


def test_repository_round_trip(manifest, tmp_path):
    repo = Repository(tmp_path)
    repo.save_manifest(manifest)
    assert repo.load_manifest(signer_for(CFG)).to_json() == manifest.to_json()
    raw = json.loads((tmp_path / "manifest.json").read_text())
    raw["rstar_hex"] = "00" * 32
    (tmp_path / "manifest.json").write_text(json.dumps(raw))
    with pytest.raises(SignatureError):
        repo.load_manifest(signer_for(CFG))
    repo.advance_epoch(4)
    assert Repository(tmp_path).last_epoch == 4
    with pytest.raises(StaleEpochError):
        Repository(tmp_path).advance_epoch(4)


def test_no_secret_material_in_repository_or_transcripts(manifest, digest, tmp_path):
    repo = Repository(tmp_path)
    repo.save_manifest(manifest)
    ip, chiplets = _parties(manifest)
    link_chiplet(ip, chiplets[0], np.random.default_rng(3))
    transcripts = b""
    for epoch, chiplet in enumerate(chiplets, start=1):
        _, b, _, t = _run(manifest, chiplet, repo, epoch, dealer=chiplet.index == 1, interposer=ip)
        assert b
        transcripts += b"".join(p for _, p in t.transcript)
    stored = b"".join(p.read_bytes() for p in tmp_path.iterdir())
    stable = np.packbits(np.asarray(digest.stable_bits[:256], dtype=np.uint8)).tobytes()
    canaries = [stable]
    for c in range(CFG.chiplets):
        ident = chiplet_identity(CFG.seed, c)
        canaries += [ident.ident, ident.sig]
    for secret in canaries:
        for blob in (stored, transcripts):
            assert secret not in blob
            assert secret.hex().encode() not in blob
    assert len(repo.audit_records()) == 2
