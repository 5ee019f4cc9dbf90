"""``interpuf`` command line: simulate, enroll, selfcheck, auth, metrics, attack.

Exit codes: 0 accept/pass, 1 reject/fail or runtime error, 2 usage error or
missing prerequisite. Wall-clock timestamps go only to run_meta.json.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from .attacks import build_dataset, train_logistic_regression, train_mlp
from .config import RunConfig
from .errors import InterPUFError, InvalidParameterError, MissingPrerequisiteError
from .grid import plain_arbiter, random_challenges
from .mesh import describe
from .metrics import evaluate_population, token_hd_distribution
from .plotting import plot_token_histogram, plot_training_curves
from .protocol import (
    InterposerParty, MemoryLog, Repository, authenticate_chiplet, bind_session, enroll, link_chiplet,
    puf_stability_check, quorum_decide,
)
from .puf import ChallengeRecord, vote, write_crp_csv
from .rng import stream
from .scenario import build_interposer, chiplets_for, grid_population, signer_for
from .selfcheck import DelayModel, build_profile, measure_z_star, pair_id, probes_for, recheck
from .transport import Transport

CRP_DUMP_SIZE = 1000

# Pass bands checked by ``metrics`` and ``attack`` (inclusive).
METRIC_BANDS = {
    "uniformity_mean": (0.48, 0.52),
    "uniqueness_mean": (0.38, 0.54),
    "reliability": (0.97, 1.0),
    "intra_hd_mean": (0.0, 0.03),
    "bit_aliasing": (0.45, 0.55),
    "bit_flip_sensitivity": (0.45, 0.58),
}
TOKEN_HD_BAND = (0.45, 0.55)
LR_MAX_ACCURACY = 0.55
AUC_BAND = (0.44, 0.56)
MLP_MAX_ACCURACY = 0.58
CONTROL_MIN_ACCURACY = 0.95


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _in_band(value: float, band: tuple[float, float]) -> bool:
    return band[0] <= value <= band[1]


def _repo(out: Path) -> Repository:
    return Repository(out / "repo")


def _require(repo: Repository, *names: str) -> None:
    missing = [n for n in names if not repo.has(n)]
    if missing:
        raise MissingPrerequisiteError(
            f"missing {', '.join(missing)} in {repo.root}; run `interpuf enroll` with the same --out first")


# -- commands -----------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path, args) -> int:
    """Per device: a lab CRP dump from the metrics grid and the interposer digest report."""
    challenges = random_challenges(cfg.seed, CRP_DUMP_SIZE, cfg.n_stages, "crp-dump")
    for i, puf in enumerate(grid_population(cfg)):
        folder = out / "devices" / puf.dev.device_id
        folder.mkdir(parents=True, exist_ok=True)
        reads = puf.reads(challenges, cfg.repetitions, stream(cfg.seed, "crp-dump-reads", i))
        _, rates = vote(reads)
        records = [ChallengeRecord(tuple(int(x) for x in c), (), cfg.repetitions, tuple(int(v) for v in r),
                                   float(rate), bool(rate <= cfg.tau))
                   for c, r, rate in zip(challenges, reads, rates)]
        write_crp_csv(folder / "crps.csv", puf.dev.device_id, records)
        write_json(folder / "digest.json", build_interposer(cfg, i).digest(cfg).report())
    print(f"simulated {cfg.devices} devices under {out / 'devices'}")
    return 0


def cmd_enroll(cfg: RunConfig, out: Path, args) -> int:
    interposer = build_interposer(cfg, 0)
    digest = interposer.digest(cfg)
    chiplets = chiplets_for(cfg)
    manifest = enroll(digest, chiplets, signer_for(cfg), {"wafer": "W0", "lot": f"L{cfg.seed}"})
    sc_pairs = interposer.selfcheck_pairs(cfg.selfcheck_pairs)
    probes = probes_for(interposer.dev, interposer.mesh, sc_pairs)
    rng = stream(cfg.seed, "selfcheck-enroll")
    profile = build_profile([measure_z_star(p, cfg.selfcheck_reads, rng, pair_id(q)) for p, q in zip(probes, sc_pairs)])
    repo = _repo(out)
    repo.save_manifest(manifest)
    repo.save_profile(profile)
    repo.save_mesh(describe(interposer.mesh, interposer.router, interposer.pairs))
    report = {"digest": digest.report(), "chiplets": sorted(manifest.commitments),
              "profile": {"pairs": len(profile.records), "z_avg": round(profile.z_avg, 6),
                          "band": round(profile.band, 6), "flagged": profile.flagged()}}
    write_json(out / "enroll.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_selfcheck(cfg: RunConfig, out: Path, args) -> int:
    repo = _repo(out)
    _require(repo, "manifest.json", "profile.json", "mesh.json")
    profile = repo.load_profile()
    interposer = build_interposer(cfg, 0)
    sc_pairs = interposer.selfcheck_pairs(cfg.selfcheck_pairs)
    if [pair_id(p) for p in sc_pairs] != [r.pair_id for r in profile.records]:
        raise MissingPrerequisiteError("stored profile does not match this configuration; re-enroll")
    model = DelayModel()
    tamper, target = {}, None
    if args.tamper_stages:
        # Add delay to route B of the first pair where A wins the baseline race.
        target = next(i for i, r in enumerate(profile.records) if r.z_star is not None and r.z_star > 0)
        tamper[target] = (0.0, args.tamper_stages * model.delta_cross_straight)
    probes = probes_for(interposer.dev, interposer.mesh, sc_pairs, model, tamper)
    result = recheck(probes, profile, cfg.selfcheck_reads, stream(cfg.seed, "selfcheck-recheck"), epoch=1)
    report = {**result.to_json(), "z_avg": round(profile.z_avg, 6), "band": round(profile.band, 6),
              "tampered_pair": None if target is None else profile.records[target].pair_id,
              "tamper_stages": args.tamper_stages or 0, "pass": not result.flagged}
    write_json(out / "selfcheck.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0 if not result.flagged else 1


def cmd_auth(cfg: RunConfig, out: Path, args) -> int:
    repo = _repo(out)
    _require(repo, "manifest.json")
    manifest = repo.load_manifest(signer_for(cfg))
    interposer = build_interposer(cfg, 0)
    engine = interposer.engine()
    garbler = InterposerParty(manifest.device_id, manifest.rstar, manifest.commitments)
    indices = [args.chiplet] if args.chiplet is not None else sorted(manifest.commitments)
    if any(i not in manifest.commitments for i in indices):
        raise InvalidParameterError(f"chiplet {args.chiplet} is not enrolled")
    policy = args.policy or cfg.policy
    quorum_decide(dict.fromkeys(indices, True), policy)  # reject a malformed policy before any session
    results, sessions = {}, []
    for chiplet in chiplets_for(cfg, args.impostor, indices):
        link_chiplet(garbler, chiplet, stream(cfg.seed, "interposer-link", chiplet.index))
        epoch = repo.last_epoch + 1
        ch = stream(cfg.seed, "session-challenge", epoch).bytes(16)
        puf_ok = puf_stability_check(engine, interposer.pairs, ch, cfg.runtime_repetitions, cfg.tau,
                                     stream(cfg.seed, "puf-ok", epoch))
        session = bind_session(manifest, chiplet.index, ch, epoch, puf_ok, repo, stream(cfg.seed, "nonce", epoch))
        b, _ = authenticate_chiplet(session, garbler, chiplet, Transport(), stream(cfg.seed, "garble", epoch), repo)
        results[chiplet.index] = b
        sessions.append(session.report())
        print(json.dumps(session.report(), sort_keys=True))
    decision = quorum_decide(results, policy)
    write_json(out / "auth.json", {"policy": policy, "accept": decision, "sessions": sessions})
    return 0 if decision else 1


def token_sessions(cfg: RunConfig, count: int) -> list[bytes]:
    """Tokens from ``count`` in-memory sessions of chiplet 0 against a fresh enrollment."""
    interposer = build_interposer(cfg, 0)
    chiplet = chiplets_for(cfg, indices=[0])[0]
    manifest = enroll(interposer.digest(cfg), [chiplet], signer_for(cfg))
    garbler = InterposerParty(manifest.device_id, manifest.rstar, manifest.commitments)
    link_chiplet(garbler, chiplet, stream(cfg.seed, "interposer-link", 0))
    log, tokens = MemoryLog(), []
    for epoch in range(1, count + 1):
        ch = stream(cfg.seed, "token-challenge", epoch).bytes(16)
        session = bind_session(manifest, 0, ch, epoch, True, log, stream(cfg.seed, "token-nonce", epoch))
        b, token = authenticate_chiplet(session, garbler, chiplet, Transport(),
                                        stream(cfg.seed, "token-garble", epoch), log)
        if b:
            tokens.append(token)
    return tokens


def cmd_metrics(cfg: RunConfig, out: Path, args) -> int:
    challenges = random_challenges(cfg.seed, cfg.metrics_challenges, cfg.n_stages, "metrics")
    report = evaluate_population(grid_population(cfg), challenges, cfg.repetitions, stream(cfg.seed, "metrics-reads"))
    values = report.to_json()
    checks = {k: _in_band(values[k], band) for k, band in METRIC_BANDS.items()}
    tokens = token_sessions(cfg, cfg.token_sessions)
    counts, edges, mean_hd = token_hd_distribution(tokens)
    checks["token_hd_mean"] = _in_band(mean_hd, TOKEN_HD_BAND)
    with open(out / "token_hd.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "pairs"])
        for lo, hi, n in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{lo:.2f}", f"{hi:.2f}", int(n)])
    plot_token_histogram(counts, edges, mean_hd, out / "token_hd.svg")
    payload = {"metrics": values, "token": {"sessions": len(tokens), "mean_hd": round(mean_hd, 6)},
               "checks": checks, "pass": all(checks.values())}
    write_json(out / "metrics.json", payload)
    print(json.dumps(payload, sort_keys=True))
    return 0 if payload["pass"] else 1


def cmd_attack(cfg: RunConfig, out: Path, args) -> int:
    puf = grid_population(cfg)[0]
    ds = build_dataset(puf, cfg.seed, "phi", args.exposure, n_train=cfg.n_train, n_test=cfg.n_test,
                       repetitions=cfg.repetitions)
    _, lr, lr_curve = train_logistic_regression(ds)
    _, mlp, mlp_curve = train_mlp(ds, epochs=cfg.mlp_epochs, seed=cfg.seed)
    control_ds = build_dataset(plain_arbiter(cfg.seed, cfg.n_stages), cfg.seed, "phi", "oracle",
                               n_train=cfg.n_train, n_test=cfg.n_test, repetitions=cfg.repetitions)
    _, control, _ = train_logistic_regression(control_ds)
    lr_curve.write_csv(out / "lr_curve.csv")
    mlp_curve.write_csv(out / "mlp_curve.csv")
    plot_training_curves({"LR": lr_curve, "MLP": mlp_curve}, out / "training_curve.svg")
    checks = {
        "lr_accuracy": lr.test_accuracy <= LR_MAX_ACCURACY,
        "lr_auc": _in_band(lr.test_auc, AUC_BAND),
        "mlp_accuracy": mlp.test_accuracy <= MLP_MAX_ACCURACY,
        "control_accuracy": control.test_accuracy >= CONTROL_MIN_ACCURACY,
    }
    payload = {"exposure": args.exposure, "train": cfg.n_train, "test": cfg.n_test, "lr": lr.to_json(),
               "mlp": mlp.to_json(), "control_k1_oracle": control.to_json(), "checks": checks,
               "pass": all(checks.values())}
    write_json(out / "attack.json", payload)
    print(json.dumps(payload, sort_keys=True))
    return 0 if payload["pass"] else 1


COMMANDS = {
    "simulate": cmd_simulate, "enroll": cmd_enroll, "selfcheck": cmd_selfcheck,
    "auth": cmd_auth, "metrics": cmd_metrics, "attack": cmd_attack,
}


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", type=Path, help="output directory")
    parser = argparse.ArgumentParser(prog="interpuf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="instantiate devices, dump CRPs and digest reports")
    sub.add_parser("enroll", parents=[common], help="build R*, commitments, signed manifest and Z* profile")
    p = sub.add_parser("selfcheck", parents=[common], help="re-measure Z* and flag outlier routes")
    p.add_argument("--tamper-stages", type=int, default=0, help="extra stage delays injected on one route")
    p = sub.add_parser("auth", parents=[common], help="authenticate enrolled chiplets")
    p.add_argument("--impostor", action="store_true", help="chiplets present the wrong (ID, SIG)")
    p.add_argument("--policy", help='"all", "any" or "m-of-n"')
    p.add_argument("--chiplet", type=int, help="authenticate only this chiplet index")
    sub.add_parser("metrics", parents=[common], help="PUF quality metrics and token statistics")
    p = sub.add_parser("attack", parents=[common], help="logistic-regression and MLP modeling attacks")
    p.add_argument("--exposure", choices=("deployed", "oracle"), default="deployed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg = cfg.override(seed=args.seed, out=str(args.out) if args.out else None)
    except (InvalidParameterError, OSError, ValueError, TypeError) as exc:
        print(f"interpuf: bad configuration: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    started = datetime.now(timezone.utc).isoformat()
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        code = COMMANDS[args.command](cfg, out, args)
        write_json(out / "run_meta.json", {"command": args.command, "started_utc": started,
                                           "finished_utc": datetime.now(timezone.utc).isoformat(),
                                           "exit_code": code})
    except (MissingPrerequisiteError, InvalidParameterError) as exc:
        print(f"interpuf: {exc}", file=sys.stderr)
        return 2
    except (InterPUFError, OSError) as exc:
        print(f"interpuf: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
