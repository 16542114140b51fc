"""Command-line front end.

Subcommands: train, attack, evaluate, blackbox, report.  Exit codes:
0 on success, 1 when an attack suite completed but recorded failures
(the report is still valid), 2 on configuration errors.  The seed
resolves from --seed, then the SAE_SEED environment variable, then 0.
Identical argv + seed produce byte-identical JSON reports except for
wall-time fields.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import engine, evaluation
from .architectures import ARCHITECTURES, build_architecture
from .attacks import AttackConfig, targeted_attack
from .errors import SaeError
from .evaluation import (
    EvaluationReport,
    classify_attack_name,
    emit_report,
    evaluate_blackbox,
    evaluate_nontargeted,
    evaluate_targeted,
)
from .nontargeted import NtConfig, fgsm, maximal_attack, nt_attack
from .store import load_dataset, load_model, save_model, save_raw_tensor
from .training import JbdaConfig, TrainConfig, train, train_substitute


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("SAE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SaeError(f"SAE_SEED must be an integer, got {env!r}")
    return 0


def _add_data_args(p: argparse.ArgumentParser):
    p.add_argument("--data", required=True, help="image file (IDX or raw-tensor sidecar)")
    p.add_argument("--labels", required=True, help="label file matching --data")
    p.add_argument("--format", default="idx", choices=("idx", "raw"), help="dataset format")
    p.add_argument("--class-count", type=int, default=None, help="override inferred class count")
    p.add_argument("--limit", type=int, default=None, help="use only the first N samples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an architecture (optionally as a JBDA substitute)")
    p.add_argument("--arch", required=True, choices=sorted(ARCHITECTURES))
    _add_data_args(p)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="model manifest path (.json)")
    p.add_argument("--jbda", action="store_true", help="train as a black-box substitute")
    p.add_argument("--oracle-model", default=None, help="oracle manifest for --jbda")
    p.add_argument("--rounds", type=int, default=5, help="JBDA augmentation rounds")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1, help="JBDA step size")
    p.add_argument("--seed-size", type=int, default=150, help="JBDA balanced seed size")
    p.add_argument("--epochs-per-round", type=int, default=10)

    p = sub.add_parser("attack", help="run one attack over a sample set")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--attack", required=True, help="jsma|wjsma|tjsma, nt-*/m-* names, or fgsm")
    p.add_argument("--target", type=int, default=None, help="target class (targeted attacks)")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--components", type=int, default=2, choices=(1, 2))
    p.add_argument("--direction", default="increase", choices=("increase", "decrease"))
    p.add_argument("--exact-distortion", action="store_true")
    p.add_argument("--epsilon", type=float, default=0.1, help="FGSM step size")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--images-dir", default=None, help="dump adversarial tensors here")
    p.add_argument("--out", required=True, help="report path (.json)")

    p = sub.add_parser("evaluate", help="run an attack suite and aggregate metrics")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--attacks", default="jsma,wjsma,tjsma", help="comma-separated attack names")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--components", type=int, default=2, choices=(1, 2))
    p.add_argument("--direction", default="increase", choices=("increase", "decrease"))
    p.add_argument("--exact-distortion", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("blackbox", help="exact-distortion transfer suite against an oracle")
    p.add_argument("--substitute", required=True, help="substitute manifest")
    p.add_argument("--oracle-model", required=True, help="oracle manifest")
    _add_data_args(p)
    p.add_argument("--attacks", default="nt-wjsma,nt-tjsma")
    p.add_argument("--gammas", default="0.01,0.02,0.03,0.04,0.05")
    p.add_argument("--direction", default="increase", choices=("increase", "decrease"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="convert a JSON report to CSV or a text summary")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="csv", choices=("csv", "text"))
    p.add_argument("--out", default=None, help="output path (required for csv)")

    return parser


def _resolved_config(args, seed: int, extra: dict | None = None) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    config["seed"] = seed
    config["command"] = args.command
    if extra:
        config.update(extra)
    return {k: config[k] for k in sorted(config)}


def _load_data(args):
    data = load_dataset(args.data, args.labels, fmt=args.format, class_count=args.class_count)
    if args.limit is not None:
        data = data.subset(np.arange(min(args.limit, len(data))))
    return data


def _write_json(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _cmd_train(args) -> int:
    seed = _resolve_seed(args.seed)
    data = _load_data(args)
    tcfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        rng_seed=seed,
    )
    model = build_architecture(args.arch, class_count=data.class_count)
    if args.jbda:
        if not args.oracle_model:
            raise SaeError("--jbda requires --oracle-model")
        oracle = load_model(args.oracle_model)
        jcfg = JbdaConfig(
            oracle=lambda images: engine.predict_batch(oracle, np.asarray(images, np.float64)),
            lam=args.lam,
            rounds=args.rounds,
            seed_size=args.seed_size,
            epochs_per_round=args.epochs_per_round,
        )
        trained, working = train_substitute(model, data, jcfg, tcfg)
        history = [{"round_set_size": len(working)}]
    else:
        trained, stats = train(model, data, tcfg)
        history = [{"epoch": s.epoch, "loss": s.loss, "accuracy": s.accuracy} for s in stats]
    save_model(trained, args.out)
    _write_json(
        str(args.out) + ".train.json",
        {
            "schema_version": evaluation.SCHEMA_VERSION,
            "kind": "train",
            "config": _resolved_config(args, seed),
            "history": history,
        },
    )
    return 0


def _single_attack_rows(model, data, args, seed):
    name = args.attack.lower()
    rows = []
    adversarials = []
    gamma_default = 0.145 if not args.exact_distortion else 0.037
    gamma = args.gamma if args.gamma is not None else gamma_default
    if name == "fgsm":
        for i in range(len(data)):
            if engine.predict(model, data.images[i]) != data.labels[i]:
                continue
            t0 = time.perf_counter()
            r = fgsm(model, data.images[i], args.epsilon, label=int(data.labels[i]))
            rows.append((int(i), None, r, (time.perf_counter() - t0) * 1000.0))
            adversarials.append((int(i), None, r.x_star))
        return rows, adversarials, {"epsilon": args.epsilon}
    mode = classify_attack_name(name)
    if mode == "targeted":
        if args.target is None:
            raise SaeError(f"attack {name!r} needs --target")
        cfg = AttackConfig(
            variant=evaluation.TARGETED_ATTACKS[name],
            theta=args.theta,
            gamma=gamma,
            max_iter=args.max_iter,
            components=args.components,
            direction=args.direction,
        )
        for i in range(len(data)):
            label = int(data.labels[i])
            if label == args.target or engine.predict(model, data.images[i]) != label:
                continue
            t0 = time.perf_counter()
            r = targeted_attack(model, data.images[i], args.target, cfg)
            rows.append((int(i), args.target, r, (time.perf_counter() - t0) * 1000.0))
            adversarials.append((int(i), args.target, r.x_star))
        return rows, adversarials, {"max_iter": cfg.resolved_max_iter(model.feature_count)}
    kind, variant, source = evaluation.parse_nt_attack_name(name)
    cfg = NtConfig(
        variant=variant,
        logit_source=source,
        gamma=gamma,
        max_iter=args.max_iter,
        direction=args.direction,
        exact_distortion=args.exact_distortion,
    )
    fn = maximal_attack if kind == "maximal" else nt_attack
    for i in range(len(data)):
        label = int(data.labels[i])
        if engine.predict(model, data.images[i]) != label:
            continue
        t0 = time.perf_counter()
        r = fn(model, data.images[i], cfg, label=label)
        rows.append((int(i), None, r, (time.perf_counter() - t0) * 1000.0))
        adversarials.append((int(i), None, r.x_star))
    return rows, adversarials, {"max_iter": cfg.resolved_max_iter(model.feature_count)}


def _report_kind(name: str) -> str:
    if name == "fgsm" or name in evaluation.TARGETED_ATTACKS:
        return "targeted"
    return "nt"


def _cmd_attack(args) -> int:
    seed = _resolve_seed(args.seed)
    model = load_model(args.model)
    data = _load_data(args)
    raw_rows, adversarials, extra = _single_attack_rows(model, data, args, seed)
    if not raw_rows:
        raise SaeError("no samples were eligible for the attack")
    rows = [
        {
            "sample_id": sample_id,
            "attack": args.attack.lower(),
            "target": target,
            "success": bool(r.success),
            "iterations": r.iterations,
            "l0": r.l0,
            "l1": r.l1,
            "l2": r.l2,
            "linf": r.linf,
            "wall_ms": wall_ms,
        }
        for sample_id, target, r, wall_ms in raw_rows
    ]
    report = EvaluationReport(
        kind=_report_kind(args.attack.lower()),
        config=_resolved_config(args, seed, extra),
        attacks={args.attack.lower(): evaluation._summarize(rows)},
        rows=rows,
    )
    emit_report(report, args.out, "json")
    if args.images_dir:
        out_dir = Path(args.images_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for sample_id, target, x_star in adversarials:
            stem = f"{sample_id:05d}_{args.attack.lower()}"
            if target is not None:
                stem += f"_t{target}"
            save_raw_tensor(out_dir / f"{stem}.json", x_star[None].astype(np.float32))
    return 0 if all(r["success"] for r in rows) else 1


def _cmd_evaluate(args) -> int:
    seed = _resolve_seed(args.seed)
    model = load_model(args.model)
    data = _load_data(args)
    names = [a.strip().lower() for a in args.attacks.split(",") if a.strip()]
    if not names:
        raise SaeError("--attacks is empty")
    modes = {classify_attack_name(n) for n in names}
    if len(modes) != 1:
        raise SaeError("cannot mix targeted and non-targeted attacks in one suite")
    mode = modes.pop()
    if mode == "targeted":
        cfg = AttackConfig(
            theta=args.theta,
            gamma=args.gamma if args.gamma is not None else 0.145,
            max_iter=args.max_iter,
            components=args.components,
            direction=args.direction,
        )
        report = evaluate_targeted(
            model, data, names, cfg, sample_limit=args.limit, jobs=args.jobs
        )
    else:
        cfg = NtConfig(
            gamma=args.gamma if args.gamma is not None else 0.037,
            max_iter=args.max_iter,
            direction=args.direction,
            exact_distortion=args.exact_distortion,
        )
        report = evaluate_nontargeted(
            model, data, names, cfg, sample_limit=args.limit, jobs=args.jobs
        )
    report.config.update(_resolved_config(args, seed))
    emit_report(report, args.out, "json")
    failures = any(not r["success"] for r in report.rows)
    return 1 if failures else 0


def _cmd_blackbox(args) -> int:
    seed = _resolve_seed(args.seed)
    substitute = load_model(args.substitute)
    oracle = load_model(args.oracle_model)
    data = _load_data(args)
    names = [a.strip().lower() for a in args.attacks.split(",") if a.strip()]
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    if not names or not gammas:
        raise SaeError("--attacks and --gammas must be non-empty")
    for n in names:
        evaluation.parse_nt_attack_name(n)
    report = evaluate_blackbox(
        substitute,
        oracle,
        data,
        attacks=names,
        gammas=gammas,
        cfg=NtConfig(exact_distortion=True, direction=args.direction, gamma=gammas[0]),
        sample_limit=args.limit,
    )
    report.config.update(_resolved_config(args, seed))
    emit_report(report, args.out, "json")
    failures = any(not r["substitute_success"] for r in report.rows)
    return 1 if failures else 0


def _cmd_report(args) -> int:
    payload = json.loads(Path(args.infile).read_text())
    if args.format == "csv":
        if not args.out:
            raise SaeError("--format csv requires --out")
        emit_report(payload, args.out, "csv")
        return 0
    kind = payload.get("kind")
    print(f"report kind: {kind}")
    if kind == "blackbox":
        for attack, by_gamma in payload.get("cells", {}).items():
            for gamma, cell in by_gamma.items():
                print(f"  {attack} gamma={gamma}: SR={cell['sr']:.4f} TR={cell['tr']:.4f}")
    else:
        for attack, summary in payload.get("attacks", {}).items():
            sr = summary.get("success_rate")
            l0 = summary.get("mean_l0")
            l0_text = "n/a" if l0 is None else f"{l0:.2f}"
            print(f"  {attack}: SR={sr:.4f} meanL0={l0_text} runs={summary.get('runs')}")
        dominance = payload.get("dominance")
        if dominance:
            parts = ", ".join(f"{k}={v:.3f}" for k, v in dominance.items())
            print(f"  dominance: {parts}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "attack": _cmd_attack,
    "evaluate": _cmd_evaluate,
    "blackbox": _cmd_blackbox,
    "report": _cmd_report,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except (SaeError, OSError, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
