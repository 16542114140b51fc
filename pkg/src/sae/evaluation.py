"""Batch evaluation: success rates, distortion, dominance, reports.

Three drivers: evaluate_targeted runs every (sample, target, attack)
cell of the white-box targeted suite, evaluate_nontargeted runs the
label-escape attacks, and evaluate_blackbox runs exact-distortion
transfer attacks against a substitute while tallying oracle flips.

Reports serialize to JSON (schema_version 1, stable field order) or
CSV (one row per attack run).  Aggregation sorts rows first, so results
are invariant to sample ordering; wall-time fields are the only
non-deterministic content.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import engine
from .attacks import AttackConfig, targeted_attack
from .errors import ConfigurationError, EvaluationError
from .metrics import l_norms
from .nontargeted import NtConfig, maximal_attack, nt_attack
from .store import Dataset

SCHEMA_VERSION = 1

TARGETED_ATTACKS = {"jsma": "plain", "wjsma": "weighted", "tjsma": "taylor"}

_NT_VARIANTS = {"jsma": "plain", "wjsma": "weighted", "tjsma": "taylor"}


def parse_nt_attack_name(name: str) -> tuple[str, str, str]:
    """Split names like nt-wjsma, m-jsma-f into (kind, variant, logit_source)."""
    parts = name.lower().split("-")
    if len(parts) == 2:
        parts.append("z")
    if len(parts) != 3 or parts[0] not in ("nt", "m") or parts[2] not in ("z", "f"):
        raise ConfigurationError(f"unknown attack name {name!r}")
    kind = "nt" if parts[0] == "nt" else "maximal"
    if parts[1] not in _NT_VARIANTS:
        raise ConfigurationError(f"unknown attack name {name!r}")
    return kind, _NT_VARIANTS[parts[1]], parts[2].upper()


def classify_attack_name(name: str) -> str:
    """Return 'targeted' or 'nt' for a CLI attack name."""
    if name.lower() in TARGETED_ATTACKS:
        return "targeted"
    parse_nt_attack_name(name)
    return "nt"


@dataclass
class EvaluationReport:
    kind: str
    config: dict
    attacks: dict
    dominance: dict = field(default_factory=dict)
    pairwise_dominance: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "config": self.config,
            "attacks": self.attacks,
        }
        if self.kind == "targeted":
            out["dominance"] = self.dominance
            out["dominance_pie"] = {
                "labels": list(self.dominance.keys()),
                "fractions": list(self.dominance.values()),
            }
            out["pairwise_dominance"] = self.pairwise_dominance
        out["rows"] = self.rows
        return out


@dataclass
class BlackboxReport:
    config: dict
    cells: dict
    rows: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "blackbox",
            "config": self.config,
            "cells": self.cells,
            "rows": self.rows,
        }


def _correct_indices(model, data: Dataset, sample_limit: int | None):
    if len(data) == 0:
        raise EvaluationError("dataset is empty")
    preds = engine.predict_batch(model, data.images.astype(np.float64))
    idx = np.flatnonzero(preds == data.labels)
    if idx.size == 0:
        raise EvaluationError("no correctly classified samples to attack")
    if sample_limit is not None:
        idx = idx[:sample_limit]
    return idx


def _map_samples(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _summarize(rows: list) -> dict:
    succ = [r for r in rows if r["success"]]
    out = {
        "runs": len(rows),
        "success_rate": len(succ) / len(rows) if rows else 0.0,
        "mean_l0": float(np.mean([r["l0"] for r in succ])) if succ else None,
        "mean_l1": float(np.mean([r["l1"] for r in succ])) if succ else None,
        "mean_l2": float(np.mean([r["l2"] for r in succ])) if succ else None,
        "mean_iterations": float(np.mean([r["iterations"] for r in rows])) if rows else None,
    }
    return out


def _dominance(rows: list, attack_names: list, max_iter: int) -> tuple[dict, dict]:
    """Strict-dominance fractions and pairwise win/tie matrices.

    A failed run counts as max_iter + 1 iterations.  An attack dominates
    a (sample, target) cell when it needs strictly fewer iterations than
    every other attack; cells without a strict winner land in the tie
    bucket.  Pairwise entries compare two attacks the same way, with
    equal counts (including both-failed) in the tie slot.
    """
    cells: dict = {}
    for r in rows:
        key = (r["sample_id"], r["target"])
        cost = r["iterations"] if r["success"] else max_iter + 1
        cells.setdefault(key, {})[r["attack"]] = cost
    cells = {k: v for k, v in cells.items() if len(v) == len(attack_names)}
    counts = {name: 0 for name in attack_names}
    ties = 0
    for costs in cells.values():
        ordered = sorted(costs.items(), key=lambda kv: kv[1])
        if len(ordered) > 1 and ordered[0][1] < ordered[1][1]:
            counts[ordered[0][0]] += 1
        else:
            ties += 1
    total = max(len(cells), 1)
    dominance = {name: counts[name] / total for name in attack_names}
    dominance["tie"] = ties / total
    pairwise = {}
    for i, a in enumerate(attack_names):
        for b in attack_names[i + 1 :]:
            wins_a = wins_b = equal = 0
            for costs in cells.values():
                if costs[a] < costs[b]:
                    wins_a += 1
                elif costs[b] < costs[a]:
                    wins_b += 1
                else:
                    equal += 1
            pairwise[f"{a}|{b}"] = {
                a: wins_a / total,
                b: wins_b / total,
                "tie": equal / total,
            }
    return dominance, pairwise


def evaluate_targeted(
    model,
    data: Dataset,
    attacks=("jsma", "wjsma", "tjsma"),
    cfg: AttackConfig = AttackConfig(),
    sample_limit: int | None = 100,
    jobs: int = 1,
    collector: list | None = None,
) -> EvaluationReport:
    """Attack every correctly classified sample toward every other class.

    All attacks share one config skeleton and the identical sample list;
    per-attack wall time wraps the full sample sweep, so run with
    jobs=1 when timing matters.  ``collector`` (if given) receives
    (attack, sample_id, target, AttackResult, max_iter) tuples for
    external invariant checks.
    """
    unknown = [a for a in attacks if a not in TARGETED_ATTACKS]
    if unknown:
        raise ConfigurationError(f"unknown targeted attacks {unknown}")
    idx = _correct_indices(model, data, sample_limit)
    n = model.feature_count
    max_iter = cfg.resolved_max_iter(n)
    rows = []
    attack_summaries = {}
    for name in attacks:
        acfg = replace(cfg, variant=TARGETED_ATTACKS[name])

        def run_sample(i, acfg=acfg, name=name):
            x = data.images[i]
            label = int(data.labels[i])
            out = []
            for target in range(model.class_count):
                if target == label:
                    continue
                t0 = time.perf_counter()
                result = targeted_attack(model, x, target, acfg)
                wall_ms = (time.perf_counter() - t0) * 1000.0
                out.append((int(i), target, result, wall_ms))
            return out

        t_attack = time.perf_counter()
        per_sample = _map_samples(run_sample, idx, jobs)
        wall_s = time.perf_counter() - t_attack
        for chunk in per_sample:
            for sample_id, target, result, wall_ms in chunk:
                if collector is not None:
                    collector.append((name, sample_id, target, result, max_iter))
                rows.append(
                    {
                        "sample_id": sample_id,
                        "attack": name,
                        "target": target,
                        "success": bool(result.success),
                        "iterations": result.iterations,
                        "l0": result.l0,
                        "l1": result.l1,
                        "l2": result.l2,
                        "linf": result.linf,
                        "wall_ms": wall_ms,
                    }
                )
        attack_rows = [r for r in rows if r["attack"] == name]
        summary = _summarize(attack_rows)
        summary["wall_time_s"] = wall_s
        attack_summaries[name] = summary

    rows.sort(key=lambda r: (r["attack"], r["sample_id"], r["target"]))
    dominance, pairwise = _dominance(rows, list(attacks), max_iter)
    config = {
        "attacks": list(attacks),
        "sample_count": int(idx.size),
        "max_iter": max_iter,
        "gamma": cfg.gamma,
        "theta": cfg.theta,
        "components": cfg.components,
        "jobs": jobs,
    }
    return EvaluationReport(
        kind="targeted",
        config=config,
        attacks=attack_summaries,
        dominance=dominance,
        pairwise_dominance=pairwise,
        rows=rows,
    )


def _nt_runner(name: str, cfg: NtConfig):
    kind, variant, source = parse_nt_attack_name(name)
    acfg = replace(cfg, variant=variant, logit_source=source)
    if kind == "maximal":
        return acfg, maximal_attack
    return acfg, nt_attack


def evaluate_nontargeted(
    model,
    data: Dataset,
    attacks=("nt-jsma", "nt-wjsma", "nt-tjsma"),
    cfg: NtConfig = NtConfig(),
    sample_limit: int | None = 200,
    jobs: int = 1,
    collector: list | None = None,
) -> EvaluationReport:
    """Run label-escape attacks on every correctly classified sample."""
    runners = {name: _nt_runner(name, cfg) for name in attacks}
    idx = _correct_indices(model, data, sample_limit)
    max_iter = cfg.resolved_max_iter(model.feature_count)
    rows = []
    attack_summaries = {}
    for name in attacks:
        acfg, fn = runners[name]

        def run_sample(i, acfg=acfg, fn=fn):
            t0 = time.perf_counter()
            result = fn(model, data.images[i], acfg, label=int(data.labels[i]))
            return int(i), result, (time.perf_counter() - t0) * 1000.0

        t_attack = time.perf_counter()
        outcomes = _map_samples(run_sample, idx, jobs)
        wall_s = time.perf_counter() - t_attack
        for sample_id, result, wall_ms in outcomes:
            if collector is not None:
                collector.append((name, sample_id, int(data.labels[sample_id]), result, max_iter))
            rows.append(
                {
                    "sample_id": sample_id,
                    "attack": name,
                    "target": None,
                    "success": bool(result.success),
                    "iterations": result.iterations,
                    "l0": result.l0,
                    "l1": result.l1,
                    "l2": result.l2,
                    "linf": result.linf,
                    "wall_ms": wall_ms,
                }
            )
        summary = _summarize([r for r in rows if r["attack"] == name])
        summary["wall_time_s"] = wall_s
        attack_summaries[name] = summary

    rows.sort(key=lambda r: (r["attack"], r["sample_id"]))
    config = {
        "attacks": list(attacks),
        "sample_count": int(idx.size),
        "max_iter": max_iter,
        "gamma": cfg.gamma,
        "direction": cfg.direction,
        "exact_distortion": cfg.exact_distortion,
        "jobs": jobs,
    }
    return EvaluationReport(kind="nt", config=config, attacks=attack_summaries, rows=rows)


def _as_label_fn(oracle):
    if isinstance(oracle, engine.Model):
        return lambda images: engine.predict_batch(oracle, np.asarray(images, dtype=np.float64))
    if callable(oracle):
        return oracle
    raise ConfigurationError("oracle must be a Model or a callable")


def evaluate_blackbox(
    substitute,
    oracle,
    data: Dataset,
    attacks=("nt-wjsma", "nt-tjsma"),
    gammas=(0.01, 0.02, 0.03, 0.04, 0.05),
    cfg: NtConfig = NtConfig(exact_distortion=True),
    sample_limit: int | None = 100,
) -> BlackboxReport:
    """Exact-distortion transfer runs: craft on the substitute, score the oracle.

    SR counts substitute flips against the substitute's original
    prediction; TR counts oracle flips against the oracle's original
    label.  Oracle queries are serialized; with oracle == substitute the
    two tallies coincide exactly.
    """
    if len(data) == 0:
        raise EvaluationError("dataset is empty")
    if not cfg.exact_distortion:
        cfg = replace(cfg, exact_distortion=True)
    oracle_fn = _as_label_fn(oracle)
    idx = np.arange(len(data)) if sample_limit is None else np.arange(min(sample_limit, len(data)))
    images = data.images[idx]
    sub_origin = engine.predict_batch(substitute, images.astype(np.float64))
    oracle_origin = np.asarray(oracle_fn(images))

    cells: dict = {}
    rows = []
    for name in attacks:
        cells[name] = {}
        for gamma in gammas:
            acfg, fn = _nt_runner(name, replace(cfg, gamma=gamma))
            crafted = np.empty(images.shape, dtype=np.float64)
            results = []
            for j, i in enumerate(idx):
                result = fn(substitute, images[j], acfg, label=int(sub_origin[j]))
                crafted[j] = result.x_star
                results.append(result)
            sub_flips = engine.predict_batch(substitute, crafted) != sub_origin
            oracle_flips = np.asarray(oracle_fn(crafted)) != oracle_origin
            for j, i in enumerate(idx):
                rows.append(
                    {
                        "sample_id": int(i),
                        "attack": name,
                        "gamma": gamma,
                        "substitute_success": bool(sub_flips[j]),
                        "oracle_success": bool(oracle_flips[j]),
                        "l0": results[j].l0,
                    }
                )
            cells[name][f"{gamma:g}"] = {
                "sr": float(sub_flips.mean()),
                "tr": float(oracle_flips.mean()),
            }
    config = {
        "attacks": list(attacks),
        "gammas": [float(g) for g in gammas],
        "sample_count": int(idx.size),
        "direction": cfg.direction,
    }
    return BlackboxReport(config=config, cells=cells, rows=rows)


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

_CSV_COLUMNS = {
    "targeted": ["sample_id", "attack", "target", "success", "iterations", "l0", "l1", "l2", "linf", "wall_ms"],
    "nt": ["sample_id", "attack", "target", "success", "iterations", "l0", "l1", "l2", "linf", "wall_ms"],
    "blackbox": ["sample_id", "attack", "gamma", "substitute_success", "oracle_success", "l0"],
}


def emit_report(report, path, fmt: str = "json") -> None:
    """Write a report as JSON (full) or CSV (one row per attack run)."""
    data = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(data, indent=2) + "\n")
    elif fmt == "csv":
        columns = _CSV_COLUMNS.get(data.get("kind"))
        if columns is None:
            raise ConfigurationError(f"cannot emit CSV for report kind {data.get('kind')!r}")
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
            writer.writeheader()
            for row in data.get("rows", []):
                writer.writerow(row)
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}")
