"""Deterministic JSON and CSV emission for reports.

Same inputs produce byte-identical files: dict keys are sorted, floats use
repr round-tripping, CSV follows RFC 4180 (CRLF line endings, header row).
Non-finite floats serialize as null.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .diagnostics import CaptureReport, ConvergenceReport, EnsembleResult
from .engine import Schedule


def to_jsonable(obj):
    """Recursively convert dataclasses / numpy values to plain JSON types."""
    if isinstance(obj, CaptureReport):
        d = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)
             if f.name not in ("empirical", "theoretical_tail")}
        return to_jsonable(d)
    if isinstance(obj, Schedule):
        return {
            "family": obj.family,
            "c": to_jsonable(obj.c),
            "beta": to_jsonable(obj.beta),
            "k0": obj.k0,
            "p": obj.dim,
            "rotation_seed": obj.rotation_seed,
        }
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return obj


def dumps_json(payload) -> str:
    return json.dumps(to_jsonable(payload), indent=2, sort_keys=True,
                      allow_nan=False) + "\n"


def write_json(path, payload) -> None:
    Path(path).write_text(dumps_json(payload), encoding="utf-8")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if not math.isfinite(value) else repr(value)
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def checkpoint_rows(report: ConvergenceReport):
    """Long-format rows (k, statistic, value, stderr) for plotting tools."""
    stats = [
        ("f_gap_mean", report.f_gap_mean, report.f_gap_se),
        ("f_gap_median", report.f_gap_median, None),
        ("f_gap_q25", report.f_gap_q25, None),
        ("f_gap_q75", report.f_gap_q75, None),
        ("grad_norm_mean", report.grad_norm_mean, report.grad_norm_se),
        ("grad_norm_median", report.grad_norm_median, None),
        ("grad_norm_q25", report.grad_norm_q25, None),
        ("grad_norm_q75", report.grad_norm_q75, None),
        ("grad_norm_sq_mean", report.grad_norm_sq_mean, report.grad_norm_sq_se),
        ("grad_norm_sq_median", report.grad_norm_sq_median, None),
        ("grad_norm_sq_q25", report.grad_norm_sq_q25, None),
        ("grad_norm_sq_q75", report.grad_norm_sq_q75, None),
        ("n_alive", report.n_alive, None),
    ]
    rows = []
    for i, k in enumerate(report.ks):
        for name, values, ses in stats:
            rows.append((k, name, values[i], None if ses is None else ses[i]))
        if report.gamma_moments:
            for gamma in sorted(report.gamma_moments):
                rows.append((k, f"f_gap_gamma_moment[{gamma:g}]",
                             report.gamma_moments[gamma][i], None))
    return rows


def write_checkpoints_csv(path, report: ConvergenceReport) -> None:
    write_csv(path, ["k", "statistic", "value", "stderr"], checkpoint_rows(report))


def ensemble_report_payload(result: EnsembleResult) -> dict:
    counts: dict[str, int] = {}
    for c in result.classifications:
        counts[c.verdict] = counts.get(c.verdict, 0) + 1
    return {
        "spec": {
            "objective": result.spec.objective,
            "noise": result.spec.noise,
            "schedule": result.spec.schedule,
            "theta0": list(result.spec.theta0),
            "horizon": result.spec.horizon,
            "n_trajectories": result.spec.n_trajectories,
            "master_seed": result.spec.master_seed,
            "record_stride": result.spec.record_stride,
        },
        "ids": {
            "objective_id": result.spec.objective_id,
            "noise_id": result.spec.noise_id,
            "schedule_id": result.spec.schedule_id,
        },
        "seeds": result.seeds,
        "n_overflow": result.n_overflow,
        "n_domain_violation": result.n_domain_violation,
        "verdict_counts": counts,
        "classifications": result.classifications,
        "convergence": result.convergence,
        "capture": result.capture,
    }


def radial_probe_rows(probe):
    return [
        (rec.radius, rec.grad_norm_sq, rec.L_r, rec.G_value, rec.ratio)
        for rec in probe.records
    ]


def write_radial_csv(path, probe) -> None:
    write_csv(path, ["radius", "grad_norm_sq", "L_r", "G_value", "ratio"],
              radial_probe_rows(probe))


def stopping_times_rows(all_taus):
    rows = []
    for i, st in enumerate(all_taus):
        for j, tau in enumerate(st.taus):
            rows.append((i, j, tau))
    return rows


def write_stopping_times_csv(path, all_taus) -> None:
    write_csv(path, ["trajectory", "tau_index", "tau"], stopping_times_rows(all_taus))
