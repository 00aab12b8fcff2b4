"""Run metrics computed after the fact from event logs and scenario ground truth."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .bus import record_ms
from .injector import executed_adaptations, get_uncertainty, injection_time, resolved_check
from .monitor import SYMPTOM_LOCATION, Thresholds
from .pipeline import SEGMENTATION_TOPIC

CSV_HEADER = (
    "controller", "ratio", "ratio_std", "t_react", "t_react_std", "redeploys_u", "redeploys_u_std",
    "t_down", "t_down_std", "iou", "iou_std",
)


class MetricsError(ValueError):
    pass


def compute_iou(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> tuple[np.ndarray, float]:
    """Per-class IoU (nan for classes absent from both masks) and their mean."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricsError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = pred.ravel()
    g = gt.ravel()
    # joint histogram: one pass instead of K boolean masks
    joint = np.bincount(p * num_classes + g, minlength=num_classes * num_classes).reshape(num_classes, num_classes)
    inter = np.diag(joint).astype(float)
    union = joint.sum(1) + joint.sum(0) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(union > 0, inter / union, np.nan)
    present = union > 0
    mean = float(per[present].mean()) if present.any() else float("nan")
    return per, mean


def downtime_from_times(times_ms: Sequence[int], start_ms: int, end_ms: int, period_ms: int) -> int:
    """Sum of max(0, gap - period) over inter-arrival gaps, run edges included (ms)."""
    edges = [start_ms] + sorted(t for t in times_ms if start_ms <= t <= end_ms) + [end_ms]
    return sum(max(0, b - a - period_ms) for a, b in zip(edges, edges[1:]))


def run_bounds(records: list[dict]) -> tuple[int, int]:
    start = next((record_ms(r) for r in records if r["kind"] == "run_start"), 0)
    end = next((record_ms(r) for r in records if r["kind"] == "run_end"), None)
    if end is None:
        raise MetricsError("log is incomplete: no run_end marker")
    return start, end


def compute_downtime(records: list[dict], expected_period: float = 0.1) -> float:
    start, end = run_bounds(records)
    times = [record_ms(r) for r in records if r["kind"] == "publish" and r.get("topic") == SEGMENTATION_TOPIC]
    return downtime_from_times(times, start, end, int(round(expected_period * 1000))) / 1000.0


def _plans_matched_at(uid: str, records: list[dict], t0: int) -> Optional[int]:
    """Issue time of the first command of the earliest fully issued resolving plan."""
    u = get_uncertainty(uid)
    cmds = [r for r in executed_adaptations(records) if record_ms(r) >= t0]
    best = None
    for plan in u.resolving_adaptations:
        times = []
        for tpl in plan:
            hit = next(
                (int(round(c["detail"]["issued_at"] * 1000)) for c in cmds
                 if tpl.matches(c["node"], c["detail"]["action"], c["detail"]["args"])),
                None,
            )
            if hit is None:
                break
            times.append(hit)
        else:
            first = min(times)
            if best is None or first < best:
                best = first
    return best


def first_observed(uid: str, records: list[dict], t0: int) -> Optional[int]:
    u = get_uncertainty(uid)
    for r in records:
        if r["kind"] != "symptom" or record_ms(r) < t0:
            continue
        d = r["detail"]
        if d["symptom"] == u.symptom and d["location"] == SYMPTOM_LOCATION[u.symptom]:
            return int(round(d["first_observed"] * 1000))
    return None


def compute_reaction_times(records: list[dict], injected: Iterable[str]) -> dict[str, Optional[float]]:
    """t_react per injected uncertainty; None when no resolving template was ever issued."""
    out = {}
    for uid in injected:
        t0 = injection_time(uid, records)
        if t0 is None:
            out[uid] = None
            continue
        matched = _plans_matched_at(uid, records, t0)
        seen = first_observed(uid, records, t0)
        out[uid] = None if matched is None or seen is None else (matched - seen) / 1000.0
    return out


def unnecessary_redeploys(records: list[dict]) -> int:
    """Accepted Redeploy commands whose target held no persistent fault at that moment."""
    persistent: dict[str, set] = {}
    # the redeploy itself clears the fault and is logged right after, same instant
    cleared_at: dict[str, int] = {}
    count = 0
    for r in records:
        if r["kind"] == "fault" and r["detail"]["persistent"]:
            faults = persistent.setdefault(r["node"], set())
            if r["detail"]["op"] == "set":
                faults.add(r["detail"]["fault"])
            else:
                faults.discard(r["detail"]["fault"])
                cleared_at[r["node"]] = record_ms(r)
        elif r["kind"] == "adaptation" and r["detail"]["outcome"] == "accepted" and r["detail"]["action"] == "Redeploy":
            if not persistent.get(r["node"]) and cleared_at.get(r["node"]) != record_ms(r):
                count += 1
    return count


def compute_ratio_and_redeploys(records: list[dict], injected: Iterable[str], thresholds: Thresholds = Thresholds()):
    injected = list(injected)
    executed = len(executed_adaptations(records))
    resolved = {uid: resolved_check(uid, records, thresholds) for uid in injected}
    n_resolved = sum(v is not None for v in resolved.values())
    ratio = None if executed == 0 else n_resolved / executed
    return ratio, unnecessary_redeploys(records), resolved, executed


@dataclass
class MetricsReport:
    ratio: Optional[float]
    t_react: Optional[float]
    t_react_std: Optional[float]
    t_react_values: list
    redeploys_u: int
    t_down: float
    availability: float
    iou_mean: Optional[float]
    iou_std: Optional[float]
    a_executed: int
    resolved: dict
    duration: float

    def to_json(self) -> str:
        return json.dumps(_round(asdict(self)), sort_keys=True, indent=2) + "\n"


def _round(v):
    if isinstance(v, float):
        return None if math.isnan(v) else round(v, 6)
    if isinstance(v, dict):
        return {k: _round(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_round(x) for x in v]
    return v


def compute_report(records: list[dict], injected: Iterable[str], thresholds: Thresholds = Thresholds(), expected_period: float = 0.1) -> MetricsReport:
    injected = list(injected)
    start, end = run_bounds(records)
    duration = (end - start) / 1000.0
    ratio, red_u, resolved, executed = compute_ratio_and_redeploys(records, injected, thresholds)
    reacts = compute_reaction_times(records, injected)
    vals = [v for v in reacts.values() if v is not None]
    t_down = compute_downtime(records, expected_period)
    ious = [r["detail"]["iou"] for r in records if r["kind"] == "iou"]
    return MetricsReport(
        ratio=ratio,
        t_react=float(np.mean(vals)) if vals else None,
        t_react_std=float(np.std(vals)) if vals else None,
        t_react_values=vals,
        redeploys_u=red_u,
        t_down=t_down,
        availability=1.0 - t_down / duration if duration > 0 else 0.0,
        iou_mean=float(np.mean(ious)) if ious else None,
        iou_std=float(np.std(ious)) if ious else None,
        a_executed=executed,
        resolved={k: (None if v is None else v / 1000.0) for k, v in resolved.items()},
        duration=duration,
    )


@dataclass
class SweepRow:
    controller: str
    reports: list = field(default_factory=list)


def _mean_std(values) -> tuple[Optional[float], Optional[float]]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def _fmt(v: Optional[float]) -> str:
    return "N/A" if v is None else f"{v:.4f}"


def aggregate_sweep(groups: Sequence[tuple[str, Sequence[MetricsReport], bool]]) -> str:
    """CSV summary, one row per (label, reports, controller_metrics) group, order kept.

    Rows for runs without a controller pass ``controller_metrics=False`` and get
    N/A for ratio, reaction time and unnecessary redeploys.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for label, reports, controller_metrics in groups:
        if not reports:
            continue
        if controller_metrics:
            ratio = _mean_std(r.ratio for r in reports)
            pooled = [v for r in reports for v in r.t_react_values]
            react = (float(np.mean(pooled)), float(np.std(pooled))) if pooled else (None, None)
            red = _mean_std(float(r.redeploys_u) for r in reports)
        else:
            ratio = react = red = (None, None)
        down = _mean_std(r.t_down for r in reports)
        iou = _mean_std(r.iou_mean for r in reports)
        w.writerow([label, *map(_fmt, (*ratio, *react, *red, *down, *iou))])
    return buf.getvalue()
