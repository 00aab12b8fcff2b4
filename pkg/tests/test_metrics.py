import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segadapt.bus import EventLog
from segadapt.metrics import (
    CSV_HEADER,
    MetricsError,
    MetricsReport,
    aggregate_sweep,
    compute_downtime,
    compute_iou,
    compute_reaction_times,
    compute_report,
    downtime_from_times,
    unnecessary_redeploys,
)


def iou_by_sets(pred, gt, k):
    per = []
    for c in range(k):
        p = {i for i, v in enumerate(pred.ravel()) if v == c}
        g = {i for i, v in enumerate(gt.ravel()) if v == c}
        if p | g:
            per.append(len(p & g) / len(p | g))
    return sum(per) / len(per)


@settings(max_examples=200)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(2, 4), st.data())
def test_iou_matches_set_counting(h, w, k, data):
    cells = st.lists(st.integers(0, k - 1), min_size=h * w, max_size=h * w)
    pred = np.array(data.draw(cells)).reshape(h, w)
    gt = np.array(data.draw(cells)).reshape(h, w)
    assert compute_iou(pred, gt, k)[1] == pytest.approx(iou_by_sets(pred, gt, k), abs=1e-12)


def test_iou_edge_cases():
    a = np.zeros((2, 2), dtype=int)
    per, mean = compute_iou(a, a, 3)
    assert mean == 1.0 and math.isnan(per[1])
    with pytest.raises(MetricsError):
        compute_iou(a, np.zeros((3, 2), dtype=int), 2)


def tick_replay_downtime(times, start, end, period):
    # walk the clock one millisecond at a time
    pubs = set(times)
    last, down = start, 0
    for t in range(start + 1, end + 1):
        if t - last > period:
            down += 1
        if t in pubs:
            last = t
    return down


@settings(max_examples=100)
@given(st.lists(st.integers(0, 3000), max_size=40), st.integers(1, 400))
def test_downtime_matches_tick_replay(times, period):
    assert downtime_from_times(times, 0, 3000, period) == tick_replay_downtime(times, 0, 3000, period)


def test_downtime_needs_run_end_marker():
    log = EventLog()
    log.append(0, "run_start", "runtime")
    with pytest.raises(MetricsError):
        compute_downtime(log.records)
    for t in range(100, 5001, 100):
        log.append(t, "publish", "segmentation", topic="/segmentation/output")
    log.append(10000, "run_end", "runtime")
    assert compute_downtime(log.records, 0.1) == pytest.approx(4.9)


def _cmd(log, t, node, action, args=None, outcome="accepted"):
    log.append(t, "adaptation", node, detail={"action": action, "args": args or {}, "issued_at": t / 1000,
                                              "issuer": "c", "outcome": outcome})


def test_reaction_time_uses_first_command_of_earliest_complete_plan():
    log = EventLog()
    log.append(5000, "injection", "camera", detail={"uncertainty": "U10"})
    log.append(5500, "symptom", "segmentation", detail={"symptom": "S4", "location": "segmentation", "first_observed": 5.5})
    _cmd(log, 6000, "fusion", "SetParameter", {"name": "modality", "value": "rgb_only"})
    _cmd(log, 8000, "fusion", "SetParameter", {"name": "recalibrate", "value": True})
    assert compute_reaction_times(log.records, ["U10"]) == {"U10": None}  # plan incomplete
    _cmd(log, 9000, "segmentation", "SetParameter", {"name": "modality", "value": "rgb"})
    assert compute_reaction_times(log.records, ["U10"]) == {"U10": pytest.approx(0.5)}


def test_unnecessary_redeploys_replay_fault_state():
    log = EventLog()
    log.append(5000, "fault", "camera", detail={"fault": "outage", "persistent": True, "op": "set"})
    log.append(7000, "fault", "camera", detail={"fault": "outage", "persistent": True, "op": "cleared"})
    _cmd(log, 7000, "camera", "Redeploy")  # clears the fault: necessary
    _cmd(log, 7000, "fusion", "Redeploy")  # healthy node: unnecessary
    _cmd(log, 9000, "camera", "Redeploy")  # fault already gone: unnecessary
    _cmd(log, 9500, "camera", "Redeploy", outcome="ignored")
    assert unnecessary_redeploys(log.records) == 2


def test_ratio_undefined_without_adaptations_and_report_bytes_stable():
    log = EventLog()
    log.append(0, "run_start", "runtime")
    log.append(5000, "injection", "fusion", detail={"uncertainty": "U09"})
    log.append(20000, "run_end", "runtime")
    rep = compute_report(log.records, ["U09"])
    assert rep.ratio is None and rep.t_react is None and rep.iou_mean is None
    assert rep.to_json() == compute_report(log.records, ["U09"]).to_json()


def _rep(**kw):
    base = dict(ratio=0.5, t_react=1.0, t_react_std=0.0, t_react_values=[1.0], redeploys_u=2, t_down=1.0,
                availability=0.95, iou_mean=0.8, iou_std=0.1, a_executed=2, resolved={}, duration=20.0)
    base.update(kw)
    return MetricsReport(**base)


def test_aggregate_rows_order_na_and_singleton_std():
    text = aggregate_sweep([
        ("none-clean", [_rep(ratio=None, iou_mean=1.0)], False),
        ("baseline", [_rep(), _rep(ratio=1.0, t_react_values=[2.0, 3.0], redeploys_u=4)], True),
        ("empty", [], True),
    ])
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_HEADER
    assert [r[0] for r in rows[1:]] == ["none-clean", "baseline"]
    assert rows[1][1:7] == ["N/A"] * 6 and rows[1][9] == "1.0000"
    b = dict(zip(CSV_HEADER, rows[2]))
    assert b["ratio"] == "0.7500" and b["ratio_std"] == "0.2500"
    assert b["t_react"] == "2.0000"  # pooled over 1, 2, 3
    assert b["redeploys_u"] == "3.0000"
    single = list(csv.reader(io.StringIO(aggregate_sweep([("x", [_rep()], True)]))))[1]
    assert single[2] == "0.0000" and single[10] == "0.0000"
