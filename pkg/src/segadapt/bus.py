"""Discrete-event publish/subscribe bus on a virtual clock.

Time is kept as integer milliseconds so that downtime accounting and event
ordering never suffer from float drift.  Events with the same due time run in
the order they were scheduled.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

EVENT_KINDS = ("timer_fire", "message_delivery", "injection", "adaptation_delivery")


class SimulationError(RuntimeError):
    pass


class BusError(ValueError):
    pass


def to_ms(seconds: float) -> int:
    """Seconds -> integer milliseconds (round half away from zero)."""
    if isinstance(seconds, int):
        return seconds * 1000
    return int(math.floor(seconds * 1000.0 + 0.5))


def fmt_time(ms: int) -> str:
    return f"{ms // 1000}.{ms % 1000:03d}"


@dataclass(frozen=True)
class Message:
    topic: str
    stamp: int  # ms, acquisition time
    seq: int
    payload: Any
    publisher: str


def _clean(value):
    # canonical JSON form: floats at fixed precision, tuples as lists, numpy scalars unwrapped
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return None
        return round(value, 6)
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in sorted(value.items(), key=lambda kv: str(kv[0]))}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item"):
        return _clean(value.item())
    return str(value)


class EventLog:
    """Append-only JSONL log with a fixed field order."""

    def __init__(self):
        self.records: list[dict] = []

    def append(self, t_ms: int, kind: str, node: str, topic=None, seq=None, detail=None) -> dict:
        rec = {"t": fmt_time(t_ms), "kind": kind, "node": node}
        if topic is not None:
            rec["topic"] = topic
        if seq is not None:
            rec["seq"] = seq
        rec["detail"] = _clean(detail or {})
        self.records.append(rec)
        return rec

    def lines(self) -> list[str]:
        return [json.dumps(r, separators=(",", ":")) for r in self.records]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    def of_kind(self, *kinds: str) -> list[dict]:
        return [r for r in self.records if r["kind"] in kinds]


def read_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def record_ms(rec: dict) -> int:
    whole, _, frac = rec["t"].partition(".")
    return int(whole) * 1000 + int((frac + "000")[:3])


@dataclass
class Subscription:
    node: str
    topic: str
    handler: Callable[[Message], None]
    alive: bool = True

    def destroy(self) -> None:
        self.alive = False


@dataclass
class Timer:
    node: str
    period: int  # ms
    callback: Callable[[], None]
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass(order=True)
class _Event:
    due: int
    order: int
    kind: str = field(compare=False)
    origin: str = field(compare=False)
    action: Callable[[], None] = field(compare=False)


class Bus:
    """Single-threaded event loop, topic registry and frequency bookkeeping.

    ``gate`` decides whether a node may publish; the runtime wires it to the
    lifecycle registry so that only ACTIVE nodes reach subscribers.
    """

    def __init__(self, log: Optional[EventLog] = None, latency: Optional[dict[str, float]] = None):
        self.now = 0
        self.log = log if log is not None else EventLog()
        self.latency = {t: to_ms(v) for t, v in (latency or {}).items()}
        self.gate: Callable[[str], bool] = lambda node: True
        self._queue: list[_Event] = []
        self._order = itertools.count()
        self._subs: dict[str, list[Subscription]] = defaultdict(list)
        self._seq: dict[tuple[str, str], int] = defaultdict(int)
        self._arrivals: dict[str, list[int]] = defaultdict(list)
        self.dropped = 0

    # -- scheduling -------------------------------------------------------
    def schedule_at(self, due_ms: int, kind: str, origin: str, action: Callable[[], None]) -> None:
        if kind not in EVENT_KINDS:
            raise BusError(f"unknown event kind {kind!r}")
        if due_ms < self.now:
            raise BusError(f"cannot schedule in the past ({due_ms} < {self.now})")
        heapq.heappush(self._queue, _Event(due_ms, next(self._order), kind, origin, action))

    def schedule(self, delay_s: float, kind: str, origin: str, action: Callable[[], None]) -> None:
        self.schedule_at(self.now + to_ms(delay_s), kind, origin, action)

    def create_timer(self, node: str, period_s: float, callback: Callable[[], None]) -> Timer:
        period = to_ms(period_s)
        if period <= 0:
            raise BusError("timer period must be > 0")
        timer = Timer(node, period, callback)

        def fire():
            if timer.cancelled:
                return
            # re-arm first so a callback that cancels the timer still wins
            self.schedule_at(self.now + timer.period, "timer_fire", node, fire)
            timer.callback()

        self.schedule_at(self.now + period, "timer_fire", node, fire)
        return timer

    def pending(self) -> int:
        return len(self._queue)

    def run_until(self, t_end_s: float) -> int:
        t_end = to_ms(t_end_s)
        if t_end < self.now:
            raise BusError("t_end lies before the current time")
        count = 0
        while self._queue and self._queue[0].due <= t_end:
            ev = heapq.heappop(self._queue)
            self.now = ev.due
            try:
                ev.action()
            except SimulationError:
                raise
            except Exception as exc:  # unrecoverable handler fault
                self.log.append(self.now, "error", ev.origin, detail={"event": ev.kind, "error": repr(exc)})
                raise SimulationError(f"{ev.kind} from {ev.origin} failed at {fmt_time(self.now)}: {exc!r}") from exc
            count += 1
        self.now = t_end
        return count

    # -- pub/sub ----------------------------------------------------------
    def subscribe(self, node: str, topic: str, handler: Callable[[Message], None]) -> Subscription:
        if not topic:
            raise BusError("topic name must be non-empty")
        for s in self._subs[topic]:
            if s.alive and s.node == node:
                raise BusError(f"already subscribed: {node} -> {topic}")
        sub = Subscription(node, topic, handler)
        self._subs[topic] = [s for s in self._subs[topic] if s.alive] + [sub]
        return sub

    def subscribers(self, topic: str) -> list[Subscription]:
        return [s for s in self._subs.get(topic, ()) if s.alive]

    def publish(self, node: str, topic: str, payload: Any, stamp: Optional[int] = None, detail=None) -> Optional[int]:
        """Send ``payload`` to every live subscriber; returns the sequence number.

        Returns None when the publisher is not ACTIVE (the message is dropped
        and the drop is logged).
        """
        if not self.gate(node):
            self.dropped += 1
            self.log.append(self.now, "dropped", node, topic=topic, detail={"reason": "inactive publisher"})
            return None
        key = (node, topic)
        self._seq[key] += 1
        seq = self._seq[key]
        stamp = self.now if stamp is None else stamp
        msg = Message(topic, stamp, seq, payload, node)
        due = self.now + self.latency.get(topic, 0)
        self._arrivals[topic].append(due)
        self.log.append(self.now, "publish", node, topic=topic, seq=seq, detail=detail)
        for sub in self.subscribers(topic):
            self.schedule_at(due, "message_delivery", node, self._deliverer(sub, msg))
        return seq

    @staticmethod
    def _deliverer(sub: Subscription, msg: Message):
        def deliver():
            # a handle destroyed after publish but before delivery receives nothing
            if sub.alive:
                sub.handler(msg)

        return deliver

    # -- frequency --------------------------------------------------------
    def estimate_frequency(self, topic: str, window_s: float, now_ms: Optional[int] = None) -> float:
        """Messages with delivery time in (now - window, now] divided by the window."""
        if window_s <= 0:
            raise BusError("window must be > 0")
        now = self.now if now_ms is None else now_ms
        w = to_ms(window_s)
        times = self._arrivals.get(topic, [])
        n = bisect.bisect_right(times, now) - bisect.bisect_right(times, now - w)
        return n / (w / 1000.0)

    def arrivals(self, topic: str) -> list[int]:
        return list(self._arrivals.get(topic, ()))
