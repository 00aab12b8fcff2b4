"""Information-collecting node: turns bus activity into diagnostics snapshots.

The monitor sees only observable signals (topic rates, the segmentation
entropy, camera sharpness, lifecycle states).  It has no access to what was
injected, so symptoms carry no root cause.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .bus import Bus, Message, to_ms
from .lifecycle import ManagedNode
from .pipeline import CAMERA_TOPIC, DIAGNOSTICS_TOPIC, FUSION_TOPIC, SEGMENTATION_TOPIC, TOPICS, sharpness

# Laplacian-variance threshold between clean and defocused frames (geometric
# mean of the two, measured by the calibration command on the default scene).
DEFAULT_SHARPNESS_MIN = 0.00107

SYMPTOM_TOPICS = {"S1": CAMERA_TOPIC, "S2": FUSION_TOPIC, "S3": SEGMENTATION_TOPIC}
SYMPTOM_LOCATION = {"S1": "camera", "S2": "fusion", "S3": "segmentation", "S4": "segmentation", "S5": "camera"}
CRITICALITY = {"S1": "ERROR", "S2": "ERROR", "S3": "ERROR", "S4": "WARNING", "S5": "OK"}
LEVEL_RANK = {"OK": 0, "WARNING": 1, "ERROR": 2}
MONITORED_TOPICS = tuple(t for t in TOPICS if t != DIAGNOSTICS_TOPIC)


@dataclass(frozen=True)
class Thresholds:
    freq_min: float = 1.0
    entropy_max: float = 0.06
    sharpness_min: float = DEFAULT_SHARPNESS_MIN


@dataclass(frozen=True)
class DiagnosticsSnapshot:
    t: int  # ms
    topic_frequencies: tuple  # ((topic, hz), ...)
    mean_entropy: Optional[float]
    sharpness: Optional[float]
    lifecycle_states: tuple  # ((node, state), ...)
    window: float = 2.0

    def frequency(self, topic: str) -> float:
        return dict(self.topic_frequencies).get(topic, 0.0)

    def state(self, node: str) -> Optional[str]:
        return dict(self.lifecycle_states).get(node)

    def as_detail(self) -> dict:
        return {
            "freq": dict(self.topic_frequencies),
            "entropy": self.mean_entropy,
            "sharpness": self.sharpness,
            "states": dict(self.lifecycle_states),
            "window": self.window,
        }


@dataclass(frozen=True)
class SymptomObservation:
    symptom: str
    criticality: str
    location: str
    first_observed: int  # ms

    def as_detail(self) -> dict:
        return {
            "symptom": self.symptom,
            "level": self.criticality,
            "location": self.location,
            "first_observed": self.first_observed / 1000.0,
        }


@dataclass(frozen=True)
class DiagnosticStatus:
    snapshot: DiagnosticsSnapshot
    symptoms: tuple


def symptom_conditions(s: DiagnosticsSnapshot, th: Thresholds) -> list[str]:
    held = [sym for sym, topic in SYMPTOM_TOPICS.items() if s.frequency(topic) < th.freq_min]
    if s.mean_entropy is not None and s.mean_entropy > th.entropy_max:
        held.append("S4")
    if s.sharpness is not None and s.sharpness < th.sharpness_min:
        held.append("S5")
    return held


def detect_symptoms(s: DiagnosticsSnapshot, th: Thresholds = Thresholds(), previous=None) -> list[SymptomObservation]:
    """Symptoms present in ``s``.

    ``previous`` is the observation list of the preceding snapshot; a symptom
    that was already held keeps its first_observed time.
    """
    prior = {o.symptom: o.first_observed for o in (previous or ())}
    return [
        SymptomObservation(sym, CRITICALITY[sym], SYMPTOM_LOCATION[sym], prior.get(sym, s.t))
        for sym in symptom_conditions(s, th)
    ]


class MonitorNode(ManagedNode):
    """Samples every ``period`` seconds over a sliding ``window``."""

    node_id = "monitor"
    default_parameters = {"period": 0.5, "window": 2.0}
    default_subscriptions = {"segmentation": SEGMENTATION_TOPIC, "camera": CAMERA_TOPIC}

    def __init__(self, bus: Bus, states: Callable[[], dict], thresholds: Thresholds = Thresholds(), **params):
        super().__init__(bus)
        for k, v in params.items():
            self.parameters[k] = v
            setattr(self, k, v)
        self.read_states = states
        self.thresholds = thresholds
        self._entropy: Optional[tuple[int, float]] = None
        self._frame = None
        self._frame_at = None
        self._sharp_cache: Optional[tuple[object, float]] = None
        self.observations: list[SymptomObservation] = []
        self.snapshots: list[DiagnosticsSnapshot] = []

    def create_timers(self):
        return [self.bus.create_timer(self.node_id, self.period, self.tick)]

    def on_segmentation(self, msg: Message) -> None:
        self._entropy = (self.bus.now, msg.payload.mean_entropy)

    def on_camera(self, msg: Message) -> None:
        self._frame = msg.payload
        self._frame_at = self.bus.now

    def _fresh(self, at: Optional[int]) -> bool:
        return at is not None and at > self.bus.now - to_ms(self.window)

    def sample(self) -> DiagnosticsSnapshot:
        now = self.bus.now
        freqs = tuple((t, self.bus.estimate_frequency(t, self.window)) for t in MONITORED_TOPICS)
        entropy = self._entropy[1] if self._entropy and self._fresh(self._entropy[0]) else None
        sharp = None
        if self._frame is not None and self._fresh(self._frame_at):
            if self._sharp_cache is None or self._sharp_cache[0] is not self._frame:
                self._sharp_cache = (self._frame, sharpness(self._frame.pixels))
            sharp = self._sharp_cache[1]
        states = tuple(sorted(self.read_states().items()))
        return DiagnosticsSnapshot(now, freqs, entropy, sharp, states, self.window)

    def tick(self) -> None:
        snap = self.sample()
        obs = detect_symptoms(snap, self.thresholds, self.observations)
        for o in obs:
            if o.first_observed == snap.t:
                self.log.append(snap.t, "symptom", o.location, detail=o.as_detail())
        self.observations = obs
        self.snapshots.append(snap)
        detail = snap.as_detail()
        detail["symptoms"] = [o.as_detail() for o in obs]
        self.log.append(snap.t, "diagnostics", self.node_id, detail=detail)
        self.publish(DIAGNOSTICS_TOPIC, DiagnosticStatus(snap, tuple(obs)), stamp=snap.t)
