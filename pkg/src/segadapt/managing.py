"""Managing-system boundary and the rule-based baseline controller.

A controller sees nothing but DiagnosticsSnapshot values and answers with
AdaptationCommand lists.  Controllers are looked up by name, so a scenario
can swap them without touching the managed pipeline.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from .bus import to_ms
from .lifecycle import AdaptationCommand, Redeploy, SetParameter
from .monitor import SYMPTOM_TOPICS, DiagnosticsSnapshot, Thresholds
from .pipeline import PUBLISHERS


class ControllerError(ValueError):
    pass


class ManagingSystem(Protocol):
    name: str

    def step(self, snapshot: DiagnosticsSnapshot) -> list[AdaptationCommand]: ...


@dataclass(frozen=True)
class ControllerSettings:
    thresholds: Thresholds = Thresholds()
    redeploy_delays: tuple = (("camera", 3.0), ("depth", 3.0))
    default_redeploy_delay: float = 1.0
    recalibration_cooldown: float = 2.0

    def redeploy_delay(self, node: str) -> float:
        return dict(self.redeploy_delays).get(node, self.default_redeploy_delay)


_REGISTRY: dict[str, Callable[[ControllerSettings], ManagingSystem]] = {}


def register_controller(name: str, factory: Callable[[ControllerSettings], ManagingSystem]) -> str:
    """Make ``factory`` selectable by ``name`` from scenario files."""
    if not name:
        raise ControllerError("controller name must be non-empty")
    if name in _REGISTRY:
        raise ControllerError(f"duplicate controller name {name!r}")
    _REGISTRY[name] = factory
    return name


def unregister_controller(name: str) -> None:
    _REGISTRY.pop(name, None)


def controller_names() -> list[str]:
    return sorted(_REGISTRY)


def create_controller(name: str, settings: Optional[ControllerSettings] = None) -> ManagingSystem:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ControllerError(f"unknown controller {name!r}") from None
    return factory(settings or ControllerSettings())


class NoOpController:
    name = "none"

    def step(self, snapshot: DiagnosticsSnapshot) -> list[AdaptationCommand]:
        return []


@dataclass
class KnowledgeBase:
    snapshots: deque = field(default_factory=lambda: deque(maxlen=32))
    pending: dict = field(default_factory=dict)  # (target, action key) -> issued ms
    cooldown_until: dict = field(default_factory=dict)  # (target, action key) -> ms

    def cooling(self, key, now: int) -> bool:
        return self.cooldown_until.get(key, -1) > now

    def issue(self, key, now: int, cooldown_ms: int) -> None:
        self.pending[key] = now
        self.cooldown_until[key] = now + cooldown_ms

    def expire(self, now: int) -> None:
        for key in [k for k, until in self.cooldown_until.items() if until <= now]:
            self.pending.pop(key, None)


def baseline_step(snapshot: DiagnosticsSnapshot, kb: KnowledgeBase, settings: ControllerSettings, issuer: str = "baseline") -> list[AdaptationCommand]:
    """Redeploy every silent publisher (ERROR), then recalibrate on high entropy (WARNING)."""
    now = snapshot.t
    kb.snapshots.append(snapshot)
    kb.expire(now)
    th = settings.thresholds
    out = []
    for topic in SYMPTOM_TOPICS.values():
        if snapshot.frequency(topic) >= th.freq_min:
            continue
        node = PUBLISHERS[topic]
        key = (node, "Redeploy")
        if snapshot.state(node) == "FINALIZED" or key in kb.pending or kb.cooling(key, now):
            continue
        out.append(AdaptationCommand(node, Redeploy(), now, issuer))
        kb.issue(key, now, to_ms(settings.redeploy_delay(node) + 1.0))
    if snapshot.mean_entropy is not None and snapshot.mean_entropy > th.entropy_max:
        key = ("fusion", "recalibrate")
        if key not in kb.pending and not kb.cooling(key, now):
            out.append(AdaptationCommand("fusion", SetParameter("recalibrate", True), now, issuer))
            kb.issue(key, now, to_ms(settings.recalibration_cooldown))
    return out


class BaselineController:
    name = "baseline"

    def __init__(self, settings: Optional[ControllerSettings] = None):
        self.settings = settings or ControllerSettings()
        self.kb = KnowledgeBase()

    def step(self, snapshot: DiagnosticsSnapshot) -> list[AdaptationCommand]:
        return baseline_step(snapshot, self.kb, self.settings, self.name)


register_controller("none", lambda settings: NoOpController())
register_controller("baseline", BaselineController)
