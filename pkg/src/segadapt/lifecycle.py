"""Lifecycle-managed nodes and the adaptation endpoints they share.

Every node runs the four-state machine UNCONFIGURED -> INACTIVE -> ACTIVE
(plus FINALIZED) and responds to the same adaptation commands.  A node only
contributes to the dataflow while it is ACTIVE.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

from .bus import Bus, Message, Subscription, Timer, to_ms


class LifecycleState(str, enum.Enum):
    UNCONFIGURED = "UNCONFIGURED"
    INACTIVE = "INACTIVE"
    ACTIVE = "ACTIVE"
    FINALIZED = "FINALIZED"


S = LifecycleState
TRANSITIONS = {
    "configure": (S.UNCONFIGURED, S.INACTIVE),
    "activate": (S.INACTIVE, S.ACTIVE),
    "deactivate": (S.ACTIVE, S.INACTIVE),
    "cleanup": (S.INACTIVE, S.UNCONFIGURED),
}


class TransitionError(RuntimeError):
    pass


class AdaptationError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# -- adaptation actions -------------------------------------------------------


@dataclass(frozen=True)
class SetParameter:
    name: str
    value: Any


@dataclass(frozen=True)
class ChangeSubscription:
    from_topic: str
    to_topic: str


@dataclass(frozen=True)
class Activate:
    pass


@dataclass(frozen=True)
class Deactivate:
    pass


@dataclass(frozen=True)
class Redeploy:
    pass


@dataclass(frozen=True)
class Restart:
    """Deactivate, cleanup, configure, activate as one command (after restart_delay)."""


Action = Union[SetParameter, ChangeSubscription, Activate, Deactivate, Redeploy, Restart]
ACTION_TYPES = {cls.__name__: cls for cls in (SetParameter, ChangeSubscription, Activate, Deactivate, Redeploy, Restart)}


def action_args(action: Action) -> dict:
    if isinstance(action, SetParameter):
        return {"name": action.name, "value": action.value}
    if isinstance(action, ChangeSubscription):
        return {"from_topic": action.from_topic, "to_topic": action.to_topic}
    return {}


def make_action(name: str, args: Optional[dict] = None) -> Action:
    try:
        cls = ACTION_TYPES[name]
    except KeyError:
        raise AdaptationError(f"unknown action {name!r}") from None
    return cls(**(args or {}))


@dataclass(frozen=True)
class AdaptationCommand:
    target: str
    action: Action
    issued_at: int  # ms
    issuer: str

    def describe(self) -> dict:
        return {
            "action": type(self.action).__name__,
            "args": action_args(self.action),
            "issuer": self.issuer,
            "issued_at": self.issued_at / 1000.0,
        }


@dataclass(frozen=True)
class AdaptationOutcome:
    status: str  # accepted | rejected | queued | ignored
    reason: Optional[str] = None

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"


ACCEPTED = AdaptationOutcome("accepted")


def rejected(reason: str) -> AdaptationOutcome:
    return AdaptationOutcome("rejected", reason)


@dataclass
class FaultRegister:
    transient: set = field(default_factory=set)
    persistent: set = field(default_factory=set)

    def add(self, fault: str, persistent: bool = False) -> None:
        (self.persistent if persistent else self.transient).add(fault)

    def has(self, fault: str) -> bool:
        return fault in self.transient or fault in self.persistent

    def clear_transient(self) -> set:
        gone, self.transient = self.transient, set()
        return gone

    def __bool__(self) -> bool:
        return bool(self.transient or self.persistent)


# -- node base ------------------------------------------------------------------


class ManagedNode:
    """Base class for every pipeline node.

    Subclasses declare ``default_parameters`` (name -> value; each becomes an
    attribute of the same name) and ``default_subscriptions`` (slot -> topic;
    incoming messages go to ``on_<slot>``).  Timers are created on activate
    and cancelled on deactivate.
    """

    node_id = "node"
    default_parameters: dict = {}
    default_subscriptions: dict = {}

    def __init__(self, bus: Bus, node_id: Optional[str] = None):
        if node_id is not None:
            self.node_id = node_id
        self.bus = bus
        self.log = bus.log
        self.state = LifecycleState.UNCONFIGURED
        self.faults = FaultRegister()
        self.parameters = dict(self.default_parameters)
        for name, value in self.parameters.items():
            setattr(self, name, value)
        self.subscriptions = dict(self.default_subscriptions)
        self._handles: dict[str, Subscription] = {}
        self._timers: list[Timer] = []

    # -- hooks for subclasses
    def on_parameter_set(self, name: str, value, old) -> None:
        pass

    def create_timers(self) -> list[Timer]:
        return []

    def on_activate(self) -> None:
        pass

    def on_deactivate(self) -> None:
        pass

    # -- lifecycle
    @property
    def active(self) -> bool:
        return self.state is LifecycleState.ACTIVE

    def _transition(self, name: str) -> None:
        src, dst = TRANSITIONS[name]
        if self.state is not src:
            raise TransitionError(f"illegal transition: {name} from {self.state.value}")
        self.state = dst
        self.log.append(self.bus.now, "lifecycle", self.node_id, detail={"transition": name, "state": dst.value})

    def configure(self) -> None:
        self._transition("configure")
        for fault in sorted(self.faults.clear_transient()):
            self.log.append(self.bus.now, "fault", self.node_id, detail={"fault": fault, "persistent": False, "op": "cleared"})
        for slot, topic in self.subscriptions.items():
            self._handles[slot] = self.bus.subscribe(self.node_id, topic, self._handler(slot))

    def activate(self) -> None:
        self._transition("activate")
        self._timers = self.create_timers()
        self.on_activate()

    def deactivate(self) -> None:
        self._transition("deactivate")
        for timer in self._timers:
            timer.cancel()
        self._timers = []
        self.on_deactivate()

    def cleanup(self) -> None:
        self._transition("cleanup")
        self._close_subscriptions()

    def shutdown(self) -> None:
        if self.state is LifecycleState.FINALIZED:
            raise TransitionError("illegal transition: shutdown from FINALIZED")
        for timer in self._timers:
            timer.cancel()
        self._timers = []
        self._close_subscriptions()
        self.state = LifecycleState.FINALIZED
        self.log.append(self.bus.now, "lifecycle", self.node_id, detail={"transition": "shutdown", "state": "FINALIZED"})

    def _close_subscriptions(self) -> None:
        for handle in self._handles.values():
            handle.destroy()
        self._handles = {}

    def _handler(self, slot: str) -> Callable[[Message], None]:
        method = getattr(self, f"on_{slot}")

        def handle(msg: Message) -> None:
            if self.active:
                method(msg)

        return handle

    # -- adaptation endpoints
    def set_parameter(self, name: str, value) -> None:
        if name not in self.parameters:
            raise AdaptationError("unknown parameter")
        old = getattr(self, name)
        setattr(self, name, value)
        self.parameters[name] = value
        try:
            self.on_parameter_set(name, value, old)
        except AdaptationError:
            setattr(self, name, old)
            self.parameters[name] = old
            raise

    def change_subscription(self, from_topic: str, to_topic: str, known_topics) -> None:
        if to_topic not in known_topics:
            raise AdaptationError("unknown topic")
        slot = next((s for s, t in self.subscriptions.items() if t == from_topic), None)
        if slot is None:
            raise AdaptationError("unknown topic")
        self.subscriptions[slot] = to_topic
        if slot in self._handles:
            self._handles[slot].destroy()
            self._handles[slot] = self.bus.subscribe(self.node_id, to_topic, self._handler(slot))

    # -- faults and output
    def inject_fault(self, fault: str, persistent: bool) -> None:
        self.faults.add(fault, persistent)
        self.log.append(self.bus.now, "fault", self.node_id, detail={"fault": fault, "persistent": persistent, "op": "set"})

    def publish(self, topic: str, payload, stamp: Optional[int] = None, detail=None) -> Optional[int]:
        # an outage fault silences the node completely
        if self.faults.has("outage"):
            return None
        return self.bus.publish(self.node_id, topic, payload, stamp=stamp, detail=detail)


# -- manager --------------------------------------------------------------------


class LifecycleManager:
    """Owns the node registry and applies adaptation commands on the event loop."""

    def __init__(
        self,
        bus: Bus,
        known_topics=(),
        restart_delay: float = 0.5,
        redeploy_delays: Optional[dict[str, float]] = None,
        default_redeploy_delay: float = 1.0,
    ):
        self.bus = bus
        self.log = bus.log
        self.known_topics = set(known_topics)
        self.restart_delay = restart_delay
        self.redeploy_delays = dict(redeploy_delays or {})
        self.default_redeploy_delay = default_redeploy_delay
        self.nodes: dict[str, ManagedNode] = {}
        self.factories: dict[str, Callable[[], ManagedNode]] = {}
        self._busy: dict[str, str] = {}
        self._queued: dict[str, list[AdaptationCommand]] = {}
        bus.gate = self.is_active

    def redeploy_delay(self, node_id: str) -> float:
        return self.redeploy_delays.get(node_id, self.default_redeploy_delay)

    def add(self, node_id: str, factory: Callable[[], ManagedNode], start: bool = True) -> ManagedNode:
        if node_id in self.nodes:
            raise ConfigError(f"duplicate node {node_id!r}")
        if to_ms(self.redeploy_delay(node_id)) <= to_ms(self.restart_delay):
            raise ConfigError(f"redeploy delay of {node_id} must exceed the restart delay")
        node = factory()
        node.node_id = node_id
        self.factories[node_id] = factory
        self.nodes[node_id] = node
        if start:
            node.configure()
            node.activate()
        return node

    def get(self, node_id: str) -> ManagedNode:
        return self.nodes[node_id]

    def is_active(self, node_id: str) -> bool:
        node = self.nodes.get(node_id)
        return node is None or node.active  # unmanaged publishers (test rigs) pass

    def states(self) -> dict[str, str]:
        return {nid: n.state.value for nid, n in sorted(self.nodes.items())}

    def busy(self, node_id: str) -> Optional[str]:
        return self._busy.get(node_id)

    # -- command intake
    def submit(self, cmd: AdaptationCommand) -> None:
        """Queue ``cmd`` for delivery on the event loop (never applied re-entrantly)."""
        self.bus.schedule_at(max(cmd.issued_at, self.bus.now), "adaptation_delivery", cmd.issuer, lambda: self.apply_adaptation(cmd))

    def apply_adaptation(self, cmd: AdaptationCommand) -> AdaptationOutcome:
        if cmd.target not in self.nodes:
            return self._record(cmd, rejected("unknown node"))
        busy = self._busy.get(cmd.target)
        if busy is not None:
            if busy == "redeploy" and isinstance(cmd.action, Redeploy):
                return self._record(cmd, AdaptationOutcome("ignored", "already redeploying"))
            self._queued.setdefault(cmd.target, []).append(cmd)
            return self._record(cmd, AdaptationOutcome("queued", f"node busy ({busy})"))
        try:
            self._dispatch(cmd)
        except (TransitionError, AdaptationError) as exc:
            reason = str(exc)
            if reason.startswith("illegal transition"):
                reason = "illegal transition"
            return self._record(cmd, rejected(reason))
        return self._record(cmd, ACCEPTED)

    def _record(self, cmd: AdaptationCommand, outcome: AdaptationOutcome) -> AdaptationOutcome:
        detail = cmd.describe()
        detail["outcome"] = outcome.status
        if outcome.reason:
            detail["reason"] = outcome.reason
        self.log.append(self.bus.now, "adaptation", cmd.target, detail=detail)
        return outcome

    def _dispatch(self, cmd: AdaptationCommand) -> None:
        node = self.nodes[cmd.target]
        action = cmd.action
        if isinstance(action, Redeploy):
            self._redeploy(cmd.target)
            return
        if node.state is LifecycleState.FINALIZED:
            raise TransitionError("illegal transition: node finalized")
        if isinstance(action, SetParameter):
            node.set_parameter(action.name, action.value)
        elif isinstance(action, ChangeSubscription):
            node.change_subscription(action.from_topic, action.to_topic, self.known_topics)
        elif isinstance(action, Activate):
            # "adding" a node: bring it to ACTIVE from wherever it rests
            if node.state is LifecycleState.UNCONFIGURED:
                node.configure()
            node.activate()
        elif isinstance(action, Deactivate):
            # "removing" a node: back to UNCONFIGURED so that re-adding reconfigures it
            if node.state is LifecycleState.ACTIVE:
                node.deactivate()
            node.cleanup()
        elif isinstance(action, Restart):
            self._restart(cmd.target)
        else:  # pragma: no cover - exhaustive over Action
            raise AdaptationError(f"unsupported action {action!r}")

    def _restart(self, node_id: str) -> None:
        node = self.nodes[node_id]
        if node.state not in (LifecycleState.ACTIVE, LifecycleState.INACTIVE):
            raise TransitionError("illegal transition: restart needs ACTIVE or INACTIVE")
        if node.state is LifecycleState.ACTIVE:
            node.deactivate()
        node.cleanup()
        self._busy[node_id] = "restart"

        def finish():
            node.configure()
            node.activate()
            self._release(node_id)

        self.bus.schedule(self.restart_delay, "adaptation_delivery", node_id, finish)

    def _redeploy(self, node_id: str) -> None:
        old = self.nodes[node_id]
        if old.state is not LifecycleState.FINALIZED:
            old.shutdown()
        for fault in sorted(old.faults.transient):
            self.log.append(self.bus.now, "fault", node_id, detail={"fault": fault, "persistent": False, "op": "cleared"})
        for fault in sorted(old.faults.persistent):
            self.log.append(self.bus.now, "fault", node_id, detail={"fault": fault, "persistent": True, "op": "cleared"})
        self._busy[node_id] = "redeploy"

        def recreate():
            fresh = self.factories[node_id]()
            fresh.node_id = node_id
            self.nodes[node_id] = fresh
            fresh.configure()
            fresh.activate()
            self.log.append(self.bus.now, "redeployed", node_id, detail={"delay": self.redeploy_delay(node_id)})
            self._release(node_id)

        self.bus.schedule(self.redeploy_delay(node_id), "adaptation_delivery", node_id, recreate)

    def _release(self, node_id: str) -> None:
        del self._busy[node_id]
        queued = self._queued.pop(node_id, [])
        while queued:
            cmd = queued.pop(0)
            self.apply_adaptation(cmd)
            if node_id in self._busy:
                # the replayed command made the node busy again; keep the rest waiting
                self._queued.setdefault(node_id, []).extend(queued)
                break
