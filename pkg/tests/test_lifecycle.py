import pytest

from segadapt.bus import Bus
from segadapt.lifecycle import (
    Activate,
    AdaptationCommand,
    AdaptationError,
    ChangeSubscription,
    ConfigError,
    Deactivate,
    LifecycleManager,
    LifecycleState,
    ManagedNode,
    Redeploy,
    Restart,
    SetParameter,
    TransitionError,
    make_action,
)


class Ticker(ManagedNode):
    node_id = "ticker"
    default_parameters = {"gain": 1.0}
    default_subscriptions = {"inp": "/in"}

    def __init__(self, bus):
        super().__init__(bus)
        self.seen = []

    def create_timers(self):
        return [self.bus.create_timer(self.node_id, 0.1, lambda: self.publish("/out", self.gain))]

    def on_inp(self, msg):
        self.seen.append(msg.payload)

    def on_parameter_set(self, name, value, old):
        if value < 0:
            raise AdaptationError("invalid value")


def manager(**kw):
    bus = Bus()
    m = LifecycleManager(bus, known_topics=("/in", "/other", "/out"), **kw)
    return bus, m


def test_transitions_and_illegal_ones():
    bus = Bus()
    n = Ticker(bus)
    with pytest.raises(TransitionError):
        n.activate()
    n.configure()
    n.activate()
    assert n.state is LifecycleState.ACTIVE
    with pytest.raises(TransitionError):
        n.configure()
    n.deactivate()
    n.cleanup()
    n.shutdown()
    with pytest.raises(TransitionError):
        n.shutdown()


def test_inactive_node_ignores_messages_and_stops_timers():
    bus, m = manager()
    n = m.add("ticker", lambda: Ticker(bus))
    bus.publish("src", "/in", 1)
    bus.run_until(0.25)
    assert n.seen == [1]
    assert len(bus.arrivals("/out")) == 2
    n.deactivate()
    bus.publish("src", "/in", 2)
    bus.run_until(1.0)
    assert n.seen == [1]
    assert len(bus.arrivals("/out")) == 2


def test_set_parameter_reverts_on_error():
    bus = Bus()
    n = Ticker(bus)
    n.set_parameter("gain", 2.0)
    assert n.gain == 2.0
    with pytest.raises(AdaptationError):
        n.set_parameter("gain", -1.0)
    assert n.gain == 2.0 and n.parameters["gain"] == 2.0
    with pytest.raises(AdaptationError, match="unknown parameter"):
        n.set_parameter("nope", 1)


def test_change_subscription_moves_slot():
    bus, m = manager()
    n = m.add("ticker", lambda: Ticker(bus))
    m.apply_adaptation(AdaptationCommand("ticker", ChangeSubscription("/in", "/other"), 0, "t"))
    bus.publish("src", "/in", "old")
    bus.publish("src", "/other", "new")
    bus.run_until(0.01)
    assert n.seen == ["new"]
    out = m.apply_adaptation(AdaptationCommand("ticker", ChangeSubscription("/other", "/nowhere"), 0, "t"))
    assert out.status == "rejected" and out.reason == "unknown topic"


def test_transient_fault_cleared_by_restart_persistent_only_by_redeploy():
    bus, m = manager(restart_delay=0.5, default_redeploy_delay=1.0)
    m.add("ticker", lambda: Ticker(bus))
    m.get("ticker").inject_fault("outage", persistent=False)
    m.submit(AdaptationCommand("ticker", Restart(), 0, "t"))
    bus.run_until(0.6)
    assert not m.get("ticker").faults
    m.get("ticker").inject_fault("outage", persistent=True)
    m.submit(AdaptationCommand("ticker", Restart(), bus.now, "t"))
    bus.run_until(1.5)
    assert m.get("ticker").faults.has("outage")
    old = m.get("ticker")
    m.submit(AdaptationCommand("ticker", Redeploy(), bus.now, "t"))
    bus.run_until(2.0)
    assert m.states()["ticker"] == "FINALIZED"
    bus.run_until(2.6)
    assert m.get("ticker") is not old and not m.get("ticker").faults
    assert m.states()["ticker"] == "ACTIVE"


def test_commands_queue_while_busy_and_second_redeploy_ignored():
    bus, m = manager()
    m.add("ticker", lambda: Ticker(bus))
    m.submit(AdaptationCommand("ticker", Redeploy(), 0, "t"))
    m.submit(AdaptationCommand("ticker", Redeploy(), 0, "t"))
    m.submit(AdaptationCommand("ticker", SetParameter("gain", 3.0), 0, "t"))
    bus.run_until(2.0)
    outcomes = [r["detail"]["outcome"] for r in bus.log.of_kind("adaptation")]
    assert outcomes == ["accepted", "ignored", "queued", "accepted"]
    assert m.get("ticker").gain == 3.0


def test_deactivate_and_activate_commands():
    bus, m = manager()
    m.add("ticker", lambda: Ticker(bus))
    m.apply_adaptation(AdaptationCommand("ticker", Deactivate(), 0, "t"))
    assert m.states()["ticker"] == "UNCONFIGURED"
    m.apply_adaptation(AdaptationCommand("ticker", Activate(), 0, "t"))
    assert m.states()["ticker"] == "ACTIVE"
    assert m.apply_adaptation(AdaptationCommand("ghost", Activate(), 0, "t")).reason == "unknown node"


def test_manager_config_checks_and_make_action():
    bus, m = manager(restart_delay=1.0, default_redeploy_delay=1.0)
    with pytest.raises(ConfigError):
        m.add("ticker", lambda: Ticker(bus))
    with pytest.raises(AdaptationError):
        make_action("Explode")
    assert make_action("SetParameter", {"name": "a", "value": 1}) == SetParameter("a", 1)
