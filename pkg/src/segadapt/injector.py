"""Uncertainty catalog, scheduled injection and the ground-truth resolution check."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .bus import Bus, record_ms, to_ms
from .lifecycle import (
    Activate,
    ChangeSubscription,
    Deactivate,
    LifecycleManager,
    LifecycleState,
    Redeploy,
    Restart,
    SetParameter,
    action_args,
)
from .monitor import CRITICALITY, SYMPTOM_TOPICS, Thresholds
from .pipeline import CAMERA_TOPIC, ENHANCEMENT_TOPIC, World


class InjectionError(ValueError):
    pass


ANY = "*"  # template wildcard for a parameter value


@dataclass(frozen=True)
class CommandTemplate:
    target: str
    action: Any

    def matches(self, target: str, action_name: str, args: dict) -> bool:
        if target != self.target or action_name != type(self.action).__name__:
            return False
        want = action_args(self.action)
        return all(v == ANY or args.get(k) == v or (isinstance(v, tuple) and list(v) == args.get(k)) for k, v in want.items())


@dataclass(frozen=True)
class Uncertainty:
    id: str
    symptom: str
    target: str
    kind: str
    severity: Optional[str] = None
    params: tuple = ()
    # alternative plans; each plan is a tuple of templates that together clear it
    resolving_adaptations: tuple = ()
    description: str = ""

    @property
    def criticality(self) -> str:
        return CRITICALITY[self.symptom]


def _restart_plans(node: str) -> tuple:
    return (
        (CommandTemplate(node, Restart()),),
        (CommandTemplate(node, Deactivate()), CommandTemplate(node, Activate())),
        (CommandTemplate(node, Redeploy()),),
    )


def _outage(uid, symptom, node, severity):
    plans = _restart_plans(node) if severity == "low" else ((CommandTemplate(node, Redeploy()),),)
    return Uncertainty(uid, symptom, node, "outage", severity, (), plans, f"{node} outage ({severity} severity)")


CATALOG: dict[str, Uncertainty] = {
    u.id: u
    for u in (
        _outage("U01", "S1", "camera", "low"),
        _outage("U02", "S1", "camera", "high"),
        _outage("U03", "S2", "fusion", "low"),
        _outage("U04", "S2", "fusion", "high"),
        _outage("U05", "S3", "segmentation", "low"),
        _outage("U06", "S3", "segmentation", "high"),
        Uncertainty(
            "U07", "S4", "camera", "color_shift", None, (("delta", 0.25),),
            ((CommandTemplate("enhancement", Activate()), CommandTemplate("fusion", ChangeSubscription(CAMERA_TOPIC, ENHANCEMENT_TOPIC))),),
            "camera colour shift",
        ),
        Uncertainty(
            "U08", "S4", "enhancement", "enhance_clean", None, (("delta", 0.25),),
            (
                (CommandTemplate("fusion", ChangeSubscription(ENHANCEMENT_TOPIC, CAMERA_TOPIC)),),
                (CommandTemplate("enhancement", SetParameter("delta", 0.0)),),
            ),
            "enhancement applied to clean images",
        ),
        Uncertainty(
            "U09", "S4", "fusion", "misalignment", None, (("shift", (2, 0)),),
            ((CommandTemplate("fusion", SetParameter("recalibrate", True)),),),
            "rgb/depth misalignment in fusion",
        ),
        Uncertainty(
            "U10", "S4", "depth", "depth_noise", None, (("sigma", 0.15),),
            ((CommandTemplate("fusion", SetParameter("modality", "rgb_only")), CommandTemplate("segmentation", SetParameter("modality", "rgb"))),),
            "noisy depth sensor",
        ),
        Uncertainty(
            "U11", "S5", "camera", "defocus", None, (("sigma", 2.0),),
            ((CommandTemplate("camera", SetParameter("focus", ANY)),),),
            "camera defocus blur",
        ),
    )
}


def get_uncertainty(uid: str) -> Uncertainty:
    try:
        return CATALOG[uid]
    except KeyError:
        raise InjectionError(f"unknown uncertainty {uid!r}") from None


def check_exclusive(ids: Iterable[str]) -> None:
    """At most one uncertainty per criticality level."""
    seen: dict[str, str] = {}
    for uid in ids:
        u = get_uncertainty(uid)
        if u.criticality in seen:
            raise InjectionError(f"duplicate criticality {u.criticality}: {seen[u.criticality]} and {uid}")
        seen[u.criticality] = uid


@dataclass(frozen=True)
class InjectionRecord:
    uncertainty: str
    t: int  # ms
    params: tuple


class Injector:
    def __init__(self, bus: Bus, manager: LifecycleManager, world: World, magnitudes: Optional[dict] = None):
        self.bus = bus
        self.manager = manager
        self.world = world
        self.magnitudes = dict(magnitudes or {})
        self.active: dict[str, str] = {}  # criticality -> uncertainty id
        self.records: list[InjectionRecord] = []

    def params_for(self, u: Uncertainty) -> dict:
        params = dict(u.params)
        key = {"color_shift": "color_shift", "enhance_clean": "color_shift", "misalignment": "misalignment",
               "depth_noise": "depth_noise", "defocus": "blur_sigma"}.get(u.kind)
        if key in self.magnitudes:
            name = next(iter(params))
            params[name] = self.magnitudes[key]
        return params

    def schedule(self, uid: str, t_s: float) -> None:
        get_uncertainty(uid)

        def fire():
            try:
                self.inject(uid)
            except InjectionError as exc:
                self.bus.log.append(self.bus.now, "injection_rejected", "injector", detail={"uncertainty": uid, "reason": str(exc)})

        self.bus.schedule_at(to_ms(t_s), "injection", "injector", fire)

    def inject(self, uid: str) -> InjectionRecord:
        u = get_uncertainty(uid)
        if u.criticality in self.active:
            raise InjectionError(f"duplicate criticality {u.criticality}: {self.active[u.criticality]} already active")
        params = self.params_for(u)
        self._apply(u, params)
        self.active[u.criticality] = uid
        rec = InjectionRecord(uid, self.bus.now, tuple(sorted(params.items())))
        self.records.append(rec)
        self.bus.log.append(
            self.bus.now, "injection", u.target,
            detail={"uncertainty": uid, "symptom": u.symptom, "level": u.criticality, "severity": u.severity, "params": params},
        )
        return rec

    def _apply(self, u: Uncertainty, params: dict) -> None:
        w = self.world
        if u.kind == "outage":
            self.manager.get(u.target).inject_fault("outage", persistent=u.severity == "high")
        elif u.kind == "color_shift":
            w.color_shift = float(params["delta"])
        elif u.kind == "enhance_clean":
            # put enhancement into the path first: wrong enhancement presupposes it is in use
            enh = self.manager.get("enhancement")
            enh.set_parameter("delta", float(params["delta"]))
            if enh.state is LifecycleState.UNCONFIGURED:
                enh.configure()
            if enh.state is LifecycleState.INACTIVE:
                enh.activate()
            fusion = self.manager.get("fusion")
            if CAMERA_TOPIC in fusion.subscriptions.values():
                fusion.change_subscription(CAMERA_TOPIC, ENHANCEMENT_TOPIC, self.manager.known_topics)
        elif u.kind == "misalignment":
            w.misalignment = tuple(int(v) for v in params["shift"])
        elif u.kind == "depth_noise":
            w.depth_noise_sigma = float(params["sigma"])
        elif u.kind == "defocus":
            w.defocus_sigma = float(params["sigma"])
        else:  # pragma: no cover
            raise InjectionError(f"no injection for kind {u.kind}")


# -- ground truth -----------------------------------------------------------------


def _nominal(symptom: str, detail: dict, th: Thresholds) -> bool:
    if symptom in SYMPTOM_TOPICS:
        return detail["freq"].get(SYMPTOM_TOPICS[symptom], 0.0) >= th.freq_min
    if symptom == "S4":
        return detail["entropy"] is not None and detail["entropy"] < th.entropy_max
    return detail["sharpness"] is not None and detail["sharpness"] >= th.sharpness_min


def injection_time(uid: str, records: list[dict]) -> Optional[int]:
    for r in records:
        if r["kind"] == "injection" and r["detail"]["uncertainty"] == uid:
            return record_ms(r)
    return None


def executed_adaptations(records: list[dict]) -> list[dict]:
    """Adaptation commands the managed system accepted (the injector's own set-up excluded)."""
    return [r for r in records if r["kind"] == "adaptation" and r["detail"]["outcome"] == "accepted"]


def resolved_check(uid: str, records: list[dict], thresholds: Thresholds = Thresholds(), hold: float = 1.0) -> Optional[int]:
    """Time (ms) at which ``uid`` counts as resolved, or None.

    Resolved means: after an accepted adaptation command issued at or after the
    injection, the symptom signal in the diagnostics stream is nominal and
    stays nominal for at least ``hold`` seconds.
    """
    t0 = injection_time(uid, records)
    if t0 is None:
        return None
    u = get_uncertainty(uid)
    cmds = [record_ms(r) for r in executed_adaptations(records) if record_ms(r) >= t0]
    if not cmds:
        return None
    first_cmd = min(cmds)
    samples = [(record_ms(r), _nominal(u.symptom, r["detail"], thresholds)) for r in records if r["kind"] == "diagnostics"]
    hold_ms = to_ms(hold)
    start = None
    for t, ok in samples:
        if t <= first_cmd:
            continue
        if not ok:
            start = None
            continue
        if start is None:
            start = t
        if t - start >= hold_ms:
            return start
    return None
