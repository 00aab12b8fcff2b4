"""Assembles one simulation run from a scenario and executes it."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import managing
from .bus import Bus, EventLog, Message, to_ms
from .config import Scenario
from .injector import Injector
from .lifecycle import AdaptationCommand, LifecycleManager, make_action
from .managing import ControllerSettings
from .metrics import MetricsReport, compute_iou, compute_report
from .monitor import MonitorNode, Thresholds
from .pipeline import (
    DIAGNOSTICS_TOPIC,
    SEGMENTATION_TOPIC,
    TOPICS,
    CameraNode,
    DepthNode,
    EnhancementNode,
    FusionNode,
    SegmentationNode,
    World,
)
from .scene import SceneSpec, generate_frame


def thresholds_of(sc: Scenario) -> Thresholds:
    return Thresholds(**sc.thresholds)


def settings_of(sc: Scenario) -> ControllerSettings:
    d = sc.delays
    return ControllerSettings(
        thresholds=thresholds_of(sc),
        redeploy_delays=tuple(sorted(d["redeploy"].items())),
        default_redeploy_delay=d["redeploy_default"],
        recalibration_cooldown=d["recalibration_cooldown"],
    )


@dataclass
class RunResult:
    scenario: Scenario
    log: EventLog
    events: int

    def report(self) -> MetricsReport:
        return compute_report(self.log.records, self.scenario.injected, thresholds_of(self.scenario), 1.0 / self.scenario.frame_rate)


class Simulation:
    def __init__(self, sc: Scenario, controller: Optional[managing.ManagingSystem] = None):
        self.scenario = sc
        self.log = EventLog()
        self.controller = controller or managing.create_controller(sc.controller, settings_of(sc))
        self.log.append(0, "run_start", "runtime", detail={
            "name": sc.name, "seed": sc.seed, "controller": getattr(self.controller, "name", sc.controller),
            "duration": sc.duration, "injections": sc.injections,
        })
        self.bus = Bus(self.log, latency=sc.latency)
        self.world = World()
        sp = sc.scene
        self.spec = SceneSpec(sp["width"], sp["height"], sp["num_classes"], sc.seed, sp["pixel_noise_sigma"])
        self.spec.validate()
        d = sc.delays
        self.manager = LifecycleManager(
            self.bus, TOPICS, restart_delay=d["restart"], redeploy_delays=d["redeploy"], default_redeploy_delay=d["redeploy_default"]
        )
        rate = sc.frame_rate
        bus, world, spec = self.bus, self.world, self.spec
        tau = sc.model["temperature"]
        m = self.manager
        m.add("camera", lambda: CameraNode(bus, world, spec, frame_rate=rate))
        m.add("depth", lambda: DepthNode(bus, world, spec, frame_rate=rate))
        m.add("enhancement", lambda: EnhancementNode(bus), start=False)
        m.add("fusion", lambda: FusionNode(bus, world, tolerance=0.5 / rate))
        m.add("segmentation", lambda: SegmentationNode(bus, num_classes=spec.num_classes, temperature=tau))

        self.monitor = MonitorNode(bus, m.states, thresholds_of(sc), **sc.monitor)
        self.monitor.configure()
        self.monitor.activate()

        bus.subscribe("managing", DIAGNOSTICS_TOPIC, self._on_diagnostics)
        bus.subscribe("evaluator", SEGMENTATION_TOPIC, self._on_segmentation)

        self.injector = Injector(bus, m, world, sc.magnitudes)
        for inj in sc.injections:
            self.injector.schedule(inj["uncertainty"], inj["time"])
        for sa in sc.scripted_adaptations:
            cmd = AdaptationCommand(sa["target"], make_action(sa["action"], sa.get("args")), to_ms(sa["time_s"]), "script")
            m.submit(cmd)

    def _on_diagnostics(self, msg: Message) -> None:
        status = msg.payload
        for cmd in self.controller.step(status.snapshot) or ():
            if not isinstance(cmd, AdaptationCommand):
                raise TypeError(f"controller returned {type(cmd).__name__}, expected AdaptationCommand")
            self.manager.submit(cmd)

    def _on_segmentation(self, msg: Message) -> None:
        result = msg.payload
        gt = generate_frame(result.stamp, self.spec).labels
        _, miou = compute_iou(result.labels, gt, self.spec.num_classes)
        self.log.append(self.bus.now, "iou", "evaluator", detail={"stamp": result.stamp / 1000.0, "iou": miou})

    def run(self) -> RunResult:
        sc = self.scenario
        n = self.bus.run_until(sc.duration)
        self.log.append(self.bus.now, "run_end", "runtime", detail={"events": n})
        return RunResult(sc, self.log, n)


def run_scenario(sc: Scenario, controller: Optional[managing.ManagingSystem] = None) -> RunResult:
    return Simulation(sc, controller).run()


def write_run(result: RunResult, out_dir, overwrite: bool = False) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path, report_path = out / "events.jsonl", out / "report.json"
    for p in (log_path, report_path):
        if p.exists() and not overwrite:
            raise FileExistsError(f"{p} exists (pass --overwrite to replace it)")
    result.log.write(log_path)
    report_path.write_text(result.report().to_json(), encoding="utf-8")
    return log_path, report_path
