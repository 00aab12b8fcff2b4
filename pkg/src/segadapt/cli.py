"""Command-line entry point.

    segadapt run --scenario F --out D [--controller NAME] [--seed N]
    segadapt sweep --reps N --out D
    segadapt metrics --log F --scenario F
    segadapt report --csv F [--plot]
    segadapt calibrate --out F
    segadapt validate --scenario F

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import importlib
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import calibration, managing
from .bus import SimulationError, read_log
from .config import DEFAULTS, Scenario, ScenarioError, dump_scenario, load_scenario, scenario
from .metrics import MetricsError, aggregate_sweep, compute_report
from .runtime import run_scenario, thresholds_of, write_run

log = logging.getLogger("segadapt")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

ERROR_UNCERTAINTIES = ("U01", "U02", "U03", "U04", "U05", "U06")
WARNING_UNCERTAINTIES = ("U07", "U08", "U09", "U10")
OK_UNCERTAINTIES = ("U11",)
INJECTION_TIME = 5.0


class ConfigProblem(Exception):
    pass


# -- sweep ------------------------------------------------------------------------


def combinations() -> list[tuple[str, ...]]:
    """One uncertainty per criticality level: 6 x 4 x 1 = 24 combinations."""
    return list(itertools.product(ERROR_UNCERTAINTIES, WARNING_UNCERTAINTIES, OK_UNCERTAINTIES))


def sweep_plan(reps: int, controllers: Sequence[str] = ("baseline",), base: Optional[dict] = None) -> list[tuple[str, str, dict]]:
    """(group label, run name, scenario overrides) for every run, ordered by seed.

    Runs sharing a seed share rendered frames, so keeping them adjacent lets
    the frame cache do its job.
    """
    if reps < 1:
        raise ConfigProblem("repetitions must be >= 1")
    base = dict(base or {})
    plan = []
    for rep in range(reps):
        seed = base.get("seed", 0) + rep
        common = dict(base, seed=seed, controller="none")
        plan.append(("none-clean", f"clean_s{seed}", dict(common, name="clean", injections=[])))
        # reference row: degradations present for the whole run, nobody adapting
        for w in WARNING_UNCERTAINTIES:
            inj = [{"time": 0.0, "uncertainty": u} for u in (w, *OK_UNCERTAINTIES)]
            plan.append(("none-uncertain", f"{w}_U11_s{seed}", dict(common, name=f"{w}+U11", injections=inj)))
        for ctrl in controllers:
            for combo in combinations():
                inj = [{"time": INJECTION_TIME, "uncertainty": u} for u in combo]
                name = "+".join(combo)
                plan.append((ctrl, f"{'_'.join(combo)}_s{seed}", dict(base, seed=seed, controller=ctrl, name=name, injections=inj)))
    return plan


def _execute(item):
    group, name, over, out_dir, plugins = item
    for mod in plugins:
        importlib.import_module(mod)
    try:
        res = run_scenario(scenario(**over))
        report = res.report()
        if out_dir is not None:
            write_run(res, Path(out_dir) / "runs" / group / name, overwrite=True)
        return group, name, report, None
    except Exception as exc:  # recorded per run, the sweep goes on
        return group, name, None, repr(exc)


def run_sweep(reps: int, out_dir=None, controllers: Sequence[str] = ("baseline",), workers: int = 1,
              plugins: Sequence[str] = (), base: Optional[dict] = None) -> tuple[str, list]:
    """Execute the sweep; returns (summary csv text, failures)."""
    for name in controllers:
        if name not in managing.controller_names():
            raise ConfigProblem(f"unknown controller {name!r}")
    items = [(g, n, o, out_dir, tuple(plugins)) for g, n, o in sweep_plan(reps, controllers, base)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_execute, items, chunksize=max(1, len(items) // (4 * workers))))
    else:
        results = []
        for i, item in enumerate(items, 1):
            results.append(_execute(item))
            log.debug("run %d/%d %s/%s", i, len(items), item[0], item[1])
    groups: dict[str, list] = {}
    failures = []
    for group, name, report, err in results:
        if err is not None:
            failures.append({"group": group, "run": name, "error": err})
            log.warning("run %s/%s failed: %s", group, name, err)
            continue
        groups.setdefault(group, []).append(report)
    order = ["none-clean", "none-uncertain", *controllers]
    text = aggregate_sweep([(g, groups.get(g, []), not g.startswith("none-")) for g in order])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(text, encoding="utf-8")
        (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n", encoding="utf-8")
    return text, failures


# -- plots ------------------------------------------------------------------------


def entropy_trace(records: list[dict]) -> tuple[list[float], list[float]]:
    pts = [(r["detail"]["stamp"], r["detail"]["entropy"]) for r in records
           if r["kind"] == "publish" and r.get("topic") == "/segmentation/output"]
    return [p[0] for p in pts], [p[1] for p in pts]


def plot_entropy(traces: dict[str, tuple], path, threshold: float, title: str = "") -> None:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "segadapt"  # stable ids inside the svg
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for label, (t, e) in traces.items():
        ax.plot(t, e, label=label, linewidth=1.2)
    ax.axhline(threshold, color="k", linestyle="--", linewidth=0.8, label=f"threshold {threshold}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("mean entropy")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, loc="upper left")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_runs(run_root: Path, threshold: float) -> list[Path]:
    written = []
    overlay = {}
    for log_path in sorted(run_root.glob("*/*/events.jsonl")):
        recs = read_log(log_path)
        trace = entropy_trace(recs)
        out = log_path.with_name("entropy.svg")
        plot_entropy({log_path.parent.name: trace}, out, threshold, f"{log_path.parent.parent.name}/{log_path.parent.name}")
        written.append(out)
        group, name = log_path.parent.parent.name, log_path.parent.name
        if group in ("none-clean", "none-uncertain"):
            label = name.rsplit("_s", 1)[0]
            overlay.setdefault(label, trace)
    if overlay:
        out = run_root.parent / "entropy_traces.svg"
        plot_entropy(overlay, out, threshold, "entropy per uncertainty (no controller)")
        written.append(out)
    return written


# -- subcommands ------------------------------------------------------------------


def _load(path, controller=None, seed=None) -> Scenario:
    raw_over = {}
    if controller is not None:
        raw_over["controller"] = controller
    if seed is not None:
        raw_over["seed"] = seed
    sc = load_scenario(path)
    if raw_over:
        from .config import validate_dict

        sc = validate_dict(dict(sc.to_dict(), **raw_over))
    return sc


def cmd_run(args) -> int:
    sc = _load(args.scenario, args.controller, args.seed)
    res = run_scenario(sc)
    log_path, report_path = write_run(res, args.out, overwrite=args.overwrite)
    dump_scenario(sc, str(Path(args.out) / "scenario.yaml"))
    print(report_path.read_text(encoding="utf-8"), end="")
    log.info("wrote %s and %s", log_path, report_path)
    return EXIT_OK


def cmd_sweep(args) -> int:
    out = Path(args.out)
    if (out / "summary.csv").exists() and not args.overwrite:
        raise FileExistsError(f"{out / 'summary.csv'} exists (pass --overwrite to replace it)")
    t0 = time.perf_counter()
    text, failures = run_sweep(args.reps, out, args.controller or ["baseline"], args.workers, args.plugin)
    print(text, end="")
    log.info("sweep finished in %.1f s, %d failed runs", time.perf_counter() - t0, len(failures))
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_metrics(args) -> int:
    sc = load_scenario(args.scenario)
    if not Path(args.log).exists():
        raise ConfigProblem(f"{args.log}: no such file")
    records = read_log(args.log)
    report = compute_report(records, sc.injected, thresholds_of(sc), 1.0 / sc.frame_rate)
    print(report.to_json(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.csv)
    if not path.exists():
        raise ConfigProblem(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    if args.plot:
        written = plot_runs(path.parent / "runs", DEFAULTS["thresholds"]["entropy_max"])
        log.info("wrote %d plots", len(written))
        if not written:
            log.warning("no run logs under %s", path.parent / "runs")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    res = calibration.calibrate(DEFAULTS["magnitudes"])
    print(res.margin_report())
    if not res.feasible:
        log.error("no temperature on the grid separates clean and degraded entropy")
        return EXIT_RUNTIME
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(yaml.safe_dump(res.as_config(), sort_keys=True), encoding="utf-8")
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"{args.scenario}: ok ({sc.name}, controller {sc.controller}, {len(sc.injections)} injections)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="segadapt", description="Self-adaptive segmentation pipeline simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--plugin", action="append", default=[], metavar="MODULE",
                   help="import MODULE first (e.g. one that registers a controller)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute one scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--controller")
    r.add_argument("--seed", type=int)
    r.add_argument("--overwrite", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="all uncertainty combinations x repetitions")
    s.add_argument("--reps", type=int, default=3)
    s.add_argument("--out", required=True)
    s.add_argument("--controller", action="append", help="controller(s) to evaluate (default: baseline)")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--overwrite", action="store_true")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("metrics", help="recompute the report from an event log")
    m.add_argument("--log", required=True)
    m.add_argument("--scenario", required=True)
    m.set_defaults(func=cmd_metrics)

    rp = sub.add_parser("report", help="print a sweep summary, optionally plot entropy traces")
    rp.add_argument("--csv", required=True)
    rp.add_argument("--plot", action="store_true")
    rp.set_defaults(func=cmd_report)

    c = sub.add_parser("calibrate", help="search the model temperature and the blur threshold")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        for mod in args.plugin:
            importlib.import_module(mod)
        return args.func(args)
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigProblem, managing.ControllerError, FileExistsError, ImportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, MetricsError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
