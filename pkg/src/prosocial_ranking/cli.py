"""Command-line entry point.

Every subcommand reads a JSON run config (``--config`` or the
``PROSOCIAL_RANKING_CONFIG`` environment variable). Exit codes: 0 ok,
1 user error (bad config, missing file or column), 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from dataclasses import dataclass, field
from typing import Sequence

import pandas as pd

from .analysis import AnalysisConfig, analyze
from .analysis.demeaning import AbsorptionError
from .analysis.pipeline import SchemaError
from .analysis.twfe import EstimationError
from .assignment import Enrollment, InterventionCalendar, default_calendar
from .feed import ContentItem, ContractViolation, Platform
from .inventory import Inventory, SourceRegistry, default_registry
from .rankers import RankerId
from .scoring import StubBackend
from .serving import RankingService, ServingConfig, WallClock, make_http_server
from .simulator import ConfigError, SimConfig, intervention_metrics, run

log = logging.getLogger("prosocial_ranking")

CONFIG_ENV = "PROSOCIAL_RANKING_CONFIG"
RUN_KEYS = {"seed", "output_dir", "serving", "calendar", "simulator", "analysis", "service"}


class UserError(Exception):
    """Problem with the invocation or its inputs rather than the program."""


@dataclass
class RunConfig:
    seed: int
    output_dir: str = "out"
    serving: ServingConfig = field(default_factory=ServingConfig)
    calendar: InterventionCalendar = field(default_factory=default_calendar)
    simulator: SimConfig = field(default_factory=SimConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    service: dict = field(default_factory=dict)

    @classmethod
    def from_record(cls, rec: dict, base_dir: str = ".") -> "RunConfig":
        unknown = set(rec) - RUN_KEYS
        if unknown:
            raise UserError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in rec:
            raise UserError("config must set 'seed'")
        seed = int(rec["seed"])
        sim = dict(rec.get("simulator", {}))
        sim.setdefault("seed", seed)
        svc = dict(rec.get("service", {}))
        for key in ("registry", "enrollments"):
            if key in svc:
                svc[key] = os.path.join(base_dir, svc[key])
                if not os.path.exists(svc[key]):
                    raise UserError(f"service.{key} file not found: {svc[key]}")
        for key in ("snapshot", "events"):
            if key in svc:
                svc[key] = os.path.join(base_dir, svc[key])
        cal = rec.get("calendar")
        if isinstance(cal, str):
            path = os.path.join(base_dir, cal)
            if not os.path.exists(path):
                raise UserError(f"calendar file not found: {path}")
            calendar = InterventionCalendar.load(path)
        elif cal:
            calendar = InterventionCalendar.from_record(cal)
        else:
            calendar = default_calendar()
        return cls(
            seed=seed,
            output_dir=os.path.join(base_dir, rec.get("output_dir", "out")),
            serving=ServingConfig.from_record(rec.get("serving", {})),
            calendar=calendar,
            simulator=SimConfig.from_record(sim),
            analysis=AnalysisConfig.from_record(rec.get("analysis", {})),
            service=svc,
        )


def load_run_config(path: str | None) -> RunConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        raise UserError(f"no config given; pass --config or set {CONFIG_ENV}")
    if not os.path.exists(path):
        raise UserError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fp:
            rec = json.load(fp)
    except json.JSONDecodeError as exc:
        raise UserError(f"config {path} is not valid JSON: {exc}") from None
    return RunConfig.from_record(rec, os.path.dirname(os.path.abspath(path)))


def _read_csv(path: str | None, what: str) -> pd.DataFrame | None:
    if path is None:
        return None
    if not os.path.exists(path):
        raise UserError(f"{what} file not found: {path}")
    return pd.read_csv(path)


def _read_jsonl(path: str) -> list[dict]:
    if not os.path.exists(path):
        raise UserError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fp:
        return [json.loads(line) for line in fp if line.strip()]


def build_service(cfg: RunConfig, clock=None, snapshot: str | None = None) -> RankingService:
    svc_cfg = cfg.service
    registry = SourceRegistry.load(svc_cfg["registry"]) if "registry" in svc_cfg else default_registry()
    backend = StubBackend(cfg.seed)
    service = RankingService(
        inventory=Inventory(registry, backend),
        backend=backend,
        calendar=cfg.calendar,
        config=cfg.serving,
        clock=clock or WallClock(),
        seed=cfg.seed,
    )
    snap = snapshot or svc_cfg.get("snapshot")
    if snap and os.path.exists(snap):
        service.restore(snap)
    if "enrollments" in svc_cfg:
        for rec in _read_jsonl(svc_cfg["enrollments"]):
            e = Enrollment.from_record(rec)
            if e.user_id not in service.users:
                service.enroll(e, rec.get("profile"))
    return service


# subcommands
def cmd_serve(args, cfg: RunConfig) -> int:
    host = args.host or cfg.service.get("host", "127.0.0.1")
    port = cfg.service.get("port", 8000) if args.port is None else args.port
    events_path = cfg.service.get("events")
    for path in (events_path, cfg.service.get("snapshot")):
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    sink = open(events_path, "a", encoding="utf-8", buffering=1) if events_path else None
    service = build_service(cfg)
    service.event_sink = sink
    service.keep_events = False
    try:
        server = make_http_server(service, host, port)
    except OSError as exc:
        raise UserError(f"cannot listen on {host}:{port}: {exc}") from None
    stop = threading.Event()

    def _shutdown(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, _shutdown)
    signal.signal(signal.SIGINT, _shutdown)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    print(f"listening on {server.server_address[0]}:{server.server_address[1]}", flush=True)
    stop.wait()
    server.shutdown()
    server.server_close()
    snap = cfg.service.get("snapshot")
    if snap:
        service.snapshot(snap)
    if sink:
        sink.close()
    print("stopped", flush=True)
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = args.out or cfg.output_dir
    res = run(cfg.simulator, seed=args.seed, out_dir=out, workers=args.workers, mode=args.mode, calendar=cfg.calendar)
    summary = res.summary()
    arms = [a.value for a in RankerId]
    if "rank_change_by_arm" in summary:
        summary["rank_change_by_arm"] = {a: summary["rank_change_by_arm"].get(a, 0.0) for a in arms}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_ingest(args, cfg: RunConfig) -> int:
    snap = args.snapshot or cfg.service.get("snapshot")
    if not snap:
        raise UserError("ingest needs --snapshot or service.snapshot in the config")
    service = build_service(cfg, snapshot=snap)
    if args.items:
        batch = []
        for rec in _read_jsonl(args.items):
            item = ContentItem.from_record(rec["item"])
            batch.append((item, float(rec.get("scraped_at", item.created_at))))
        now = float(args.now) if args.now is not None else max((t for _, t in batch), default=None)
        report = service.inventory.ingest(batch, RankerId(args.ranker), now)
        print(json.dumps(report.__dict__, sort_keys=True))
    service.snapshot(snap)
    print(json.dumps(service.inventory.stats(), indent=2, sort_keys=True))
    return 0


def cmd_refresh(args, cfg: RunConfig) -> int:
    snap = args.snapshot or cfg.service.get("snapshot")
    if not snap:
        raise UserError("refresh-queues needs --snapshot or service.snapshot in the config")
    service = build_service(cfg, snapshot=snap)
    now_ms = int(args.now * 1000) if args.now is not None else service.clock.now_ms()
    platforms = [Platform(p) for p in args.platform] if args.platform else list(Platform)
    n = service.refresh_queues(now_ms, platforms)
    service.snapshot(snap)
    print(json.dumps({"refreshed": n}))
    return 0


def cmd_analyze(args, cfg: RunConfig) -> int:
    run_dir = args.run_dir or cfg.output_dir
    panel = _read_csv(args.panel or _maybe(run_dir, "panel.csv"), "panel")
    surveys = _read_csv(args.surveys or _maybe(run_dir, "surveys.csv"), "surveys")
    roster = _read_csv(args.roster or _maybe(run_dir, "roster.csv"), "roster")
    if panel is None and surveys is None and roster is None:
        raise UserError("nothing to analyze: give --panel, --surveys or --roster")
    out = args.out or os.path.join(run_dir, "tables")
    res = analyze(panel, surveys, roster, cfg.analysis, out_dir=out, per_arm=not args.pooled_only)
    for name in res.tables:
        print(f"== {name}")
        print(res.text(name))
    return 0


def _maybe(run_dir: str, name: str) -> str | None:
    p = os.path.join(run_dir, name)
    return p if os.path.exists(p) else None


def cmd_metrics(args, cfg: RunConfig) -> int:
    path = args.events or os.path.join(cfg.output_dir, "events.jsonl")
    events = _read_jsonl(path)
    if not events:
        raise UserError(f"event log {path} is empty")
    df = intervention_metrics(events)
    out = args.out or os.path.join(os.path.dirname(path), "metrics.csv")
    df.to_csv(out, index=False, lineterminator="\n", float_format="%.8g")
    print(df.groupby("ranker")[["normalized_rank_change", "added", "removed"]].mean().to_string())
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    run_dir = args.run_dir or cfg.output_dir
    panel = _read_csv(_maybe(run_dir, "panel.csv"), "panel")
    surveys = _read_csv(_maybe(run_dir, "surveys.csv"), "surveys")
    roster = _read_csv(_maybe(run_dir, "roster.csv"), "roster")
    if panel is None:
        raise UserError(f"no panel.csv in {run_dir}; run `simulate` first")
    res = analyze(panel, surveys, roster, cfg.analysis, out_dir=os.path.join(run_dir, "tables"), per_arm=False)
    lines = [f"Run directory: {run_dir}", ""]
    ev_path = os.path.join(run_dir, "events.jsonl")
    if os.path.exists(ev_path) and os.path.getsize(ev_path) > 0:
        m = intervention_metrics(_read_jsonl(ev_path))
        lines += ["Intervention intensity (mean per post request)", m.groupby("ranker")[
            ["normalized_rank_change", "added", "removed"]].mean().round(4).to_string(), ""]
    for name in res.tables:
        lines += [f"[{name}]", res.text(name), ""]
    text = "\n".join(lines)
    with open(os.path.join(run_dir, "report.txt"), "w", encoding="utf-8") as fp:
        fp.write(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prosocial-ranking", description=__doc__.splitlines()[0])
    p.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the ranking HTTP service")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("simulate", help="run the synthetic experiment")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--workers", type=int)
    s.add_argument("--mode", choices=["closed_loop", "panel_only"])
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("ingest", help="add scraped items to the candidate pools")
    s.add_argument("--items", help="JSONL of {item, scraped_at}")
    s.add_argument("--ranker", default=RankerId.ADD_NEWS.value, choices=[r.value for r in RankerId])
    s.add_argument("--snapshot")
    s.add_argument("--now", type=float, help="epoch seconds used for pruning")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("refresh-queues", help="rebuild personal queues in a service snapshot")
    s.add_argument("--snapshot")
    s.add_argument("--now", type=float, help="epoch seconds")
    s.add_argument("--platform", action="append", choices=[x.value for x in Platform])
    s.set_defaults(func=cmd_refresh)

    s = sub.add_parser("analyze", help="estimate treatment effects from CSV inputs")
    s.add_argument("--run-dir")
    s.add_argument("--panel")
    s.add_argument("--surveys")
    s.add_argument("--roster")
    s.add_argument("--out")
    s.add_argument("--pooled-only", action="store_true")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("metrics", help="daily intervention intensity from an event log")
    s.add_argument("--events")
    s.add_argument("--out")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("report", help="analysis tables and metrics for a simulation run")
    s.add_argument("--run-dir")
    s.set_defaults(func=cmd_report)
    return p


USER_ERRORS = (
    UserError, ConfigError, ContractViolation, SchemaError, EstimationError, AbsorptionError,
    FileNotFoundError, json.JSONDecodeError,
)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config)
        return args.func(args, cfg)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (KeyError, ValueError) as exc:
        # malformed records in user-supplied files surface here
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
