"""Command line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import cuckoo
from .scalability import (
    LOW_COST_RECORD_BYTES,
    LOW_COST_RECORD_BYTES_TEXT,
    ScalabilityInputs,
    download_curve_rows,
    redaction_curve_rows,
    scalability,
    storage_report,
    country_table,
    to_csv,
)
from .wire import Design

log = logging.getLogger("proxtrace")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(text: str, output) -> None:
    if output:
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _flatten(d: dict, prefix="") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list):
            out[key] = ";".join(map(str, v))
        else:
            out[key] = v
    return out


def _kv_csv(metrics: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k, v in sorted(_flatten(metrics).items()):
        w.writerow([k, v])
    return buf.getvalue()


# -- simulate ------------------------------------------------------------------

def _load_scenario(ref: str):
    from .sim import Scenario, load_bundled

    if os.path.exists(ref):
        return Scenario.load(ref)
    return load_bundled(ref)


def cmd_simulate(args) -> int:
    from .sim import run

    sc = _load_scenario(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    if args.design:
        sc = sc.with_design(args.design)
    res = run(sc)
    summary = json.dumps(res.metrics, indent=2, sort_keys=True) + "\n"
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        res.events.write(out / "events.jsonl")
        (out / "metrics.json").write_text(summary)
        (out / "metrics.csv").write_text(_kv_csv(res.metrics))
        batches = [{"region": b.region, "slot": b.slot_id, "design": b.design.value,
                    "publication_time": b.publication_time, "bytes": len(b.to_bytes())} for b in res.batches]
        if batches:
            (out / "batches.csv").write_text(to_csv(batches))
    sys.stdout.write(summary)
    return EXIT_OK


# -- attack --------------------------------------------------------------------

def cmd_attack(args) -> int:
    from .sim import (
        REPLAY_CELLS,
        ChannelModel,
        linkage_scenario,
        random_relay_scenario,
        relay_scenario,
        run,
        run_eavesdrop_experiment,
    )
    from .sim.attacks import run_relay_attack
    from .sharing import SharingParams, tune_threshold

    seed = args.seed or 0
    if args.kind == "relay":
        if args.cell:
            if args.cell not in REPLAY_CELLS:
                raise UsageError(f"--cell must be one of {sorted(REPLAY_CELLS)}")
            cells = [args.cell]
        elif args.matrix:
            cells = list(REPLAY_CELLS)
        else:
            design = args.design or "low_cost"
            out = run_relay_attack(relay_scenario(design, args.delay_h, args.capture_start_h, seed=seed))
            result = {"design": design, "delay_h": args.delay_h,
                      "victims_falsely_matched": out.victims_falsely_matched,
                      "false_matches": out.false_matches, "relayed_receives": out.relayed_receives}
            _emit(json.dumps(result, indent=2) + "\n", args.output)
            return EXIT_OK
        rows = []
        for cell in cells:
            wins = sum(run_relay_attack(random_relay_scenario(cell, seed + i)).succeeded for i in range(args.trials))
            rows.append({"cell": cell, "design": REPLAY_CELLS[cell][0].value, "trials": args.trials,
                         "successes": wins, "success_rate": wins / args.trials})
        _emit(to_csv(rows), args.output)
        return EXIT_OK
    if args.kind == "linkage":
        designs = [Design(args.design)] if args.design else list(Design)
        rows = []
        for d in designs:
            m = run(linkage_scenario(d, seed=seed)).metrics["adversary"]
            rows.append({"design": d.value, "identities": m["identities"], "max_track": m["max_track"],
                         "patient_track": m["per_patient"].get("patient", 0)})
        _emit(to_csv(rows), args.output)
        return EXIT_OK
    channel = ChannelModel()
    if args.k is not None or args.n is not None:
        if args.k is None or args.n is None:
            raise UsageError("give both --k and --n, or neither to tune them")
        params = SharingParams(args.k, args.n)
    else:
        beacons = int(round(args.duration_min * 60 / args.beacon_interval))
        params = tune_threshold(channel.reception_prob(5.0), channel.reception_prob(16.0), beacons)
    res = run_eavesdrop_experiment(args.distance, args.duration_min * 60, params, args.trials,
                                   channel=channel, beacon_interval=args.beacon_interval, seed=seed)
    _emit(json.dumps(res.to_dict(), indent=2) + "\n", args.output)
    return EXIT_OK


# -- scalability / filter-tune --------------------------------------------------

def cmd_scalability(args) -> int:
    if args.table:
        rows = country_table(LOW_COST_RECORD_BYTES_TEXT if args.text_record_size else LOW_COST_RECORD_BYTES)
        _emit(to_csv(rows), args.output)
        return EXIT_OK
    if args.storage is not None:
        try:
            rows = storage_report(args.storage)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        _emit(to_csv(rows), args.output)
        return EXIT_OK
    if args.curve:
        if args.curve == "downloads":
            rows = download_curve_rows()
        else:
            rows = redaction_curve_rows(reduced_hours=args.redacted_hours or 8.0)
        _emit(to_csv(rows), args.output)
        return EXIT_OK
    if args.design is None or args.cases is None:
        raise UsageError("give --design and --cases, or --table, --curve or --storage")
    per_record = args.per_record_bytes
    if args.text_record_size and Design(args.design) is Design.LOW_COST:
        per_record = LOW_COST_RECORD_BYTES_TEXT
    try:
        inp = ScalabilityInputs(args.design, args.cases, args.contagious_days, args.epoch_minutes,
                                args.window_minutes, args.redacted_hours, per_record)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit(json.dumps(scalability(inp), indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_filter_tune(args) -> int:
    queries = args.queries or cuckoo.default_query_volume(args.stored_observations, args.filters_per_day,
                                                          args.horizon_days)
    try:
        t = cuckoo.FilterTuning(args.expected_items, args.fp_target, queries)
        f, buckets, b = cuckoo.tune(t, args.slots)
    except cuckoo.UnreachableTarget as exc:
        sys.stderr.write(f"unreachable: {exc}\n")
        return EXIT_INVALID
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    body = cuckoo.body_len(buckets * b, f)
    report = {
        "fingerprint_bits": f,
        "slots_per_bucket": b,
        "bucket_count": buckets,
        "body_bytes": body,
        "bytes_per_item": body / args.expected_items,
        "fp_bound_per_lookup": cuckoo.fp_bound(f, b),
        "queries": queries,
        "expected_false_positives": cuckoo.fp_bound(f, b) * queries,
    }
    _emit(json.dumps(report, indent=2) + "\n", args.output)
    return EXIT_OK


# -- serve ----------------------------------------------------------------------

def _parse_regions(specs, default_design):
    out = {}
    for spec in specs or ["CH"]:
        name, _, design = spec.partition("=")
        try:
            out[name] = Design(design or default_design)
        except ValueError:
            raise UsageError(f"bad region spec {spec!r}; use NAME or NAME=design") from None
    return out


def cmd_serve(args) -> int:
    from .backend import Backend, Federation
    from .server import BackendServer

    host, _, port = args.listen_address.rpartition(":")
    try:
        port = int(port)
    except ValueError:
        raise UsageError("--listen-address must look like HOST:PORT") from None
    regions = _parse_regions(args.region, args.design)
    try:
        fed = Federation(
            Backend(r, d, slot_minutes=args.slot_minutes, retention_days=args.retention_days,
                    data_dir=args.data_dir, min_service_time=args.min_service_time)
            for r, d in regions.items()
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    server = BackendServer(fed, host or "127.0.0.1", port, tick_seconds=min(1.0, args.slot_minutes * 60 / 4))
    h, p = server.address
    sys.stdout.write(f"serving {', '.join(regions)} on http://{h}:{p}\n")
    sys.stdout.flush()
    server.serve_until_interrupted()
    return EXIT_OK


# -- report -----------------------------------------------------------------------

def cmd_report(args) -> int:
    rows = []
    for ref in args.inputs:
        path = Path(ref)
        if path.is_dir():
            path = path / "metrics.json"
        try:
            metrics = json.loads(path.read_text())
        except FileNotFoundError:
            raise UsageError(f"no metrics file at {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        rows.append({"source": str(ref), **_flatten(metrics)})
    fields = sorted({k for r in rows for k in r if k != "source"})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["source"] + fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    common.add_argument("--config", help="JSON file of option defaults for the subcommand")
    common.add_argument("--output", help="output file (directory for simulate)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="proxtrace", parents=[common],
                                 description="Decentralized proximity tracing toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a scenario file or bundled scenario")
    s.add_argument("scenario", help="path to a scenario JSON file, or a bundled scenario name")
    s.add_argument("--design", choices=[d.value for d in Design], help="switch every agent and region")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("attack", parents=[common], help="run a scripted adversary")
    a.add_argument("kind", choices=["relay", "linkage", "eavesdrop"])
    a.add_argument("--design", choices=[d.value for d in Design])
    a.add_argument("--delay-h", type=float, default=1.0)
    a.add_argument("--capture-start-h", type=float, default=9.0)
    a.add_argument("--cell", help="randomized relay cell, see --matrix")
    a.add_argument("--matrix", action="store_true", help="run every relay cell")
    a.add_argument("--trials", type=int, default=100)
    a.add_argument("--distance", type=float, default=16.0)
    a.add_argument("--duration-min", type=float, default=5.0)
    a.add_argument("--beacon-interval", type=float, default=0.25)
    a.add_argument("--k", type=int)
    a.add_argument("--n", type=int)
    a.set_defaults(func=cmd_attack)

    c = sub.add_parser("scalability", parents=[common], help="daily download size")
    c.add_argument("--design", choices=[d.value for d in Design])
    c.add_argument("--cases", type=int)
    c.add_argument("--contagious-days", type=int, default=5)
    c.add_argument("--epoch-minutes", type=int, default=15)
    c.add_argument("--window-minutes", type=int, default=240)
    c.add_argument("--redacted-hours", type=float, default=0.0)
    c.add_argument("--per-record-bytes", type=int)
    c.add_argument("--text-record-size", action="store_true",
                   help="use 36 bytes per low-cost record instead of 32")
    c.add_argument("--table", action="store_true", help="reproduce the per-country table")
    c.add_argument("--curve", choices=["downloads", "redaction"],
                   help="emit plot data: MB per day against cases, or hybrid windows with redaction")
    c.add_argument("--storage", type=int, metavar="GROUPS", nargs="?", const=140_000,
                   help="report local storage for GROUPS grouped observations (default 140000)")
    c.set_defaults(func=cmd_scalability)

    f = sub.add_parser("filter-tune", parents=[common], help="size a cuckoo filter")
    f.add_argument("--expected-items", type=int, default=480)
    f.add_argument("--fp-target", type=float, default=1e-6,
                   help="tolerated false-positive probability per user over the horizon")
    f.add_argument("--queries", type=int, help="lookups per user over the horizon")
    f.add_argument("--stored-observations", type=int, default=140_000)
    f.add_argument("--filters-per-day", type=int, default=12)
    f.add_argument("--horizon-days", type=int, default=365 * 5)
    f.add_argument("--slots", type=int, default=cuckoo.DEFAULT_SLOTS)
    f.set_defaults(func=cmd_filter_tune)

    v = sub.add_parser("serve", parents=[common], help="run the backend over HTTP")
    v.add_argument("--region", action="append", help="NAME or NAME=design; repeat to federate")
    v.add_argument("--design", default=Design.UNLINKABLE.value, choices=[d.value for d in Design])
    v.add_argument("--slot-minutes", type=float, default=120.0)
    v.add_argument("--retention-days", type=int, default=14)
    v.add_argument("--data-dir")
    v.add_argument("--listen-address", default="127.0.0.1:8080")
    v.add_argument("--min-service-time", type=float, default=0.0)
    v.set_defaults(func=cmd_serve)

    r = sub.add_parser("report", parents=[common], help="tabulate metrics from simulate runs")
    r.add_argument("inputs", nargs="+", help="metrics.json files or simulate output directories")
    r.set_defaults(func=cmd_report)
    return ap


def _apply_config(ap, argv):
    """Re-parse with defaults taken from --config when one is given."""
    args = ap.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{args.config}: expected a JSON object")
    known = set(vars(args))
    for key in cfg:
        if key.replace("-", "_") not in known:
            raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
    sub = ap._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return ap.parse_args(argv)


def main(argv=None) -> int:
    from .sim.scenario import ScenarioError

    ap = build_parser()
    try:
        args = _apply_config(ap, argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ScenarioError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # report, don't dump a traceback at the operator
        log.debug("failure", exc_info=True)
        sys.stderr.write(f"runtime error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
