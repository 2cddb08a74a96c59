"""Command-line entry point: ``webworkload <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import date

import numpy as np

from . import plots
from .clustering import ClusterModel, DistanceConfig
from .exceptions import WorkloadError
from .ingest import fetch_wikimedia
from .patterns import PatternLibrary, fit_polynomial, DAILY_GRID, WEEKLY_GRID
from .pipeline import (BUNDLE_FILES, DatasetSpec, PipelineConfig, config_from_manifest,
                       ingest_dataset, load_config, run_characterize)
from .preprocess import DEFAULT_ALPHA
from .replay import DEFAULT_MAX_IN_FLIGHT, ClfTemplate, replay, write_clf
from .stats import profile, write_profiles_csv
from .synth import DAY, HOUR, GenConfig, Schedule, compose, emit_events, rate_schedule
from .timeseries import (DAY as DAY_S, read_matrix_csv, read_series_csv, rebin, to_daily_matrix,
                         to_weekly_matrix, write_matrix_csv, write_series_csv)

logger = logging.getLogger("webworkload")

CACHE_ENV = "WEBWORKLOAD_CACHE"


def _dataset_args(values, fmt, bucket_width, tz):
    specs = []
    for v in values:
        name, _, path = v.partition("=")
        if not path:
            name, path = os.path.splitext(os.path.basename(v))[0].split(".")[0], v
        specs.append(DatasetSpec(name, [path], fmt, bucket_width, tz))
    return specs


def cmd_fetch(args):
    cache = args.cache or os.environ.get(CACHE_ENV) or os.path.expanduser("~/.cache/webworkload")
    paths = fetch_wikimedia(args.project, date.fromisoformat(args.start),
                            date.fromisoformat(args.end), cache)
    for p in paths:
        print(p)
    return 0


def cmd_ingest(args):
    specs = _dataset_args(args.inputs, args.format, args.bucket_width, args.timezone)
    os.makedirs(args.out, exist_ok=True)
    summary = {}
    for spec in specs:
        ts, stats, _ = ingest_dataset(spec, strict=args.strict)
        write_series_csv(ts, os.path.join(args.out, f"series_{spec.name}.csv"))
        summary[spec.name] = {**stats, "bins": len(ts), "gaps": len(ts.gaps)}
    json.dump(summary, sys.stdout, indent=2)
    print()
    return 0


def cmd_aggregate(args):
    os.makedirs(args.out, exist_ok=True)
    for path in args.series:
        ts = read_series_csv(path)
        if ts.bin_width == HOUR:
            d = to_daily_matrix(ts)
            write_matrix_csv(d, os.path.join(args.out, f"matrix_daily_{ts.dataset_id}.csv"))
            daily_ts = rebin(ts, DAY_S)
        else:
            daily_ts = ts
        w = to_weekly_matrix(daily_ts)
        write_matrix_csv(w, os.path.join(args.out, f"matrix_weekly_{ts.dataset_id}.csv"))
        print(f"{ts.dataset_id}: {len(d) if ts.bin_width == HOUR else 0} daily rows, "
              f"{len(w)} weekly rows")
    return 0


def cmd_profile(args):
    profs = []
    for path in args.matrices:
        m = read_matrix_csv(path)
        ds = np.asarray(m.datasets)
        for name in dict.fromkeys(m.datasets):
            profs.append(profile(m.select(ds == name), mode=args.mode))
    write_profiles_csv(profs, args.out)
    if args.svg:
        base = os.path.splitext(args.out)[0]
        plots.profile_bars(profs, base + "_cv.svg", "cv_mean")
        plots.profile_bars(profs, base + "_burstiness.svg", "burstiness_mean")
    for p in profs:
        print(f"{p.dataset_id} {p.granularity}: cv={p.cv_mean:.4f} burstiness={p.burstiness_mean:.4f}")
    return 0


def cmd_characterize(args):
    if args.manifest:
        cfg = config_from_manifest(args.manifest)
    elif args.config:
        cfg = load_config(args.config)
    else:
        cfg = PipelineConfig()
    if args.dataset:
        cfg.datasets = _dataset_args(args.dataset, args.format, args.bucket_width, args.timezone)
    for name in ("alpha", "metric", "gamma", "k_min", "k_max", "seeds", "output", "jobs", "scope"):
        val = getattr(args, name)
        if val is not None:
            setattr(cfg, name, val)
    if args.strict:
        cfg.strict = True
    if args.no_smoothing:
        cfg.smoothing = False
    manifest = run_characterize(cfg)
    missing = [f for f in BUNDLE_FILES if not os.path.exists(os.path.join(cfg.output, f))]
    for st, info in manifest["stages"].items():
        print(f"{st:16s} {info['status']}")
    if missing:
        print(f"missing outputs: {missing}", file=sys.stderr)
        return 1
    return 0


def cmd_fit(args):
    if args.model:
        with open(args.model) as fh:
            bundle = json.load(fh)
        out = {}
        for gran, d in bundle.items():
            degree, grid = (3, DAILY_GRID) if gran == "daily" else (2, WEEKLY_GRID)
            out[gran] = [fit_polynomial(np.array(c), degree, grid).to_dict()
                         for c in d["centroids"]]
    else:
        y = np.array([float(x) for x in args.values.split(",")])
        if args.t:
            t = np.array([float(x) for x in args.t.split(",")])
        else:
            t = DAILY_GRID[: len(y)] if args.degree == 3 else WEEKLY_GRID[: len(y)]
        out = fit_polynomial(y, args.degree, t).to_dict()
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_generate(args):
    lib = PatternLibrary()
    if args.library:
        lib.load_json(args.library)
    if args.list_patterns:
        for e in lib.to_list():
            coefs = ", ".join(f"{c:g}" for c in e["coefficients"])
            print(f"{e['name']}: degree {e['degree']} ({coefs})  {e['description']}")
        return 0
    cfg = GenConfig(args.pattern or args.daily or "D1", args.mean, args.std,
                    duration=int(round(args.days * DAY)), resolution=args.resolution,
                    noise=args.noise, burstiness_target=args.burstiness, seed=args.seed,
                    start=args.start)
    if args.weekly:
        sched = compose(args.weekly, args.daily or "D1", cfg, args.weekly_modulation, lib)
    else:
        sched = rate_schedule(cfg, lib)
    if args.out:
        if args.out.endswith(".json"):
            sched.write_json(args.out)
        else:
            sched.write_csv(args.out)
    else:
        sys.stdout.write("interval_start,rate\n")
        for s, r in sched.entries:
            sys.stdout.write(f"{s},{r!r}\n")
    if args.events or args.clf:
        ev = emit_events(sched, args.seed, args.noise)
        if args.events:
            np.savetxt(args.events, ev, fmt="%.6f")
        if args.clf:
            write_clf(ev, args.clf, ClfTemplate(path=args.clf_path))
        print(f"{len(ev)} events", file=sys.stderr)
    if sched.metadata.get("clipped_fraction"):
        print(f"warning: {100 * sched.metadata['clipped_fraction']:.1f}% of intervals clipped",
              file=sys.stderr)
    return 0


def _load_events(args):
    if args.events:
        ev = np.loadtxt(args.events, ndmin=1)
    else:
        sched = (Schedule.read_json(args.schedule) if args.schedule.endswith(".json")
                 else Schedule.read_csv(args.schedule))
        ev = emit_events(sched, args.seed, args.noise)
    return np.sort(ev)


def cmd_replay(args):
    ev = _load_events(args)
    report = replay(ev, args.target, args.max_in_flight, args.time_scale, args.dry_run,
                    args.interval)
    d = report.to_dict()
    if args.report:
        report.write_json(args.report)
    print(json.dumps({"totals": d["totals"], "feasible": d["feasible"],
                      "peak_rate": d["peak_rate"], "max_lag": d["max_lag"]}, indent=2))
    return 0


def cmd_report(args):
    path = os.path.join(args.bundle, "report.md")
    man_path = os.path.join(args.bundle, "manifest.json")
    if not os.path.exists(man_path):
        print(f"{args.bundle}: no manifest.json", file=sys.stderr)
        return 1
    with open(man_path) as fh:
        man = json.load(fh)
    for st, info in man["stages"].items():
        print(f"{st:16s} {info['status']}")
    missing = [f for f in BUNDLE_FILES if not os.path.exists(os.path.join(args.bundle, f))]
    print(f"artifacts: {len(BUNDLE_FILES) - len(missing)}/{len(BUNDLE_FILES)} present")
    if os.path.exists(path):
        with open(path) as fh:
            print(fh.read())
    return 1 if missing else 0


def build_parser():
    p = argparse.ArgumentParser(prog="webworkload",
                                description="Characterize and synthesize web application workloads.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def source_opts(sp):
        sp.add_argument("--format", choices=["clf", "summary"], default="clf")
        sp.add_argument("--bucket-width", type=int, default=None,
                        help="summary bucket width in seconds (default 3600)")
        sp.add_argument("--timezone", choices=["use-offset", "assume-utc"], default="use-offset")

    sp = sub.add_parser("fetch", help="download hourly Wikimedia pageview aggregates")
    sp.add_argument("--project", required=True)
    sp.add_argument("--start", required=True, help="YYYY-MM-DD")
    sp.add_argument("--end", required=True, help="YYYY-MM-DD (inclusive)")
    sp.add_argument("--cache", help=f"cache directory (default ${CACHE_ENV})")
    sp.set_defaults(func=cmd_fetch)

    sp = sub.add_parser("ingest", help="parse logs into hourly series CSVs")
    sp.add_argument("inputs", nargs="+", help="PATH or NAME=PATH (globs allowed)")
    sp.add_argument("--out", default=".")
    sp.add_argument("--strict", action="store_true")
    source_opts(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("aggregate", help="reshape hourly series into daily/weekly matrices")
    sp.add_argument("series", nargs="+")
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=cmd_aggregate)

    sp = sub.add_parser("profile", help="variability and burstiness of raw matrices")
    sp.add_argument("matrices", nargs="+")
    sp.add_argument("--out", default="profiles.csv")
    sp.add_argument("--mode", choices=["row-mean", "series"], default="row-mean")
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("characterize", help="run the full characterization pipeline")
    sp.add_argument("--config", help="INI config file")
    sp.add_argument("--manifest", help="rerun exactly from a previous manifest.json")
    sp.add_argument("--dataset", action="append", help="NAME=PATH, repeatable")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--no-smoothing", action="store_true")
    sp.add_argument("--scope", choices=["row", "dataset"])
    sp.add_argument("--metric", choices=["euclidean", "dtw", "softdtw"])
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--k-min", type=int)
    sp.add_argument("--k-max", type=int)
    sp.add_argument("--seeds", type=int)
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--output")
    sp.add_argument("--strict", action="store_true")
    source_opts(sp)
    sp.set_defaults(func=cmd_characterize)

    sp = sub.add_parser("fit", help="fit quadratic/cubic polynomials")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="clusters.json from characterize")
    src.add_argument("--values", help="comma-separated y values")
    sp.add_argument("--t", help="comma-separated t values")
    sp.add_argument("--degree", type=int, choices=[2, 3], default=3)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("generate", help="synthesize a rate schedule and events from patterns")
    sp.add_argument("--list-patterns", action="store_true")
    sp.add_argument("--library", help="extra patterns JSON")
    sp.add_argument("--pattern")
    sp.add_argument("--weekly", help="weekly pattern to compose with --daily")
    sp.add_argument("--daily")
    sp.add_argument("--weekly-modulation", type=float, default=0.2)
    sp.add_argument("--mean", type=float, default=1000.0, help="mean rate, requests/hour")
    sp.add_argument("--std", type=float, default=300.0, help="rate deviation, requests/hour")
    sp.add_argument("--days", type=float, default=7.0)
    sp.add_argument("--resolution", type=int, default=HOUR, help="seconds")
    sp.add_argument("--noise", choices=["none", "poisson"], default="poisson")
    sp.add_argument("--burstiness", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--start", type=int, default=GenConfig.start, help="epoch seconds")
    sp.add_argument("--out", help="schedule file (.csv or .json); stdout if omitted")
    sp.add_argument("--events", help="write event timestamps, one per line")
    sp.add_argument("--clf", help="write events as a CLF trace")
    sp.add_argument("--clf-path", default="/index.html")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("replay", help="open-loop replay against an HTTP target")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--events")
    src.add_argument("--schedule")
    sp.add_argument("--target")
    sp.add_argument("--max-in-flight", type=int, default=DEFAULT_MAX_IN_FLIGHT)
    sp.add_argument("--time-scale", type=float, default=1.0)
    sp.add_argument("--dry-run", action="store_true")
    sp.add_argument("--interval", type=float, default=1.0)
    sp.add_argument("--noise", choices=["none", "poisson"], default="poisson")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--report", help="write the report JSON here")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("report", help="summarize a characterization bundle")
    sp.add_argument("bundle")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "replay" and not args.dry_run and not args.target:
        print("replay: --target is required unless --dry-run is given", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (WorkloadError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
