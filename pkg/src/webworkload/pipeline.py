"""End-to-end characterization: ingest, aggregate, profile, cluster, fit, associate."""

from __future__ import annotations

import configparser
import glob
import hashlib
import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import plots
from .clustering import DistanceConfig, select_k, write_curve_csv
from .exceptions import NoOverlap, TooFewRows, WorkloadError
from .ingest import SourceDescriptor, read_source
from .patterns import (association_table, fit_centroids, nearest_builtin, size_ranked_names,
                       time_dependence, write_time_dependence_csv)
from .preprocess import DEFAULT_ALPHA, SmoothingConfig, preprocess_matrix
from .stats import profile, write_profiles_csv
from .timeseries import (DAY, HOUR, bin_events, combine, rebin, to_daily_matrix,
                         to_weekly_matrix, write_matrix_csv, write_series_csv)

logger = logging.getLogger(__name__)

BUNDLE_FILES = (
    "matrix_daily.csv",
    "matrix_weekly.csv",
    "profiles.csv",
    "clusters.json",
    "silhouette.csv",
    "fits.json",
    "association.csv",
    "time_dependence.csv",
    "report.md",
    "manifest.json",
)

# Corpus-level figures from a twelve-dataset characterization; shown for
# comparison only, they need data far beyond a desk-scale run.
REFERENCE_TARGETS = {
    "daily_rows": 3191,
    "weekly_rows": 466,
    "daily_cluster_sizes": [2262, 406, 523],
    "weekly_cluster_sizes": [283, 64, 119],
    "dominant_association_cell": {"weekly": "W1", "daily": "D1", "percent": 43.6},
}


@dataclass
class DatasetSpec:
    name: str
    paths: list
    format: str = "clf"
    bucket_width: Optional[int] = None
    timezone_policy: str = "use-offset"

    def descriptor(self, path) -> SourceDescriptor:
        return SourceDescriptor.for_path(path, self.format, self.bucket_width, self.timezone_policy)


@dataclass
class PipelineConfig:
    datasets: list = field(default_factory=list)
    alpha: float = DEFAULT_ALPHA
    smoothing: bool = True
    scope: str = "row"
    metric: str = "euclidean"
    gamma: Optional[float] = None
    k_min: int = 2
    k_max: int = 20
    seeds: int = 10
    output: str = "characterization"
    strict: bool = False
    jobs: int = 1

    def validate(self):
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        if not 2 <= self.k_min <= self.k_max:
            raise ValueError("k range must satisfy 2 <= k_min <= k_max")
        SmoothingConfig(self.alpha)
        DistanceConfig(self.metric, self.gamma if self.metric == "softdtw" else None)
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ValueError("dataset names must be unique")

    def to_dict(self):
        d = asdict(self)
        return d


def _expand(paths):
    out = []
    for p in paths:
        hits = sorted(glob.glob(p))
        out.extend(hits if hits else [p])
    return out


def load_config(path) -> PipelineConfig:
    """Read an INI-style config: a ``[pipeline]`` section and ``[dataset:NAME]`` sections."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    cfg = PipelineConfig()
    if cp.has_section("pipeline"):
        sec = cp["pipeline"]
        cfg.alpha = sec.getfloat("alpha", cfg.alpha)
        cfg.smoothing = sec.getboolean("smoothing", cfg.smoothing)
        cfg.scope = sec.get("scope", cfg.scope)
        cfg.metric = sec.get("metric", cfg.metric)
        cfg.gamma = sec.getfloat("gamma", cfg.gamma) if "gamma" in sec else cfg.gamma
        cfg.k_min = sec.getint("k_min", cfg.k_min)
        cfg.k_max = sec.getint("k_max", cfg.k_max)
        cfg.seeds = sec.getint("seeds", cfg.seeds)
        cfg.output = sec.get("output", cfg.output)
        cfg.strict = sec.getboolean("strict", cfg.strict)
        cfg.jobs = sec.getint("jobs", cfg.jobs)
    base = os.path.dirname(os.path.abspath(path))
    for name in cp.sections():
        if not name.startswith("dataset:"):
            continue
        sec = cp[name]
        paths = [p if os.path.isabs(p) else os.path.join(base, p)
                 for p in sec.get("path", "").split()]
        cfg.datasets.append(DatasetSpec(
            name.split(":", 1)[1], paths, sec.get("format", "clf"),
            sec.getint("bucket_width") if "bucket_width" in sec else None,
            sec.get("timezone_policy", "use-offset")))
    return cfg


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def ingest_dataset(spec: DatasetSpec, strict=False):
    """Read every file of a dataset into one hourly series."""
    stats = {"total": 0, "parsed": 0, "skipped": 0, "malformed": 0}
    records = []
    paths = _expand(spec.paths)
    for p in paths:
        reader = read_source(p, spec.descriptor(p), strict=strict)
        records.extend(reader)
        for k, v in reader.stats.as_dict().items():
            stats[k] += v
    bucket = spec.bucket_width if spec.format == "summary" else None
    ts = bin_events(records, HOUR, bucket_width=bucket, dataset_id=spec.name)
    return ts, stats, {p: sha256_file(p) for p in paths}


class StageFailure(WorkloadError):
    def __init__(self, stage, exc):
        self.stage = stage
        self.cause = exc
        super().__init__(f"stage '{stage}' failed: {exc}")


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def run_characterize(cfg: PipelineConfig) -> dict:
    """Run the whole characterization and write the report bundle.

    Returns the manifest.  On a stage error every file produced so far is
    moved under ``<output>/failed/`` and :class:`StageFailure` is raised.
    """
    cfg.validate()
    out = cfg.output
    os.makedirs(os.path.join(out, "figures"), exist_ok=True)
    manifest = {
        "config": cfg.to_dict(),
        "inputs": {},
        "read_stats": {},
        "stages": {},
        "reference_targets": REFERENCE_TARGETS,
    }
    state = {}

    def stage(name, fn):
        try:
            result = fn()
        except Exception as exc:
            manifest["stages"][name] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
            _quarantine(out)
            _dump_json(manifest, os.path.join(out, "failed", "manifest.json"))
            raise StageFailure(name, exc) from exc
        manifest["stages"].setdefault(name, {"status": "ok"})
        return result

    stage("ingest", lambda: _stage_ingest(cfg, manifest, state))
    stage("aggregate", lambda: _stage_aggregate(cfg, state))
    stage("profile", lambda: _stage_profile(cfg, state))
    stage("preprocess", lambda: _stage_preprocess(cfg, state))
    stage("cluster", lambda: _stage_cluster(cfg, state, manifest))
    stage("fit", lambda: _stage_fit(cfg, state))
    stage("associate", lambda: _stage_associate(cfg, state, manifest))
    stage("time_dependence", lambda: _stage_time(cfg, state))
    stage("report", lambda: _stage_report(cfg, state, manifest))
    _dump_json(manifest, os.path.join(out, "manifest.json"))
    return manifest


def _quarantine(out):
    failed = os.path.join(out, "failed")
    os.makedirs(failed, exist_ok=True)
    for name in os.listdir(out):
        if name == "failed":
            continue
        shutil.move(os.path.join(out, name), os.path.join(failed, name))


def _stage_ingest(cfg, manifest, state):
    if cfg.jobs > 1 and len(cfg.datasets) > 1:
        with ProcessPoolExecutor(cfg.jobs) as ex:
            results = list(ex.map(ingest_dataset, cfg.datasets, [cfg.strict] * len(cfg.datasets)))
    else:
        results = [ingest_dataset(d, cfg.strict) for d in cfg.datasets]
    state["series"] = {}
    for spec, (ts, stats, hashes) in zip(cfg.datasets, results):
        state["series"][spec.name] = ts
        manifest["read_stats"][spec.name] = stats
        manifest["inputs"].update(hashes)
        write_series_csv(ts, os.path.join(cfg.output, f"series_{spec.name}.csv"))


def _stage_aggregate(cfg, state):
    daily, weekly = [], []
    for name, ts in state["series"].items():
        daily.append(to_daily_matrix(ts))
        weekly.append(to_weekly_matrix(rebin(ts, DAY)))
    state["raw"] = {"daily": combine(daily), "weekly": combine(weekly)}
    for gran, m in state["raw"].items():
        write_matrix_csv(m, os.path.join(cfg.output, f"matrix_{gran}.csv"))
    if not len(state["raw"]["daily"]):
        raise TooFewRows("no complete day in any dataset")


def _split(m):
    """Per-dataset sub-matrices of a combined matrix, in dataset order."""
    names = list(dict.fromkeys(m.datasets))
    ds = np.asarray(m.datasets)
    return [(n, m.select(ds == n)) for n in names]


def _stage_profile(cfg, state):
    profiles = {"daily": [], "weekly": []}
    for gran, m in state["raw"].items():
        for name, sub in _split(m):
            profiles[gran].append(profile(sub))
    state["profiles"] = profiles
    write_profiles_csv(profiles["daily"] + profiles["weekly"],
                       os.path.join(cfg.output, "profiles.csv"))
    for gran, profs in profiles.items():
        if profs:
            plots.profile_bars(profs, os.path.join(cfg.output, "figures", f"cv_{gran}.svg"),
                               "cv_mean", f"variability ({gran})")
            plots.profile_bars(profs, os.path.join(cfg.output, "figures", f"burstiness_{gran}.svg"),
                               "burstiness_mean", f"burstiness ({gran})")


def _stage_preprocess(cfg, state):
    smoothing = SmoothingConfig(cfg.alpha, cfg.smoothing)
    state["pre"] = {}
    for gran, m in state["raw"].items():
        parts = []
        for name, sub in _split(m):
            parts.append(preprocess_matrix(sub, smoothing, cfg.scope))
        state["pre"][gran] = combine(parts) if parts else None


def _stage_cluster(cfg, state, manifest):
    dist = DistanceConfig(cfg.metric, cfg.gamma if cfg.metric == "softdtw" else None)
    seeds = list(range(cfg.seeds))
    state["models"], state["names"] = {}, {}
    clusters, curves = {}, []
    for gran in ("daily", "weekly"):
        m = state["pre"].get(gran)
        n_distinct = 0 if m is None else len(np.unique(m.values, axis=0))
        if n_distinct < 3:
            # silhouette needs k >= 2 with at least one non-singleton cluster
            manifest["stages"].setdefault("cluster", {"status": "ok"})
            manifest["stages"]["cluster"][f"{gran}_skipped"] = f"only {n_distinct} distinct rows"
            continue
        k_max = min(cfg.k_max, n_distinct - 1)
        res = select_k(m.values, cfg.k_min, k_max, dist, seeds)
        prefix = "D" if gran == "daily" else "W"
        names = size_ranked_names(res.model, prefix)
        state["models"][gran] = res.model
        state["names"][gran] = names
        d = res.model.to_dict(m.origins, m.datasets)
        d["names"] = {str(j): names[j] for j in range(res.model.k)}
        d["k_best"] = res.k_best
        clusters[gran] = d
        curves += [(gran, k, s, i) for k, s, i in res.curve]
        plots.pca_scatter(m.values, res.model.labels,
                          os.path.join(cfg.output, "figures", f"pca_{gran}.svg"),
                          f"{gran} clusters (k={res.k_best})")
    _dump_json(clusters, os.path.join(cfg.output, "clusters.json"))
    with open(os.path.join(cfg.output, "silhouette.csv"), "w") as fh:
        fh.write("granularity,k,silhouette,inertia\n")
        for gran, k, s, i in curves:
            fh.write(f"{gran},{k},{s!r},{i!r}\n")


def _stage_fit(cfg, state):
    fits = {}
    state["fits"] = {}
    for gran, model in state["models"].items():
        models = fit_centroids(model, gran)
        names = state["names"][gran]
        state["fits"][gran] = models
        fits[gran] = [{"name": names[j], "label": j, "size": int(model.sizes[j]),
                       "nearest_builtin": nearest_builtin(f), **f.to_dict()}
                      for j, f in enumerate(models)]
        plots.centroid_fits(model, models, names, gran,
                            os.path.join(cfg.output, "figures", f"centroids_{gran}.svg"))
    _dump_json(fits, os.path.join(cfg.output, "fits.json"))


def _stage_associate(cfg, state, manifest):
    path = os.path.join(cfg.output, "association.csv")
    state["association"] = None
    if not {"daily", "weekly"} <= set(state["models"]):
        manifest["stages"]["associate"] = {"status": "skipped",
                                           "reason": "needs both daily and weekly clusters"}
        open(path, "w").close()
        return
    d, w = state["pre"]["daily"], state["pre"]["weekly"]
    dm, wm = state["models"]["daily"], state["models"]["weekly"]
    try:
        table = association_table(zip(d.datasets, d.origins, dm.labels.tolist()),
                                  zip(w.datasets, w.origins, wm.labels.tolist()),
                                  state["names"]["daily"], state["names"]["weekly"])
    except NoOverlap as exc:
        manifest["stages"]["associate"] = {"status": "skipped", "reason": str(exc)}
        open(path, "w").close()
        return
    table.write_csv(path)
    state["association"] = table


def _stage_time(cfg, state):
    tables = {}
    for gran, scheme in (("daily", "weekday-weekend"), ("weekly", "season")):
        if gran not in state["models"]:
            continue
        m = state["pre"][gran]
        dist = time_dependence(m.origins, state["models"][gran].labels, scheme,
                               names=state["names"][gran])
        tables[(gran, scheme)] = dist
        plots.time_dependence_bars(dist, os.path.join(cfg.output, "figures",
                                                      f"time_{gran}.svg"),
                                   f"{gran} patterns by {scheme}")
    write_time_dependence_csv(tables, os.path.join(cfg.output, "time_dependence.csv"))


def _stage_report(cfg, state, manifest):
    lines = ["# Workload characterization report", ""]
    raw = state["raw"]
    lines += ["| granularity | rows | reference rows |", "|---|---|---|",
              f"| daily | {len(raw['daily'])} | {REFERENCE_TARGETS['daily_rows']} |",
              f"| weekly | {len(raw['weekly'])} | {REFERENCE_TARGETS['weekly_rows']} |", ""]
    lines.append("## Variability and burstiness (mean of per-row values)")
    lines.append("")
    lines += ["| dataset | granularity | CV | burstiness |", "|---|---|---|---|"]
    for gran, profs in state["profiles"].items():
        for p in profs:
            lines.append(f"| {p.dataset_id} | {gran} | {p.cv_mean:.4f} | {p.burstiness_mean:.4f} |")
    lines.append("")
    for gran, model in state["models"].items():
        names = state["names"][gran]
        ref = REFERENCE_TARGETS[f"{gran}_cluster_sizes"]
        lines.append(f"## {gran.capitalize()} clusters: k = {model.k}, "
                     f"silhouette = {model.silhouette:.4f} (reference sizes {ref})")
        lines.append("")
        for j, f in enumerate(state["fits"][gran]):
            coefs = ", ".join(f"{c:.4f}" for c in f.coefficients)
            lines.append(f"- {names[j]}: {int(model.sizes[j])} rows; fit ({coefs}), "
                         f"rmse {f.rmse:.4f}; closest built-in {nearest_builtin(f)}")
        lines.append("")
    table = state.get("association")
    if table is not None:
        i, j = np.unravel_index(np.argmax(table.percent), table.percent.shape)
        ref = REFERENCE_TARGETS["dominant_association_cell"]
        lines.append(f"Dominant association: {table.rows[i]} x {table.cols[j]} = "
                     f"{table.percent[i, j]:.1f}% (reference {ref['weekly']} x {ref['daily']} "
                     f"= {ref['percent']}%)")
        lines.append("")
    with open(os.path.join(cfg.output, "report.md"), "w") as fh:
        fh.write("\n".join(lines))


def config_from_manifest(path) -> PipelineConfig:
    """Rebuild the configuration recorded in a manifest, checking input hashes."""
    with open(path) as fh:
        man = json.load(fh)
    c = dict(man["config"])
    c["datasets"] = [DatasetSpec(**d) for d in c["datasets"]]
    cfg = PipelineConfig(**c)
    for p, digest in man.get("inputs", {}).items():
        if not os.path.exists(p):
            raise FileNotFoundError(f"input {p} recorded in the manifest is missing")
        if sha256_file(p) != digest:
            raise ValueError(f"input {p} changed since the manifest was written")
    return cfg
