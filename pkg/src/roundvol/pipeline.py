"""Staged pipeline: ingest -> features -> cluster / elbow -> report.

Every stage reads and writes files under ``config.out_dir`` so that the
expensive CSV parse happens once. All documents embed the effective
configuration and the tool version, and contain nothing time- or
host-dependent, so identical inputs give byte-identical outputs.
"""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .clustering import (
    DEFAULT_K,
    DEFAULT_MAX_ITER,
    DEFAULT_RESTARTS,
    DEFAULT_SEED,
    DEFAULT_TOL,
    ElbowResult,
    TooFewPoints,
    assign_behavior_labels,
    elbow_curve,
    fit,
    model_from_dict,
    model_to_dict,
    standardize,
)
from .kinematics import DEFAULT_FRAME_RATE
from .report import (
    FORMATS,
    Report,
    cluster_summary,
    correlation_matrix,
    descriptive_stats,
    dump_json,
    emit,
    scatter_data,
)
from .trajectory_io import (
    LENIENT,
    STRICT,
    TrackMeta,
    VehicleClass,
    filter_by_class,
    join_tracks,
    parse_track_meta,
    parse_tracks,
    split_groups,
)
from .volatility import DEFAULT_MIN_SAMPLES, SHORT_SERIES, extract_features, read_features, write_features

log = logging.getLogger(__name__)

TRACKS_STORE = "tracks.parquet"
META_STORE = "tracks_meta.parquet"
INGEST_REPORT = "ingest_report.json"
FEATURES_FILE = "features.csv"
FEATURES_REPORT = "features_report.json"
MODEL_FILE = "model.json"
ELBOW_FILE = "elbow.json"
MAX_LISTED = 200  # cap on individual errors/warnings listed in reports


class ConfigError(ValueError):
    """Invalid configuration (a usage error)."""


class StageError(RuntimeError):
    """A stage could not run on the data it was given."""


@dataclass
class PipelineConfig:
    tracks_path: str | None = None
    meta_path: str | None = None
    allowed_classes: tuple[str, ...] = ("car", "truck", "bus")
    min_samples: int = DEFAULT_MIN_SAMPLES
    frame_rate: float = DEFAULT_FRAME_RATE
    k: int = DEFAULT_K
    seed: int = DEFAULT_SEED
    restarts: int = DEFAULT_RESTARTS
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL
    standardize: bool = True
    group_by_class: bool = False
    error_policy: str = LENIENT
    out_dir: str = "roundvol-out"
    formats: tuple[str, ...] = FORMATS
    k_min: int = 1
    k_max: int = 10
    jobs: int = field(default=1, metadata={"echo": False})

    def validate(self) -> "PipelineConfig":
        for name in ("min_samples", "k", "restarts", "max_iter", "k_min", "k_max", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.frame_rate > 0:
            raise ConfigError("frame_rate must be > 0")
        if not self.tol >= 0:
            raise ConfigError("tol must be >= 0")
        if self.error_policy not in (STRICT, LENIENT):
            raise ConfigError(f"error_policy must be {STRICT!r} or {LENIENT!r}")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad or not self.formats:
            raise ConfigError(f"formats must be drawn from {FORMATS}")
        known = {c.value for c in VehicleClass}
        unknown = [c for c in self.allowed_classes if c not in known]
        if unknown:
            raise ConfigError(f"unknown vehicle classes {unknown}")
        return self

    def echo(self) -> dict:
        """Configuration as embedded in output documents (worker count omitted:
        it never changes results)."""
        out = {}
        for f in fields(self):
            if f.metadata.get("echo", True):
                v = getattr(self, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @property
    def out(self) -> Path:
        return Path(self.out_dir)


def _header(config: PipelineConfig) -> dict:
    return {"schemaVersion": 1, "toolVersion": __version__, "config": config.echo()}


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _errors_listing(errors):
    return [{"line": e.line, "reason": e.reason} for e in errors[:MAX_LISTED]]


def run_ingest(config: PipelineConfig) -> dict:
    """Parse, validate, class-filter and join; persist the retained tracks."""
    if not config.tracks_path or not config.meta_path:
        raise ConfigError("ingest needs both --tracks and --meta")
    tracks_path = _require(Path(config.tracks_path), "tracks file")
    meta_path = _require(Path(config.meta_path), "meta file")
    parsed = parse_tracks(tracks_path, config.error_policy)
    meta = parse_track_meta(meta_path, config.error_policy)

    kept = filter_by_class(meta.metas, config.allowed_classes)
    kept_keys = {m.key for m in kept}
    dropped_keys = {m.key for m in meta.metas} - kept_keys
    groups = {k: g for k, g in parsed.groups.items() if k not in dropped_keys}
    joined = join_tracks(groups, kept, config.error_policy)

    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    if joined.tracks:
        records = pd.concat([t.records for t in joined.tracks], ignore_index=True)
    else:
        records = pd.DataFrame({c: pd.Series(dtype="float64") for c in ("recordingId", "trackId", "frame")})
    records.to_parquet(out / TRACKS_STORE, index=False)
    metas = [t.meta for t in joined.tracks]
    _metas_frame(metas).to_parquet(out / META_STORE, index=False)

    all_counts = Counter(m.class_name for m in meta.metas)
    kept_counts = Counter(t.meta.class_name for t in joined.tracks)
    warnings = joined.warnings
    doc = {
        **_header(config),
        "tracksFile": {
            "rowsRead": parsed.rows_read,
            "rowsSkipped": parsed.skipped,
            "groups": len(parsed.groups),
            "extraColumns": list(parsed.extra_columns),
            "errors": _errors_listing(parsed.errors),
        },
        "metaFile": {
            "rowsRead": meta.rows_read,
            "rowsSkipped": meta.skipped,
            "errors": _errors_listing(meta.errors),
        },
        "classCounts": dict(sorted(all_counts.items())),
        "classExcludedTracks": len(dropped_keys),
        "retainedTracks": len(joined.tracks),
        "retainedClassCounts": dict(sorted(kept_counts.items())),
        "join": {
            "orphanGroups": len(joined.orphan_groups),
            "orphanMetas": len(joined.orphan_metas),
            "warningCount": len(warnings),
            "warnings": warnings[:MAX_LISTED],
        },
    }
    dump_json(doc, out / INGEST_REPORT)
    return doc


def _metas_frame(metas: list[TrackMeta]) -> pd.DataFrame:
    cols = ["recordingId", "trackId", "initialFrame", "finalFrame", "numFrames", "width", "length", "class"]
    rows = [
        (m.recording_id, m.track_id, m.initial_frame, m.final_frame, m.num_frames, m.width, m.length, m.class_name)
        for m in metas
    ]
    frame = pd.DataFrame(rows, columns=cols)
    return frame.astype({c: "int64" for c in cols[:5]} | {"width": "float64", "length": "float64", "class": "object"})


def load_store(config: PipelineConfig):
    """Tracks persisted by ``run_ingest``."""
    out = config.out
    records = pd.read_parquet(_require(out / TRACKS_STORE, "ingested track store (run `ingest` first)"))
    metas_frame = pd.read_parquet(_require(out / META_STORE, "ingested meta store (run `ingest` first)"))
    cols = [metas_frame[c].tolist() for c in metas_frame.columns]
    metas = [
        TrackMeta(int(rec), int(tid), int(first), int(last), int(n), float(w), float(ln), VehicleClass.parse(c), c)
        for rec, tid, first, last, n, w, ln, c in zip(*cols)
    ]
    return join_tracks(split_groups(records), metas, LENIENT).tracks


def run_features(config: PipelineConfig) -> dict:
    tracks = load_store(config)
    fs = extract_features(tracks, config.min_samples, config.frame_rate, config.jobs)
    write_features(fs.vectors, config.out / FEATURES_FILE)
    incomplete = sum(1 for v in fs.vectors if not v.complete)
    if not fs.vectors:
        log.warning("no track reached %d frames; features file is empty", config.min_samples)
    doc = {
        **_header(config),
        "tracksIn": len(tracks),
        "featureRows": len(fs.vectors),
        "completeRows": len(fs.vectors) - incomplete,
        "excluded": {SHORT_SERIES: fs.excluded.get(SHORT_SERIES, 0)},
        "incompleteRows": incomplete,
        "incompleteFlags": fs.incomplete_counts(),
    }
    dump_json(doc, config.out / FEATURES_REPORT)
    return doc


def _complete_features(config: PipelineConfig):
    vectors = read_features(_require(config.out / FEATURES_FILE, "features file (run `features` first)"))
    return [v for v in vectors if v.complete], len(vectors)


def _groups(config: PipelineConfig, vectors):
    if not config.group_by_class:
        return {"all": vectors}
    out = {}
    for v in vectors:
        out.setdefault(v.vehicle_class, []).append(v)
    return dict(sorted(out.items()))


def run_cluster(config: PipelineConfig) -> dict:
    vectors, _ = _complete_features(config)
    models, notices = {}, []
    for name, group in _groups(config, vectors).items():
        if len(group) < config.k:
            if not config.group_by_class:
                raise TooFewPoints(f"{len(group)} complete feature rows, need at least k={config.k}")
            notices.append(f"group {name!r}: {len(group)} rows < k={config.k}; not clustered")
            continue
        x = np.array([v.dv for v in group])
        model = fit(x, config.k, config.seed, config.restarts, config.max_iter, config.tol,
                    scale=config.standardize, jobs=config.jobs)
        labeling = assign_behavior_labels(model)
        models[name] = model_to_dict(model, labeling, [v.track_key for v in group])
    doc = {
        **_header(config),
        "grouping": "class" if config.group_by_class else "pooled",
        "models": models,
        "notices": notices,
    }
    dump_json(doc, config.out / MODEL_FILE)
    return doc


def run_elbow(config: PipelineConfig, clamp: bool = False) -> dict:
    if config.k_min > config.k_max:
        raise ConfigError(f"k_min={config.k_min} > k_max={config.k_max}")
    vectors, _ = _complete_features(config)
    x = np.array([v.dv for v in vectors]).reshape(len(vectors), -1)
    k_max = min(config.k_max, len(x)) if clamp else config.k_max
    if k_max > len(x) or k_max < config.k_min:
        raise TooFewPoints(f"k range [{config.k_min}, {config.k_max}] not possible with {len(x)} points")
    if config.standardize:
        x, _ = standardize(x)
    result = elbow_curve(x, config.k_min, k_max, config.seed, config.restarts, config.max_iter,
                         config.tol, config.jobs)
    doc = {**_header(config), "rows": [[k, w] for k, w in result.rows()], "knee": result.knee}
    dump_json(doc, config.out / ELBOW_FILE)
    emit(Report(elbow=result), "plotdata", config.out)
    return doc


def _load_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else None


def run_report(config: PipelineConfig) -> Report:
    out = config.out
    all_vectors = read_features(_require(out / FEATURES_FILE, "features file (run `features` first)"))
    complete = [v for v in all_vectors if v.complete]
    report = Report(config=config.echo(), tool_version=__version__)
    report.stats = descriptive_stats(all_vectors)
    report.correlation = correlation_matrix(all_vectors)

    features_doc = _load_json(out / FEATURES_REPORT)
    exclusions = {
        SHORT_SERIES: features_doc["excluded"][SHORT_SERIES] if features_doc else 0,
        "incompleteFeatures": len(all_vectors) - len(complete),
    }
    model_doc = _load_json(out / MODEL_FILE)
    if model_doc is None:
        report.notices.append("no model file; cluster summary skipped")
    else:
        by_key = {v.track_key: v for v in complete}
        report.summaries = {}
        scatters = []
        for name, mdoc in model_doc["models"].items():
            model, labeling, keys = model_from_dict(mdoc)
            missing = [k for k in keys if k not in by_key]
            if missing:
                raise StageError(f"model assigns track {missing[0]} which has no complete feature row")
            rows = [by_key[k] for k in keys]
            report.summaries[name] = cluster_summary(model, labeling, rows, exclusions)
            sc = scatter_data(model, labeling, rows)
            sc.insert(0, "group", name)
            scatters.append(sc)
        if scatters:
            report.scatter = pd.concat(scatters, ignore_index=True)
        report.notices.extend(model_doc.get("notices", []))
    elbow_doc = _load_json(out / ELBOW_FILE)
    if elbow_doc is not None:
        report.elbow = ElbowResult([r[0] for r in elbow_doc["rows"]], [r[1] for r in elbow_doc["rows"]],
                                   elbow_doc["knee"])
    for fmt in config.formats:
        emit(report, fmt, out)
    return report


def run_all(config: PipelineConfig) -> dict[str, float]:
    """Every stage in order; returns wall-clock seconds per stage."""
    stages = (
        ("ingest", run_ingest),
        ("features", run_features),
        ("cluster", run_cluster),
        ("elbow", lambda c: run_elbow(c, clamp=True)),
        ("report", run_report),
    )
    timings = {}
    for name, stage in stages:
        start = time.perf_counter()
        stage(config)
        timings[name] = time.perf_counter() - start
        log.info("%s stage took %.2f s", name, timings[name])
    return timings
