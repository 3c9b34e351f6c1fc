"""Descriptive statistics, correlations, cluster summaries and their output files.

Two standard-deviation conventions coexist on purpose: the DV measures use
divisor N, while the descriptive table below uses divisor N-1 like any
conventional summary table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .clustering import BEHAVIORS, BehaviorLabeling, ClusterModel, ElbowResult
from .volatility import DV_NAMES, FeatureVector, quantile

SCHEMA_VERSION = 1
STATS_COLUMNS = ("count", "mean", "std", "min", "p25", "p50", "p75", "max")
FORMATS = ("json", "csv", "plotdata")
REPORT_CLASSES = ("car", "truck", "bus")


class InsufficientData(ValueError):
    def __init__(self, measure: str, count: int):
        super().__init__(f"{measure}: need at least 2 values, have {count}")
        self.measure = measure


def _dv_frame(features) -> pd.DataFrame:
    if isinstance(features, pd.DataFrame):
        return features[[c for c in DV_NAMES if c in features.columns]]
    rows = [v.dv for v in features]
    return pd.DataFrame(np.array(rows, dtype=np.float64).reshape(len(rows), len(DV_NAMES)), columns=list(DV_NAMES))


def descriptive_stats(features) -> pd.DataFrame:
    """count/mean/std/min/quartiles/max per measure over its non-absent values."""
    frame = _dv_frame(features)
    rows = {}
    for name in frame.columns:
        x = frame[name].to_numpy(dtype=np.float64)
        x = x[np.isfinite(x)]
        if len(x) < 2:
            raise InsufficientData(name, len(x))
        m = x.mean()
        rows[name] = (
            len(x),
            float(m),
            float(np.sqrt(((x - m) ** 2).sum() / (len(x) - 1))),
            float(x.min()),
            quantile(x, 0.25),
            quantile(x, 0.5),
            quantile(x, 0.75),
            float(x.max()),
        )
    table = pd.DataFrame.from_dict(rows, orient="index", columns=list(STATS_COLUMNS))
    table.index.name = "measure"
    return table.astype({"count": "int64"})


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    ok = np.isfinite(a) & np.isfinite(b)
    a, b = a[ok], b[ok]
    if len(a) < 2:
        return math.nan
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
    if sa == 0 or sb == 0:
        return math.nan
    return float(np.clip((da * db).sum() / (sa * sb), -1.0, 1.0))


def correlation_matrix(features) -> pd.DataFrame:
    """Pearson correlations over pairwise-complete values; NaN where undefined."""
    frame = _dv_frame(features)
    cols = list(frame.columns)
    data = {c: frame[c].to_numpy(dtype=np.float64) for c in cols}
    out = np.full((len(cols), len(cols)), np.nan)
    for i, a in enumerate(cols):
        out[i, i] = math.nan if math.isnan(_pearson(data[a], data[a])) else 1.0
        for j in range(i + 1, len(cols)):
            out[i, j] = out[j, i] = _pearson(data[a], data[cols[j]])
    return pd.DataFrame(out, index=pd.Index(cols, name="measure"), columns=cols)


def _zero_counts(labels) -> dict[str, int]:
    return {lab: 0 for lab in labels}


def empty_summary(labels=BEHAVIORS) -> dict:
    return {
        "clusteredTracks": 0,
        "behaviorCounts": _zero_counts(labels),
        "proportions": {lab: 0.0 for lab in labels},
        "byClass": {c: _zero_counts(labels) for c in REPORT_CLASSES},
        "classTotals": {c: 0 for c in REPORT_CLASSES},
        "centroids": [],
        "clusterMeans": [],
        "exclusions": {},
    }


def cluster_summary(model: ClusterModel, labeling: BehaviorLabeling, features: list[FeatureVector],
                    exclusions: dict | None = None) -> dict:
    """Counts per behaviour (overall and per vehicle class), centroids in
    original DV units and per-cluster DV means.

    ``features`` must be the rows the model was fitted on, in the same order.
    """
    if len(features) != len(model.labels):
        raise ValueError("features do not match the fitted model")
    names = [labeling.cluster_to_label[j] for j in range(model.k)]
    doc = empty_summary(names)
    doc["exclusions"] = dict(exclusions or {})
    n = len(features)
    doc["clusteredTracks"] = n
    for v, j in zip(features, model.labels):
        lab = names[int(j)]
        doc["behaviorCounts"][lab] += 1
        by = doc["byClass"].setdefault(v.vehicle_class, _zero_counts(names))
        by[lab] += 1
        doc["classTotals"][v.vehicle_class] = doc["classTotals"].get(v.vehicle_class, 0) + 1
    doc["proportions"] = {lab: (c / n if n else 0.0) for lab, c in doc["behaviorCounts"].items()}
    centres = model.centroids_original
    dv = np.array([v.dv for v in features], dtype=np.float64).reshape(n, -1)
    for j in range(model.k):
        members = dv[model.labels == j]
        doc["centroids"].append({"cluster": j, "label": names[j], **dict(zip(DV_NAMES, map(float, centres[j])))})
        means = members.mean(axis=0) if len(members) else np.full(len(DV_NAMES), np.nan)
        doc["clusterMeans"].append(
            {"cluster": j, "label": names[j], "size": int(len(members)), **dict(zip(DV_NAMES, map(float, means)))}
        )
    return doc


def scatter_data(model: ClusterModel, labeling: BehaviorLabeling, features: list[FeatureVector]) -> pd.DataFrame:
    rows = [
        (int(j), labeling.label(j), float(v.dv[0]), float(v.dv[1]))
        for v, j in zip(features, model.labels)
    ]
    return pd.DataFrame(rows, columns=["cluster", "label", "DV1", "DV2"])


@dataclass
class Report:
    config: dict = field(default_factory=dict)
    tool_version: str = ""
    stats: pd.DataFrame | None = None
    correlation: pd.DataFrame | None = None
    summaries: dict[str, dict] | None = None  # group name -> cluster_summary
    elbow: ElbowResult | None = None
    scatter: pd.DataFrame | None = None
    notices: list[str] = field(default_factory=list)


def _clean(obj):
    """Make a structure JSON-safe: NaN/inf -> None, numpy scalars -> python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dump_json(doc, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def report_document(report: Report) -> dict:
    doc = {"schemaVersion": SCHEMA_VERSION, "toolVersion": report.tool_version, "config": report.config}
    if report.stats is not None:
        doc["descriptiveStats"] = {m: row for m, row in report.stats.to_dict(orient="index").items()}
    if report.correlation is not None:
        doc["correlation"] = {
            "measures": list(report.correlation.columns),
            "matrix": report.correlation.to_numpy().tolist(),
        }
    if report.summaries is not None:
        doc["clusterSummary"] = report.summaries
    if report.elbow is not None:
        doc["elbow"] = {"rows": [[k, w] for k, w in report.elbow.rows()], "knee": report.elbow.knee}
    doc["notices"] = list(report.notices)
    return doc


def _to_csv(frame: pd.DataFrame, path: Path, index=False) -> Path:
    frame.to_csv(path, index=index, na_rep="NA", lineterminator="\n")
    return path


def _summary_tables(summaries: dict[str, dict]):
    counts, centroids, means = [], [], []
    for group, s in summaries.items():
        for lab, c in s["behaviorCounts"].items():
            counts.append((group, "all", lab, c))
        for cls, by in s["byClass"].items():
            for lab, c in by.items():
                counts.append((group, cls, lab, c))
        centroids += [{"group": group, **row} for row in s["centroids"]]
        means += [{"group": group, **row} for row in s["clusterMeans"]]
    centroid_cols = ["group", "cluster", "label", *DV_NAMES]
    return (
        pd.DataFrame(counts, columns=["group", "class", "behavior", "count"]),
        pd.DataFrame(centroids, columns=centroid_cols),
        pd.DataFrame(means, columns=["group", "cluster", "label", "size", *DV_NAMES]),
    )


def emit(report: Report, fmt: str, out_dir) -> list[Path]:
    """Write ``report`` in one format; returns the paths written.

    json: a single ``report.json``. csv: one file per table. plotdata: numeric
    series for the elbow curve, a DV1/DV2 scatter per cluster and the
    correlation heatmap in long form.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        written.append(dump_json(report_document(report), out / "report.json"))
    elif fmt == "csv":
        if report.stats is not None:
            written.append(_to_csv(report.stats.reset_index(), out / "descriptive_stats.csv"))
        if report.correlation is not None:
            written.append(_to_csv(report.correlation, out / "correlation.csv", index=True))
        if report.summaries is not None:
            counts, centroids, means = _summary_tables(report.summaries)
            written.append(_to_csv(counts, out / "behavior_counts.csv"))
            written.append(_to_csv(centroids, out / "centroids.csv"))
            written.append(_to_csv(means, out / "cluster_means.csv"))
    else:
        if report.elbow is not None:
            elbow = pd.DataFrame(report.elbow.rows(), columns=["k", "wcss"])
            written.append(_to_csv(elbow, out / "elbow.csv"))
        if report.scatter is not None:
            written.append(_to_csv(report.scatter, out / "scatter_dv1_dv2.csv"))
        if report.correlation is not None:
            long = report.correlation.stack(future_stack=True).reset_index()
            long.columns = ["row", "col", "value"]
            written.append(_to_csv(long, out / "correlation_heatmap.csv"))
    return written
