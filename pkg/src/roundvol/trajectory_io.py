"""Reading rounD-style ``tracks`` / ``tracksMeta`` CSV files.

Columns are bound by header name. Per-frame records are kept columnar: each
track's records live in a :class:`pandas.DataFrame` sorted by frame, and
:class:`TrackRecord` gives row-level access when needed.
"""

from __future__ import annotations

import enum
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.csv as pacsv

log = logging.getLogger(__name__)

TrackKey = tuple[int, int]

TRACK_COLUMNS = (
    "recordingId",
    "trackId",
    "frame",
    "trackLifetime",
    "xCenter",
    "yCenter",
    "heading",
    "width",
    "length",
    "xVelocity",
    "yVelocity",
    "xAcceleration",
    "yAcceleration",
    "lonVelocity",
)
INT_TRACK_COLUMNS = ("recordingId", "trackId", "frame", "trackLifetime")
EXTENDED_TRACK_COLUMNS = ("latVelocity", "lonAcceleration", "latAcceleration")

META_COLUMNS = (
    "recordingId",
    "trackId",
    "initialFrame",
    "finalFrame",
    "numFrames",
    "width",
    "length",
    "class",
)
INT_META_COLUMNS = ("recordingId", "trackId", "initialFrame", "finalFrame", "numFrames")

STRICT = "strict"
LENIENT = "lenient"


class IngestError(Exception):
    """Base class for ingestion failures."""


class MissingColumn(IngestError):
    def __init__(self, name: str):
        super().__init__(f"missing required column {name!r}")
        self.name = name


class MalformedRow(IngestError):
    def __init__(self, line: int | None, reason: str):
        where = f"line {line}" if line is not None else "unknown line"
        super().__init__(f"{where}: {reason}")
        self.line = line
        self.reason = reason


class JoinAnomaly(IngestError):
    """Raised under the strict policy for any join-time warning."""


class VehicleClass(str, enum.Enum):
    PEDESTRIAN = "pedestrian"
    BICYCLE = "bicycle"
    CAR = "car"
    TRUCK = "truck"
    BUS = "bus"
    VAN = "van"
    MOTORCYCLE = "motorcycle"
    TRAILER = "trailer"
    OTHER = "other"

    @classmethod
    def parse(cls, text: str) -> "VehicleClass":
        try:
            return cls(text.strip().lower())
        except ValueError:
            return cls.OTHER


DEFAULT_CLASSES = frozenset({VehicleClass.CAR, VehicleClass.TRUCK, VehicleClass.BUS})


@dataclass(frozen=True)
class TrackRecord:
    recording_id: int
    track_id: int
    frame: int
    track_lifetime: int
    x_center: float
    y_center: float
    heading: float
    width: float
    length: float
    x_velocity: float
    y_velocity: float
    x_acceleration: float
    y_acceleration: float
    lon_velocity: float
    extensions: Mapping[str, object] = field(default_factory=dict)

    @classmethod
    def from_row(cls, row: Mapping[str, object]) -> "TrackRecord":
        known = {c: row[c] for c in TRACK_COLUMNS}
        ext = {c: row[c] for c in row.keys() if c not in known}
        return cls(
            *(int(known[c]) if c in INT_TRACK_COLUMNS else float(known[c]) for c in TRACK_COLUMNS),
            extensions=ext,
        )


@dataclass(frozen=True)
class TrackMeta:
    recording_id: int
    track_id: int
    initial_frame: int
    final_frame: int
    num_frames: int
    width: float
    length: float
    vehicle_class: VehicleClass
    raw_class: str = ""

    @property
    def key(self) -> TrackKey:
        return (self.recording_id, self.track_id)

    @property
    def class_name(self) -> str:
        """Class as written to output files; unknown labels keep their text."""
        if self.vehicle_class is VehicleClass.OTHER:
            return self.raw_class.strip().lower() or "other"
        return self.vehicle_class.value


@dataclass(frozen=True)
class Track:
    meta: TrackMeta
    records: pd.DataFrame
    warnings: tuple[str, ...] = ()

    @property
    def key(self) -> TrackKey:
        return self.meta.key

    def __len__(self) -> int:
        return len(self.records)

    def record(self, i: int) -> TrackRecord:
        return TrackRecord.from_row(self.records.iloc[i].to_dict())

    def iter_records(self):
        for row in self.records.to_dict(orient="records"):
            yield TrackRecord.from_row(row)


@dataclass
class ParsedTracks:
    """Output of :func:`parse_tracks`: records grouped per track key."""

    groups: dict[TrackKey, pd.DataFrame]
    rows_read: int = 0
    skipped: int = 0
    errors: list[MalformedRow] = field(default_factory=list)
    extra_columns: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.groups)


@dataclass
class ParsedMeta:
    metas: list[TrackMeta]
    rows_read: int = 0
    skipped: int = 0
    errors: list[MalformedRow] = field(default_factory=list)


@dataclass
class JoinResult:
    tracks: list[Track]
    orphan_groups: list[TrackKey] = field(default_factory=list)
    orphan_metas: list[TrackKey] = field(default_factory=list)

    @property
    def warnings(self) -> list[str]:
        out = [f"records without meta: track {k}" for k in self.orphan_groups]
        out += [f"meta without records: track {k}" for k in self.orphan_metas]
        for t in self.tracks:
            out.extend(f"track {t.key}: {w}" for w in t.warnings)
        return out


def _check_policy(policy: str) -> None:
    if policy not in (STRICT, LENIENT):
        raise ValueError(f"unknown error policy {policy!r}")


def _read_csv(path: Path, policy: str) -> tuple[pd.DataFrame, list[MalformedRow], np.ndarray]:
    """Read ``path`` into a frame of raw columns.

    Returns the frame, field-count errors, and the physical line number of each
    surviving data row.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    bad: list[MalformedRow] = []

    def on_invalid(row):
        bad.append(
            MalformedRow(row.number, f"expected {row.expected_columns} fields, got {row.actual_columns}")
        )
        if policy == STRICT:
            return "error"
        return "skip"

    try:
        table = pacsv.read_csv(
            path,
            read_options=pacsv.ReadOptions(use_threads=False, block_size=1 << 24),
            parse_options=pacsv.ParseOptions(invalid_row_handler=on_invalid),
        )
    except pa.ArrowInvalid as exc:
        if bad:
            raise bad[0] from exc
        if "Empty CSV file" in str(exc):
            raise MalformedRow(1, "no header row") from exc
        raise MalformedRow(None, str(exc)) from exc

    frame = table.to_pandas()
    lines = np.arange(len(frame), dtype=np.int64) + 2
    for line in sorted(b.line for b in bad if b.line is not None):
        lines[lines >= line] += 1
    return frame, bad, lines


def _coerce(frame: pd.DataFrame, columns, int_columns):
    """Convert ``columns`` to numbers; return (frame, per-row reason or None)."""
    reasons = np.full(len(frame), None, dtype=object)
    out = {}
    for col in columns:
        raw = frame[col]
        values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64, na_value=np.nan)
        bad = ~np.isfinite(values)
        if col in int_columns:
            bad |= np.isfinite(values) & (np.floor(values) != values)
        for i in np.flatnonzero(bad & (reasons == None)):  # noqa: E711
            reasons[i] = f"{col}={raw.iloc[i]!r} is not a valid {'integer' if col in int_columns else 'number'}"
        out[col] = values
    return out, reasons


def _finish_errors(reasons, lines, policy, errors):
    for i in np.flatnonzero(reasons != None):  # noqa: E711
        err = MalformedRow(int(lines[i]), reasons[i])
        if policy == STRICT:
            raise err
        errors.append(err)
    errors.sort(key=lambda e: (e.line is None, e.line or 0))


def parse_tracks(path, policy: str = LENIENT) -> ParsedTracks:
    """Parse a tracks CSV into per-track record frames.

    Groups come back ordered by ``(recordingId, trackId)`` and records within a
    group by frame, independent of the row order in the file. Unknown columns
    are carried along untouched.
    """
    _check_policy(policy)
    frame, errors, lines = _read_csv(path, policy)
    for col in TRACK_COLUMNS:
        if col not in frame.columns:
            raise MissingColumn(col)
    rows_read = len(frame) + len(errors)
    extra = tuple(c for c in frame.columns if c not in TRACK_COLUMNS)

    numeric, reasons = _coerce(frame, TRACK_COLUMNS, INT_TRACK_COLUMNS)
    ext_numeric, ext_reasons = _coerce(
        frame, [c for c in EXTENDED_TRACK_COLUMNS if c in frame.columns], ()
    )
    reasons = np.where(reasons == None, ext_reasons, reasons)  # noqa: E711
    checks = (
        (numeric["frame"] < 0, "frame must be >= 0"),
        (numeric["trackLifetime"] < 0, "trackLifetime must be >= 0"),
        (~(numeric["width"] > 0), "width must be > 0"),
        (~(numeric["length"] > 0), "length must be > 0"),
    )
    for mask, why in checks:
        reasons[mask & (reasons == None)] = why  # noqa: E711

    data = {}
    for col in frame.columns:
        if col in numeric:
            data[col] = numeric[col]
        elif col in ext_numeric:
            data[col] = ext_numeric[col]
        else:
            data[col] = frame[col].to_numpy()
    keep = reasons == None  # noqa: E711

    # Duplicate (track, frame) pairs break the strict frame ordering.
    rec = numeric["recordingId"]
    tid = numeric["trackId"]
    frm = numeric["frame"]
    order = np.lexsort((lines, frm, tid, rec))
    order = order[keep[order]]
    dup = np.zeros(len(order), dtype=bool)
    if len(order) > 1:
        r, t, f = rec[order], tid[order], frm[order]
        dup[1:] = (r[1:] == r[:-1]) & (t[1:] == t[:-1]) & (f[1:] == f[:-1])
        for i in order[dup]:
            reasons[i] = f"duplicate frame {int(frm[i])} for track ({int(rec[i])}, {int(tid[i])})"
        order = order[~dup]
    _finish_errors(reasons, lines, policy, errors)

    cols = {}
    for col, vals in data.items():
        vals = vals[order]
        if col in INT_TRACK_COLUMNS:
            vals = vals.astype(np.int64)
        cols[col] = vals
    clean = pd.DataFrame(cols, columns=list(frame.columns))
    groups = split_groups(clean)
    skipped = rows_read - len(clean)
    if skipped:
        log.warning("%s: skipped %d malformed row(s)", path, skipped)
    return ParsedTracks(groups, rows_read=rows_read, skipped=skipped, errors=errors, extra_columns=extra)


def split_groups(frame: pd.DataFrame) -> dict[TrackKey, pd.DataFrame]:
    """Split a frame already sorted by (recordingId, trackId, frame)."""
    if frame.empty:
        return {}
    rec = frame["recordingId"].to_numpy()
    tid = frame["trackId"].to_numpy()
    change = np.flatnonzero((rec[1:] != rec[:-1]) | (tid[1:] != tid[:-1])) + 1
    bounds = np.concatenate(([0], change, [len(frame)]))
    groups = {}
    for a, b in zip(bounds[:-1], bounds[1:]):
        part = frame.iloc[a:b].reset_index(drop=True)
        groups[(int(rec[a]), int(tid[a]))] = part
    return groups


def parse_track_meta(path, policy: str = LENIENT) -> ParsedMeta:
    """Parse a tracksMeta CSV. A leading unnamed/index column is ignored."""
    _check_policy(policy)
    frame, errors, lines = _read_csv(path, policy)
    for col in META_COLUMNS:
        if col not in frame.columns:
            raise MissingColumn(col)
    rows_read = len(frame) + len(errors)
    numeric, reasons = _coerce(frame, META_COLUMNS[:-1], INT_META_COLUMNS)
    raw_class = frame["class"].astype("string").fillna("").to_numpy(dtype=object)
    empty_class = np.array([not str(c).strip() for c in raw_class], dtype=bool)
    span = numeric["finalFrame"] - numeric["initialFrame"] + 1
    checks = (
        (empty_class, "class label is empty"),
        (numeric["finalFrame"] < numeric["initialFrame"], "finalFrame < initialFrame"),
        (numeric["numFrames"] != span, "numFrames != finalFrame - initialFrame + 1"),
        (~(numeric["width"] > 0), "width must be > 0"),
        (~(numeric["length"] > 0), "length must be > 0"),
    )
    for mask, why in checks:
        reasons[mask & (reasons == None)] = why  # noqa: E711
    _finish_errors(reasons, lines, policy, errors)

    metas = []
    for i in np.flatnonzero(reasons == None):  # noqa: E711
        text = str(raw_class[i])
        metas.append(
            TrackMeta(
                recording_id=int(numeric["recordingId"][i]),
                track_id=int(numeric["trackId"][i]),
                initial_frame=int(numeric["initialFrame"][i]),
                final_frame=int(numeric["finalFrame"][i]),
                num_frames=int(numeric["numFrames"][i]),
                width=float(numeric["width"][i]),
                length=float(numeric["length"][i]),
                vehicle_class=VehicleClass.parse(text),
                raw_class=text,
            )
        )
    return ParsedMeta(metas, rows_read=rows_read, skipped=rows_read - len(metas), errors=errors)


def filter_by_class(metas: Iterable[TrackMeta], allowed=DEFAULT_CLASSES) -> list[TrackMeta]:
    allowed = {VehicleClass(a) if not isinstance(a, VehicleClass) else a for a in allowed}
    return [m for m in metas if m.vehicle_class in allowed]


def _frame_warnings(meta: TrackMeta, records: pd.DataFrame) -> list[str]:
    out = []
    frames = records["frame"].to_numpy()
    steps = np.diff(frames)
    for j in np.flatnonzero(steps > 1):
        lo, hi = int(frames[j]) + 1, int(frames[j + 1]) - 1
        out.append(f"frame gap at {lo}" if lo == hi else f"frame gap at {lo}-{hi}")
    if len(records) != meta.num_frames:
        out.append(f"record count {len(records)} != numFrames {meta.num_frames}")
    return out


def join_tracks(groups, metas: Iterable[TrackMeta], policy: str = LENIENT) -> JoinResult:
    """Inner-join record groups with metadata on (recordingId, trackId).

    Unmatched keys on either side are reported but produce no Track. Under the
    strict policy any anomaly raises :class:`JoinAnomaly`.
    """
    _check_policy(policy)
    if isinstance(groups, ParsedTracks):
        groups = groups.groups
    by_key = {m.key: m for m in metas}
    tracks = []
    for key in sorted(set(groups) & set(by_key)):
        meta = by_key[key]
        records = groups[key]
        tracks.append(Track(meta, records, tuple(_frame_warnings(meta, records))))
    result = JoinResult(
        tracks,
        orphan_groups=sorted(set(groups) - set(by_key)),
        orphan_metas=sorted(set(by_key) - set(groups)),
    )
    if policy == STRICT and result.warnings:
        raise JoinAnomaly(result.warnings[0])
    return result


def write_tracks_csv(tracks: Iterable[Track], path) -> None:
    """Serialise track records back to rounD CSV layout."""
    frames = [t.records for t in tracks]
    if frames:
        frame = pd.concat(frames, ignore_index=True)
    else:
        frame = pd.DataFrame(columns=list(TRACK_COLUMNS))
    frame.to_csv(path, index=False)


def write_meta_csv(metas: Iterable[TrackMeta], path) -> None:
    rows = [
        (m.recording_id, m.track_id, m.initial_frame, m.final_frame, m.num_frames, m.width, m.length, m.class_name)
        for m in metas
    ]
    pd.DataFrame(rows, columns=list(META_COLUMNS)).to_csv(path, index=False)
