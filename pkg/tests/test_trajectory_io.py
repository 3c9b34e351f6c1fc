import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roundvol.trajectory_io import (
    DEFAULT_CLASSES,
    TRACK_COLUMNS,
    JoinAnomaly,
    MalformedRow,
    MissingColumn,
    TrackMeta,
    TrackRecord,
    VehicleClass,
    filter_by_class,
    join_tracks,
    parse_track_meta,
    parse_tracks,
    write_tracks_csv,
)

from synth import make_recording, write_csv

HEADER = ",".join(TRACK_COLUMNS)
FIRST_ROW = "0,0,25218,0,141.0003,-138.8970,107.7517,0.8158,1.0443,-0.2620,0.7691,-0.0941,0.5095,0.8123"
META_HEADER = "recordingId,trackId,initialFrame,finalFrame,numFrames,width,length,class"


def _write(tmp_path, text, name="tracks.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _row(rec=0, tid=0, frame=0, **over):
    vals = dict(zip(TRACK_COLUMNS, [rec, tid, frame, 0, 1.0, 2.0, 0.0, 2.0, 4.5, 3.0, 4.0, 0.1, 0.2, 5.0]))
    vals.update(over)
    return ",".join(str(vals[c]) for c in TRACK_COLUMNS)


def _meta(rec, tid, cls, n=1, start=0):
    return TrackMeta(rec, tid, start, start + n - 1, n, 2.0, 4.5, VehicleClass.parse(cls), cls)


def test_first_reference_row(tmp_path):
    parsed = parse_tracks(_write(tmp_path, f"{HEADER}\n{FIRST_ROW}\n"))
    assert list(parsed.groups) == [(0, 0)]
    rec = next(iter(parsed.groups.values()))
    tr = TrackRecord.from_row(rec.iloc[0].to_dict())
    assert (tr.recording_id, tr.track_id, tr.frame, tr.track_lifetime) == (0, 0, 25218, 0)
    assert tr.x_center == 141.0003 and tr.y_center == -138.8970
    assert tr.heading == 107.7517
    assert tr.x_velocity == -0.2620 and tr.y_velocity == 0.7691
    assert tr.lon_velocity == 0.8123
    assert (tr.width, tr.length) == (0.8158, 1.0443)
    assert parsed.skipped == 0


def test_header_only_file_gives_no_groups(tmp_path):
    parsed = parse_tracks(_write(tmp_path, HEADER + "\n"))
    assert len(parsed) == 0 and parsed.rows_read == 0 and parsed.skipped == 0


def test_bad_number_lenient_skips_and_counts(tmp_path):
    path = _write(tmp_path, f"{HEADER}\n{_row(xVelocity='abc')}\n")
    parsed = parse_tracks(path, "lenient")
    assert len(parsed) == 0
    assert parsed.skipped == 1
    assert parsed.errors[0].line == 2 and "xVelocity" in parsed.errors[0].reason


def test_bad_number_strict_raises(tmp_path):
    path = _write(tmp_path, f"{HEADER}\n{_row()}\n{_row(frame=1, yVelocity='nan')}\n")
    with pytest.raises(MalformedRow) as info:
        parse_tracks(path, "strict")
    assert info.value.line == 3


def test_short_row_line_numbers(tmp_path):
    text = f"{HEADER}\n{_row(frame=0)}\n0,0,1\n{_row(frame=2, heading='x')}\n{_row(frame=3)}\n"
    parsed = parse_tracks(_write(tmp_path, text))
    assert [e.line for e in parsed.errors] == [3, 4]
    assert parsed.rows_read == 4 and parsed.skipped == 2
    assert parsed.groups[(0, 0)]["frame"].tolist() == [0, 3]


@pytest.mark.parametrize("field,value", [("width", "0"), ("length", "-1"), ("frame", "-5"),
                                         ("trackLifetime", "-1"), ("frame", "1.5"), ("xAcceleration", "inf")])
def test_invariant_violations_are_malformed(tmp_path, field, value):
    parsed = parse_tracks(_write(tmp_path, f"{HEADER}\n{_row(**{field: value})}\n"))
    assert parsed.skipped == 1 and len(parsed) == 0


def test_missing_column(tmp_path):
    header = HEADER.replace(",lonVelocity", "")
    with pytest.raises(MissingColumn) as info:
        parse_tracks(_write(tmp_path, header + "\n"))
    assert info.value.name == "lonVelocity"


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_tracks(tmp_path / "nope.csv")


def test_columns_bound_by_name_and_extras_kept(tmp_path):
    cols = list(reversed(TRACK_COLUMNS)) + ["latVelocity", "lonAcceleration", "latAcceleration", "note"]
    row = {c: i + 1 for i, c in enumerate(cols)}
    row.update(recordingId=3, trackId=7, frame=9, trackLifetime=0, note="hello")
    path = _write(tmp_path, ",".join(cols) + "\n" + ",".join(str(row[c]) for c in cols) + "\n")
    parsed = parse_tracks(path)
    rec = parsed.groups[(3, 7)].iloc[0]
    assert rec["xVelocity"] == row["xVelocity"] and rec["heading"] == row["heading"]
    assert rec["lonAcceleration"] == row["lonAcceleration"]
    assert rec["note"] == "hello"
    assert set(parsed.extra_columns) == {"latVelocity", "lonAcceleration", "latAcceleration", "note"}


def test_duplicate_frame_skipped(tmp_path):
    text = f"{HEADER}\n{_row(frame=4)}\n{_row(frame=4, xCenter=9)}\n{_row(frame=5)}\n"
    parsed = parse_tracks(_write(tmp_path, text))
    assert parsed.skipped == 1 and parsed.errors[0].line == 3
    assert parsed.groups[(0, 0)]["xCenter"].tolist() == [1.0, 1.0]


def test_rows_shuffled_give_identical_groups(tmp_path):
    tracks, _ = make_recording(12, mean_frames=30, seed=1)
    write_csv(tracks, tmp_path / "a.csv")
    write_csv(tracks.sample(frac=1.0, random_state=5), tmp_path / "b.csv")
    a = parse_tracks(tmp_path / "a.csv")
    b = parse_tracks(tmp_path / "b.csv")
    assert list(a.groups) == list(b.groups) == sorted(a.groups)
    for key in a.groups:
        pd.testing.assert_frame_equal(a.groups[key], b.groups[key])
        assert np.all(np.diff(a.groups[key]["frame"]) > 0)


def test_round_trip(tmp_path):
    tracks, meta = make_recording(6, mean_frames=25, seed=2)
    write_csv(tracks, tmp_path / "t.csv")
    write_csv(meta, tmp_path / "m.csv")
    parsed = parse_tracks(tmp_path / "t.csv")
    joined = join_tracks(parsed, parse_track_meta(tmp_path / "m.csv").metas)
    write_tracks_csv(joined.tracks, tmp_path / "again.csv")
    again = parse_tracks(tmp_path / "again.csv")
    assert list(again.groups) == list(parsed.groups)
    for key, frame in parsed.groups.items():
        other = again.groups[key]
        for col in frame.columns:
            np.testing.assert_allclose(other[col].to_numpy(float), frame[col].to_numpy(float), rtol=0, atol=1e-9)
        t = next(t for t in joined.tracks if t.key == key)
        assert t.record(0) == next(t.iter_records())


def test_meta_row_with_index_column(tmp_path):
    # Table two lists an index column first; column labels bind by name.
    text = "index,trackId,recordingId,initialFrame,finalFrame,numFrames,width,length,class\n" \
           "268,268,1,10540,10901,362,1.9505,4.7414,car\n"
    metas = parse_track_meta(_write(tmp_path, text, "m.csv")).metas
    (m,) = metas
    assert m.track_id == 268 and m.recording_id == 1
    assert m.num_frames == 362 and m.vehicle_class is VehicleClass.CAR
    assert (m.width, m.length) == (1.9505, 4.7414)


@pytest.mark.parametrize("text,expected,raw", [("Car", VehicleClass.CAR, "car"),
                                               ("BUS", VehicleClass.BUS, "bus"),
                                               ("scooter", VehicleClass.OTHER, "scooter")])
def test_meta_class_mapping(tmp_path, text, expected, raw):
    path = _write(tmp_path, f"{META_HEADER}\n0,1,0,9,10,2,4,{text}\n", "m.csv")
    (m,) = parse_track_meta(path).metas
    assert m.vehicle_class is expected
    assert m.class_name == raw


def test_meta_frame_span_mismatch_is_malformed(tmp_path):
    path = _write(tmp_path, f"{META_HEADER}\n0,1,0,9,11,2,4,car\n0,2,5,4,0,2,4,car\n", "m.csv")
    parsed = parse_track_meta(path)
    assert parsed.metas == [] and parsed.skipped == 2
    with pytest.raises(MalformedRow):
        parse_track_meta(path, "strict")


def test_meta_missing_column(tmp_path):
    with pytest.raises(MissingColumn):
        parse_track_meta(_write(tmp_path, "recordingId,trackId\n", "m.csv"))


def test_filter_default_keeps_vehicles():
    metas = [_meta(0, 0, "pedestrian"), _meta(0, 1, "bicycle"), _meta(0, 2, "car")]
    assert [m.track_id for m in filter_by_class(metas)] == [2]
    assert filter_by_class(metas, set(VehicleClass)) == metas
    assert filter_by_class(metas, set()) == []
    assert DEFAULT_CLASSES == {VehicleClass.CAR, VehicleClass.TRUCK, VehicleClass.BUS}


_classes = st.sampled_from(list(VehicleClass))


@given(st.lists(_classes, max_size=30), st.sets(_classes), st.sets(_classes))
def test_filter_union_property(classes, a, b):
    metas = [_meta(0, i, c.value) for i, c in enumerate(classes)]
    left = filter_by_class(metas, a) + filter_by_class(metas, b - a)
    assert sorted(m.track_id for m in left) == sorted(m.track_id for m in filter_by_class(metas, a | b))
    # multiset union of the two filters, counted with overlap removed
    both = filter_by_class(metas, a) + filter_by_class(metas, b)
    overlap = filter_by_class(metas, a & b)
    assert len(both) - len(overlap) == len(filter_by_class(metas, a | b))


def _groups(spec):
    out = {}
    for key, frames in spec.items():
        out[key] = pd.DataFrame({"recordingId": key[0], "trackId": key[1], "frame": frames})
    return out


def test_join_counts_orphans():
    groups = _groups({(0, 0): [0], (0, 1): [0], (0, 2): [0]})
    res = join_tracks(groups, [_meta(0, 0, "car"), _meta(0, 2, "bus")])
    assert [t.key for t in res.tracks] == [(0, 0), (0, 2)]
    assert res.orphan_groups == [(0, 1)]
    assert len(res.warnings) == 1


def test_join_gap_warning():
    res = join_tracks(_groups({(0, 0): [5, 6, 8]}), [_meta(0, 0, "car", n=4, start=5)])
    (t,) = res.tracks
    assert t.warnings == ("frame gap at 7", "record count 3 != numFrames 4")


def test_join_clean_track_has_no_warnings():
    res = join_tracks(_groups({(0, 0): [5, 6, 7]}), [_meta(0, 0, "car", n=3, start=5)])
    assert res.tracks[0].warnings == () and res.warnings == []


def test_join_strict_promotes_warnings():
    with pytest.raises(JoinAnomaly):
        join_tracks(_groups({(0, 0): [5, 6, 8]}), [_meta(0, 0, "car", n=4, start=5)], "strict")


@settings(max_examples=50)
@given(st.lists(_classes, min_size=1, max_size=15))
def test_join_never_emits_filtered_class(classes):
    metas = [_meta(0, i, c.value) for i, c in enumerate(classes)]
    groups = _groups({m.key: [0] for m in metas})
    res = join_tracks(groups, filter_by_class(metas))
    assert all(t.meta.vehicle_class in DEFAULT_CLASSES for t in res.tracks)
