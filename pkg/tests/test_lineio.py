import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from linesurf.geom import Plane, Segment3, segment_plane_distance
from linesurf.lineio import (LineCloud, ObservedSegment, ParseError, RoomSpec, SpecError,
                             ValidationError, Viewpoint, cube_face_edges, dumps_line_cloud,
                             furnished_room, load_line_cloud, loads_line_cloud, save_line_cloud,
                             synth_cube, synth_room)
from linesurf.surface import validate


def _minimal():
    return LineCloud([Viewpoint(0, (0.0, 0.0, 5.0))],
                     [ObservedSegment(0, Segment3((0, 0, 0), (1, 0, 0)), ((0, 0.0, 1.0),))])


def test_minimal_round_trip_is_byte_identical(tmp_path):
    path = tmp_path / "c.jsonl"
    save_line_cloud(_minimal(), path)
    text = path.read_text()
    again = load_line_cloud(path)
    save_line_cloud(again, tmp_path / "d.jsonl")
    assert (tmp_path / "d.jsonl").read_text() == text
    assert json.loads(text)["format"] == "linecloud/1"


def test_missing_viewpoint_is_rejected():
    c = _minimal()
    c.segments[0] = ObservedSegment(0, c.segments[0].geometry, ((7, 0.0, 1.0),))
    with pytest.raises(ValidationError, match="missing viewpoint 7"):
        loads_line_cloud(dumps_line_cloud(c))


def test_reversed_interval_is_rejected():
    c = _minimal()
    c.segments[0] = ObservedSegment(0, c.segments[0].geometry, ((0, 0.3, 0.2),))
    with pytest.raises(ValidationError, match="reversed"):
        c.validate()


def test_validation_lists_every_problem():
    c = _minimal()
    c.segments = [ObservedSegment(0, c.segments[0].geometry, ((0, 0.3, 0.2), (9, 0.0, 1.5))),
                  ObservedSegment(0, c.segments[0].geometry, ())]
    with pytest.raises(ValidationError) as e:
        c.validate()
    assert len(e.value.problems) >= 4


def test_overlapping_intervals_rejected():
    c = _minimal()
    c.segments[0] = ObservedSegment(0, c.segments[0].geometry, ((0, 0.0, 0.5), (0, 0.4, 1.0)))
    with pytest.raises(ValidationError, match="overlapping"):
        c.validate()


def test_missing_views_field_is_a_parse_error():
    doc = json.loads(dumps_line_cloud(_minimal()))
    del doc["segments"][0]["views"]
    with pytest.raises(ParseError, match="views"):
        loads_line_cloud(json.dumps(doc))


def test_malformed_json_reports_position():
    with pytest.raises(ParseError, match="line"):
        loads_line_cloud('{"format": "linecloud/1",\n"viewpoints": [}')


def test_multiple_intervals_survive_round_trip():
    c = _minimal()
    c.segments[0] = ObservedSegment(0, c.segments[0].geometry, ((0, 0.0, 0.25), (0, 0.5, 0.75)))
    again = loads_line_cloud(dumps_line_cloud(c))
    assert again.segments[0].views == ((0, 0.0, 0.25), (0, 0.5, 0.75))


@given(st.lists(st.tuples(*[st.floats(-100, 100)] * 6), min_size=1, max_size=6))
def test_round_trip_is_a_fixpoint_after_one_serialisation(coords):
    segs = []
    for i, c in enumerate(coords):
        if np.linalg.norm(np.subtract(c[:3], c[3:])) < 1e-3:
            continue
        segs.append(ObservedSegment(i, Segment3(c[:3], c[3:]), ((0, 0.0, 1.0),)))
    if not segs:
        return
    text = dumps_line_cloud(LineCloud([Viewpoint(0, (0.1, 0.2, 0.3))], segs))
    again = loads_line_cloud(text)
    assert dumps_line_cloud(again) == text
    assert [s.id for s in again.segments] == [s.id for s in segs]


def test_clean_cube_edges():
    c = synth_cube(0.0, 0, 3)
    assert len(c.segments) == 12 and len(c.viewpoints) == 26
    assert all(s.geometry.length == pytest.approx(2.0) for s in c.segments)
    for (axis, sign), ids in cube_face_edges().items():
        n = [0.0, 0.0, 0.0]
        n[axis] = 1.0
        face = Plane(tuple(n), float(sign))
        for sid in ids:
            assert segment_plane_distance(c.segments[sid].geometry, face) == 0.0


def test_noisy_cube_with_outliers():
    c = synth_cube(0.35, 50, seed=1)
    assert len(c.segments) == 62
    out = np.array([[s.geometry.p0, s.geometry.p1] for s in c.segments[12:]])
    assert np.linalg.norm(out, axis=2).max() <= 2.0
    assert all(s.views for s in c.segments)


def test_cube_noise_is_bounded_uniform():
    c = synth_cube(0.1, 0, 4)
    ideal = synth_cube(0.0, 0, 4)
    off = np.array([[s.geometry.p0 - t.geometry.p0, s.geometry.p1 - t.geometry.p1]
                    for s, t in zip(c.segments, ideal.segments)])
    assert np.abs(off).max() <= 0.1 * np.sqrt(3) + 1e-12


def test_cube_visibility_hemisphere():
    c = synth_cube(0.0, 0, 0)
    for s in c.segments:
        mid = s.geometry.point_at(0.5)
        for vid in s.viewpoint_ids:
            assert c.viewpoint(vid).position @ mid > 0


def test_generators_are_deterministic():
    assert dumps_line_cloud(synth_cube(0.1, 0, 7)) == dumps_line_cloud(synth_cube(0.1, 0, 7))
    spec = furnished_room(0.01, 0.1, seed=2)
    assert dumps_line_cloud(synth_room(spec)[0]) == dumps_line_cloud(synth_room(spec)[0])
    assert dumps_line_cloud(synth_cube(0.1, 0, 7)) != dumps_line_cloud(synth_cube(0.1, 0, 8))


def test_empty_room_has_twelve_creases():
    cloud, gt = synth_room(RoomSpec(size=(4.0, 5.0, 2.5), n_viewpoints=8))
    assert len(cloud.segments) == 12 and len(cloud.viewpoints) == 8
    v = validate(gt)
    assert v["boundary_edges"] == 0 and v["non_manifold_edges"] == 0


def test_room_with_box_has_24_creases():
    spec = RoomSpec(boxes=(((1.0, 1.0, 0.0), (2.0, 2.0, 1.0)),), n_viewpoints=8)
    cloud, gt = synth_room(spec)
    assert len(cloud.segments) == 24
    v = validate(gt)
    assert v["boundary_edges"] == 0 and v["non_manifold_edges"] == 0


def test_room_ground_truth_volume():
    spec = RoomSpec(boxes=(((1.0, 1.0, 0.0), (2.0, 2.0, 1.0)),))
    _, gt = synth_room(spec)
    # the free space is the room minus the box
    assert abs(gt.signed_volume()) == pytest.approx(4 * 5 * 2.5 - 1.0)


def test_touching_boxes_are_rejected():
    boxes = (((1.0, 1.0, 0.0), (2.0, 2.0, 1.0)), ((2.0, 1.0, 0.0), (3.0, 2.0, 1.0)))
    with pytest.raises(SpecError):
        synth_room(RoomSpec(boxes=boxes))
    with pytest.raises(SpecError):
        synth_room(RoomSpec(boxes=(((0.0, 1.0, 0.0), (1.0, 2.0, 1.0)),)))


def test_room_outliers_and_noise():
    spec = furnished_room(0.01, 0.1, seed=0)
    cloud, _ = synth_room(spec)
    clean, _ = synth_room(furnished_room(0.0, 0.0, seed=0))
    assert len(cloud.segments) > len(clean.segments)
    cloud.validate(require_segments=True)


def test_occluded_segments_have_partial_intervals():
    cloud, _ = synth_room(furnished_room(0.0, 0.0, seed=0))
    partial = [iv for s in cloud.segments for _, a, b in s.views for iv in [(a, b)]
               if (a, b) != (0.0, 1.0)]
    assert partial, "furniture should occlude some segments from some viewpoints"
