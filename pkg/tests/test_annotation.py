import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cystrack import annotation as ann


def make_session(organoids=None, frame=(100, 80), frame_count=7, duration=144.0):
    if organoids is None:
        organoids = (
            ann.OrganoidAnnotation(
                organoid_id=0,
                anchor=(10.0, 10.0),
                cysts=(ann.CystPrompt(cyst_id=0, bbox=(20, 20, 40, 44)),),
            ),
        )
    return ann.AnnotationSession(
        frame_width=frame[0],
        frame_height=frame[1],
        annotated_frame_index=frame_count - 1,
        calibration=ann.Calibration(
            um_per_pixel=1.29, total_duration_hours=duration, frame_count=frame_count
        ),
        organoids=tuple(organoids),
    )


class TestTimestamps:
    def test_daily_imaging_week(self):
        cal = ann.Calibration(um_per_pixel=1.0, total_duration_hours=144.0, frame_count=7)
        assert ann.timestamps(cal) == [0, 24, 48, 72, 96, 120, 144]

    def test_two_frames(self):
        cal = ann.Calibration(um_per_pixel=1.0, total_duration_hours=10.0, frame_count=2)
        assert ann.timestamps(cal) == [0, 10]

    def test_formula(self):
        cal = ann.Calibration(um_per_pixel=1.0, total_duration_hours=9.0, frame_count=4)
        assert ann.timestamps(cal) == [0, 3, 6, 9]

    def test_explicit_override(self):
        cal = ann.Calibration(
            um_per_pixel=1.0, total_duration_hours=9.0, frame_count=3,
            timestamps_hours=(0.0, 1.0, 9.0),
        )
        assert ann.timestamps(cal) == [0.0, 1.0, 9.0]

    def test_non_increasing_override_rejected(self):
        cal = ann.Calibration(
            um_per_pixel=1.0, total_duration_hours=9.0, frame_count=3,
            timestamps_hours=(0.0, 5.0, 5.0),
        )
        with pytest.raises(ann.BadCalibrationError):
            ann.timestamps(cal)

    @given(
        st.floats(min_value=0.5, max_value=500.0),
        st.integers(min_value=2, max_value=40),
    )
    @settings(max_examples=50, deadline=None)
    def test_length_and_endpoints(self, duration, count):
        cal = ann.Calibration(um_per_pixel=1.0, total_duration_hours=duration, frame_count=count)
        ts = ann.timestamps(cal)
        assert len(ts) == count
        assert ts[0] == 0.0
        assert ts[-1] == pytest.approx(duration)
        assert all(b > a for a, b in zip(ts, ts[1:]))


class TestValidate:
    def test_fig3_scale_scene(self):
        # 14 organoids, 7 cyst boxes spread over the first 6.
        organoids = []
        cid = 0
        for i in range(14):
            n_cysts = 2 if i == 0 else (1 if i < 6 else 0)
            cysts = []
            for _ in range(n_cysts):
                x0 = 5 + cid * 6
                cysts.append(ann.CystPrompt(cyst_id=100 + cid, bbox=(x0, 5, x0 + 4, 12)))
                cid += 1
            organoids.append(
                ann.OrganoidAnnotation(
                    organoid_id=f"org-{i}", anchor=(1.0 + i * 5, 70.0), cysts=tuple(cysts)
                )
            )
        validated = ann.validate(make_session(organoids), frame_dims=(100, 80), frame_count=7)
        assert validated.n_total_organoids == 14
        assert len(validated.cysts) == 7
        assert [c.cyst_id for c in validated.cysts] == list(range(7))
        assert validated.source_organoid_ids[0] == "org-0"

    def test_degenerate_box_rejected(self):
        organoids = (
            ann.OrganoidAnnotation(
                organoid_id=0, anchor=(5.0, 5.0),
                cysts=(ann.CystPrompt(cyst_id=0, bbox=(10, 10, 10, 40)),),
            ),
        )
        with pytest.raises(ann.BoxOutOfBoundsError):
            ann.validate(make_session(organoids))

    def test_out_of_frame_box_rejected(self):
        organoids = (
            ann.OrganoidAnnotation(
                organoid_id=0, anchor=(5.0, 5.0),
                cysts=(ann.CystPrompt(cyst_id=0, bbox=(90, 70, 105, 79)),),
            ),
        )
        with pytest.raises(ann.BoxOutOfBoundsError):
            ann.validate(make_session(organoids))

    def test_tiny_box_rejected(self):
        organoids = (
            ann.OrganoidAnnotation(
                organoid_id=0, anchor=(5.0, 5.0),
                cysts=(ann.CystPrompt(cyst_id=0, bbox=(10, 10, 11, 12)),),
            ),
        )
        with pytest.raises(ann.BoxOutOfBoundsError):
            ann.validate(make_session(organoids))

    def test_same_cyst_under_two_organoids(self):
        organoids = (
            ann.OrganoidAnnotation(
                organoid_id=0, anchor=(5.0, 5.0),
                cysts=(ann.CystPrompt(cyst_id=7, bbox=(10, 10, 20, 20)),),
            ),
            ann.OrganoidAnnotation(
                organoid_id=1, anchor=(50.0, 50.0),
                cysts=(ann.CystPrompt(cyst_id=7, bbox=(30, 30, 40, 40)),),
            ),
        )
        with pytest.raises(ann.DuplicateCystAssignmentError):
            ann.validate(make_session(organoids))

    def test_identical_duplicate_boxes_rejected(self):
        organoids = (
            ann.OrganoidAnnotation(
                organoid_id=0, anchor=(5.0, 5.0),
                cysts=(
                    ann.CystPrompt(cyst_id=1, bbox=(10, 10, 20, 20)),
                    ann.CystPrompt(cyst_id=2, bbox=(10, 10, 20, 20)),
                ),
            ),
        )
        with pytest.raises(ann.DuplicateCystAssignmentError):
            ann.validate(make_session(organoids))

    def test_overlapping_boxes_allowed(self):
        organoids = (
            ann.OrganoidAnnotation(
                organoid_id=0, anchor=(5.0, 5.0),
                cysts=(
                    ann.CystPrompt(cyst_id=1, bbox=(10, 10, 20, 20)),
                    ann.CystPrompt(cyst_id=2, bbox=(12, 12, 22, 22)),
                ),
            ),
        )
        validated = ann.validate(make_session(organoids))
        assert len(validated.cysts) == 2

    def test_anchor_out_of_bounds(self):
        organoids = (
            ann.OrganoidAnnotation(organoid_id=0, anchor=(120.0, 5.0), cysts=()),
        )
        with pytest.raises(ann.AnchorOutOfBoundsError):
            ann.validate(make_session(organoids))

    def test_wrong_annotated_frame(self):
        s = make_session()
        s = ann.AnnotationSession(
            frame_width=s.frame_width, frame_height=s.frame_height,
            annotated_frame_index=0, calibration=s.calibration,
            organoids=s.organoids,
        )
        with pytest.raises(ann.WrongAnnotatedFrameError):
            ann.validate(s)

    def test_bad_calibration(self):
        with pytest.raises(ann.BadCalibrationError):
            ann.validate(make_session(duration=-1.0))

    def test_duplicate_organoid_ids(self):
        organoids = (
            ann.OrganoidAnnotation(organoid_id=3, anchor=(5.0, 5.0), cysts=()),
            ann.OrganoidAnnotation(organoid_id=3, anchor=(6.0, 6.0), cysts=()),
        )
        with pytest.raises(ann.DuplicateOrganoidIdError):
            ann.validate(make_session(organoids))

    def test_frame_mismatch(self):
        with pytest.raises(ann.FrameMismatchError):
            ann.validate(make_session(), frame_dims=(64, 64))
        with pytest.raises(ann.FrameMismatchError):
            ann.validate(make_session(), frame_count=3)

    def test_zero_cyst_organoid_counts_toward_population(self):
        organoids = (
            ann.OrganoidAnnotation(organoid_id=0, anchor=(5.0, 5.0), cysts=()),
            ann.OrganoidAnnotation(
                organoid_id=1, anchor=(50.0, 50.0),
                cysts=(ann.CystPrompt(cyst_id=0, bbox=(10, 10, 20, 20)),),
            ),
        )
        validated = ann.validate(make_session(organoids))
        assert validated.n_total_organoids == 2

    def test_idempotent(self):
        validated = ann.validate(make_session())
        assert ann.validate(validated) == validated

    def test_cyst_organoid_map_total(self):
        organoids = (
            ann.OrganoidAnnotation(
                organoid_id="a", anchor=(5.0, 5.0),
                cysts=(
                    ann.CystPrompt(cyst_id="c1", bbox=(10, 10, 20, 20)),
                    ann.CystPrompt(cyst_id="c2", bbox=(30, 10, 40, 20)),
                ),
            ),
            ann.OrganoidAnnotation(
                organoid_id="b", anchor=(60.0, 50.0),
                cysts=(ann.CystPrompt(cyst_id="c3", bbox=(50, 30, 64, 44)),),
            ),
        )
        validated = ann.validate(make_session(organoids))
        mapping = validated.organoid_of_cyst
        assert set(mapping.keys()) == {c.cyst_id for c in validated.cysts}
        assert mapping == {0: 0, 1: 0, 2: 1}


class TestSerialization:
    def test_round_trip(self):
        s = make_session()
        assert ann.loads(ann.dumps(s)) == s

    def test_round_trip_with_explicit_timestamps(self):
        s = make_session()
        cal = ann.Calibration(
            um_per_pixel=2.0, total_duration_hours=10.0, frame_count=7,
            timestamps_hours=(0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0),
        )
        s = ann.AnnotationSession(
            frame_width=s.frame_width, frame_height=s.frame_height,
            annotated_frame_index=6, calibration=cal, organoids=s.organoids,
        )
        assert ann.loads(ann.dumps(s)) == s

    def test_schema_keys(self):
        import json

        doc = json.loads(ann.dumps(make_session()))
        assert set(doc) == {
            "frame_width", "frame_height", "annotated_frame_index",
            "calibration", "organoids",
        }
        assert set(doc["calibration"]) == {
            "um_per_pixel", "total_duration_hours", "frame_count",
        }
        org = doc["organoids"][0]
        assert set(org) == {"organoid_id", "anchor", "cysts"}
        assert set(org["cysts"][0]) == {"cyst_id", "bbox"}

    def test_malformed_document(self):
        with pytest.raises(ann.AnnotationError):
            ann.loads("{not json")
        with pytest.raises(ann.AnnotationError):
            ann.loads('{"frame_width": 10}')

    @given(
        st.lists(
            st.tuples(
                st.integers(min_value=0, max_value=60),
                st.integers(min_value=0, max_value=60),
            ),
            min_size=1,
            max_size=5,
        )
    )
    @settings(max_examples=30, deadline=None)
    def test_round_trip_random_sessions(self, corners):
        organoids = []
        for i, (x, y) in enumerate(corners):
            organoids.append(
                ann.OrganoidAnnotation(
                    organoid_id=i,
                    anchor=(float(x), float(y)),
                    cysts=(
                        ann.CystPrompt(cyst_id=i, bbox=(x, y, x + 10, y + 10)),
                    ),
                )
            )
        s = make_session(organoids)
        assert ann.loads(ann.dumps(s)) == s
