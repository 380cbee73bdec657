"""
Unit tests for the face tracker and per-face privacy state.
"""
import pytest

from src.services.face_pipeline import (
    FaceTracker,
    TrackedFace,
    TrackerConfig,
    apply_privacy_command,
    estimate_distance_from_face,
    render_annotations,
)
from src.services.observations import BBox, Command, FaceDetection, PrivacyState
from src.services.optics import CameraModel


def _make_detection(cx: float, cy: float, w: float = 0.05, h: float = 0.08, actor=None) -> FaceDetection:
    return FaceDetection(bbox=BBox(cx - w / 2, cy - h / 2, w, h), truth_actor_id=actor)


class TestTrackFaces:
    def test_new_detection_gets_id_one(self):
        tracker = FaceTracker()
        tracks = tracker.track_faces([_make_detection(0.5, 0.5)], 0.0)
        assert [t.face_id for t in tracks] == [1]
        assert tracker.new_ids == [1]

    def test_moving_face_keeps_id(self):
        tracker = FaceTracker()
        tracker.track_faces([_make_detection(0.5, 0.5)], 0.0)
        tracks = tracker.track_faces([_make_detection(0.52, 0.5)], 33.3)
        assert [t.face_id for t in tracks] == [1]
        assert tracker.new_ids == []

    def test_match_threshold_boundary(self):
        tracker = FaceTracker()
        tracker.track_faces([_make_detection(0.3, 0.5)], 0.0)
        tracker.track_faces([_make_detection(0.54, 0.5)], 33.3)
        assert [t.face_id for t in tracker.tracks] == [1]

        tracker = FaceTracker()
        tracker.track_faces([_make_detection(0.3, 0.5)], 0.0)
        tracker.track_faces([_make_detection(0.56, 0.5)], 33.3)
        assert [t.face_id for t in tracker.tracks] == [1, 2]

    def test_occlusion_of_967ms_keeps_id(self):
        tracker = FaceTracker()
        tracker.track_faces([_make_detection(0.5, 0.5)], 0.0)
        for t in (33.3, 500.0, 900.0):
            tracker.track_faces([], t)
        tracks = tracker.track_faces([_make_detection(0.5, 0.5)], 966.7)
        assert [t.face_id for t in tracks] == [1]
        assert tracker.lost_ids == []

    def test_occlusion_of_1033ms_drops_id(self):
        tracker = FaceTracker()
        tracker.track_faces([_make_detection(0.5, 0.5)], 0.0)
        tracks = tracker.track_faces([_make_detection(0.5, 0.5)], 1033.3)
        assert tracker.lost_ids == [1]
        assert [t.face_id for t in tracks] == [2]

    def test_exactly_prune_window_keeps_id(self):
        tracker = FaceTracker(TrackerConfig(prune_after_ms=1000))
        tracker.track_faces([_make_detection(0.5, 0.5)], 0.0)
        tracker.track_faces([_make_detection(0.5, 0.5)], 1000.0)
        assert [t.face_id for t in tracker.tracks] == [1]

    def test_ids_never_recycled(self):
        tracker = FaceTracker()
        tracker.track_faces([_make_detection(0.2, 0.5), _make_detection(0.8, 0.5)], 0.0)
        tracker.track_faces([_make_detection(0.8, 0.5)], 1100.0)
        tracks = tracker.track_faces([_make_detection(0.8, 0.5), _make_detection(0.2, 0.5)], 1133.3)
        assert sorted(t.face_id for t in tracks) == [3, 4]

    def test_nearest_pair_matched_first(self):
        tracker = FaceTracker()
        tracker.track_faces([_make_detection(0.40, 0.5), _make_detection(0.60, 0.5)], 0.0)
        tracks = tracker.track_faces([_make_detection(0.62, 0.5), _make_detection(0.45, 0.5)], 33.3)
        by_id = {t.face_id: t for t in tracks}
        assert by_id[1].centroid[0] == pytest.approx(0.45)
        assert by_id[2].centroid[0] == pytest.approx(0.62)

    def test_truth_label_follows_detection(self):
        tracker = FaceTracker()
        tracks = tracker.track_faces([_make_detection(0.5, 0.5, actor="alice")], 0.0)
        assert tracks[0].truth_actor_id == "alice"


class TestPrivacyState:
    def _make_track(self) -> TrackedFace:
        return TrackedFace(face_id=1, bbox=BBox(0.4, 0.4, 0.1, 0.1), last_seen_ms=0.0, first_seen_ms=0.0)

    def test_new_track_is_clear(self):
        assert self._make_track().privacy_state == PrivacyState.CLEAR

    def test_blur_then_unblur(self):
        track = self._make_track()
        apply_privacy_command(track, Command.BLUR, 100.0)
        assert track.privacy_state == PrivacyState.BLURRED
        apply_privacy_command(track, Command.UNBLUR, 200.0)
        assert track.privacy_state == PrivacyState.CLEAR
        assert track.state_changed_ms == 200.0

    def test_repeated_command_is_idempotent(self):
        track = self._make_track()
        apply_privacy_command(track, Command.BLUR, 100.0)
        apply_privacy_command(track, Command.BLUR, 500.0)
        assert track.state_changed_ms == 100.0

    def test_annotations_carry_state(self):
        track = self._make_track()
        apply_privacy_command(track, Command.BLUR, 0.0)
        (annotation,) = render_annotations([track])
        assert annotation.face_id == 1
        assert annotation.privacy_state == PrivacyState.BLURRED


class TestDistance:
    def test_face_height_estimate(self):
        assert estimate_distance_from_face(215.0) == pytest.approx(1.0)
        assert estimate_distance_from_face(71.6667) == pytest.approx(3.0, rel=1e-4)

    def test_track_distance_uses_camera_height(self):
        cam = CameraModel()
        track = TrackedFace(face_id=1, bbox=BBox(0.4, 0.4, 0.05, 107.5 / 960), last_seen_ms=0, first_seen_ms=0)
        assert track.distance_m(cam) == pytest.approx(2.0)
