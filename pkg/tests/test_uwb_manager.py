"""
Unit tests for the BLE + UWB protocol manager: burst smoothing, screen
mapping, binding, and the per-tag state machine.
"""
import math
import random

import pytest
from pydantic import ValidationError

from src.services.face_pipeline import TrackedFace
from src.services.observations import BBox, BleTrigger, Command, FrameObservation, RangingReading
from src.services.optics import CameraModel, norm3, project_point
from src.services.trace_logger import TraceKind, TraceRecorder
from src.services.uwb_manager import (
    ShortBurstError,
    UwbAction,
    UwbConfig,
    UwbManager,
    UwbPhase,
    bind,
    project_to_screen,
    smooth_burst,
)

CAM = CameraModel()
MAC = "C0FFEE000001"


def _face_at(face_id: int, pos) -> TrackedFace:
    (x, y), _ = project_point(CAM, pos)
    h = 215.0 / norm3(pos)
    w = 0.78 * h
    bbox = BBox.from_pixels(x - w / 2, y - h / 2, w, h, CAM.width_px, CAM.height_px)
    return TrackedFace(face_id=face_id, bbox=bbox, last_seen_ms=0.0, first_seen_ms=0.0)


def _reading_of(pos, scale: float = 1.0) -> RangingReading:
    X, Y, Z = pos
    return RangingReading(
        distance_m=norm3(pos) * scale,
        azimuth_deg=math.degrees(math.atan2(X, Z)),
        elevation_deg=math.degrees(math.atan2(-Y, math.hypot(X, Z))),
    )


EMPTY_SPOT = RangingReading(distance_m=4.0, azimuth_deg=30.0, elevation_deg=0.0)


class TestUwbConfig:
    def test_defaults(self):
        cfg = UwbConfig()
        assert (cfg.total_reading_count, cfg.readings_to_average, cfg.ranging_interval_ms) == (15, 3, 130.0)

    def test_average_cannot_exceed_total(self):
        with pytest.raises(ValidationError):
            UwbConfig(total_reading_count=2, readings_to_average=3)


class TestSmoothBurst:
    def test_averages_last_three(self):
        readings = [RangingReading(10.0, 10.0, 10.0)] * 12 + [
            RangingReading(2.0, 1.0, -1.0),
            RangingReading(3.0, 2.0, -2.0),
            RangingReading(4.0, 3.0, -3.0),
        ]
        assert smooth_burst(readings, UwbConfig()) == RangingReading(3.0, 2.0, -2.0)

    def test_short_burst_raises(self):
        with pytest.raises(ShortBurstError):
            smooth_burst([RangingReading(1.0, 0.0, 0.0)] * 14, UwbConfig())


class TestProjectToScreen:
    def test_boresight_is_centre(self):
        assert project_to_screen(RangingReading(3.0, 0.0, 0.0), CAM) == (640.0, 480.0)

    def test_fov_edge_inside(self):
        x, _ = project_to_screen(RangingReading(3.0, 36.0, 0.0), CAM)
        assert x == pytest.approx(1280.0)

    def test_outside_fov(self):
        assert project_to_screen(RangingReading(3.0, 36.5, 0.0), CAM) is None
        assert project_to_screen(RangingReading(3.0, 0.0, -29.0), CAM) is None

    def test_elevation_up_is_screen_up(self):
        _, y = project_to_screen(RangingReading(3.0, 0.0, 14.4), CAM)
        assert y == pytest.approx(240.0)


class TestBind:
    def test_binds_face_on_bearing_and_range(self):
        pos = (0.0, 0.0, 3.0)
        faces = {1: _face_at(1, pos)}
        r = _reading_of(pos)
        assert bind(project_to_screen(r, CAM), r, faces, UwbConfig(), CAM) == 1

    def test_distance_boundary(self):
        pos = (0.0, 0.0, 3.0)
        faces = {1: _face_at(1, pos)}
        near = _reading_of(pos, 1.09)
        far = _reading_of(pos, 1.11)
        assert bind(project_to_screen(near, CAM), near, faces, UwbConfig(), CAM) == 1
        assert bind(project_to_screen(far, CAM), far, faces, UwbConfig(), CAM) is None

    def test_width_expansion(self):
        face = _face_at(1, (0.0, 0.0, 3.0))
        x, y, w, h = face.bbox.to_pixels(CAM.width_px, CAM.height_px)
        r = RangingReading(3.0, 0.0, 0.0)
        inside = (x + w / 2 + 1.2 * w, y + h / 2)
        outside = (x + w / 2 + 1.3 * w, y + h / 2)
        assert bind(inside, r, {1: face}, UwbConfig(), CAM) == 1
        assert bind(outside, r, {1: face}, UwbConfig(), CAM) is None

    def test_height_not_expanded(self):
        face = _face_at(1, (0.0, 0.0, 3.0))
        x, y, w, h = face.bbox.to_pixels(CAM.width_px, CAM.height_px)
        r = RangingReading(3.0, 0.0, 0.0)
        assert bind((x + w / 2, y + h + 2.0), r, {1: face}, UwbConfig(), CAM) is None

    def test_smallest_residual_wins(self):
        a = _face_at(1, (0.0, 0.0, 3.0))
        b = _face_at(2, (0.0, 0.0, 3.0))
        b.bbox = BBox(a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h * 1.05)
        r = RangingReading(3.0, 0.0, 0.0)
        assert bind((640.0, 480.0), r, {2: b, 1: a}, UwbConfig(), CAM) == 1


class TestStateMachine:
    def _make_manager(self):
        return UwbManager(UwbConfig(), CAM)

    def _measure_face(self, pos):
        return lambda mac, t: _reading_of(pos)

    def test_full_path_then_fast_path(self):
        pos = (0.0, 0.0, 3.0)
        faces = {1: _face_at(1, pos)}
        mgr = self._make_manager()

        decision = mgr.on_ble_trigger(BleTrigger(0.0, MAC, Command.BLUR), faces.keys(), 0.0)
        assert decision.action == UwbAction.START_BURST
        assert mgr.phase(MAC) == UwbPhase.RANGING

        assert mgr.advance(1949.0, self._measure_face(pos), faces) == []
        (outcome,) = mgr.advance(1950.0, self._measure_face(pos), faces)
        assert outcome.bound and outcome.face_id == 1
        assert mgr.phase(MAC) == UwbPhase.BOUND

        decision = mgr.on_ble_trigger(BleTrigger(3000.0, MAC, Command.UNBLUR), faces.keys(), 3000.0)
        assert (decision.action, decision.face_id) == (UwbAction.FAST_PATH, 1)
        assert mgr.ranging_sessions_started == 1
        assert mgr.fast_path_hits == 1

    def test_trigger_during_burst_dropped(self):
        mgr = self._make_manager()
        mgr.on_ble_trigger(BleTrigger(0.0, MAC, Command.BLUR), [1], 0.0)
        decision = mgr.on_ble_trigger(BleTrigger(100.0, MAC, Command.UNBLUR), [1], 100.0)
        assert decision.action == UwbAction.DROP
        assert mgr.ranging_sessions_started == 1

    def test_face_lost_purges_binding(self):
        mgr = self._make_manager()
        mgr.bindings[MAC] = 4
        mgr.phases[MAC] = UwbPhase.BOUND
        assert mgr.on_face_lost(4) == [MAC]
        assert MAC not in mgr.bindings
        assert mgr.phase(MAC) == UwbPhase.UNBOUND
        decision = mgr.on_ble_trigger(BleTrigger(0.0, MAC, Command.BLUR), [5], 0.0)
        assert decision.action == UwbAction.START_BURST

    def test_binding_to_dead_face_purged_on_trigger(self):
        mgr = self._make_manager()
        mgr.bindings[MAC] = 4
        decision = mgr.on_ble_trigger(BleTrigger(0.0, MAC, Command.BLUR), [5], 0.0)
        assert decision.action == UwbAction.START_BURST
        assert decision.purged_face_id == 4

    def test_out_of_fov_and_inconsistent_outcomes(self):
        faces = {1: _face_at(1, (0.0, 0.0, 3.0))}
        mgr = self._make_manager()
        mgr.on_ble_trigger(BleTrigger(0.0, "AAAAAAAAAAAA", Command.BLUR), faces.keys(), 0.0)
        mgr.on_ble_trigger(BleTrigger(0.0, "BBBBBBBBBBBB", Command.BLUR), faces.keys(), 0.0)

        def measure(mac, t):
            if mac == "AAAAAAAAAAAA":
                return RangingReading(3.0, 40.0, 0.0)
            return RangingReading(1.0, 0.0, 0.0)

        outcomes = mgr.advance(2000.0, measure, faces)
        assert [(o.mac, o.reason) for o in outcomes] == [
            ("AAAAAAAAAAAA", "out_of_fov"),
            ("BBBBBBBBBBBB", "no_consistent_face"),
        ]
        assert mgr.bindings == {}

    def test_missing_reading_aborts_burst(self):
        faces = {1: _face_at(1, (0.0, 0.0, 3.0))}
        mgr = UwbManager(UwbConfig(), CAM, measure=lambda mac, t: None if t < 500 else RangingReading(3.0, 0.0, 0.0))
        recorder = TraceRecorder()
        frame = FrameObservation(frame_index=0, t_ms=0.0, ble_triggers=[BleTrigger(0.0, MAC, Command.BLUR)])
        assert mgr.process_frame(frame, faces, 0.0, recorder) == []
        assert mgr.process_frame(FrameObservation(frame_index=60, t_ms=2000.0), faces, 2000.0, recorder) == []
        (aborted,) = recorder.of_kind(TraceKind.BURST_ABORTED)
        assert aborted.attributes["reason"] == "short_burst"
        assert mgr.phase(MAC) == UwbPhase.UNBOUND

    def test_process_frame_needs_measure(self):
        mgr = self._make_manager()
        with pytest.raises(RuntimeError):
            mgr.process_frame(FrameObservation(frame_index=0, t_ms=0.0), {}, 0.0, TraceRecorder())


# ── Randomized state machine conformance ────────────────────────────────

POSITIONS = [(0.8, 0.0, 2.0), (-0.9, 0.0, 3.0), (0.6, 0.0, 4.0)]
MACS = ["0A0000000001", "0A0000000002", "0A0000000003"]


class TestRandomizedConformance:
    @pytest.mark.parametrize("seed", range(20))
    def test_invariants_hold(self, seed):
        rng = random.Random(seed)
        mgr = UwbManager(UwbConfig(), CAM)
        next_id = 1
        live = {}  # position index -> TrackedFace
        for i in range(len(POSITIONS)):
            live[i] = _face_at(next_id, POSITIONS[i])
            next_id += 1
        bound_log = set()
        now = 0.0

        def faces():
            return {f.face_id: f for f in live.values()}

        def measure(mac, t):
            owner = MACS.index(mac)
            return _reading_of(POSITIONS[owner]) if owner in live else EMPTY_SPOT

        for _ in range(300):
            op = rng.choice(["trigger", "trigger", "advance", "advance", "lose", "add"])
            if op == "trigger":
                mac = rng.choice(MACS)
                decision = mgr.on_ble_trigger(BleTrigger(now, mac, Command.BLUR), faces().keys(), now)
                if decision.action == UwbAction.FAST_PATH:
                    # never served from a pruned face, only from a successful bind
                    assert decision.face_id in faces()
                    assert (mac, decision.face_id) in bound_log
            elif op == "advance":
                now += rng.choice([33.3, 130.0, 500.0, 1000.0])
                for outcome in mgr.advance(now, measure, faces()):
                    if outcome.bound:
                        assert outcome.face_id in faces()
                        bound_log.add((outcome.mac, outcome.face_id))
            elif op == "lose" and live:
                idx = rng.choice(sorted(live))
                fid = live.pop(idx).face_id
                for mac in mgr.on_face_lost(fid):
                    assert mgr.phase(mac) == UwbPhase.UNBOUND
                assert fid not in mgr.bindings.values()
            elif op == "add":
                dead = [i for i in range(len(POSITIONS)) if i not in live]
                if dead:
                    idx = rng.choice(dead)
                    live[idx] = _face_at(next_id, POSITIONS[idx])
                    next_id += 1

            for mac, fid in mgr.bindings.items():
                assert fid in faces()
                assert (mac, fid) in bound_log
                assert mgr.phase(mac) == UwbPhase.BOUND
            for mac, phase in mgr.phases.items():
                if phase == UwbPhase.BOUND:
                    assert mac in mgr.bindings
