"""
Scene Simulator
Synthetic world model standing in for the camera, the face/hand detectors,
the LED optics and the UWB radio. Actors are projected through the pinhole
model; noise is applied after projection.

Randomness comes from one seed split into two independent streams:
optical noise (detections, blobs) and radio noise (UWB readings). Each
frame draws a fixed number of optical variates per actor whatever the
outcome, so two runs that differ only in, say, packet length see the same
noise on the same frames.
"""
import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.services.gesture import HAND_DETECTION_RANGE_M, swipe_sign
from src.services.observations import (
    BBox,
    BleTrigger,
    FaceDetection,
    FrameObservation,
    HandObservation,
    LuminanceBlob,
    Modality,
    RangingReading,
)
from src.services.optics import (
    FACE_WIDTH_RATIO,
    REFERENCE_FACE_HEIGHT_M,
    CameraModel,
    distance_from_face_height,
    face_pixel_height,
    hand_keypoint_span,
    led_blob_area,
    norm3,
    project_point,
)
from src.services.scenario import Actor, NoiseModel, ScenarioFile, SignalEvent
from src.services.vlc import PACKET_BITS, encode_packet

logger = logging.getLogger(__name__)

# Scripted swipes travel this multiple of the recognizer's swipe threshold
SWIPE_OVERSHOOT = 1.2
# The hand stays up this long after a scripted swipe ends
HAND_LINGER_MS = 200.0

_TIME_EPS = 1e-9


def uwb_measurement(
    tag: Tuple[float, float, float],
    camera: CameraModel,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> RangingReading:
    """
    Spherical coordinates of a camera-frame point (azimuth +right,
    elevation +up) plus Gaussian noise. Always draws three variates.
    """
    X, Y, Z = tag
    draws = rng.normal(0.0, 1.0, 3)
    distance = norm3(tag)
    azimuth = math.degrees(math.atan2(X, Z))
    elevation = math.degrees(math.atan2(-Y, math.hypot(X, Z)))
    return RangingReading(
        distance_m=max(1e-3, distance + noise.uwb_distance_sigma_m * draws[0]),
        azimuth_deg=azimuth + noise.uwb_angle_sigma_deg * draws[1],
        elevation_deg=elevation + noise.uwb_angle_sigma_deg * draws[2],
    )


def _add(a, b) -> Tuple[float, float, float]:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def frame_count(scenario: ScenarioFile) -> int:
    return int(math.floor(scenario.duration_ms * scenario.camera.frame_rate_hz / 1000 + _TIME_EPS)) + 1


class SceneSimulator:
    """Deterministic observation generator for one (scenario, seed) trial."""

    def __init__(
        self,
        scenario: ScenarioFile,
        seed: Optional[int] = None,
        packet_bits: int = PACKET_BITS,
    ):
        self.scenario = scenario
        self.camera = scenario.camera
        self.noise = scenario.noise
        self.seed = scenario.noise.rng_seed if seed is None else seed
        self.packet_bits = packet_bits
        optical_seq, radio_seq = np.random.SeedSequence(self.seed).spawn(2)
        self._optical = np.random.default_rng(optical_seq)
        self._radio = np.random.default_rng(radio_seq)
        self._next_frame = 0
        self._actors: Dict[str, Actor] = {a.actor_id: a for a in scenario.actors}

        # actor_id -> [(first frame, bits)]
        self._transmissions: Dict[str, List[Tuple[int, str]]] = {}
        # actor_id -> gesture events in time order
        self._gestures: Dict[str, List[SignalEvent]] = {}
        # frame index -> triggers delivered on that frame
        self._triggers: Dict[int, List[BleTrigger]] = {}
        self._schedule()

    @property
    def frame_count(self) -> int:
        return frame_count(self.scenario)

    def frame_time_ms(self, frame_index: int) -> float:
        return frame_index * 1000.0 / self.camera.frame_rate_hz

    def _schedule(self) -> None:
        fps = self.camera.frame_rate_hz
        vlc = self.scenario.vlc
        for event in self.scenario.events:
            if event.modality == Modality.VLC:
                start = int(math.floor(event.time_ms * fps / 1000 + _TIME_EPS)) + 1
                bits = encode_packet(event.command, self.packet_bits, vlc.preamble_pattern, vlc.crc_polynomial)
                self._transmissions.setdefault(event.actor_id, []).append((start, bits))
            elif event.modality == Modality.GESTURE:
                self._gestures.setdefault(event.actor_id, []).append(event)
            elif event.modality == Modality.UWB:
                tag = self._actors[event.actor_id].devices.uwb_tag
                frame = int(math.ceil(event.time_ms * fps / 1000 - _TIME_EPS))
                self._triggers.setdefault(frame, []).append(
                    BleTrigger(t_ms=event.time_ms, mac=tag.mac, command=event.command)
                )

    # ── Per-actor rendering ───────────────────────────────────────────────

    def _led_bit(self, actor_id: str, frame_index: int) -> Optional[bool]:
        """Scripted LED state, or None when the actor is not transmitting."""
        for start, bits in self._transmissions.get(actor_id, []):
            if start <= frame_index < start + len(bits):
                return bits[frame_index - start] == "1"
        return None

    def _led_visible(self, actor_id: str, frame_index: int, u: float) -> bool:
        # One uniform covers both effects: motion error inverts any transmitting
        # frame, dropout only darkens a lit one
        lit = self._led_bit(actor_id, frame_index)
        if lit is None:
            return False
        if u < self.noise.led_motion_error_prob:
            return not lit
        return lit and u >= self.noise.led_motion_error_prob + self.noise.blob_dropout_prob

    def _face_detection(
        self, actor: Actor, face_pos, jitter: np.ndarray
    ) -> Optional[Tuple[FaceDetection, float]]:
        proj = project_point(self.camera, face_pos)
        if proj is None:
            return None
        (x, y), _ = proj
        d = norm3(face_pos)
        h_px = face_pixel_height(d) * actor.face_height_m / REFERENCE_FACE_HEIGHT_M
        w_px = h_px * FACE_WIDTH_RATIO
        x += jitter[0] * self.camera.width_px
        y += jitter[1] * self.camera.height_px
        bbox = BBox.from_pixels(
            x - w_px / 2, y - h_px / 2, w_px, h_px, self.camera.width_px, self.camera.height_px
        ).clipped()
        if bbox is None:
            return None
        return FaceDetection(bbox=bbox, confidence=1.0, truth_actor_id=actor.actor_id), h_px

    def _hand_position(self, actor: Actor, face_pos, t_ms: float):
        """World palm position, or None when the hand is not raised."""
        if actor.hand is None:
            return None
        base = _add(face_pos, actor.hand.offset_m)

        active = None
        for event in self._gestures.get(actor.actor_id, []):
            if event.time_ms - _TIME_EPS <= t_ms <= event.time_ms + event.gesture_duration_ms + HAND_LINGER_MS:
                active = event
        if active is not None:
            fraction = min(1.0, max(0.0, (t_ms - active.time_ms) / active.gesture_duration_ms))
            cfg = self.scenario.gesture
            face_width_m = actor.face_height_m * FACE_WIDTH_RATIO
            travel = SWIPE_OVERSHOOT * cfg.min_swipe_distance_factor * face_width_m
            dx = swipe_sign(active.command, cfg) * fraction * travel
            return (base[0] + dx, base[1], base[2])

        if any(iv.start_ms <= t_ms <= iv.end_ms for iv in actor.hand.raised):
            return base
        return None

    def _hand_observation(self, actor: Actor, face_pos, palm_pos) -> Optional[HandObservation]:
        # Range is judged on the bystander (face), inclusive; the span on the palm
        if norm3(face_pos) > HAND_DETECTION_RANGE_M:
            return None
        dist = norm3(palm_pos)
        proj = project_point(self.camera, palm_pos)
        if proj is None:
            return None
        (px, py), _ = proj
        s = hand_keypoint_span(dist)
        w, h = self.camera.width_px, self.camera.height_px

        def pt(dx: float, dy: float):
            return ((px + dx * s) / w, (py + dy * s) / h)

        obs = HandObservation(
            wrist=pt(0.0, 0.9),
            index_mcp=pt(-0.35, -0.45),
            pinky_mcp=pt(0.35, -0.45),
            index_tip=pt(-0.5, -1.0),
            pinky_tip=pt(0.5, -1.0),
            truth_actor_id=actor.actor_id,
        )
        points = (obs.wrist, obs.index_mcp, obs.pinky_mcp, obs.index_tip, obs.pinky_tip)
        if any(not (0.0 <= c <= 1.0) for p in points for c in p):
            return None
        return obs

    def _false_blobs(self, face_bbox: BBox, expected_area: float, count: int) -> List[LuminanceBlob]:
        # Uniform over the region a decoder would search below this face
        w, h = self.camera.width_px, self.camera.height_px
        cx = (face_bbox.x + face_bbox.w / 2) * w
        x0, x1 = max(0.0, cx - face_bbox.w * w), min(float(w), cx + face_bbox.w * w)
        y0, y1 = face_bbox.bottom * h, min(float(h), (face_bbox.bottom + 3 * face_bbox.h) * h)
        blobs = []
        for _ in range(count):
            x = self._optical.uniform(x0, x1) if x1 > x0 else x0
            y = self._optical.uniform(y0, y1) if y1 > y0 else y0
            blobs.append(LuminanceBlob((x, y), max(1, int(round(expected_area))), True, None))
        return blobs

    # ── Frames ────────────────────────────────────────────────────────────

    def synthesize_frame(self, frame_index: int) -> FrameObservation:
        """Observations for one frame; frames must be generated in order."""
        if frame_index != self._next_frame:
            raise ValueError(f"frames must be synthesized in order: expected {self._next_frame}, got {frame_index}")
        self._next_frame += 1

        noise = self.noise
        t_ms = self.frame_time_ms(frame_index)
        frame = FrameObservation(frame_index=frame_index, t_ms=t_ms)

        for actor in self.scenario.actors:
            u_face, u_hand, u_blob = self._optical.random(3)
            jitter = self._optical.normal(0.0, 1.0, 2) * noise.bbox_jitter_sigma

            face_pos = actor.position_at(t_ms)
            rendered = self._face_detection(actor, face_pos, jitter)
            if rendered is not None:
                detection, h_px = rendered
                if u_face >= noise.face_dropout_prob:
                    frame.faces.append(detection)
                if noise.false_blob_rate > 0:
                    n_false = int(self._optical.poisson(noise.false_blob_rate))
                    expected = led_blob_area(distance_from_face_height(h_px))
                    frame.luminance_blobs.extend(self._false_blobs(detection.bbox, expected, n_false))

            palm = self._hand_position(actor, face_pos, t_ms)
            if palm is not None and u_hand >= noise.hand_dropout_prob:
                obs = self._hand_observation(actor, face_pos, palm)
                if obs is not None:
                    frame.hands.append(obs)

            beacon = actor.devices.led_beacon
            if beacon is not None and self._led_visible(actor.actor_id, frame_index, u_blob):
                led_pos = _add(face_pos, beacon.offset_m)
                proj = project_point(self.camera, led_pos)
                if proj is not None:
                    area = max(1, int(round(led_blob_area(norm3(led_pos)))))
                    frame.luminance_blobs.append(
                        LuminanceBlob(proj[0], area, True, actor.actor_id)
                    )

        frame.ble_triggers = list(self._triggers.get(frame_index, []))
        return frame

    def measure_tag(self, mac: str, t_ms: float) -> Optional[RangingReading]:
        """
        One UWB reading of the tag at t_ms, or None when the tag is behind
        the camera or outside its field of view.
        """
        actor = self.scenario.actor_by_mac(mac)
        if actor is None:
            return None
        tag_pos = _add(actor.position_at(t_ms), actor.devices.uwb_tag.offset_m)
        reading = uwb_measurement(tag_pos, self.camera, self.noise, self._radio)
        if tag_pos[2] <= 0:
            return None
        true_az = math.degrees(math.atan2(tag_pos[0], tag_pos[2]))
        true_el = math.degrees(math.atan2(-tag_pos[1], math.hypot(tag_pos[0], tag_pos[2])))
        if abs(true_az) > self.camera.hfov_deg / 2 or abs(true_el) > self.camera.vfov_deg / 2:
            return None
        return reading
