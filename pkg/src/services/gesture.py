"""
Gesture Modality
Hand tracking and velocity-based swipe recognition.

A swipe is accepted only when all of these hold:
  - the palm moved horizontally by at least min_swipe_distance_factor x the
    associated face width, measured against some point of the last 300 ms
  - every palm sample from that point until now stayed in the vertical zone
    around the face
  - neither the hand nor the face is cooling down
  - the hand (index/pinky fingertip span) and the face are at the same
    distance within geo_tolerance
Positive screen displacement means Blur, negative means Unblur (flipped by
mirror_direction).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from src.services.face_pipeline import TrackedFace
from src.services.observations import (
    Command,
    FrameObservation,
    HandObservation,
    Modality,
    Point,
    Toggle,
)
from src.services.optics import CameraModel, distance_from_hand_span, relative_mismatch
from src.services.trace_logger import TraceKind, TraceRecorder

logger = logging.getLogger(__name__)

# Hands of a bystander whose face is farther than this are never reported
HAND_DETECTION_RANGE_M = 3.0

_TIME_EPS_MS = 1e-6


class GestureConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    history_max_age_ms: float = Field(300.0, gt=0)
    min_swipe_distance_factor: float = Field(0.8, gt=0)
    vertical_tolerance_factor: float = Field(0.5, gt=0)
    cooldown_ms: float = Field(1500.0, gt=0)
    hand_match_max_distance: float = Field(0.1, gt=0)
    geo_tolerance: float = Field(0.10, gt=0, lt=1)
    mirror_direction: bool = False


@dataclass
class TrackedHand:
    hand_id: int
    observation: HandObservation
    last_seen_ms: float
    # (t_ms, palm_x, palm_y), time-ordered, normalized coordinates
    history: List[Tuple[float, float, float]] = field(default_factory=list)
    hand_cooldown_until_ms: float = float("-inf")
    last_rejection: Optional[str] = None

    @property
    def wrist(self) -> Point:
        return self.observation.wrist


def palm_center(obs: HandObservation) -> Point:
    """Mean of wrist, index MCP and pinky MCP."""
    xs = (obs.wrist[0], obs.index_mcp[0], obs.pinky_mcp[0])
    ys = (obs.wrist[1], obs.index_mcp[1], obs.pinky_mcp[1])
    return (sum(xs) / 3.0, sum(ys) / 3.0)


def _distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


class HandTracker:
    """Wrist-proximity tracker; hands unseen for longer than the history window are dropped."""

    def __init__(self, cfg: Optional[GestureConfig] = None):
        self.cfg = cfg or GestureConfig()
        self._hands: Dict[int, TrackedHand] = {}
        self._next_id = 1

    @property
    def hands(self) -> List[TrackedHand]:
        return [self._hands[hid] for hid in sorted(self._hands)]

    def track_hands(self, observations: List[HandObservation], now_ms: float) -> List[TrackedHand]:
        max_age = self.cfg.history_max_age_ms
        for hid in [h for h, t in self._hands.items() if now_ms - t.last_seen_ms > max_age + _TIME_EPS_MS]:
            del self._hands[hid]

        pairs = []
        for oi, obs in enumerate(observations):
            for hid, hand in self._hands.items():
                d = _distance(obs.wrist, hand.wrist)
                if d < self.cfg.hand_match_max_distance:
                    pairs.append((d, hid, oi))
        pairs.sort()

        matched: Dict[int, int] = {}
        used = set()
        for _, hid, oi in pairs:
            if hid in matched or oi in used:
                continue
            matched[hid] = oi
            used.add(oi)

        for oi, obs in enumerate(observations):
            if oi in used:
                continue
            hid = self._next_id
            self._next_id += 1
            self._hands[hid] = TrackedHand(hand_id=hid, observation=obs, last_seen_ms=now_ms)
            matched[hid] = oi

        for hid, oi in matched.items():
            hand = self._hands[hid]
            hand.observation = observations[oi]
            hand.last_seen_ms = now_ms
            px, py = palm_center(observations[oi])
            hand.history.append((now_ms, px, py))

        for hand in self._hands.values():
            cutoff = now_ms - max_age - _TIME_EPS_MS
            hand.history = [s for s in hand.history if s[0] >= cutoff]

        return self.hands


def associate_face(hand: TrackedHand, faces: Iterable[TrackedFace]) -> Optional[int]:
    """Face whose bbox centroid is nearest the wrist; ties go to the lower face_id."""
    best = None
    for face in faces:
        key = (_distance(hand.wrist, face.centroid), face.face_id)
        if best is None or key < best:
            best = key
    return best[1] if best else None


def swipe_command(dx: float, cfg: GestureConfig) -> Command:
    positive = dx > 0
    if cfg.mirror_direction:
        positive = not positive
    return Command.BLUR if positive else Command.UNBLUR


def swipe_sign(command: Command, cfg: GestureConfig) -> int:
    """Screen-x direction a bystander moves the hand to send `command`."""
    sign = 1 if command == Command.BLUR else -1
    return -sign if cfg.mirror_direction else sign


def hand_span_px(obs: HandObservation, camera: CameraModel) -> float:
    dx = (obs.index_tip[0] - obs.pinky_tip[0]) * camera.width_px
    dy = (obs.index_tip[1] - obs.pinky_tip[1]) * camera.height_px
    return math.hypot(dx, dy)


def evaluate_swipe(
    hand: TrackedHand,
    face: TrackedFace,
    now_ms: float,
    cfg: GestureConfig,
    camera: CameraModel,
) -> Tuple[Optional[Command], str]:
    """
    Pure check of the four swipe constraints. Returns (command, "fired") or
    (None, reason) with reason one of: no_history, below_threshold,
    vertical_zone, cooldown, geometry.
    """
    if len(hand.history) < 2:
        return None, "no_history"

    _, x_now, _ = hand.history[-1]
    start, best_dx = None, 0.0
    for i, (_, x, _) in enumerate(hand.history[:-1]):
        dx = x_now - x
        if abs(dx) > abs(best_dx):
            start, best_dx = i, dx
    threshold = cfg.min_swipe_distance_factor * face.bbox.w
    if start is None or abs(best_dx) < threshold:
        return None, "below_threshold"

    margin = cfg.vertical_tolerance_factor * face.bbox.h
    top, bottom = face.bbox.y - margin, face.bbox.bottom + margin
    if any(not (top <= y <= bottom) for _, _, y in hand.history[start:]):
        return None, "vertical_zone"

    if now_ms < hand.hand_cooldown_until_ms or now_ms < face.face_cooldown_until_ms:
        return None, "cooldown"

    span = hand_span_px(hand.observation, camera)
    if span <= 0:
        return None, "geometry"
    d_hand = distance_from_hand_span(span)
    d_face = face.distance_m(camera)
    if relative_mismatch(d_hand, d_face) > cfg.geo_tolerance + 1e-12:
        return None, "geometry"

    return swipe_command(best_dx, cfg), "fired"


def recognize_swipe(
    hand: TrackedHand,
    face: TrackedFace,
    now_ms: float,
    cfg: GestureConfig,
    camera: CameraModel,
) -> Optional[Command]:
    """evaluate_swipe, plus the side effects of a fired gesture (cooldowns, cleared history)."""
    command, _ = evaluate_swipe(hand, face, now_ms, cfg, camera)
    if command is not None:
        hand.hand_cooldown_until_ms = now_ms + cfg.cooldown_ms
        face.face_cooldown_until_ms = now_ms + cfg.cooldown_ms
        hand.history.clear()
    return command


class GestureRecognizer:
    """Per-scenario gesture modality state, advanced once per frame."""

    def __init__(self, cfg: GestureConfig, camera: CameraModel):
        self.cfg = cfg
        self.camera = camera
        self.hand_tracker = HandTracker(cfg)

    def on_faces_lost(self, face_ids: List[int], now_ms: float, recorder: TraceRecorder) -> None:
        # Face cooldowns live on the track and vanish with it
        return None

    def process_frame(
        self,
        frame: FrameObservation,
        faces: Dict[int, TrackedFace],
        now_ms: float,
        recorder: TraceRecorder,
    ) -> List[Toggle]:
        toggles: List[Toggle] = []
        hands = self.hand_tracker.track_hands(frame.hands, now_ms)
        for hand in hands:
            if hand.last_seen_ms != now_ms:
                continue
            face_id = associate_face(hand, faces.values())
            if face_id is None:
                continue
            face = faces[face_id]
            command, reason = evaluate_swipe(hand, face, now_ms, self.cfg, self.camera)
            if command is None:
                if reason in ("vertical_zone", "cooldown", "geometry") and reason != hand.last_rejection:
                    recorder.record(
                        now_ms, TraceKind.VALIDATION_REJECTED,
                        modality=Modality.GESTURE, face_id=face_id, hand_id=hand.hand_id, reason=reason,
                    )
                hand.last_rejection = reason
                continue

            recognize_swipe(hand, face, now_ms, self.cfg, self.camera)
            hand.last_rejection = None
            recorder.record(
                now_ms, TraceKind.GESTURE_FIRED,
                face_id=face_id, hand_id=hand.hand_id, command=command,
            )
            logger.debug(f"[t={now_ms:.0f}ms] hand {hand.hand_id} swipe {command.label} on face {face_id}")
            toggles.append(Toggle(face_id, command, Modality.GESTURE, "gesture"))
        return toggles
