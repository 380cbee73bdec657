"""
Face Pipeline Service
Modality-agnostic backend shared by gesture, VLC and UWB: persistent face
tracking over stateless per-frame detections, distance estimation from the
bounding box, and per-face privacy state.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, NamedTuple, Optional

from pydantic import BaseModel, ConfigDict, Field

from src.services.observations import BBox, Command, FaceDetection, PrivacyState
from src.services.optics import CameraModel, distance_from_face_height

logger = logging.getLogger(__name__)

# Frame times are i * 1000 / fps floats; comparisons at exact frame
# multiples must not flip on rounding.
_TIME_EPS_MS = 1e-6


class TrackerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    match_threshold: float = Field(0.25, gt=0)
    prune_after_ms: float = Field(1000.0, gt=0)


@dataclass
class TrackedFace:
    face_id: int
    bbox: BBox
    last_seen_ms: float
    first_seen_ms: float
    privacy_state: PrivacyState = PrivacyState.CLEAR
    face_cooldown_until_ms: float = float("-inf")
    state_changed_ms: Optional[float] = None
    truth_actor_id: Optional[str] = None

    @property
    def centroid(self):
        return self.bbox.centroid

    def height_px(self, camera: CameraModel) -> float:
        return self.bbox.h * camera.height_px

    def width_px(self, camera: CameraModel) -> float:
        return self.bbox.w * camera.width_px

    def distance_m(self, camera: CameraModel) -> float:
        return estimate_distance_from_face(self.height_px(camera))


class Annotation(NamedTuple):
    face_id: int
    bbox: BBox
    privacy_state: PrivacyState


def _distance(a, b) -> float:
    return ((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) ** 0.5


class FaceTracker:
    """
    Greedy nearest-pair tracker.

    Each frame: stale tracks are pruned first, then detection/track pairs
    closer than match_threshold are matched in ascending distance order
    (ties go to the lower face_id), and leftovers get fresh ids from a
    counter that is never recycled.
    """

    def __init__(self, cfg: Optional[TrackerConfig] = None):
        self.cfg = cfg or TrackerConfig()
        self._tracks: Dict[int, TrackedFace] = {}
        self._next_id = 1
        self.lost_ids: List[int] = []
        self.new_ids: List[int] = []

    @property
    def tracks(self) -> List[TrackedFace]:
        return [self._tracks[fid] for fid in sorted(self._tracks)]

    def live(self) -> Dict[int, TrackedFace]:
        return {fid: self._tracks[fid] for fid in sorted(self._tracks)}

    def track_faces(self, detections: List[FaceDetection], now_ms: float) -> List[TrackedFace]:
        self.lost_ids = [
            fid for fid, t in sorted(self._tracks.items())
            if now_ms - t.last_seen_ms > self.cfg.prune_after_ms + _TIME_EPS_MS
        ]
        for fid in self.lost_ids:
            del self._tracks[fid]

        pairs = []
        for di, det in enumerate(detections):
            for fid, track in self._tracks.items():
                d = _distance(det.bbox.centroid, track.centroid)
                if d < self.cfg.match_threshold:
                    pairs.append((d, fid, di))
        pairs.sort()

        used_tracks, used_dets = set(), set()
        for _, fid, di in pairs:
            if fid in used_tracks or di in used_dets:
                continue
            used_tracks.add(fid)
            used_dets.add(di)
            track = self._tracks[fid]
            track.bbox = detections[di].bbox
            track.last_seen_ms = now_ms
            track.truth_actor_id = detections[di].truth_actor_id

        self.new_ids = []
        for di, det in enumerate(detections):
            if di in used_dets:
                continue
            fid = self._next_id
            self._next_id += 1
            self._tracks[fid] = TrackedFace(
                face_id=fid,
                bbox=det.bbox,
                last_seen_ms=now_ms,
                first_seen_ms=now_ms,
                truth_actor_id=det.truth_actor_id,
            )
            self.new_ids.append(fid)

        return self.tracks


def estimate_distance_from_face(bbox_height_px: float) -> float:
    """Metres from face bounding-box height in pixels (215 px at 1 m)."""
    return distance_from_face_height(bbox_height_px)


def apply_privacy_command(track: TrackedFace, command: Command, now_ms: float) -> TrackedFace:
    """Idempotent: only an actual state change is timestamped."""
    target = PrivacyState.BLURRED if command == Command.BLUR else PrivacyState.CLEAR
    if track.privacy_state != target:
        track.privacy_state = target
        track.state_changed_ms = now_ms
        logger.debug(f"[t={now_ms:.0f}ms] face {track.face_id} -> {target.value}")
    return track


def render_annotations(tracks: Iterable[TrackedFace]) -> List[Annotation]:
    return [Annotation(t.face_id, t.bbox, t.privacy_state) for t in tracks]
