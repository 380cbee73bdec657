"""
Shared observation types: what the synthetic camera and radios hand to
the face pipeline and the three signaling modalities.

Screen-space detections (faces, hands) use normalized [0,1] coordinates;
luminance blobs use pixels. Every observation carries the id of the actor
that produced it (truth_actor_id) for metrics attribution only.
"""
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Tuple

import numpy as np

Point = Tuple[float, float]


class Command(IntEnum):
    BLUR = 0x01
    UNBLUR = 0x02

    @property
    def label(self) -> str:
        return self.name.lower()


class Modality(str, Enum):
    GESTURE = "gesture"
    VLC = "vlc"
    UWB = "uwb"


class PrivacyState(str, Enum):
    CLEAR = "clear"
    BLURRED = "blurred"


@dataclass(frozen=True)
class BBox:
    """Normalized rectangle (x, y, w, h)."""

    x: float
    y: float
    w: float
    h: float

    @property
    def right(self) -> float:
        return self.x + self.w

    @property
    def bottom(self) -> float:
        return self.y + self.h

    @property
    def centroid(self) -> Point:
        return (self.x + self.w / 2, self.y + self.h / 2)

    def to_pixels(self, width_px: int, height_px: int) -> Tuple[float, float, float, float]:
        return (self.x * width_px, self.y * height_px, self.w * width_px, self.h * height_px)

    @classmethod
    def from_pixels(
        cls, x: float, y: float, w: float, h: float, width_px: int, height_px: int
    ) -> "BBox":
        return cls(x / width_px, y / height_px, w / width_px, h / height_px)

    def clipped(self) -> Optional["BBox"]:
        """Intersection with the unit square, or None when nothing is left."""
        x0, y0 = max(0.0, self.x), max(0.0, self.y)
        x1, y1 = min(1.0, self.right), min(1.0, self.bottom)
        if x1 <= x0 or y1 <= y0:
            return None
        return BBox(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class FaceDetection:
    bbox: BBox
    confidence: float = 1.0
    truth_actor_id: Optional[str] = None


@dataclass(frozen=True)
class HandObservation:
    wrist: Point
    index_mcp: Point
    pinky_mcp: Point
    index_tip: Point
    pinky_tip: Point
    truth_actor_id: Optional[str] = None


@dataclass(frozen=True)
class LuminanceBlob:
    """A pre-thresholded emitter rendering: `area_px` highlighted pixels."""

    centroid_px: Point
    area_px: int
    on: bool = True
    truth_actor_id: Optional[str] = None

    def pixels(self, width_px: int, height_px: int) -> np.ndarray:
        return disc_pixels(self.centroid_px, self.area_px, width_px, height_px)


def disc_pixels(center: Point, count: int, width_px: int, height_px: int) -> np.ndarray:
    """
    The `count` pixels whose centres lie nearest `center`, as an (n, 2)
    array of integer (x, y), clipped to the frame. Ties are broken by row
    then column so the rendering is deterministic.
    """
    if count <= 0:
        return np.empty((0, 2), dtype=np.int64)
    cx, cy = center
    r = int(np.ceil(np.sqrt(count / np.pi))) + 2
    xs = np.arange(int(np.floor(cx)) - r, int(np.floor(cx)) + r + 1)
    ys = np.arange(int(np.floor(cy)) - r, int(np.floor(cy)) + r + 1)
    gx, gy = np.meshgrid(xs, ys)
    gx, gy = gx.ravel(), gy.ravel()
    d2 = (gx + 0.5 - cx) ** 2 + (gy + 0.5 - cy) ** 2
    order = np.lexsort((gx, gy, d2))[:count]
    px = np.stack([gx[order], gy[order]], axis=1)
    inside = (px[:, 0] >= 0) & (px[:, 0] < width_px) & (px[:, 1] >= 0) & (px[:, 1] < height_px)
    return px[inside]


@dataclass(frozen=True)
class BleTrigger:
    t_ms: float
    mac: str
    command: Command


@dataclass(frozen=True)
class RangingReading:
    distance_m: float
    azimuth_deg: float
    elevation_deg: float


@dataclass
class FrameObservation:
    frame_index: int
    t_ms: float
    faces: List[FaceDetection] = field(default_factory=list)
    hands: List[HandObservation] = field(default_factory=list)
    luminance_blobs: List[LuminanceBlob] = field(default_factory=list)
    ble_triggers: List[BleTrigger] = field(default_factory=list)


@dataclass(frozen=True)
class Toggle:
    """A privacy command a modality wants applied to a live face this frame."""

    face_id: int
    command: Command
    modality: Modality
    cause: str
    details: Dict[str, object] = field(default_factory=dict)
