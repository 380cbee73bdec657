"""
Optics Service
Pinhole camera model plus the calibrated size-distance models that every
signaling modality uses to turn on-screen sizes back into metres.

All three models are anchored at 1 m:
  face height     215 px    falls off as 1/d
  hand span        88 px    (index tip to pinky tip) falls off as 1/d
  LED blob area   400 px²   falls off as 1/d²
"""
import math
from typing import Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

FACE_HEIGHT_AT_1M_PX = 215.0
HAND_SPAN_AT_1M_PX = 88.0
LED_AREA_AT_1M_PX2 = 400.0

# Bounding-box width as a fraction of its height (rendering only)
FACE_WIDTH_RATIO = 0.78

# Physical face height that reproduces 215 px at 1 m through the pinhole
REFERENCE_FACE_HEIGHT_M = 0.244

_EDGE_EPS_PX = 1e-6

Vector3 = Tuple[float, float, float]


class DomainError(ValueError):
    """A size model or distance estimator was evaluated outside its domain."""


class CameraModel(BaseModel):
    """Processing-resolution camera: 1280x960 at 30 FPS by default."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    width_px: int = Field(1280, gt=0)
    height_px: int = Field(960, gt=0)
    hfov_deg: float = Field(72.0, gt=0, lt=180)
    vfov_deg: float = Field(57.6, gt=0, lt=180)
    frame_rate_hz: float = Field(30.0, gt=0)

    @model_validator(mode="after")
    def _check_aspect(self) -> "CameraModel":
        if self.width_px * 3 != self.height_px * 4:
            raise ValueError(
                f"camera must be 4:3, got {self.width_px}x{self.height_px}"
            )
        return self

    @property
    def focal_length_px(self) -> float:
        return (self.width_px / 2) / math.tan(math.radians(self.hfov_deg / 2))

    @property
    def focal_length_v_px(self) -> float:
        return (self.height_px / 2) / math.tan(math.radians(self.vfov_deg / 2))

    @property
    def cx(self) -> float:
        return self.width_px / 2

    @property
    def cy(self) -> float:
        return self.height_px / 2

    @property
    def frame_period_ms(self) -> float:
        return 1000.0 / self.frame_rate_hz


# ── Projection ────────────────────────────────────────────────────────────

def project_point(
    camera: CameraModel, p: Sequence[float]
) -> Optional[Tuple[Tuple[float, float], float]]:
    """
    Project a camera-frame point (X right, Y down, Z forward, metres).

    Returns ((x, y), depth) or None when the point is behind the camera or
    outside the field of view. The FoV edges themselves are inside.
    """
    X, Y, Z = float(p[0]), float(p[1]), float(p[2])
    if Z <= 0:
        return None
    x = camera.cx + camera.focal_length_px * X / Z
    y = camera.cy + camera.focal_length_v_px * Y / Z
    if not (-_EDGE_EPS_PX <= x <= camera.width_px + _EDGE_EPS_PX):
        return None
    if not (-_EDGE_EPS_PX <= y <= camera.height_px + _EDGE_EPS_PX):
        return None
    return (x, y), Z


def unproject_point(camera: CameraModel, xy: Sequence[float], depth: float) -> Vector3:
    """Inverse of project_point for a known depth."""
    x, y = xy
    X = (x - camera.cx) * depth / camera.focal_length_px
    Y = (y - camera.cy) * depth / camera.focal_length_v_px
    return (X, Y, float(depth))


def norm3(p: Sequence[float]) -> float:
    return math.sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])


# ── Size models ───────────────────────────────────────────────────────────

def _require_positive(value: float, what: str) -> None:
    if not value > 0:
        raise DomainError(f"{what} must be positive, got {value}")


def face_pixel_height(distance_m: float) -> float:
    _require_positive(distance_m, "distance")
    return FACE_HEIGHT_AT_1M_PX / distance_m


def face_pixel_width(distance_m: float) -> float:
    return face_pixel_height(distance_m) * FACE_WIDTH_RATIO


def led_blob_area(distance_m: float) -> float:
    _require_positive(distance_m, "distance")
    return LED_AREA_AT_1M_PX2 / (distance_m * distance_m)


def hand_keypoint_span(distance_m: float) -> float:
    _require_positive(distance_m, "distance")
    return HAND_SPAN_AT_1M_PX / distance_m


def distance_from_face_height(height_px: float) -> float:
    _require_positive(height_px, "face height")
    return FACE_HEIGHT_AT_1M_PX / height_px


def distance_from_blob_area(area_px: float) -> float:
    _require_positive(area_px, "blob area")
    return math.sqrt(LED_AREA_AT_1M_PX2 / area_px)


def distance_from_hand_span(span_px: float) -> float:
    _require_positive(span_px, "hand span")
    return HAND_SPAN_AT_1M_PX / span_px


# ── Signal-source validation ─────────────────────────────────────────────

def relative_mismatch(signal_distance_m: float, face_distance_m: float) -> float:
    _require_positive(face_distance_m, "face distance")
    return abs(signal_distance_m - face_distance_m) / face_distance_m


def is_geometrically_consistent(
    signal_distance_m: float, face_distance_m: float, tolerance: float
) -> bool:
    """True when the signal source sits at the face's distance within tolerance."""
    return relative_mismatch(signal_distance_m, face_distance_m) <= tolerance + 1e-12
