"""
UWB Modality
Hybrid BLE + UWB protocol manager.

A BLE GATT write carries the privacy command. If the tag's MAC is already
bound to a live face the command is applied at once (Fast Path). Otherwise
a ranging burst of total_reading_count readings is run, the last
readings_to_average are averaged, the angles are mapped linearly onto the
screen, and the tag is bound to the face whose width-expanded box contains
the point and whose distance matches the UWB range. A binding is dropped
the moment its face track is lost.

Bursts advance with the frame clock; there are no background timers.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Collection, Dict, List, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.services.face_pipeline import TrackedFace
from src.services.observations import (
    BleTrigger,
    Command,
    FrameObservation,
    Modality,
    Point,
    RangingReading,
    Toggle,
)
from src.services.optics import CameraModel, relative_mismatch
from src.services.trace_logger import TraceKind, TraceRecorder

logger = logging.getLogger(__name__)

_TIME_EPS_MS = 1e-6

MeasureFn = Callable[[str, float], Optional[RangingReading]]


class UwbConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    total_reading_count: int = Field(15, ge=1)
    readings_to_average: int = Field(3, ge=1)
    ranging_interval_ms: float = Field(130.0, gt=0)
    bbox_width_expansion: float = Field(2.5, ge=1)
    geo_tolerance: float = Field(0.10, gt=0, lt=1)

    @model_validator(mode="after")
    def _check_counts(self) -> "UwbConfig":
        if self.readings_to_average > self.total_reading_count:
            raise ValueError("readings_to_average cannot exceed total_reading_count")
        return self


class ShortBurstError(ValueError):
    """A burst ended with fewer readings than total_reading_count."""


class UwbPhase(str, Enum):
    UNBOUND = "unbound"
    RANGING = "ranging"
    BOUND = "bound"


class UwbAction(str, Enum):
    FAST_PATH = "fast_path"
    START_BURST = "start_burst"
    DROP = "drop"


@dataclass(frozen=True)
class TriggerDecision:
    action: UwbAction
    face_id: Optional[int] = None
    purged_face_id: Optional[int] = None


@dataclass
class BurstState:
    mac: str
    command: Command
    trigger_t_ms: float
    started_ms: float
    readings: List[RangingReading] = field(default_factory=list)
    readings_taken: int = 0


@dataclass(frozen=True)
class BurstOutcome:
    mac: str
    command: Command
    trigger_t_ms: float
    face_id: Optional[int]
    reason: str
    reading: Optional[RangingReading] = None
    point: Optional[Point] = None

    @property
    def bound(self) -> bool:
        return self.face_id is not None


# ── Burst processing ─────────────────────────────────────────────────────

def smooth_burst(readings: List[RangingReading], cfg: UwbConfig) -> RangingReading:
    """Component-wise mean of the last readings_to_average readings."""
    if len(readings) < cfg.total_reading_count:
        raise ShortBurstError(
            f"burst has {len(readings)} of {cfg.total_reading_count} readings"
        )
    tail = readings[-cfg.readings_to_average:]
    n = len(tail)
    return RangingReading(
        distance_m=sum(r.distance_m for r in tail) / n,
        azimuth_deg=sum(r.azimuth_deg for r in tail) / n,
        elevation_deg=sum(r.elevation_deg for r in tail) / n,
    )


def project_to_screen(r: RangingReading, camera: CameraModel) -> Optional[Point]:
    """Linear angle-to-pixel mapping inside the camera FoV."""
    half_h, half_v = camera.hfov_deg / 2, camera.vfov_deg / 2
    if abs(r.azimuth_deg) > half_h or abs(r.elevation_deg) > half_v:
        return None
    x = (r.azimuth_deg / half_h + 1) / 2 * camera.width_px
    y = (-r.elevation_deg / half_v + 1) / 2 * camera.height_px
    return (x, y)


def bind(
    point: Point,
    r: RangingReading,
    faces: Mapping[int, TrackedFace],
    cfg: UwbConfig,
    camera: CameraModel,
) -> Optional[int]:
    """
    Face whose bbox, widened about its centre, contains the point and whose
    distance matches the UWB range. Several survivors: smallest distance
    residual, then lower face_id.
    """
    best = None
    for face_id, face in faces.items():
        x, y, w, h = face.bbox.to_pixels(camera.width_px, camera.height_px)
        half_w = w * cfg.bbox_width_expansion / 2
        cx = x + w / 2
        if not (cx - half_w <= point[0] <= cx + half_w and y <= point[1] <= y + h):
            continue
        d_face = face.distance_m(camera)
        mismatch = relative_mismatch(r.distance_m, d_face)
        if mismatch > cfg.geo_tolerance + 1e-12:
            continue
        key = (abs(r.distance_m - d_face), face_id)
        if best is None or key < best:
            best = key
    return best[1] if best else None


class UwbManager:
    """Per-scenario protocol state: bindings (the Fast Path cache), phases and bursts."""

    def __init__(
        self,
        cfg: UwbConfig,
        camera: CameraModel,
        measure: Optional[MeasureFn] = None,
    ):
        self.cfg = cfg
        self.camera = camera
        self.measure = measure
        self.bindings: Dict[str, int] = {}
        self.phases: Dict[str, UwbPhase] = {}
        self.bursts: Dict[str, BurstState] = {}
        self.ranging_sessions_started = 0
        self.fast_path_hits = 0

    def phase(self, mac: str) -> UwbPhase:
        return self.phases.get(mac, UwbPhase.UNBOUND)

    def on_ble_trigger(
        self, trigger: BleTrigger, live_face_ids: Collection[int], now_ms: float
    ) -> TriggerDecision:
        mac = trigger.mac
        if mac in self.bursts:
            return TriggerDecision(UwbAction.DROP)

        purged = None
        if mac in self.bindings:
            face_id = self.bindings[mac]
            if face_id in live_face_ids:
                self.fast_path_hits += 1
                return TriggerDecision(UwbAction.FAST_PATH, face_id=face_id)
            purged = self.bindings.pop(mac)

        self.bursts[mac] = BurstState(
            mac=mac, command=trigger.command, trigger_t_ms=trigger.t_ms, started_ms=now_ms
        )
        self.phases[mac] = UwbPhase.RANGING
        self.ranging_sessions_started += 1
        return TriggerDecision(UwbAction.START_BURST, purged_face_id=purged)

    def on_face_lost(self, face_id: int) -> List[str]:
        macs = sorted(mac for mac, fid in self.bindings.items() if fid == face_id)
        for mac in macs:
            del self.bindings[mac]
            self.phases[mac] = UwbPhase.UNBOUND
        return macs

    def advance(
        self,
        now_ms: float,
        measure: MeasureFn,
        faces: Mapping[int, TrackedFace],
    ) -> List[BurstOutcome]:
        """Take every reading due by now_ms and finish bursts that are complete."""
        outcomes: List[BurstOutcome] = []
        interval = self.cfg.ranging_interval_ms
        for mac in sorted(self.bursts):
            burst = self.bursts[mac]
            while burst.readings_taken < self.cfg.total_reading_count:
                t_reading = burst.started_ms + (burst.readings_taken + 1) * interval
                if t_reading > now_ms + _TIME_EPS_MS:
                    break
                reading = measure(mac, t_reading)
                burst.readings_taken += 1
                if reading is not None:
                    burst.readings.append(reading)
            if burst.readings_taken == self.cfg.total_reading_count:
                del self.bursts[mac]
                outcomes.append(self._finish(burst, faces))
        return outcomes

    def _finish(self, burst: BurstState, faces: Mapping[int, TrackedFace]) -> BurstOutcome:
        mac = burst.mac
        self.phases[mac] = UwbPhase.UNBOUND
        try:
            reading = smooth_burst(burst.readings, self.cfg)
        except ShortBurstError as e:
            logger.warning(f"[{mac}] burst aborted: {e}")
            return BurstOutcome(mac, burst.command, burst.trigger_t_ms, None, "short_burst")

        point = project_to_screen(reading, self.camera)
        if point is None:
            return BurstOutcome(mac, burst.command, burst.trigger_t_ms, None, "out_of_fov", reading)

        face_id = bind(point, reading, faces, self.cfg, self.camera)
        if face_id is None:
            return BurstOutcome(mac, burst.command, burst.trigger_t_ms, None, "no_consistent_face", reading, point)

        self.bindings[mac] = face_id
        self.phases[mac] = UwbPhase.BOUND
        return BurstOutcome(mac, burst.command, burst.trigger_t_ms, face_id, "bound", reading, point)

    # ── Frame loop adapter ────────────────────────────────────────────────

    def on_faces_lost(self, face_ids: List[int], now_ms: float, recorder: TraceRecorder) -> None:
        for fid in face_ids:
            for mac in self.on_face_lost(fid):
                logger.debug(f"[t={now_ms:.0f}ms] binding {mac} -> face {fid} invalidated")

    def process_frame(
        self,
        frame: FrameObservation,
        faces: Dict[int, TrackedFace],
        now_ms: float,
        recorder: TraceRecorder,
    ) -> List[Toggle]:
        if self.measure is None:
            raise RuntimeError("UwbManager.process_frame needs a measure function")

        toggles: List[Toggle] = []
        for trigger in frame.ble_triggers:
            decision = self.on_ble_trigger(trigger, faces.keys(), now_ms)
            if decision.action == UwbAction.FAST_PATH:
                recorder.record(now_ms, TraceKind.FAST_PATH, mac=trigger.mac, face_id=decision.face_id, command=trigger.command)
                toggles.append(Toggle(decision.face_id, trigger.command, Modality.UWB, "uwb_fast_path"))
            elif decision.action == UwbAction.START_BURST:
                recorder.record(
                    now_ms, TraceKind.BURST_STARTED,
                    mac=trigger.mac, command=trigger.command, purged_face_id=decision.purged_face_id,
                )
            else:
                recorder.record(now_ms, TraceKind.TRIGGER_DROPPED, mac=trigger.mac, reason="burst_in_progress")

        for outcome in self.advance(now_ms, self.measure, faces):
            if outcome.bound:
                recorder.record(
                    now_ms, TraceKind.BOUND,
                    mac=outcome.mac, face_id=outcome.face_id,
                    distance_m=outcome.reading.distance_m, point=list(outcome.point),
                )
                toggles.append(Toggle(outcome.face_id, outcome.command, Modality.UWB, "uwb_burst"))
            elif outcome.reason == "short_burst":
                recorder.record(now_ms, TraceKind.BURST_ABORTED, mac=outcome.mac, reason=outcome.reason)
            else:
                recorder.record(
                    now_ms, TraceKind.VALIDATION_REJECTED,
                    modality=Modality.UWB, mac=outcome.mac, reason=outcome.reason,
                    distance_m=outcome.reading.distance_m if outcome.reading else None,
                )
        return toggles
