"""
VLC Modality
On-off keyed beacon packets decoded from the camera stream.

Packet layout (MSB first, one bit per frame):
  [b17..b12] preamble 101011
  [b11..b4]  payload, the command byte (0x01 Blur, 0x02 Unblur)
  [b3..b0]   CRC-4 of the payload, generator x^4 + x + 1

Per live face the decoder looks in a search region below the bounding box,
finds blobs with a BFS, and keeps a small set of candidate bit paths that
it extends every frame. A path is checked once it is exactly one packet
long: preamble, CRC, known command, then blob-vs-face distance.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from itertools import count
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.services.face_pipeline import TrackedFace
from src.services.observations import (
    Command,
    FrameObservation,
    LuminanceBlob,
    Modality,
    Point,
    Toggle,
)
from src.services.optics import (
    CameraModel,
    distance_from_blob_area,
    led_blob_area,
    relative_mismatch,
)
from src.services.trace_logger import TraceKind, TraceRecorder

logger = logging.getLogger(__name__)

PREAMBLE = "101011"
CRC_WIDTH = 4
CRC_POLYNOMIAL = 0b10011
PACKET_BITS = 18

_NEIGHBOURS = ((0, 1), (1, 0), (0, -1), (-1, 0))


class VlcConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    bits_per_frame: int = Field(1, ge=1, le=1)
    max_active_paths: int = Field(8, ge=1)
    miss_penalty: float = Field(1.0, ge=0)
    # association gate = gate_scale * sqrt(expected blob area)
    gate_scale: float = Field(4.0, gt=0)
    # 1 keeps the gate fixed; the walking sweep raises it
    max_gate_growth: float = Field(1.0, ge=1)
    geo_tolerance: float = Field(0.10, gt=0, lt=1)
    preamble_pattern: str = Field(PREAMBLE, pattern=r"^[01]{6}$")
    crc_polynomial: int = Field(CRC_POLYNOMIAL, ge=0b10000, le=0b11111)


# ── Packet codec ──────────────────────────────────────────────────────────

def crc4(payload: int, width: int = 8, polynomial: int = CRC_POLYNOMIAL) -> int:
    """Remainder of payload * x^4 divided by the generator."""
    register = payload << CRC_WIDTH
    for shift in range(width - 1, -1, -1):
        if register & (1 << (shift + CRC_WIDTH)):
            register ^= polynomial << shift
    return register & ((1 << CRC_WIDTH) - 1)


def payload_width(packet_bits: int, preamble: str = PREAMBLE) -> int:
    width = packet_bits - len(preamble) - CRC_WIDTH
    if width < 2:
        raise ValueError(f"packet of {packet_bits} bits leaves no room for a command")
    return width


def encode_packet(
    command: int,
    packet_bits: int = PACKET_BITS,
    preamble: str = PREAMBLE,
    polynomial: int = CRC_POLYNOMIAL,
) -> str:
    cmd = Command(command)
    width = payload_width(packet_bits, preamble)
    crc = crc4(int(cmd), width, polynomial)
    return preamble + format(int(cmd), f"0{width}b") + format(crc, f"0{CRC_WIDTH}b")


def decode_packet(
    bits: str,
    packet_bits: int = PACKET_BITS,
    preamble: str = PREAMBLE,
    polynomial: int = CRC_POLYNOMIAL,
) -> Tuple[Optional[Command], str]:
    """Returns (command, "ok") or (None, reason) with reason in length/preamble/crc/unknown_command."""
    if len(bits) != packet_bits:
        return None, "length"
    if not bits.startswith(preamble):
        return None, "preamble"
    width = payload_width(packet_bits, preamble)
    payload = int(bits[len(preamble):len(preamble) + width], 2)
    crc = int(bits[len(preamble) + width:], 2)
    if crc4(payload, width, polynomial) != crc:
        return None, "crc"
    try:
        return Command(payload), "ok"
    except ValueError:
        return None, "unknown_command"


# ── Search regions and blobs ──────────────────────────────────────────────

@dataclass(frozen=True)
class SearchRegion:
    """Normalized rectangle [x0, x1] x [y0, y1] below a face, clamped to the frame."""

    owner_face_id: int
    x0: float
    y0: float
    x1: float
    y1: float
    expected_blob_area: float

    @property
    def is_empty(self) -> bool:
        return self.x1 <= self.x0 or self.y1 <= self.y0

    def pixel_bounds(self, camera: CameraModel) -> Tuple[int, int, int, int]:
        ix0 = max(0, int(math.floor(self.x0 * camera.width_px)))
        iy0 = max(0, int(math.floor(self.y0 * camera.height_px)))
        ix1 = min(camera.width_px, int(math.ceil(self.x1 * camera.width_px)))
        iy1 = min(camera.height_px, int(math.ceil(self.y1 * camera.height_px)))
        return ix0, iy0, ix1, iy1


def search_region_for_face(face: TrackedFace, camera: CameraModel) -> SearchRegion:
    """2 x face width wide, centred under the face; 3 x face height tall from the bbox bottom."""
    cx = face.bbox.x + face.bbox.w / 2
    x0 = min(1.0, max(0.0, cx - face.bbox.w))
    x1 = min(1.0, max(0.0, cx + face.bbox.w))
    y0 = min(1.0, max(0.0, face.bbox.bottom))
    y1 = min(1.0, max(0.0, face.bbox.bottom + 3 * face.bbox.h))
    expected = led_blob_area(face.distance_m(camera))
    return SearchRegion(face.face_id, x0, y0, x1, y1, expected)


@dataclass(frozen=True)
class Blob:
    centroid: Point
    area: int


def rasterize_region(
    blobs: Sequence[LuminanceBlob], region: SearchRegion, camera: CameraModel
) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Highlighted-pixel mask of the region and its (x, y) pixel origin."""
    ix0, iy0, ix1, iy1 = region.pixel_bounds(camera)
    mask = np.zeros((max(0, iy1 - iy0), max(0, ix1 - ix0)), dtype=bool)
    if mask.size == 0:
        return mask, (ix0, iy0)
    for blob in blobs:
        if not blob.on:
            continue
        px = blob.pixels(camera.width_px, camera.height_px)
        if len(px) == 0:
            continue
        inside = (px[:, 0] >= ix0) & (px[:, 0] < ix1) & (px[:, 1] >= iy0) & (px[:, 1] < iy1)
        px = px[inside]
        mask[px[:, 1] - iy0, px[:, 0] - ix0] = True
    return mask, (ix0, iy0)


def detect_blobs(mask: np.ndarray, origin: Tuple[int, int] = (0, 0)) -> List[Blob]:
    """4-connected components of highlighted pixels, found by BFS in row-major order."""
    rows, cols = mask.shape
    visited = np.zeros_like(mask, dtype=bool)
    blobs: List[Blob] = []
    for r, c in np.argwhere(mask):
        r, c = int(r), int(c)
        if visited[r, c]:
            continue
        visited[r, c] = True
        queue = deque([(r, c)])
        sum_x = sum_y = n = 0
        while queue:
            y, x = queue.popleft()
            sum_x += x
            sum_y += y
            n += 1
            for dy, dx in _NEIGHBOURS:
                ny, nx = y + dy, x + dx
                if 0 <= ny < rows and 0 <= nx < cols and mask[ny, nx] and not visited[ny, nx]:
                    visited[ny, nx] = True
                    queue.append((ny, nx))
        # centroid in pixel-centre coordinates
        blobs.append(Blob(
            centroid=(origin[0] + sum_x / n + 0.5, origin[1] + sum_y / n + 0.5),
            area=n,
        ))
    return blobs


# ── Multi-path decoding ──────────────────────────────────────────────────

@dataclass
class ViterbiPath:
    path_id: int
    bits: str
    cost: float
    last_blob_pos: Point
    last_blob_area: int
    misses: int = 0
    owner_face_id: Optional[int] = None

    @property
    def age(self) -> int:
        return len(self.bits)


def association_gate_px(expected_blob_area: float, cfg: VlcConfig) -> float:
    return cfg.gate_scale * math.sqrt(expected_blob_area)


def _rank(path: ViterbiPath):
    return (path.cost, -path.age, path.path_id)


def step_decoder(
    paths: List[ViterbiPath],
    blobs: Sequence[Blob],
    cfg: VlcConfig,
    gate_px: float,
    ids: Optional[Iterator[int]] = None,
    owner_face_id: Optional[int] = None,
) -> List[ViterbiPath]:
    """
    Extend every path by one frame.

    Paths pick, in ascending cost order, the nearest unconsumed blob within
    gate_px * min(1 + misses, max_gate_growth) of their last blob ('1'),
    otherwise they take a '0' and the miss penalty. Every blob left over
    seeds a new one-bit path. The result is sorted by (cost, age desc) and
    cut to max_active_paths.
    """
    if ids is None:
        ids = count(max((p.path_id for p in paths), default=0) + 1)

    consumed = set()
    for path in sorted(paths, key=_rank):
        radius = gate_px * min(1 + path.misses, cfg.max_gate_growth)
        best = None
        for i, blob in enumerate(blobs):
            if i in consumed:
                continue
            d = math.hypot(blob.centroid[0] - path.last_blob_pos[0], blob.centroid[1] - path.last_blob_pos[1])
            if d <= radius and (best is None or d < best[0]):
                best = (d, i)
        if best is not None:
            blob = blobs[best[1]]
            consumed.add(best[1])
            path.bits += "1"
            path.last_blob_pos = blob.centroid
            path.last_blob_area = blob.area
            path.misses = 0
        else:
            path.bits += "0"
            path.cost += cfg.miss_penalty
            path.misses += 1

    extended = list(paths)
    for i, blob in enumerate(blobs):
        if i in consumed:
            continue
        extended.append(ViterbiPath(
            path_id=next(ids),
            bits="1",
            cost=0.0,
            last_blob_pos=blob.centroid,
            last_blob_area=blob.area,
            owner_face_id=owner_face_id,
        ))

    extended.sort(key=_rank)
    return extended[:cfg.max_active_paths]


def resolve_path(
    path: ViterbiPath,
    cfg: VlcConfig,
    face: TrackedFace,
    camera: CameraModel,
    packet_bits: int = PACKET_BITS,
) -> Tuple[Optional[Command], str, Optional[float], Optional[float]]:
    """Full packet check: (command, reason, d_blob, d_face)."""
    command, reason = decode_packet(path.bits, packet_bits, cfg.preamble_pattern, cfg.crc_polynomial)
    if command is None:
        return None, reason, None, None
    d_blob = distance_from_blob_area(path.last_blob_area)
    d_face = face.distance_m(camera)
    if relative_mismatch(d_blob, d_face) > cfg.geo_tolerance + 1e-12:
        return None, "geometry", d_blob, d_face
    return command, "ok", d_blob, d_face


def try_resolve(
    path: ViterbiPath,
    cfg: VlcConfig,
    face: TrackedFace,
    camera: CameraModel,
    packet_bits: int = PACKET_BITS,
) -> Optional[Command]:
    command, _, _, _ = resolve_path(path, cfg, face, camera, packet_bits)
    return command


class VlcDecoder:
    """Per-face decoding state; regions never share paths."""

    def __init__(self, cfg: VlcConfig, camera: CameraModel, packet_bits: int = PACKET_BITS):
        self.cfg = cfg
        self.camera = camera
        self.packet_bits = packet_bits
        self.paths: Dict[int, List[ViterbiPath]] = {}
        self._ids = count(1)

    def on_faces_lost(self, face_ids: List[int], now_ms: float, recorder: TraceRecorder) -> None:
        for fid in face_ids:
            self.paths.pop(fid, None)

    def process_frame(
        self,
        frame: FrameObservation,
        faces: Dict[int, TrackedFace],
        now_ms: float,
        recorder: TraceRecorder,
    ) -> List[Toggle]:
        toggles: List[Toggle] = []
        for face_id, face in faces.items():
            region = search_region_for_face(face, self.camera)
            blobs: List[Blob] = []
            if not region.is_empty:
                mask, origin = rasterize_region(frame.luminance_blobs, region, self.camera)
                blobs = detect_blobs(mask, origin)
            gate = association_gate_px(region.expected_blob_area, self.cfg)
            paths = step_decoder(self.paths.get(face_id, []), blobs, self.cfg, gate, self._ids, face_id)

            survivors = []
            for path in paths:
                if path.age < self.packet_bits:
                    survivors.append(path)
                    continue
                command, reason, d_blob, d_face = resolve_path(path, self.cfg, face, self.camera, self.packet_bits)
                if command is not None:
                    recorder.record(
                        now_ms, TraceKind.PACKET_DECODED,
                        face_id=face_id, path_id=path.path_id, command=command,
                        d_blob_m=d_blob, d_face_m=d_face,
                    )
                    toggles.append(Toggle(face_id, command, Modality.VLC, "vlc"))
                elif reason == "geometry":
                    recorder.record(
                        now_ms, TraceKind.VALIDATION_REJECTED,
                        modality=Modality.VLC, face_id=face_id, path_id=path.path_id,
                        reason=reason, d_blob_m=d_blob, d_face_m=d_face,
                    )
                else:
                    recorder.record(
                        now_ms, TraceKind.PACKET_REJECTED,
                        face_id=face_id, path_id=path.path_id, reason=reason, bits=path.bits,
                    )
            self.paths[face_id] = survivors
        return toggles
