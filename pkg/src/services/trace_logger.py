"""
Trace Logger Service
Records protocol events (tracking, decoding, binding, state changes) for one
trial as line-delimited JSON.

Each line has a stable key order (t_ms, kind, then attributes sorted by
key) so two runs can be diffed or hashed. The trace hash is the SHA-256 of
the JSONL text.
"""
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class TraceKind(str, Enum):
    FACE_TRACKED = "FaceTracked"
    FACE_LOST = "FaceLost"
    GESTURE_FIRED = "GestureFired"
    PACKET_DECODED = "PacketDecoded"
    PACKET_REJECTED = "PacketRejected"
    BURST_STARTED = "BurstStarted"
    BURST_ABORTED = "BurstAborted"
    BOUND = "Bound"
    FAST_PATH = "FastPath"
    TRIGGER_DROPPED = "TriggerDropped"
    STATE_CHANGED = "StateChanged"
    VALIDATION_REJECTED = "ValidationRejected"


def _normalize(value: Any) -> Any:
    if isinstance(value, Enum):
        # IntEnum commands read better by name in a trace
        return value.name.lower() if isinstance(value, int) else value.value
    if isinstance(value, float):
        return round(value, 3)
    if isinstance(value, (list, tuple)):
        return [_normalize(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _normalize(v) for k, v in sorted(value.items())}
    if hasattr(value, "item"):  # numpy scalar
        return _normalize(value.item())
    return value


@dataclass(frozen=True)
class TraceEvent:
    t_ms: float
    kind: TraceKind
    attributes: Dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {"t_ms": round(self.t_ms, 3), "kind": self.kind.value}
        for key in sorted(self.attributes):
            record[key] = _normalize(self.attributes[key])
        return record


class TraceRecorder:
    """Append-only event log for one trial."""

    def __init__(self) -> None:
        self.events: List[TraceEvent] = []

    def record(self, t_ms: float, kind: TraceKind, **attributes: Any) -> TraceEvent:
        if self.events and t_ms < self.events[-1].t_ms:
            raise ValueError(
                f"trace time went backwards: {t_ms} after {self.events[-1].t_ms}"
            )
        event = TraceEvent(t_ms=t_ms, kind=kind, attributes=attributes)
        self.events.append(event)
        logger.debug(f"[t={t_ms:.0f}ms] {kind.value} {attributes}")
        return event

    def of_kind(self, kind: TraceKind) -> List[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(e.to_record(), separators=(",", ":")) + "\n" for e in self.events
        )

    def trace_hash(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode("utf-8")).hexdigest()

    def write(self, path: str) -> Optional[str]:
        """Write the trace to `path`; returns the path, or None on failure."""
        try:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                f.write(self.to_jsonl())
            logger.info(f"Trace written to {path} ({len(self.events)} events)")
            return path
        except OSError as e:
            logger.error(f"Failed to write trace to {path}: {e}")
            return None
