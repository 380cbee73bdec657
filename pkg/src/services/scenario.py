"""
Scenario Service
Loads and validates scenario files: camera, actors with trajectories and
devices, scheduled signal events, noise and trial metadata.

Files are YAML (JSON is accepted too) with units in field names. Parsing is
strict: unknown fields, dangling actor references, more than one active
modality, and events a scenario cannot carry out are all rejected with a
ScenarioParseError that names the line and field.
"""
import logging
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.services.face_pipeline import TrackerConfig
from src.services.gesture import GestureConfig
from src.services.observations import Command, Modality
from src.services.optics import REFERENCE_FACE_HEIGHT_M, CameraModel
from src.services.uwb_manager import UwbConfig
from src.services.vlc import VlcConfig

logger = logging.getLogger(__name__)

_SCENARIOS_DIR = Path(__file__).parent.parent / "scenarios"

Vector3 = Tuple[float, float, float]


class ScenarioParseError(Exception):
    """A scenario file failed to parse or validate."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.message = message
        self.line = line
        self.field = field
        super().__init__(str(self))

    def __str__(self) -> str:
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field:
            where.append(self.field)
        prefix = ", ".join(where)
        return f"{prefix}: {self.message}" if prefix else self.message


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ── Actors ────────────────────────────────────────────────────────────────

class Keyframe(_Strict):
    t_ms: float = Field(ge=0)
    position_m: Vector3


class LedBeacon(_Strict):
    # Torso placement: 0.35 m below the face centre (camera Y points down)
    offset_m: Vector3 = (0.0, 0.35, 0.0)


class UwbTag(_Strict):
    mac: str = Field(pattern=r"^[0-9A-Fa-f]{12}$")
    offset_m: Vector3 = (0.0, 0.0, 0.0)

    @field_validator("mac", mode="before")
    @classmethod
    def _strip_separators(cls, v):
        if isinstance(v, str):
            return v.replace(":", "").replace("-", "")
        return v

    @field_validator("mac")
    @classmethod
    def _upper(cls, v: str) -> str:
        return v.upper()


class Devices(_Strict):
    led_beacon: Optional[LedBeacon] = None
    uwb_tag: Optional[UwbTag] = None


class Interval(_Strict):
    start_ms: float = Field(ge=0)
    end_ms: float

    @model_validator(mode="after")
    def _ordered(self) -> "Interval":
        if self.end_ms <= self.start_ms:
            raise ValueError("end_ms must be after start_ms")
        return self


class HandScript(_Strict):
    # Palm centre relative to the face centre while the hand is raised
    offset_m: Vector3 = (0.0, 0.05, 0.0)
    raised: List[Interval] = Field(default_factory=list)


class Actor(_Strict):
    actor_id: str = Field(min_length=1)
    face_height_m: float = Field(REFERENCE_FACE_HEIGHT_M, gt=0)
    trajectory: List[Keyframe] = Field(min_length=1)
    devices: Devices = Field(default_factory=Devices)
    hand: Optional[HandScript] = None

    @field_validator("trajectory")
    @classmethod
    def _increasing(cls, v: List[Keyframe]) -> List[Keyframe]:
        for a, b in zip(v, v[1:]):
            if b.t_ms <= a.t_ms:
                raise ValueError("trajectory keyframes must have strictly increasing t_ms")
        return v

    def position_at(self, t_ms: float) -> Vector3:
        """Piecewise-linear position, held constant outside the keyframes."""
        frames = self.trajectory
        if t_ms <= frames[0].t_ms:
            return tuple(frames[0].position_m)
        if t_ms >= frames[-1].t_ms:
            return tuple(frames[-1].position_m)
        for a, b in zip(frames, frames[1:]):
            if a.t_ms <= t_ms <= b.t_ms:
                f = (t_ms - a.t_ms) / (b.t_ms - a.t_ms)
                return tuple(pa + f * (pb - pa) for pa, pb in zip(a.position_m, b.position_m))
        return tuple(frames[-1].position_m)


# ── Noise, events, trial ─────────────────────────────────────────────────

class NoiseModel(_Strict):
    face_dropout_prob: float = Field(0.0, ge=0, le=1)
    bbox_jitter_sigma: float = Field(0.0, ge=0)
    hand_dropout_prob: float = Field(0.0, ge=0, le=1)
    blob_dropout_prob: float = Field(0.0, ge=0, le=1)
    # Per transmitting frame: the beacon reads inverted (smear while the wearer moves)
    led_motion_error_prob: float = Field(0.0, ge=0, le=1)
    false_blob_rate: float = Field(0.0, ge=0)
    uwb_angle_sigma_deg: float = Field(0.0, ge=0)
    uwb_distance_sigma_m: float = Field(0.0, ge=0)
    rng_seed: int = 0


class SignalEvent(_Strict):
    time_ms: float = Field(ge=0)
    actor_id: str
    modality: Modality
    command: Command
    gesture_duration_ms: float = Field(166.7, gt=0)
    # Impersonation attempt: never counted as a valid signal
    adversarial: bool = False

    @field_validator("command", mode="before")
    @classmethod
    def _coerce_command(cls, v):
        if isinstance(v, str):
            key = v.strip().lower()
            if key in ("blur", "unblur"):
                return Command[key.upper()]
            return int(key, 0)
        return v


class TrialExpectation(_Strict):
    min_accuracy: Optional[float] = Field(None, ge=0, le=1)
    max_false_positive_rate: Optional[float] = Field(None, ge=0)
    latency_ms: Optional[Tuple[float, float]] = None
    max_impersonations_accepted: Optional[int] = Field(None, ge=0)


class TrialSpec(_Strict):
    condition: str = "default"
    repetitions: int = Field(20, ge=1)
    expect: Optional[TrialExpectation] = None


class ScenarioFile(_Strict):
    schema_version: Literal[1]
    camera: CameraModel = Field(default_factory=CameraModel)
    actors: List[Actor] = Field(min_length=1)
    events: List[SignalEvent] = Field(default_factory=list)
    noise: NoiseModel = Field(default_factory=NoiseModel)
    duration_ms: float = Field(gt=0)
    active_modality: Modality
    trial: TrialSpec = Field(default_factory=TrialSpec)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    gesture: GestureConfig = Field(default_factory=GestureConfig)
    vlc: VlcConfig = Field(default_factory=VlcConfig)
    uwb: UwbConfig = Field(default_factory=UwbConfig)

    @field_validator("active_modality", mode="before")
    @classmethod
    def _single_modality(cls, v):
        if isinstance(v, (list, tuple)):
            if len(v) != 1:
                raise ValueError(
                    f"exactly one signaling modality may be active at a time, got {len(v)}"
                )
            return v[0]
        return v

    @field_validator("events")
    @classmethod
    def _sorted_events(cls, v: List[SignalEvent]) -> List[SignalEvent]:
        for a, b in zip(v, v[1:]):
            if b.time_ms < a.time_ms:
                raise ValueError("events must be sorted by time_ms")
        return v

    @property
    def condition(self) -> str:
        return self.trial.condition

    def actor(self, actor_id: str) -> Actor:
        for a in self.actors:
            if a.actor_id == actor_id:
                return a
        raise KeyError(actor_id)

    def actor_by_mac(self, mac: str) -> Optional[Actor]:
        for a in self.actors:
            tag = a.devices.uwb_tag
            if tag is not None and tag.mac == mac:
                return a
        return None


# ── Parsing ───────────────────────────────────────────────────────────────

def _node_line(node, loc: Sequence[Union[str, int]]) -> Optional[int]:
    """1-based line of the YAML node at a pydantic error location."""
    if node is None:
        return None
    line = node.start_mark.line + 1
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if getattr(k, "value", None) == part), None)
            if match is None:
                key = next((k for k, _ in node.value if getattr(k, "value", None) == part), None)
                return key.start_mark.line + 1 if key is not None else line
            node = match
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
        else:
            break
        line = node.start_mark.line + 1
    return line


def _format_loc(loc: Sequence[Union[str, int]]) -> str:
    return ".".join(str(p) for p in loc)


def _check_references(scenario: ScenarioFile, root) -> None:
    ids = [a.actor_id for a in scenario.actors]
    seen = set()
    for i, actor_id in enumerate(ids):
        if actor_id in seen:
            loc = ("actors", i, "actor_id")
            raise ScenarioParseError(f"duplicate actor id '{actor_id}'", _node_line(root, loc), _format_loc(loc))
        seen.add(actor_id)

    macs = set()
    for i, actor in enumerate(scenario.actors):
        tag = actor.devices.uwb_tag
        if tag is None:
            continue
        if tag.mac in macs:
            loc = ("actors", i, "devices", "uwb_tag", "mac")
            raise ScenarioParseError(f"duplicate UWB tag mac '{tag.mac}'", _node_line(root, loc), _format_loc(loc))
        macs.add(tag.mac)

    for i, event in enumerate(scenario.events):
        if event.actor_id not in seen:
            loc = ("events", i, "actor_id")
            raise ScenarioParseError(
                f"event references unknown actor '{event.actor_id}'", _node_line(root, loc), _format_loc(loc)
            )
        if event.modality != scenario.active_modality:
            loc = ("events", i, "modality")
            raise ScenarioParseError(
                f"event modality '{event.modality.value}' differs from active modality "
                f"'{scenario.active_modality.value}'",
                _node_line(root, loc), _format_loc(loc),
            )
        actor = scenario.actor(event.actor_id)
        missing = None
        if event.modality == Modality.VLC and actor.devices.led_beacon is None:
            missing = "LED beacon"
        elif event.modality == Modality.UWB and actor.devices.uwb_tag is None:
            missing = "UWB tag"
        elif event.modality == Modality.GESTURE and actor.hand is None:
            missing = "hand script"
        if missing:
            loc = ("events", i, "actor_id")
            raise ScenarioParseError(
                f"actor '{event.actor_id}' has no {missing} for a {event.modality.value} event",
                _node_line(root, loc), _format_loc(loc),
            )


def parse_scenario(data: Union[bytes, str]) -> ScenarioFile:
    """Validated scenario, or ScenarioParseError with line/field location."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ScenarioParseError(
                f"invalid UTF-8 at byte offset {e.start}",
                line=data[:e.start].count(b"\n") + 1,
            ) from e
    else:
        text = data
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioParseError(
            f"invalid YAML: {getattr(e, 'problem', None) or e}",
            line=mark.line + 1 if mark is not None else None,
        ) from e

    if not isinstance(raw, dict):
        raise ScenarioParseError("scenario must be a mapping at the top level", line=1)

    try:
        scenario = ScenarioFile.model_validate(raw)
    except ValidationError as e:
        err = e.errors()[0]
        loc = tuple(err.get("loc", ()))
        raise ScenarioParseError(err.get("msg", "invalid value"), _node_line(root, loc), _format_loc(loc)) from e

    _check_references(scenario, root)
    return scenario


def load_scenario(path: Union[str, Path]) -> ScenarioFile:
    with open(path, "rb") as f:
        scenario = parse_scenario(f.read())
    logger.info(
        f"[{scenario.condition}] Loaded {path}: {len(scenario.actors)} actors, "
        f"{len(scenario.events)} events, modality {scenario.active_modality.value}"
    )
    return scenario


def list_bundled_scenarios() -> List[str]:
    return sorted(p.stem for p in _SCENARIOS_DIR.glob("*.yaml"))


def bundled_scenario_path(name: str) -> Path:
    path = _SCENARIOS_DIR / f"{name}.yaml"
    if not path.exists():
        raise FileNotFoundError(f"No bundled scenario named '{name}'")
    return path


def load_bundled_scenario(name: str) -> ScenarioFile:
    return load_scenario(bundled_scenario_path(name))


def resolve_scenario(ref: str) -> ScenarioFile:
    """A path to a scenario file, or the name of a bundled scenario."""
    path = Path(ref)
    if path.exists():
        return load_scenario(path)
    return load_bundled_scenario(ref)
