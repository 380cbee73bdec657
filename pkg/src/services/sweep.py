"""
Message-Length Sweep
Decode success versus packet length for a VLC scenario, static or with the
signaling bystander walking laterally across the view.

Packet length is an experiment parameter only; the decoder under test is
the same one every other run uses.
"""
import logging
import re
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

from src.services.harness import run_batch
from src.services.observations import Modality
from src.services.scenario import Keyframe, NoiseModel, ScenarioFile

logger = logging.getLogger(__name__)

MIN_PACKET_BITS = 14
MAX_PACKET_BITS = 26
WALKING_SPEED_MPS = 1.2
# Per transmitting frame; every error is fatal, so success is (1 - p) ** bits,
# about 0.9 at 18 bits
WALKING_NOISE = NoiseModel(led_motion_error_prob=0.006)
# Payload zero runs reach 15 frames at 26 bits; the gate must still reach a
# beacon that drifts about 12 px per frame at 3 m
WALKING_GATE_GROWTH = 16.0

_RANGE = re.compile(r"^\s*(\d+)\s*\.\.\s*(\d+)\s*$")


@dataclass(frozen=True)
class SweepRow:
    packet_bits: int
    motion: str
    trials: int
    signals: int
    successes: int

    @property
    def success_rate(self) -> float:
        return self.successes / max(self.signals, 1)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["success_rate"] = self.success_rate
        return data


def parse_lengths(text: str) -> List[int]:
    """'14..26' (even lengths in the range) or a comma list such as '18,22'."""
    match = _RANGE.match(text)
    if match:
        lo, hi = int(match.group(1)), int(match.group(2))
        if lo > hi:
            raise ValueError(f"empty length range '{text}'")
        lengths = list(range(lo, hi + 1, 2))
    else:
        try:
            lengths = [int(part) for part in text.split(",") if part.strip()]
        except ValueError as e:
            raise ValueError(f"invalid length list '{text}'") from e
    if not lengths:
        raise ValueError("no packet lengths given")
    for n in lengths:
        if not MIN_PACKET_BITS <= n <= MAX_PACKET_BITS:
            raise ValueError(f"packet length {n} outside [{MIN_PACKET_BITS}, {MAX_PACKET_BITS}]")
    return lengths


def walking_variant(
    scenario: ScenarioFile,
    speed_mps: float = WALKING_SPEED_MPS,
    packet_bits: int = MAX_PACKET_BITS,
    gate_growth: float = WALKING_GATE_GROWTH,
) -> ScenarioFile:
    """
    Copy of a VLC scenario reduced to its first event, whose actor walks
    along +X at speed_mps and passes its scripted position at the event
    time. The duration covers a packet_bits transmission and no more, so
    the walker stays in view. The decoder gate may grow to gate_growth
    times its base radius over a run of misses.
    """
    if scenario.active_modality != Modality.VLC:
        raise ValueError("the message-length sweep needs a VLC scenario")
    if not scenario.events:
        raise ValueError("the message-length sweep needs at least one signal event")

    first = scenario.events[0]
    period = 1000.0 / scenario.camera.frame_rate_hz
    duration = first.time_ms + (packet_bits + 2) * period
    x, y, z = scenario.actor(first.actor_id).position_at(first.time_ms)

    def at(t_ms: float) -> Keyframe:
        return Keyframe(t_ms=t_ms, position_m=(x + speed_mps * (t_ms - first.time_ms) / 1000.0, y, z))

    actors = [
        a.model_copy(update={"trajectory": [at(0.0), at(duration)]}) if a.actor_id == first.actor_id else a
        for a in scenario.actors
    ]
    trial = scenario.trial.model_copy(update={"condition": f"{scenario.condition}-walking"})
    vlc = scenario.vlc.model_copy(update={"max_gate_growth": max(scenario.vlc.max_gate_growth, gate_growth)})
    return scenario.model_copy(
        update={"actors": actors, "events": [first], "duration_ms": duration, "trial": trial, "vlc": vlc}
    )


def message_length_sweep(
    scenario: ScenarioFile,
    lengths: Sequence[int],
    motion: str = "static",
    noise: Optional[NoiseModel] = None,
    trials: int = 20,
    base_seed: int = 0,
    workers: int = 1,
) -> List[SweepRow]:
    """Success rate per packet length over `trials` seeded trials each."""
    if motion not in ("static", "walking"):
        raise ValueError(f"unknown motion '{motion}'")
    if motion == "walking":
        variant = walking_variant(scenario, packet_bits=max(lengths))
        variant = variant.model_copy(update={"noise": WALKING_NOISE if noise is None else noise})
    else:
        period = 1000.0 / scenario.camera.frame_rate_hz
        duration = max(scenario.duration_ms, scenario.events[-1].time_ms + (max(lengths) + 2) * period) \
            if scenario.events else scenario.duration_ms
        variant = scenario.model_copy(update={"duration_ms": duration})
        if noise is not None:
            variant = variant.model_copy(update={"noise": noise})

    rows = []
    for packet_bits in lengths:
        batch = run_batch(variant, repetitions=trials, base_seed=base_seed, workers=workers, packet_bits=packet_bits)
        rows.append(SweepRow(packet_bits, motion, batch.repetitions, batch.n_signals, batch.correct))
        logger.info(f"[{variant.condition}] {packet_bits} bits: success {rows[-1].success_rate:.2f}")
    return rows
