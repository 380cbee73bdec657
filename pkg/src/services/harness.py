"""
Harness Service
Frame-synchronous orchestration of one trial plus the metrics that judge it.

Per frame: synthesize observations -> track faces -> invalidate state of
lost faces -> advance the active modality -> apply its privacy commands.

Metrics:
  correct toggle   a StateChanged that matches an unattributed valid signal
                   (same actor, same command) inside the signal's window
  false positive   any other StateChanged (cross-face, impersonation, noise)
  false negative   a valid signal whose window closes without a match
  latency          StateChanged time minus signal time, correct toggles only
Rates divide by the number of valid signals (at least 1). Adversarial
events are never valid signals.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.services.face_pipeline import FaceTracker, apply_privacy_command
from src.services.gesture import GestureRecognizer
from src.services.observations import Command, Modality
from src.services.scenario import ScenarioFile, SignalEvent
from src.services.scene_sim import SceneSimulator
from src.services.trace_logger import TraceEvent, TraceKind, TraceRecorder
from src.services.uwb_manager import UwbManager
from src.services.vlc import PACKET_BITS, VlcDecoder

logger = logging.getLogger(__name__)

# Signal-to-toggle attribution window, roughly twice each modality's latency
ATTRIBUTION_WINDOW_MS: Dict[Modality, float] = {
    Modality.GESTURE: 1000.0,
    Modality.VLC: 2000.0,
    Modality.UWB: 4000.0,
}

_TIME_EPS_MS = 1e-6


class StaleBindingError(RuntimeError):
    """A privacy command targeted a face that is no longer tracked."""


@dataclass(frozen=True)
class StateChange:
    t_ms: float
    face_id: int
    command: Command
    cause: str
    truth_actor_id: Optional[str]


@dataclass
class Attribution:
    correct: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    impersonations_accepted: int = 0
    latencies_ms: List[float] = field(default_factory=list)


def attribute_state_changes(
    events: Sequence[SignalEvent],
    changes: Sequence[StateChange],
    modality: Modality,
) -> Attribution:
    """Attribute every state change exactly once, in time order."""
    window = ATTRIBUTION_WINDOW_MS[modality]
    valid = [e for e in events if not e.adversarial and e.modality == modality]
    adversarial = [e for e in events if e.adversarial and e.modality == modality]
    claimed = [False] * len(valid)
    result = Attribution()

    for change in sorted(changes, key=lambda c: (c.t_ms, c.face_id)):
        match = None
        for i, event in enumerate(valid):
            if claimed[i]:
                continue
            in_window = event.time_ms - _TIME_EPS_MS <= change.t_ms <= event.time_ms + window + _TIME_EPS_MS
            if in_window and event.actor_id == change.truth_actor_id and event.command == change.command:
                match = i
                break
        if match is not None:
            claimed[match] = True
            result.correct += 1
            result.latencies_ms.append(change.t_ms - valid[match].time_ms)
            continue

        result.false_positives += 1
        if any(
            e.command == change.command
            and e.time_ms - _TIME_EPS_MS <= change.t_ms <= e.time_ms + window + _TIME_EPS_MS
            for e in adversarial
        ):
            result.impersonations_accepted += 1

    result.false_negatives = len(valid) - result.correct
    return result


@dataclass
class TrialResult:
    seed: int
    condition: str
    modality: str
    n_signals: int
    n_adversarial: int
    correct: int
    false_positives: int
    false_negatives: int
    impersonations_accepted: int
    latencies_ms: List[float]
    ranging_sessions: int
    fast_path_hits: int
    state_changes: int
    trace_hash: str
    # Wall-clock; excluded from fingerprints
    frame_ms_p95: float = 0.0

    @property
    def accuracy(self) -> float:
        return self.correct / max(self.n_signals, 1)

    @property
    def false_positive_rate(self) -> float:
        return self.false_positives / max(self.n_signals, 1)

    @property
    def false_negative_rate(self) -> float:
        return self.false_negatives / max(self.n_signals, 1)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data.update(
            accuracy=self.accuracy,
            false_positive_rate=self.false_positive_rate,
            false_negative_rate=self.false_negative_rate,
        )
        return data


@dataclass
class BatchResult:
    """Trials of one scenario, kept in seed order so merging is order-independent."""

    condition: str
    modality: str
    base_seed: int
    trials: List[TrialResult]

    def _sum(self, attr: str) -> int:
        return sum(getattr(t, attr) for t in self.trials)

    @property
    def repetitions(self) -> int:
        return len(self.trials)

    @property
    def n_signals(self) -> int:
        return self._sum("n_signals")

    @property
    def correct(self) -> int:
        return self._sum("correct")

    @property
    def false_positives(self) -> int:
        return self._sum("false_positives")

    @property
    def false_negatives(self) -> int:
        return self._sum("false_negatives")

    @property
    def impersonations_accepted(self) -> int:
        return self._sum("impersonations_accepted")

    @property
    def n_adversarial(self) -> int:
        return self._sum("n_adversarial")

    @property
    def ranging_sessions(self) -> int:
        return self._sum("ranging_sessions")

    @property
    def fast_path_hits(self) -> int:
        return self._sum("fast_path_hits")

    @property
    def accuracy(self) -> float:
        return self.correct / max(self.n_signals, 1)

    @property
    def false_positive_rate(self) -> float:
        return self.false_positives / max(self.n_signals, 1)

    @property
    def false_negative_rate(self) -> float:
        return self.false_negatives / max(self.n_signals, 1)

    @property
    def latencies_ms(self) -> List[float]:
        return [lat for t in self.trials for lat in t.latencies_ms]

    @property
    def mean_latency_ms(self) -> Optional[float]:
        lats = self.latencies_ms
        return float(np.mean(lats)) if lats else None

    @property
    def frame_ms_p95(self) -> float:
        return max((t.frame_ms_p95 for t in self.trials), default=0.0)

    def fingerprint(self) -> Tuple:
        """Everything except wall-clock timing."""
        return tuple(
            (t.seed, t.correct, t.false_positives, t.false_negatives, t.impersonations_accepted,
             tuple(round(x, 6) for x in t.latencies_ms), t.ranging_sessions, t.fast_path_hits, t.trace_hash)
            for t in self.trials
        )

    def to_dict(self) -> Dict:
        return {
            "condition": self.condition,
            "modality": self.modality,
            "base_seed": self.base_seed,
            "repetitions": self.repetitions,
            "n_signals": self.n_signals,
            "n_adversarial": self.n_adversarial,
            "correct": self.correct,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
            "impersonations_accepted": self.impersonations_accepted,
            "accuracy": self.accuracy,
            "false_positive_rate": self.false_positive_rate,
            "false_negative_rate": self.false_negative_rate,
            "mean_latency_ms": self.mean_latency_ms,
            "latencies_ms": self.latencies_ms,
            "ranging_sessions": self.ranging_sessions,
            "fast_path_hits": self.fast_path_hits,
            "frame_ms_p95": self.frame_ms_p95,
            "trace_hashes": [t.trace_hash for t in self.trials],
        }


def _build_pipeline(scenario: ScenarioFile, sim: SceneSimulator, packet_bits: int):
    modality = scenario.active_modality
    if modality == Modality.GESTURE:
        return GestureRecognizer(scenario.gesture, scenario.camera)
    if modality == Modality.VLC:
        return VlcDecoder(scenario.vlc, scenario.camera, packet_bits)
    return UwbManager(scenario.uwb, scenario.camera, measure=sim.measure_tag)


def run_scenario(
    scenario: ScenarioFile,
    seed: Optional[int] = None,
    packet_bits: int = PACKET_BITS,
    trace_path: Optional[str] = None,
) -> Tuple[TrialResult, List[TraceEvent]]:
    """One deterministic trial; the result and trace depend only on (scenario, seed, packet_bits)."""
    sim = SceneSimulator(scenario, seed, packet_bits)
    tracker = FaceTracker(scenario.tracker)
    pipeline = _build_pipeline(scenario, sim, packet_bits)
    recorder = TraceRecorder()
    changes: List[StateChange] = []
    frame_ms: List[float] = []

    for i in range(sim.frame_count):
        frame = sim.synthesize_frame(i)
        started = time.perf_counter()
        now = frame.t_ms

        tracker.track_faces(frame.faces, now)
        for fid in tracker.lost_ids:
            recorder.record(now, TraceKind.FACE_LOST, face_id=fid)
        faces = tracker.live()
        for fid in tracker.new_ids:
            recorder.record(now, TraceKind.FACE_TRACKED, face_id=fid)
        pipeline.on_faces_lost(tracker.lost_ids, now, recorder)

        for toggle in pipeline.process_frame(frame, faces, now, recorder):
            face = faces.get(toggle.face_id)
            if face is None:
                raise StaleBindingError(
                    f"[t={now:.0f}ms] {toggle.cause} targeted face {toggle.face_id}, which is not tracked"
                )
            before = face.privacy_state
            apply_privacy_command(face, toggle.command, now)
            if face.privacy_state != before:
                recorder.record(
                    now, TraceKind.STATE_CHANGED,
                    face_id=face.face_id, command=toggle.command, cause=toggle.cause,
                    state=face.privacy_state,
                )
                changes.append(StateChange(now, face.face_id, toggle.command, toggle.cause, face.truth_actor_id))

        frame_ms.append((time.perf_counter() - started) * 1000.0)

    modality = scenario.active_modality
    attribution = attribute_state_changes(scenario.events, changes, modality)
    ranging = getattr(pipeline, "ranging_sessions_started", 0)
    fast_path = getattr(pipeline, "fast_path_hits", 0)

    result = TrialResult(
        seed=sim.seed,
        condition=scenario.condition,
        modality=modality.value,
        n_signals=sum(1 for e in scenario.events if not e.adversarial),
        n_adversarial=sum(1 for e in scenario.events if e.adversarial),
        correct=attribution.correct,
        false_positives=attribution.false_positives,
        false_negatives=attribution.false_negatives,
        impersonations_accepted=attribution.impersonations_accepted,
        latencies_ms=attribution.latencies_ms,
        ranging_sessions=ranging,
        fast_path_hits=fast_path,
        state_changes=len(changes),
        trace_hash=recorder.trace_hash(),
        frame_ms_p95=float(np.percentile(frame_ms, 95)) if frame_ms else 0.0,
    )
    logger.debug(
        f"[{scenario.condition}] [seed={sim.seed}] correct={result.correct}/{result.n_signals} "
        f"fp={result.false_positives} latencies={[round(x, 1) for x in result.latencies_ms]}"
    )

    if trace_path:
        recorder.write(trace_path)
    return result, recorder.events


def _run_trial(args: Tuple[ScenarioFile, int, int]) -> TrialResult:
    scenario, seed, packet_bits = args
    result, _ = run_scenario(scenario, seed, packet_bits)
    return result


def run_batch(
    scenario: ScenarioFile,
    repetitions: Optional[int] = None,
    base_seed: Optional[int] = None,
    workers: int = 1,
    packet_bits: int = PACKET_BITS,
) -> BatchResult:
    """Trial i uses seed base_seed + i; results are merged in seed order."""
    reps = repetitions if repetitions is not None else scenario.trial.repetitions
    if reps < 1:
        raise ValueError("repetitions must be at least 1")
    base = scenario.noise.rng_seed if base_seed is None else base_seed
    jobs = [(scenario, base + i, packet_bits) for i in range(reps)]

    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=min(workers, reps)) as pool:
            trials = list(pool.map(_run_trial, jobs))
    else:
        trials = [_run_trial(job) for job in jobs]
    trials.sort(key=lambda t: t.seed)

    batch = BatchResult(scenario.condition, scenario.active_modality.value, base, trials)
    mean = batch.mean_latency_ms
    logger.info(
        f"[{scenario.condition}] {reps} trials (seeds {base}..{base + reps - 1}): "
        f"accuracy={batch.accuracy:.3f} fp={batch.false_positives} fn={batch.false_negatives} "
        f"mean_latency={'n/a' if mean is None else f'{mean:.1f}ms'}"
    )
    return batch


def check_expectations(scenario: ScenarioFile, batch: BatchResult) -> List[str]:
    """Failed expectations from the scenario's trial.expect section (empty when all pass)."""
    expect = scenario.trial.expect
    if expect is None:
        return []
    failures = []
    if expect.min_accuracy is not None and batch.accuracy < expect.min_accuracy - 1e-12:
        failures.append(f"accuracy {batch.accuracy:.3f} < {expect.min_accuracy}")
    if expect.max_false_positive_rate is not None and batch.false_positive_rate > expect.max_false_positive_rate + 1e-12:
        failures.append(f"false positive rate {batch.false_positive_rate:.3f} > {expect.max_false_positive_rate}")
    if expect.max_impersonations_accepted is not None and batch.impersonations_accepted > expect.max_impersonations_accepted:
        failures.append(f"{batch.impersonations_accepted} impersonations accepted")
    if expect.latency_ms is not None:
        lo, hi = expect.latency_ms
        outside = [x for x in batch.latencies_ms if not (lo <= x <= hi)]
        if outside:
            failures.append(f"{len(outside)} latencies outside [{lo}, {hi}] ms")
    return failures
