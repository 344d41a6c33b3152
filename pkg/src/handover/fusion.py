"""Stream pairing and the release state machine.

Torque classifications (one per sliding window) are paired with the
nearest vision verdict inside a bounded timestamp skew, each pair fusing
the two modality votes with AND. The state machine walks
holding-idle -> contact-pending -> release-armed -> released, requiring a
run of consecutive agreeing fused votes (debounce) before it commits to
the single, terminal release decision of an episode.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .classifier import NormalizationStats, classify_windows, torque_vote
from .core import (
    ActionClass,
    ActionScores,
    ReleaseDecision,
    TorqueWindow,
    dumps_canonical,
)
from .nn_kernel import Network
from .synth import SAMPLE_DT_MS, ScenarioScript, WINDOW_SAMPLES
from .vision_gate import DEFAULT_MIN_CONFIDENCE, VisionVerdict, evaluate_grasp

DEFAULT_STRIDE_SAMPLES = 5  # 125 ms between sliding-window classifications


class FsmState(Enum):
    HOLDING_IDLE = "holding_idle"
    CONTACT_PENDING = "contact_pending"
    RELEASE_ARMED = "release_armed"
    RELEASED = "released"


class Pipeline(Enum):
    TORQUE_ONLY = "torque_only"
    VISION_ONLY = "vision_only"
    FUSED = "fused"


@dataclass(frozen=True)
class SyncConfig:
    pairing_window_ms: int = 100
    debounce_frames: int = 3

    def __post_init__(self) -> None:
        if self.pairing_window_ms <= 0:
            raise ValueError("pairing_window_ms must be positive")
        if self.debounce_frames < 1:
            raise ValueError("debounce_frames must be >= 1")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "pairing_window_ms": self.pairing_window_ms,
            "debounce_frames": self.debounce_frames,
        }

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "SyncConfig":
        return cls(
            pairing_window_ms=int(doc["pairing_window_ms"]),
            debounce_frames=int(doc["debounce_frames"]),
        )


@dataclass(frozen=True)
class TorqueEvent:
    scores: ActionScores
    timestamp: int


@dataclass(frozen=True)
class FusedSample:
    torque: TorqueEvent
    vision: VisionVerdict
    fused_vote: bool
    skew_ms: int

    def __post_init__(self) -> None:
        if self.fused_vote != (torque_vote(self.torque.scores) and self.vision.vote):
            raise ValueError("fused_vote must equal torque_vote AND vision vote")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "torque": {**self.torque.scores.to_json_dict(), "timestamp": int(self.torque.timestamp)},
            "vision": self.vision.to_json_dict(),
            "fused_vote": bool(self.fused_vote),
            "skew_ms": int(self.skew_ms),
        }

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "FusedSample":
        tq = doc["torque"]
        return cls(
            torque=TorqueEvent(scores=ActionScores.from_json_dict(tq), timestamp=int(tq["timestamp"])),
            vision=VisionVerdict.from_json_dict(doc["vision"]),
            fused_vote=bool(doc["fused_vote"]),
            skew_ms=int(doc["skew_ms"]),
        )


@dataclass
class SyncResult:
    samples: list[FusedSample]
    dropped_torque_events: int


def _check_ordered(stamps: Sequence[int], name: str) -> None:
    for k in range(1, len(stamps)):
        if stamps[k] < stamps[k - 1]:
            raise ValueError(
                f"{name} stream out of order at index {k}: "
                f"{stamps[k]} ms after {stamps[k - 1]} ms"
            )


def synchronize(
    torque_events: Sequence[TorqueEvent],
    vision_verdicts: Sequence[VisionVerdict],
    config: SyncConfig = SyncConfig(),
) -> SyncResult:
    """Pair each torque event with its nearest vision verdict in time.

    Eligible partners lie within ``pairing_window_ms`` of the torque
    timestamp; the closest wins, ties going to the later verdict. Torque
    events with no eligible partner are dropped and counted. Both input
    streams must be individually time-ordered.
    """
    _check_ordered([e.timestamp for e in torque_events], "torque")
    _check_ordered([v.evaluated_at for v in vision_verdicts], "vision")
    samples: list[FusedSample] = []
    dropped = 0
    v_stamps = np.asarray([v.evaluated_at for v in vision_verdicts], dtype=np.int64)
    for event in torque_events:
        idx = int(np.searchsorted(v_stamps, event.timestamp))
        best: tuple[int, int, int] | None = None  # (gap, -stamp, index)
        for cand in (idx - 1, idx):
            if 0 <= cand < len(vision_verdicts):
                gap = abs(event.timestamp - int(v_stamps[cand]))
                if gap <= config.pairing_window_ms:
                    key = (gap, -int(v_stamps[cand]), cand)
                    if best is None or key < best:
                        best = key
        if best is None:
            dropped += 1
            continue
        verdict = vision_verdicts[best[2]]
        samples.append(FusedSample(
            torque=event,
            vision=verdict,
            fused_vote=torque_vote(event.scores) and verdict.vote,
            skew_ms=event.timestamp - verdict.evaluated_at,
        ))
    return SyncResult(samples=samples, dropped_torque_events=dropped)


class DebounceGate:
    """Fires once after ``frames`` consecutive true votes; false resets."""

    def __init__(self, frames: int) -> None:
        if frames < 1:
            raise ValueError("debounce frames must be >= 1")
        self.frames = frames
        self.consecutive = 0

    def update(self, vote: bool) -> bool:
        self.consecutive = self.consecutive + 1 if vote else 0
        return self.consecutive >= self.frames


class ReleaseFsm:
    """Four-state release automaton over fused samples.

    Contact (any in-slab finger) moves holding-idle to contact-pending;
    the debounce run of fused-true samples then arms and fires the release
    in a single step. Released is terminal: stepping it is an error and at
    most one decision is ever emitted.
    """

    def __init__(self, config: SyncConfig = SyncConfig()) -> None:
        self.config = config
        self.state = FsmState.HOLDING_IDLE
        self.transitions: list[tuple[int, FsmState, FsmState]] = []
        self._gate = DebounceGate(config.debounce_frames)

    def _move(self, at_ms: int, new_state: FsmState) -> None:
        self.transitions.append((at_ms, self.state, new_state))
        self.state = new_state

    def step(self, sample: FusedSample) -> ReleaseDecision | None:
        if self.state is FsmState.RELEASED:
            raise ValueError("FSM already released; start a new episode")
        ts = sample.torque.timestamp
        if self.state is FsmState.HOLDING_IDLE and sample.vision.fingers_in_slab >= 1:
            self._move(ts, FsmState.CONTACT_PENDING)
        if self.state is FsmState.CONTACT_PENDING:
            if self._gate.update(sample.fused_vote):
                self._move(ts, FsmState.RELEASE_ARMED)
                self._move(ts, FsmState.RELEASED)
                return ReleaseDecision(
                    release=True,
                    torque_vote=True,
                    vision_vote=True,
                    action=sample.torque.scores.predicted,
                    decided_at=ts,
                )
        return None


def fsm_step(fsm: ReleaseFsm, sample: FusedSample) -> tuple[FsmState, ReleaseDecision | None]:
    """Step the automaton; returns the new state and any emitted decision."""
    decision = fsm.step(sample)
    return fsm.state, decision


# ---------------------------------------------------------------------------
# episode execution
# ---------------------------------------------------------------------------

@dataclass
class EpisodeOutcome:
    action: ActionClass
    pipeline: Pipeline
    released: bool
    release_time_ms: int | None
    decision: ReleaseDecision | None
    events: list[dict[str, Any]] = field(default_factory=list, repr=False)
    dropped_torque_events: int = 0
    n_samples: int = 0


def torque_event_stream(
    script: ScenarioScript,
    net: Network,
    stats: NormalizationStats,
    stride_samples: int = DEFAULT_STRIDE_SAMPLES,
) -> list[TorqueEvent]:
    """Classify sliding one-second windows; events stamped at window end."""
    if stride_samples < 1:
        raise ValueError("stride must be >= 1")
    n = script.torques.shape[1]
    starts = range(0, n - WINDOW_SAMPLES + 1, stride_samples)
    windows = [
        TorqueWindow(
            samples=script.torques[:, start:start + WINDOW_SAMPLES],
            start_time=script.torque_start_ms + start * SAMPLE_DT_MS,
        )
        for start in starts
    ]
    scores = classify_windows(net, stats, windows)
    return [
        TorqueEvent(
            scores=s,
            timestamp=script.torque_start_ms + (start + WINDOW_SAMPLES) * SAMPLE_DT_MS,
        )
        for start, s in zip(starts, scores)
    ]


def vision_verdict_stream(
    script: ScenarioScript, min_confidence: float = DEFAULT_MIN_CONFIDENCE
) -> list[VisionVerdict]:
    return [
        evaluate_grasp(frame.detections, script.slab, min_confidence, at_ms=frame.timestamp)
        for frame in script.frames
    ]


def run_episode(
    script: ScenarioScript,
    net: Network,
    stats: NormalizationStats,
    config: SyncConfig = SyncConfig(),
    pipeline: Pipeline = Pipeline.FUSED,
    stride_samples: int = DEFAULT_STRIDE_SAMPLES,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
) -> EpisodeOutcome:
    """Run one scripted episode through a pipeline variant to completion.

    The fused pipeline synchronizes both streams and drives the full FSM;
    the single-modality variants apply the same debounce to their own vote
    stream alone. The outcome records whether (and when) the episode
    released, plus a replayable event log.
    """
    pipeline = Pipeline(pipeline)
    events_log: list[dict[str, Any]] = [{
        "type": "header",
        "pipeline": pipeline.value,
        "action": int(script.action),
        "sync_config": config.to_json_dict(),
        "slab": script.slab.to_json_dict(),
        "faults": list(script.faults),
    }]
    outcome = EpisodeOutcome(
        action=script.action, pipeline=pipeline, released=False,
        release_time_ms=None, decision=None, events=events_log,
    )

    if pipeline is Pipeline.VISION_ONLY:
        verdicts = vision_verdict_stream(script, min_confidence)
        if not verdicts:
            raise ValueError("episode has no vision frames")
        outcome.n_samples = len(verdicts)
        gate = DebounceGate(config.debounce_frames)
        for verdict in verdicts:
            events_log.append({
                "type": "vote_sample", "source": "vision", "t": verdict.evaluated_at,
                "vote": bool(verdict.vote), "fingers_in_slab": verdict.fingers_in_slab,
                "thumb_in_slab": verdict.thumb_in_slab,
            })
            if gate.update(verdict.vote):
                outcome.released = True
                outcome.release_time_ms = verdict.evaluated_at
                break
    elif pipeline is Pipeline.TORQUE_ONLY:
        events = torque_event_stream(script, net, stats, stride_samples)
        if not events:
            raise ValueError("episode torque stream is too short for one window")
        outcome.n_samples = len(events)
        gate = DebounceGate(config.debounce_frames)
        for event in events:
            vote = torque_vote(event.scores)
            events_log.append({
                "type": "vote_sample", "source": "torque", "t": event.timestamp,
                "vote": bool(vote), "predicted": int(event.scores.predicted),
            })
            if gate.update(vote):
                outcome.released = True
                outcome.release_time_ms = event.timestamp
                break
    else:
        events = torque_event_stream(script, net, stats, stride_samples)
        verdicts = vision_verdict_stream(script, min_confidence)
        if not events or not verdicts:
            raise ValueError("fused episode requires both streams to be non-empty")
        sync = synchronize(events, verdicts, config)
        outcome.dropped_torque_events = sync.dropped_torque_events
        outcome.n_samples = len(sync.samples)
        fsm = ReleaseFsm(config)
        for sample in sync.samples:
            seen = len(fsm.transitions)
            decision = fsm.step(sample)
            events_log.append({"type": "fused_sample", **sample.to_json_dict()})
            for at_ms, prev, new in fsm.transitions[seen:]:
                events_log.append({
                    "type": "transition", "t": at_ms, "from": prev.value, "to": new.value,
                })
            if decision is not None:
                events_log.append({"type": "decision", **decision.to_json_dict()})
                outcome.released = True
                outcome.release_time_ms = decision.decided_at
                outcome.decision = decision
                break

    events_log.append({
        "type": "summary",
        "released": outcome.released,
        "release_time_ms": outcome.release_time_ms,
        "dropped_torque_events": outcome.dropped_torque_events,
        "n_samples": outcome.n_samples,
    })
    return outcome


# ---------------------------------------------------------------------------
# episode logs and replay
# ---------------------------------------------------------------------------

def write_episode_log(path: str | Path, outcome: EpisodeOutcome) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for line in outcome.events:
            fh.write(dumps_canonical(line) + "\n")


@dataclass
class ReplayResult:
    matched: bool
    released: bool
    release_time_ms: int | None
    n_events: int
    mismatches: list[str]


def replay_episode_log(path: str | Path) -> ReplayResult:
    """Re-run the decision logic over a logged episode and diff the outcome.

    The log is authoritative input (votes and samples) and expected output
    (transitions, decision, summary); replay recomputes the output side
    and reports any divergence.
    """
    lines = [json.loads(s) for s in Path(path).read_text(encoding="utf-8").splitlines() if s.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ValueError("episode log must start with a header line")
    header = lines[0]
    config = SyncConfig.from_json_dict(header["sync_config"])
    pipeline = Pipeline(header["pipeline"])
    logged_summary = next((l for l in lines if l["type"] == "summary"), None)
    if logged_summary is None:
        raise ValueError("episode log has no summary line")

    mismatches: list[str] = []
    released = False
    release_time: int | None = None

    if pipeline is Pipeline.FUSED:
        samples = [FusedSample.from_json_dict(l) for l in lines if l["type"] == "fused_sample"]
        logged_transitions = [l for l in lines if l["type"] == "transition"]
        logged_decision = next((l for l in lines if l["type"] == "decision"), None)
        fsm = ReleaseFsm(config)
        decision = None
        for sample in samples:
            decision = fsm.step(sample)
            if decision is not None:
                released = True
                release_time = decision.decided_at
                break
        replayed = [
            {"t": t, "from": a.value, "to": b.value} for t, a, b in fsm.transitions
        ]
        logged = [
            {"t": l["t"], "from": l["from"], "to": l["to"]} for l in logged_transitions
        ]
        if replayed != logged:
            mismatches.append(f"transitions differ: replay {replayed} vs log {logged}")
        if (decision is None) != (logged_decision is None):
            mismatches.append("decision presence differs between replay and log")
        elif decision is not None and logged_decision is not None:
            if decision.to_json_dict() != {k: logged_decision[k] for k in decision.to_json_dict()}:
                mismatches.append("decision contents differ between replay and log")
    else:
        votes = [(l["t"], bool(l["vote"])) for l in lines if l["type"] == "vote_sample"]
        gate = DebounceGate(config.debounce_frames)
        for t, vote in votes:
            if gate.update(vote):
                released = True
                release_time = t
                break

    if released != bool(logged_summary["released"]):
        mismatches.append(
            f"released differs: replay {released} vs log {logged_summary['released']}"
        )
    if release_time != logged_summary["release_time_ms"]:
        mismatches.append(
            f"release time differs: replay {release_time} vs log {logged_summary['release_time_ms']}"
        )
    return ReplayResult(
        matched=not mismatches,
        released=released,
        release_time_ms=release_time,
        n_events=len(lines),
        mismatches=mismatches,
    )
