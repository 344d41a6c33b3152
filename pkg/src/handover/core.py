"""Shared domain types for the handover release pipeline.

Everything downstream (classifier, vision gate, fusion, harness) speaks in
terms of these values: one-second torque windows, the six receiver action
classes, fingertip detections with camera-frame depth, and the final
release decision. All types are immutable and JSON-serializable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Any

import numpy as np

NUM_JOINTS = 7
SAMPLE_RATE_HZ = 40
WINDOW_SAMPLES = 40  # one second at 40 Hz
FLAT_SIZE = NUM_JOINTS * WINDOW_SAMPLES  # 280
TORQUE_LIMIT_NM = 35.0  # signed bound; sensors report magnitudes up to ~30
NUM_CLASSES = 6
PROBABILITY_TOL = 1e-6


class ActionClass(IntEnum):
    """Receiver action at contact, codes fixed for serialization."""

    NO_ACTION = 0
    BUMP = 1
    PUSH = 2
    HOLD = 3
    PULL = 4
    PULL_UP = 5


class Decision(Enum):
    RELEASE = "release"
    DO_NOT_RELEASE = "do_not_release"


class FingerType(Enum):
    THUMB = "thumb"
    OTHER = "other"


# Accept actions keep the object moving with the receiver; the rest must
# keep the gripper closed.
RELEASE_ACTIONS = frozenset({ActionClass.HOLD, ActionClass.PULL, ActionClass.PULL_UP})

SUCCESS_CRITERIA: dict[ActionClass, Decision] = {
    action: (Decision.RELEASE if action in RELEASE_ACTIONS else Decision.DO_NOT_RELEASE)
    for action in ActionClass
}


def expected_decision(action: ActionClass) -> Decision:
    """Expected outcome for an action: release for hold/pull/pull-up only."""
    return SUCCESS_CRITERIA[ActionClass(action)]


@dataclass(frozen=True)
class TorqueWindow:
    """One second of 7-joint torque samples at 40 Hz.

    ``samples`` is a (7, 40) matrix in N*m, joint-major: row j holds the
    40 consecutive readings of joint j. ``start_time`` is the monotonic
    timestamp (ms) of the first sample.
    """

    samples: np.ndarray
    start_time: int
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self) -> None:
        arr = np.array(self.samples, dtype=np.float64)
        if arr.shape != (NUM_JOINTS, WINDOW_SAMPLES):
            raise ValueError(
                f"torque window must be ({NUM_JOINTS}, {WINDOW_SAMPLES}), got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("torque window contains non-finite samples")
        if np.any(np.abs(arr) > TORQUE_LIMIT_NM):
            raise ValueError(
                f"torque sample out of range [-{TORQUE_LIMIT_NM}, {TORQUE_LIMIT_NM}] N*m"
            )
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise ValueError(f"sample rate must be {SAMPLE_RATE_HZ} Hz")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    def flatten(self) -> np.ndarray:
        """Flatten joint-major into a 280-value vector (joint 0 first)."""
        return self.samples.reshape(FLAT_SIZE).copy()

    @classmethod
    def unflatten(cls, vector: np.ndarray, start_time: int = 0) -> "TorqueWindow":
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (FLAT_SIZE,):
            raise ValueError(f"flat window must have {FLAT_SIZE} values, got {vec.shape}")
        return cls(samples=vec.reshape(NUM_JOINTS, WINDOW_SAMPLES), start_time=start_time)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "samples": self.samples.tolist(),
            "start_time": int(self.start_time),
            "sample_rate_hz": int(self.sample_rate_hz),
        }

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "TorqueWindow":
        return cls(
            samples=np.asarray(doc["samples"], dtype=np.float64),
            start_time=int(doc["start_time"]),
            sample_rate_hz=int(doc.get("sample_rate_hz", SAMPLE_RATE_HZ)),
        )


@dataclass(frozen=True)
class ActionScores:
    """Classifier output: a 6-way probability vector plus its argmax."""

    probabilities: np.ndarray
    predicted: ActionClass

    def __post_init__(self) -> None:
        probs = np.array(self.probabilities, dtype=np.float64)
        if probs.shape != (NUM_CLASSES,):
            raise ValueError(f"expected {NUM_CLASSES} probabilities, got {probs.shape}")
        if np.any(probs < 0.0):
            raise ValueError("probabilities must be non-negative")
        if abs(float(probs.sum()) - 1.0) > PROBABILITY_TOL:
            raise ValueError(f"probabilities sum to {probs.sum()}, expected 1")
        # np.argmax returns the first maximum, i.e. the lowest class code.
        if int(np.argmax(probs)) != int(self.predicted):
            raise ValueError("predicted class is not the argmax of the probabilities")
        probs.flags.writeable = False
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "predicted", ActionClass(self.predicted))

    @classmethod
    def from_probabilities(cls, probabilities: np.ndarray) -> "ActionScores":
        probs = np.asarray(probabilities, dtype=np.float64)
        return cls(probabilities=probs, predicted=ActionClass(int(np.argmax(probs))))

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "probabilities": self.probabilities.tolist(),
            "predicted": int(self.predicted),
        }

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "ActionScores":
        return cls(
            probabilities=np.asarray(doc["probabilities"], dtype=np.float64),
            predicted=ActionClass(int(doc["predicted"])),
        )


@dataclass(frozen=True)
class FingertipDetection:
    """A detected fingertip: 2D box, finger label, camera-frame 3D position.

    Box coordinates are normalized to [0, 1] image space; ``position_3d``
    is (x, y, z) meters in the camera frame with z the depth axis.
    """

    box: tuple[float, float, float, float]
    finger_type: FingerType
    position_3d: tuple[float, float, float]
    confidence: float
    timestamp: int

    def __post_init__(self) -> None:
        x_min, y_min, x_max, y_max = (float(v) for v in self.box)
        if not (x_min < x_max and y_min < y_max):
            raise ValueError(f"degenerate detection box {self.box}")
        x, y, z = (float(v) for v in self.position_3d)
        if z < 0.0:
            raise ValueError("detection depth (z) must be non-negative")
        if not 0.0 <= float(self.confidence) <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        object.__setattr__(self, "box", (x_min, y_min, x_max, y_max))
        object.__setattr__(self, "position_3d", (x, y, z))
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "finger_type", FingerType(self.finger_type))

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "box": list(self.box),
            "finger_type": self.finger_type.value,
            "position_3d": list(self.position_3d),
            "confidence": self.confidence,
            "timestamp": int(self.timestamp),
        }

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "FingertipDetection":
        return cls(
            box=tuple(doc["box"]),
            finger_type=FingerType(doc["finger_type"]),
            position_3d=tuple(doc["position_3d"]),
            confidence=float(doc["confidence"]),
            timestamp=int(doc["timestamp"]),
        )


@dataclass(frozen=True)
class ObjectSlab:
    """Camera-frame depths of the held object's front and back planes."""

    z_front: float
    z_back: float

    def __post_init__(self) -> None:
        if not 0.0 < float(self.z_front) < float(self.z_back):
            raise ValueError(f"slab requires 0 < z_front < z_back, got {self}")
        object.__setattr__(self, "z_front", float(self.z_front))
        object.__setattr__(self, "z_back", float(self.z_back))

    def to_json_dict(self) -> dict[str, Any]:
        return {"z_front": self.z_front, "z_back": self.z_back}

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "ObjectSlab":
        return cls(z_front=float(doc["z_front"]), z_back=float(doc["z_back"]))


@dataclass(frozen=True)
class ReleaseDecision:
    """Final binary release output with per-modality provenance."""

    release: bool
    torque_vote: bool
    vision_vote: bool
    action: ActionClass
    decided_at: int

    def __post_init__(self) -> None:
        if self.release != (self.torque_vote and self.vision_vote):
            raise ValueError("release must equal torque_vote AND vision_vote")
        object.__setattr__(self, "action", ActionClass(self.action))

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "release": bool(self.release),
            "torque_vote": bool(self.torque_vote),
            "vision_vote": bool(self.vision_vote),
            "action": int(self.action),
            "decided_at": int(self.decided_at),
        }

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "ReleaseDecision":
        return cls(
            release=bool(doc["release"]),
            torque_vote=bool(doc["torque_vote"]),
            vision_vote=bool(doc["vision_vote"]),
            action=ActionClass(int(doc["action"])),
            decided_at=int(doc["decided_at"]),
        )


def dumps_canonical(doc: dict[str, Any]) -> str:
    """Serialize a JSON document byte-stably (sorted keys, tight separators)."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
