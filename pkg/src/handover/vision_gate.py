"""Geometric release condition on fingertip detections.

The vision modality votes to release only when at least three confident
fingertips, the thumb among them, sit inside the depth slab spanned by
the object's front and back planes. Boundaries are inclusive so a finger
resting exactly on a plane does not flicker the vote.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from .core import FingerType, FingertipDetection, ObjectSlab

MIN_FINGERS_FOR_GRASP = 3
DEFAULT_MIN_CONFIDENCE = 0.5


@dataclass(frozen=True)
class VisionVerdict:
    vote: bool
    fingers_in_slab: int
    thumb_in_slab: bool
    evaluated_at: int

    def __post_init__(self) -> None:
        expected = self.fingers_in_slab >= MIN_FINGERS_FOR_GRASP and self.thumb_in_slab
        if self.vote != expected:
            raise ValueError("vote must equal (fingers_in_slab >= 3 AND thumb_in_slab)")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "vote": bool(self.vote),
            "fingers_in_slab": int(self.fingers_in_slab),
            "thumb_in_slab": bool(self.thumb_in_slab),
            "evaluated_at": int(self.evaluated_at),
        }

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "VisionVerdict":
        return cls(
            vote=bool(doc["vote"]),
            fingers_in_slab=int(doc["fingers_in_slab"]),
            thumb_in_slab=bool(doc["thumb_in_slab"]),
            evaluated_at=int(doc["evaluated_at"]),
        )


def in_slab(detection: FingertipDetection, slab: ObjectSlab) -> bool:
    """True iff the fingertip depth lies within the slab, bounds inclusive."""
    if not isinstance(slab, ObjectSlab):
        raise TypeError("in_slab requires an ObjectSlab")
    return slab.z_front <= detection.position_3d[2] <= slab.z_back


def evaluate_grasp(
    detections: Sequence[FingertipDetection],
    slab: ObjectSlab,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    at_ms: int | None = None,
) -> VisionVerdict:
    """Score one detection frame against the grasp rule.

    Detections below ``min_confidence`` are ignored. ``at_ms`` stamps the
    verdict; it defaults to the latest detection timestamp (0 if the frame
    is empty).
    """
    if not 0.0 <= min_confidence <= 1.0:
        raise ValueError("min_confidence must lie in [0, 1]")
    kept = [d for d in detections if d.confidence >= min_confidence]
    inside = [d for d in kept if in_slab(d, slab)]
    thumb = any(d.finger_type is FingerType.THUMB for d in inside)
    if at_ms is None:
        at_ms = max((d.timestamp for d in detections), default=0)
    return VisionVerdict(
        vote=len(inside) >= MIN_FINGERS_FOR_GRASP and thumb,
        fingers_in_slab=len(inside),
        thumb_in_slab=thumb,
        evaluated_at=int(at_ms),
    )
