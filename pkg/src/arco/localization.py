"""Alignment between the in-situ device's local tracking frame and the
anchor frame of the pre-captured location mesh.

The positioning system itself is out of scope; candidates arrive from a
trace or a stub and carry only the resulting rigid transform. The state
machine gates everything spatial: no capture, annotation, or cursor may
leave the device unless the phase is ``localized``.

Re-localization replaces the alignment for future data only; artifacts
broadcast earlier keep the anchoring they were captured with.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Pose, RigidTransform, TriangleMesh

UNLOCALIZED = "unlocalized"
LOCALIZING = "localizing"
AWAITING_CONFIRMATION = "awaiting_confirmation"
LOCALIZED = "localized"

PHASES = (UNLOCALIZED, LOCALIZING, AWAITING_CONFIRMATION, LOCALIZED)


class InvalidPhase(RuntimeError):
    pass


class NotLocalized(RuntimeError):
    pass


@dataclass(eq=False)
class LocalizationState:
    phase: str = UNLOCALIZED
    candidate: Optional[RigidTransform] = None  # awaiting_confirmation only
    alignment: Optional[RigidTransform] = None  # localized only
    confirmed_at: Optional[int] = None  # ms

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")


@dataclass(eq=False)
class LocationMesh:
    """Pre-captured site mesh in the anchor frame; opacity is client-side."""

    mesh: TriangleMesh
    opacity: float = 0.5

    def __post_init__(self):
        if len(self.mesh.triangles) == 0:
            raise ValueError("location mesh is empty")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValueError("opacity must be in [0, 1]")


def start_localizing(state: LocalizationState) -> LocalizationState:
    return LocalizationState(LOCALIZING)


def offer_candidate(state: LocalizationState, candidate: RigidTransform) -> LocalizationState:
    """Continuous localization proposes alignments; newest replaces older."""
    if state.phase not in (LOCALIZING, AWAITING_CONFIRMATION):
        raise InvalidPhase(f"cannot offer candidate in phase {state.phase}")
    return LocalizationState(AWAITING_CONFIRMATION, candidate=candidate)


def confirm(state: LocalizationState, now_ms: int = 0) -> LocalizationState:
    """User confirms the overlaid candidate; the full scene loads on peers."""
    if state.phase != AWAITING_CONFIRMATION:
        raise InvalidPhase(f"cannot confirm in phase {state.phase}")
    return LocalizationState(LOCALIZED, alignment=state.candidate, confirmed_at=int(now_ms))


def restart(state: LocalizationState) -> LocalizationState:
    """Back to localizing (e.g. to correct drift). Allowed from any phase;
    previously anchored artifacts are not re-anchored."""
    return LocalizationState(LOCALIZING)


def anchor_point(state: LocalizationState, p_local) -> np.ndarray:
    """Map a device-local point into the anchor frame."""
    if state.phase != LOCALIZED:
        raise NotLocalized(f"phase is {state.phase}")
    return state.alignment.apply(p_local)


def anchor_pose(state: LocalizationState, pose_local: Pose) -> Pose:
    if state.phase != LOCALIZED:
        raise NotLocalized(f"phase is {state.phase}")
    return state.alignment.compose(pose_local)
