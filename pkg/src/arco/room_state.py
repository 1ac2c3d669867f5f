"""Materialized room state: the fold of all sequenced reliable messages
over a base scene.

Server, clients, and offline replay all run this exact fold, which is
what makes convergence checkable: after quiescence every party hashes its
materialized state and the digests must match. Lossy traffic (live
cursors, presence, view frames) never enters the fold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Optional

from . import canonical
from .annotation import Annotation, Cursor
from .canonical import tree_hash
from .capture import MeshBlockSet, PointCloud
from .geometry import Pose
from .protocol import (
    AnnotationAdd,
    CaptureCloud,
    CaptureStopped,
    Control,
    CursorMarker,
    LocalizationEvent,
    MeshBlockUpdate,
    SceneDeltas,
    ScreenshotAnchor,
    WireEnvelope,
)
from .scene import SceneState, apply_deltas


@dataclass
class PeerLocalization:
    phase: str
    alignment: Optional[Pose] = None
    confirmed_at: Optional[int] = None

    def to_tree(self) -> dict:
        return {
            "alignment": None if self.alignment is None else self.alignment.to_tree(),
            "confirmed_at": None if self.confirmed_at is None else int(self.confirmed_at),
            "phase": self.phase,
        }

    @staticmethod
    def from_tree(d: dict) -> "PeerLocalization":
        return PeerLocalization(
            phase=str(d["phase"]),
            alignment=None if d.get("alignment") is None else Pose.from_tree(d["alignment"]),
            confirmed_at=None if d.get("confirmed_at") is None else int(d["confirmed_at"]),
        )


@dataclass
class MaterializedState:
    scene: SceneState = field(default_factory=SceneState)
    clouds: Dict[str, PointCloud] = field(default_factory=dict)
    meshes: Dict[str, MeshBlockSet] = field(default_factory=dict)
    annotations: Dict[str, Annotation] = field(default_factory=dict)
    markers: Dict[str, Cursor] = field(default_factory=dict)
    screenshots: Dict[str, ScreenshotAnchor] = field(default_factory=dict)
    localization: Dict[str, PeerLocalization] = field(default_factory=dict)

    def fold(self, env: WireEnvelope) -> None:
        """Apply one sequenced reliable envelope in place."""
        body = env.body
        if isinstance(body, SceneDeltas):
            self.scene = apply_deltas(self.scene, body.deltas).state
        elif isinstance(body, CaptureCloud):
            self.clouds[body.cloud.capture_id] = body.cloud
        elif isinstance(body, MeshBlockUpdate):
            blocks = self.meshes.get(body.capture_id)
            if blocks is None:
                blocks = MeshBlockSet(body.capture_id, body.session_id, body.block_size)
                self.meshes[body.capture_id] = blocks
            blocks.blocks[tuple(body.key)] = body.mesh  # latest wins per key
        elif isinstance(body, AnnotationAdd):
            self.annotations[body.annotation.id] = body.annotation
        elif isinstance(body, CursorMarker):
            if body.cursor.id is None:
                raise ValueError("marker cursor missing id")
            self.markers[body.cursor.id] = body.cursor
        elif isinstance(body, ScreenshotAnchor):
            self.screenshots[body.image_id] = body
        elif isinstance(body, LocalizationEvent):
            self.localization[body.peer] = PeerLocalization(
                body.phase, body.alignment, body.confirmed_at
            )
        elif isinstance(body, (CaptureStopped, Control)):
            pass  # events only; no materialized effect
        else:
            raise ValueError(f"cannot fold lossy/unknown message kind {body.type}")

    def to_tree(self) -> dict:
        return {
            "annotations": {k: a.to_tree() for k, a in self.annotations.items()},
            "captures": {
                "clouds": {k: c.to_tree() for k, c in self.clouds.items()},
                "meshes": {k: m.to_tree() for k, m in self.meshes.items()},
            },
            "localization": {k: l.to_tree() for k, l in self.localization.items()},
            "markers": {k: c.to_tree() for k, c in self.markers.items()},
            "scene": self.scene.to_tree(),
            "screenshots": {k: s.to_tree() for k, s in self.screenshots.items()},
        }

    @staticmethod
    def from_tree(d: dict) -> "MaterializedState":
        return MaterializedState(
            scene=SceneState.from_tree(d["scene"]),
            clouds={k: PointCloud.from_tree(v) for k, v in d["captures"]["clouds"].items()},
            meshes={k: MeshBlockSet.from_tree(v) for k, v in d["captures"]["meshes"].items()},
            annotations={k: Annotation.from_tree(v) for k, v in d["annotations"].items()},
            markers={k: Cursor.from_tree(v) for k, v in d["markers"].items()},
            screenshots={k: ScreenshotAnchor.from_tree(v) for k, v in d["screenshots"].items()},
            localization={k: PeerLocalization.from_tree(v) for k, v in d["localization"].items()},
        )

    def hash(self) -> str:
        return tree_hash(self.to_tree())

    def copy(self) -> "MaterializedState":
        # round-trip through the canonical form: value semantics, and the
        # copy is guaranteed independent of the original
        return MaterializedState.from_tree(json.loads(canonical.dumps(self.to_tree())))
