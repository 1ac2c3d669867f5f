"""In-situ markup: surface-projected strokes, free-space strokes, label
color assignment, and shared 3D cursors with persistent markers.

Strokes are polylines in the anchor frame with a minimum point spacing
(1 cm for surface draw, 2 cm for air draw) so stationary input cannot
grow them unboundedly. Labels get deterministic colors: predefined labels
keep fixed colors, custom labels consume palette slots in first-use
order, and once the palette is exhausted colors fall back to a stable
hash of the label text.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .canonical import CFloat
from .geometry import CameraIntrinsics, Pose, RigidTransform, TriangleMesh, pixel_ray, raycast, unproject
from .localization import LocalizationState, NotLocalized, LOCALIZED

SURFACE = "surface"
AIR = "air"

SURFACE_MIN_SPACING = 0.01  # m
AIR_MIN_SPACING = 0.02  # m
CURSOR_MISS_DISTANCE = 2.0  # m along the ray when nothing is hit

IN_SITU = "insitu"
EX_SITU = "exsitu"

# role -> cursor tint (green for in-situ, blue for ex-situ)
CURSOR_COLORS: Dict[str, Tuple[int, int, int]] = {
    IN_SITU: (109, 210, 104),
    EX_SITU: (103, 179, 230),
}

PREDEFINED_LABELS: Dict[str, Tuple[int, int, int]] = {
    "hazard": (230, 57, 70),
    "user flow": (69, 123, 157),
}

# 12 visually distinct slots for custom labels; none collide with the
# predefined label colors above.
PALETTE: List[Tuple[int, int, int]] = [
    (255, 190, 11),
    (251, 86, 7),
    (255, 0, 110),
    (131, 56, 236),
    (58, 134, 255),
    (6, 214, 160),
    (239, 71, 111),
    (17, 138, 178),
    (7, 59, 76),
    (255, 209, 102),
    (38, 70, 83),
    (42, 157, 143),
]


class InvalidDepth(ValueError):
    pass


class EmptyLabel(ValueError):
    pass


@dataclass(eq=False)
class Annotation:
    id: str
    session_id: str
    author: str
    kind: str  # surface | air
    points: np.ndarray  # (n, 3) anchor frame
    color: Tuple[int, int, int] = (255, 255, 255)
    label: Optional[str] = None
    created_at: int = 0  # ms

    def __post_init__(self):
        if self.kind not in (SURFACE, AIR):
            raise ValueError(f"unknown annotation kind {self.kind!r}")
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("annotation has non-finite points")
        self.color = tuple(int(c) for c in self.color)

    def to_tree(self) -> dict:
        return {
            "author": self.author,
            "color": [int(c) for c in self.color],
            "created_at": int(self.created_at),
            "id": self.id,
            "kind": self.kind,
            "label": self.label,
            "points": [CFloat(v) for v in self.points.reshape(-1)],
            "session_id": self.session_id,
        }

    @staticmethod
    def from_tree(d: dict) -> "Annotation":
        return Annotation(
            id=str(d["id"]),
            session_id=str(d["session_id"]),
            author=str(d["author"]),
            kind=str(d["kind"]),
            points=np.array([float(v) for v in d["points"]], dtype=np.float64).reshape(-1, 3),
            color=tuple(int(c) for c in d["color"]),
            label=None if d.get("label") is None else str(d["label"]),
            created_at=int(d["created_at"]),
        )


@dataclass
class LabelPalette:
    """Deterministic label -> color assignment."""

    custom: Dict[str, Tuple[int, int, int]] = field(default_factory=dict)

    def to_tree(self) -> dict:
        # insertion order matters for determinism, so keep an explicit list
        return {"custom": [[k, list(v)] for k, v in self.custom.items()]}

    @staticmethod
    def from_tree(d: dict) -> "LabelPalette":
        return LabelPalette({str(k): tuple(int(c) for c in v) for k, v in d["custom"]})


def _hash_color(label: str) -> Tuple[int, int, int]:
    h = hashlib.sha256(label.encode("utf-8")).digest()
    return (h[0], h[1], h[2])


def assign_label(palette: LabelPalette, label: str) -> Tuple[LabelPalette, Tuple[int, int, int]]:
    """Resolve a label to its color, assigning a palette slot on first use.

    Predefined labels keep their fixed colors; the first 12 distinct
    custom labels take pairwise-distinct palette slots; later labels fall
    back to a stable hash of the text (collisions allowed).
    """
    if not label:
        raise EmptyLabel("label must be non-empty")
    if label in PREDEFINED_LABELS:
        return palette, PREDEFINED_LABELS[label]
    if label in palette.custom:
        return palette, palette.custom[label]
    if len(palette.custom) < len(PALETTE):
        color = PALETTE[len(palette.custom)]
    else:
        color = _hash_color(label)
    new = LabelPalette(dict(palette.custom))
    new.custom[label] = color
    return new, color


def surface_stroke_append(
    stroke: Annotation,
    pixel,
    depth_frame,
    alignment: RigidTransform,
) -> Annotation:
    """Project a screen point onto the sensed surface and extend the stroke.

    Points closer than SURFACE_MIN_SPACING to the previous point are
    dropped (no-op).
    """
    d = depth_frame.depth_at(pixel)
    if not (d > 0.0) or not np.isfinite(d):
        raise InvalidDepth(f"no valid depth at pixel {pixel}")
    p_local = unproject(pixel, d, depth_frame.intrinsics, depth_frame.camera_pose)
    p = alignment.apply(p_local)
    return _append_spaced(stroke, p, SURFACE_MIN_SPACING)


def air_stroke_append(stroke: Annotation, device_pose: Pose, alignment: RigidTransform) -> Annotation:
    """Extend an air stroke with the anchored device position (2 cm spacing)."""
    p = alignment.apply(device_pose.position)
    return _append_spaced(stroke, p, AIR_MIN_SPACING)


def _append_spaced(stroke: Annotation, p: np.ndarray, spacing: float) -> Annotation:
    if len(stroke.points) > 0:
        if float(np.linalg.norm(p - stroke.points[-1])) < spacing:
            return stroke
    pts = np.concatenate([stroke.points, p.reshape(1, 3)], axis=0)
    return replace(stroke, points=pts)


@dataclass(eq=False)
class Cursor:
    peer: str
    role: str  # insitu | exsitu
    position: np.ndarray
    normal: Optional[np.ndarray] = None
    live: bool = True
    id: Optional[str] = None  # set when persisted as a marker
    created_at: Optional[int] = None

    def __post_init__(self):
        if self.role not in (IN_SITU, EX_SITU):
            raise ValueError(f"unknown role {self.role!r}")
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if self.normal is not None:
            self.normal = np.asarray(self.normal, dtype=np.float64).reshape(3)

    @property
    def color(self) -> Tuple[int, int, int]:
        return CURSOR_COLORS[self.role]

    def to_tree(self) -> dict:
        return {
            "created_at": None if self.created_at is None else int(self.created_at),
            "id": self.id,
            "live": self.live,
            "normal": None if self.normal is None else [CFloat(v) for v in self.normal],
            "peer": self.peer,
            "position": [CFloat(v) for v in self.position],
            "role": self.role,
        }

    @staticmethod
    def from_tree(d: dict) -> "Cursor":
        return Cursor(
            peer=str(d["peer"]),
            role=str(d["role"]),
            position=np.array([float(v) for v in d["position"]]),
            normal=None if d.get("normal") is None else np.array([float(v) for v in d["normal"]]),
            live=bool(d["live"]),
            id=None if d.get("id") is None else str(d["id"]),
            created_at=None if d.get("created_at") is None else int(d["created_at"]),
        )


def project_cursor(
    peer: str,
    role: str,
    screen_pixel,
    source_pose: Pose,
    source_intrinsics: CameraIntrinsics,
    world_meshes: Sequence[TriangleMesh],
) -> Cursor:
    """Place a live cursor at the nearest surface under a screen input.

    The ray goes from the source camera through the pixel; on a miss the
    cursor floats CURSOR_MISS_DISTANCE along the ray with no normal.
    """
    ray = pixel_ray(screen_pixel, source_intrinsics, source_pose)
    hit = raycast(world_meshes, ray)
    if hit is None:
        return Cursor(peer, role, ray.origin + CURSOR_MISS_DISTANCE * ray.direction, None, live=True)
    return Cursor(peer, role, hit.point, hit.normal, live=True)


def place_marker(cursor: Cursor, marker_id: str, created_at: int = 0) -> Cursor:
    """Freeze a live cursor into an immutable persistent marker."""
    if not cursor.live:
        raise ValueError("cursor is already a marker")
    return Cursor(
        peer=cursor.peer,
        role=cursor.role,
        position=cursor.position.copy(),
        normal=None if cursor.normal is None else cursor.normal.copy(),
        live=False,
        id=marker_id,
        created_at=created_at,
    )


def require_localized(state: LocalizationState) -> None:
    if state.phase != LOCALIZED:
        raise NotLocalized(f"phase is {state.phase}")
