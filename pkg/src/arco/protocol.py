"""Wire message model: envelopes, channels, canonical codec, coalescing,
and the flush policy that bounds bandwidth for high-rate streams.

One envelope per WebSocket text frame, canonical JSON (see canonical.py).
Field names and enum spellings below are normative and versioned by
``proto_version`` (currently 1).

Channels:
  * reliable - sequenced by the relay, persisted, never dropped.
  * lossy    - latest-wins presence data; may be dropped anywhere.

Coalescing collapses redundant same-key messages inside a sender's flush
window: scene deltas per (object, field), mesh blocks per (capture,
block), cursor/presence/view frames per peer. Annotations, markers,
capture clouds, and control traffic are never dropped. Survivors keep the
relative order of their final occurrences, so applying a coalesced stream
reaches the same state as the raw stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Type

from . import canonical
from .annotation import Annotation, Cursor
from .canonical import CFloat
from .capture import BlockKey, PointCloud
from .geometry import CameraIntrinsics, Pose, TriangleMesh
from .scene import Delta

PROTO_VERSION = 1

RELIABLE = "reliable"
LOSSY = "lossy"

FLUSH_WINDOW_S = 0.050
FLUSH_MAX_BYTES = 64 * 1024


class MalformedMessage(ValueError):
    def __init__(self, reason: str, context: str = ""):
        super().__init__(f"{reason}" + (f" (at {context})" if context else ""))
        self.context = context


# --- message bodies -------------------------------------------------------


@dataclass(eq=False)
class SceneDeltas:
    type = "scene_deltas"
    deltas: List[Delta]

    def to_tree(self) -> dict:
        return {"deltas": [d.to_tree() for d in self.deltas], "type": self.type}

    @staticmethod
    def from_tree(d: dict) -> "SceneDeltas":
        return SceneDeltas([Delta.from_tree(x) for x in d["deltas"]])


@dataclass(eq=False)
class CaptureCloud:
    type = "capture_cloud"
    cloud: PointCloud

    def to_tree(self) -> dict:
        return {"cloud": self.cloud.to_tree(), "type": self.type}

    @staticmethod
    def from_tree(d: dict) -> "CaptureCloud":
        return CaptureCloud(PointCloud.from_tree(d["cloud"]))


@dataclass(eq=False)
class MeshBlockUpdate:
    type = "mesh_block"
    capture_id: str
    key: BlockKey
    mesh: TriangleMesh
    block_size: float = 1.0
    session_id: str = ""

    def to_tree(self) -> dict:
        return {
            "block_size": CFloat(self.block_size),
            "capture_id": self.capture_id,
            "key": [int(k) for k in self.key],
            "mesh": self.mesh.to_tree(),
            "session_id": self.session_id,
            "type": self.type,
        }

    @staticmethod
    def from_tree(d: dict) -> "MeshBlockUpdate":
        return MeshBlockUpdate(
            capture_id=str(d["capture_id"]),
            key=tuple(int(k) for k in d["key"]),
            mesh=TriangleMesh.from_tree(d["mesh"]),
            block_size=float(d["block_size"]),
            session_id=str(d["session_id"]),
        )


@dataclass(eq=False)
class CaptureStopped:
    type = "capture_stopped"
    capture_id: str

    def to_tree(self) -> dict:
        return {"capture_id": self.capture_id, "type": self.type}

    @staticmethod
    def from_tree(d: dict) -> "CaptureStopped":
        return CaptureStopped(str(d["capture_id"]))


@dataclass(eq=False)
class AnnotationAdd:
    type = "annotation_add"
    annotation: Annotation

    def to_tree(self) -> dict:
        return {"annotation": self.annotation.to_tree(), "type": self.type}

    @staticmethod
    def from_tree(d: dict) -> "AnnotationAdd":
        return AnnotationAdd(Annotation.from_tree(d["annotation"]))


@dataclass(eq=False)
class CursorLive:
    type = "cursor_live"
    cursor: Cursor

    def to_tree(self) -> dict:
        return {"cursor": self.cursor.to_tree(), "type": self.type}

    @staticmethod
    def from_tree(d: dict) -> "CursorLive":
        return CursorLive(Cursor.from_tree(d["cursor"]))


@dataclass(eq=False)
class CursorMarker:
    type = "cursor_marker"
    cursor: Cursor

    def to_tree(self) -> dict:
        return {"cursor": self.cursor.to_tree(), "type": self.type}

    @staticmethod
    def from_tree(d: dict) -> "CursorMarker":
        return CursorMarker(Cursor.from_tree(d["cursor"]))


@dataclass(eq=False)
class PresencePose:
    type = "presence_pose"
    peer: str
    pose: Pose  # anchor frame
    mesh_opacity: float = 0.5

    def to_tree(self) -> dict:
        return {
            "mesh_opacity": CFloat(self.mesh_opacity),
            "peer": self.peer,
            "pose": self.pose.to_tree(),
            "type": self.type,
        }

    @staticmethod
    def from_tree(d: dict) -> "PresencePose":
        return PresencePose(str(d["peer"]), Pose.from_tree(d["pose"]), float(d["mesh_opacity"]))


@dataclass(eq=False)
class ViewFrame:
    """Opaque frame payload of the in-situ screen, with its source camera."""

    type = "view_frame"
    peer: str
    frame_b64: str
    camera_pose: Pose
    intrinsics: CameraIntrinsics

    def to_tree(self) -> dict:
        return {
            "camera_pose": self.camera_pose.to_tree(),
            "frame_b64": self.frame_b64,
            "intrinsics": self.intrinsics.to_tree(),
            "peer": self.peer,
            "type": self.type,
        }

    @staticmethod
    def from_tree(d: dict) -> "ViewFrame":
        return ViewFrame(
            str(d["peer"]),
            str(d["frame_b64"]),
            Pose.from_tree(d["camera_pose"]),
            CameraIntrinsics.from_tree(d["intrinsics"]),
        )


@dataclass(eq=False)
class ScreenshotAnchor:
    type = "screenshot_anchor"
    image_id: str
    author: str
    image_b64: str
    camera_pose: Pose  # in-situ camera pose at capture, anchor frame
    session_id: str = ""
    created_at: int = 0

    def to_tree(self) -> dict:
        return {
            "author": self.author,
            "camera_pose": self.camera_pose.to_tree(),
            "created_at": int(self.created_at),
            "image_b64": self.image_b64,
            "image_id": self.image_id,
            "session_id": self.session_id,
            "type": self.type,
        }

    @staticmethod
    def from_tree(d: dict) -> "ScreenshotAnchor":
        return ScreenshotAnchor(
            image_id=str(d["image_id"]),
            author=str(d["author"]),
            image_b64=str(d["image_b64"]),
            camera_pose=Pose.from_tree(d["camera_pose"]),
            session_id=str(d["session_id"]),
            created_at=int(d["created_at"]),
        )


@dataclass(eq=False)
class LocalizationEvent:
    type = "localization_event"
    peer: str
    phase: str
    alignment: Optional[Pose] = None  # set when phase == localized
    confirmed_at: Optional[int] = None

    def to_tree(self) -> dict:
        return {
            "alignment": None if self.alignment is None else self.alignment.to_tree(),
            "confirmed_at": None if self.confirmed_at is None else int(self.confirmed_at),
            "peer": self.peer,
            "phase": self.phase,
            "type": self.type,
        }

    @staticmethod
    def from_tree(d: dict) -> "LocalizationEvent":
        return LocalizationEvent(
            peer=str(d["peer"]),
            phase=str(d["phase"]),
            alignment=None if d.get("alignment") is None else Pose.from_tree(d["alignment"]),
            confirmed_at=None if d.get("confirmed_at") is None else int(d["confirmed_at"]),
        )


@dataclass(eq=False)
class Control:
    type = "control"
    action: str  # join | leave | snapshot_request
    peer: str
    role: Optional[str] = None

    def to_tree(self) -> dict:
        return {"action": self.action, "peer": self.peer, "role": self.role, "type": self.type}

    @staticmethod
    def from_tree(d: dict) -> "Control":
        return Control(str(d["action"]), str(d["peer"]), None if d.get("role") is None else str(d["role"]))


@dataclass(eq=False)
class SnapshotMsg:
    """Server -> joining client: full materialized state as of a sequence.

    The state tree is kept in canonical-tree form (floats wrapped); decode
    rewraps parsed numbers so re-encoding reproduces the exact bytes.
    """

    type = "snapshot"
    as_of: int
    session_id: str
    state_tree: dict
    state_hash: str
    peers: Dict[str, dict] = field(default_factory=dict)

    def to_tree(self) -> dict:
        return {
            "as_of": int(self.as_of),
            "peers": self.peers,
            "session_id": self.session_id,
            "state": self.state_tree,
            "state_hash": self.state_hash,
            "type": self.type,
        }

    @staticmethod
    def from_tree(d: dict) -> "SnapshotMsg":
        return SnapshotMsg(
            as_of=int(d["as_of"]),
            session_id=str(d["session_id"]),
            state_tree=d["state"],
            state_hash=str(d["state_hash"]),
            peers=d.get("peers", {}),
        )


MESSAGE_TYPES: Dict[str, Type] = {
    cls.type: cls
    for cls in (
        SceneDeltas,
        CaptureCloud,
        MeshBlockUpdate,
        CaptureStopped,
        AnnotationAdd,
        CursorLive,
        CursorMarker,
        PresencePose,
        ViewFrame,
        ScreenshotAnchor,
        LocalizationEvent,
        Control,
        SnapshotMsg,
    )
}

LOSSY_TYPES = {"cursor_live", "presence_pose", "view_frame"}


def channel_for(body) -> str:
    return LOSSY if body.type in LOSSY_TYPES else RELIABLE


# --- envelopes ------------------------------------------------------------


@dataclass(eq=False)
class WireEnvelope:
    room: str
    sender: str
    client_seq: int
    body: object
    sent_at: int = 0  # ms
    channel: Optional[str] = None  # derived from body kind when omitted
    server_seq: Optional[int] = None  # assigned by the relay

    def __post_init__(self):
        expected = channel_for(self.body)
        if self.channel is None:
            self.channel = expected
        elif self.channel != expected:
            raise MalformedMessage(
                f"message kind {self.body.type} is fixed to channel {expected}", "channel"
            )

    def to_tree(self) -> dict:
        return {
            "body": self.body.to_tree(),
            "channel": self.channel,
            "client_seq": int(self.client_seq),
            "proto_version": PROTO_VERSION,
            "room": self.room,
            "sender": self.sender,
            "sent_at": int(self.sent_at),
            "server_seq": None if self.server_seq is None else int(self.server_seq),
        }

    @staticmethod
    def from_tree(d: dict) -> "WireEnvelope":
        if int(d.get("proto_version", -1)) != PROTO_VERSION:
            raise MalformedMessage(f"unsupported proto_version {d.get('proto_version')!r}")
        body_tree = d["body"]
        mtype = body_tree.get("type")
        cls = MESSAGE_TYPES.get(mtype)
        if cls is None:
            raise MalformedMessage(f"unknown message type {mtype!r}", "body.type")
        body = cls.from_tree(body_tree)
        return WireEnvelope(
            room=str(d["room"]),
            sender=str(d["sender"]),
            client_seq=int(d["client_seq"]),
            body=body,
            sent_at=int(d["sent_at"]),
            channel=str(d["channel"]),
            server_seq=None if d.get("server_seq") is None else int(d["server_seq"]),
        )


def encode(envelope: WireEnvelope) -> str:
    """Canonical text form; one envelope per transport frame."""
    return canonical.dumps(envelope.to_tree())


def decode(text: str) -> WireEnvelope:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedMessage(f"invalid JSON: {e.msg}", f"offset {e.pos}") from None
    if not isinstance(data, dict):
        raise MalformedMessage("envelope must be a JSON object")
    if isinstance(data.get("body"), dict) and data["body"].get("type") == "snapshot":
        # keep the state tree re-encodable byte-for-byte
        data["body"]["state"] = canonical.wrap_floats(data["body"]["state"])
    try:
        return WireEnvelope.from_tree(data)
    except MalformedMessage:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedMessage(f"bad envelope: {e}") from None


# --- coalescing -----------------------------------------------------------


def _envelope_key(env: WireEnvelope) -> Optional[tuple]:
    b = env.body
    if isinstance(b, MeshBlockUpdate):
        return ("mesh_block", b.capture_id, tuple(b.key))
    if isinstance(b, CursorLive):
        return ("cursor_live", b.cursor.peer)
    if isinstance(b, PresencePose):
        return ("presence_pose", b.peer)
    if isinstance(b, ViewFrame):
        return ("view_frame", b.peer)
    return None


def coalesce(pending: List[WireEnvelope]) -> List[WireEnvelope]:
    """Collapse redundant same-key messages; order of survivors follows
    the final occurrence of each key. Scene deltas across the window are
    re-bundled into a single SceneDeltas envelope."""
    # pass 1: last position per envelope-level key, and per delta key
    last_env_pos: Dict[tuple, int] = {}
    last_delta_pos: Dict[tuple, tuple] = {}  # key -> (env_pos, delta_idx)
    last_scene_pos = -1
    for i, env in enumerate(pending):
        k = _envelope_key(env)
        if k is not None:
            last_env_pos[k] = i
        if isinstance(env.body, SceneDeltas):
            last_scene_pos = i
            for j, d in enumerate(env.body.deltas):
                dk = d.coalesce_key()
                if dk is not None:
                    last_delta_pos[dk] = (i, j)

    # pass 2: collect survivors in original order
    surviving_deltas: List[Tuple[Tuple[int, int], Delta]] = []
    survivors: List[Tuple[int, WireEnvelope]] = []
    for i, env in enumerate(pending):
        if isinstance(env.body, SceneDeltas):
            for j, d in enumerate(env.body.deltas):
                dk = d.coalesce_key()
                if dk is None or last_delta_pos[dk] == (i, j):
                    surviving_deltas.append(((i, j), d))
            continue
        k = _envelope_key(env)
        if k is None or last_env_pos[k] == i:
            survivors.append((i, env))

    if surviving_deltas:
        template = pending[last_scene_pos]
        merged = WireEnvelope(
            room=template.room,
            sender=template.sender,
            client_seq=template.client_seq,
            body=SceneDeltas([d for _, d in sorted(surviving_deltas, key=lambda x: x[0])]),
            sent_at=template.sent_at,
            server_seq=template.server_seq,
        )
        survivors.append((last_scene_pos, merged))

    survivors.sort(key=lambda x: x[0])
    return [env for _, env in survivors]


# --- flush policy ----------------------------------------------------------


@dataclass
class FlushQueue:
    """Per-sender send queue: coalesce within a 50 ms / 64 KiB window.

    ``push`` returns messages to send immediately when the size bound
    trips; ``poll`` flushes when the time window has elapsed. Reliable
    messages are never delayed beyond one window.
    """

    window_s: float = FLUSH_WINDOW_S
    max_bytes: int = FLUSH_MAX_BYTES
    pending: List[WireEnvelope] = field(default_factory=list)
    pending_bytes: int = 0
    window_start: Optional[float] = None

    def push(self, env: WireEnvelope, now: float) -> List[WireEnvelope]:
        if not self.pending:
            self.window_start = now
        self.pending.append(env)
        self.pending_bytes += len(encode(env))
        if self.pending_bytes >= self.max_bytes:
            return self._flush()
        return []

    def poll(self, now: float) -> List[WireEnvelope]:
        # 1e-9 slack: virtual clocks hand back times computed from the
        # deadline itself, which float subtraction can undershoot
        if self.pending and now - self.window_start >= self.window_s - 1e-9:
            return self._flush()
        return []

    def next_deadline(self) -> Optional[float]:
        if not self.pending:
            return None
        return self.window_start + self.window_s

    def flush_now(self) -> List[WireEnvelope]:
        return self._flush()

    def _flush(self) -> List[WireEnvelope]:
        out = coalesce(self.pending)
        self.pending = []
        self.pending_bytes = 0
        self.window_start = None
        return out
