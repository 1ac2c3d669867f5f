"""Protocol client: the device/editor-side session logic shared by the
scripted simulator, the tests, and (re-implemented over the same wire
contract) the browser editor.

A client folds only the server-sequenced stream - its own reliable
messages take effect locally when the relay echoes them back. That makes
last-writer-wins a pure function of server_seq and guarantees all peers
converge to the relay's materialized state.

The localization gate lives here: no capture, annotation, or cursor
message leaves the client unless the device is localized. Violations are
counted, not sent.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import annotation as ann
from . import capture as cap
from . import localization as loc
from .annotation import Annotation, Cursor, LabelPalette
from .capture import ColorFrame, DepthFrame, MeshCaptureTimer
from .geometry import Pose, TriangleMesh
from .protocol import (
    RELIABLE,
    AnnotationAdd,
    CaptureCloud,
    CaptureStopped,
    Control,
    CursorLive,
    CursorMarker,
    FlushQueue,
    LocalizationEvent,
    MeshBlockUpdate,
    PresencePose,
    SceneDeltas,
    ScreenshotAnchor,
    SnapshotMsg,
    ViewFrame,
    WireEnvelope,
    decode,
    encode,
)
from .room_state import MaterializedState
from .scene import Delta, new_object_id

GATED_KINDS = ("capture", "annotation", "cursor", "marker", "presence")


@dataclass
class GateViolation:
    kind: str
    detail: str


class SessionClient:
    def __init__(
        self,
        room: str,
        peer: str,
        role: str,
        *,
        clock_ms: Callable[[], int],
        rng: Optional[random.Random] = None,
        location_mesh: Optional[TriangleMesh] = None,
        flush_window_s: float = 0.050,
        snapshot_stride: int = cap.DEFAULT_SNAPSHOT_STRIDE,
    ):
        self.room = room
        self.peer = peer
        self.role = role
        self.clock_ms = clock_ms
        self.rng = rng if rng is not None else random.Random()
        self.location_mesh = location_mesh

        self.state: Optional[MaterializedState] = None
        self.session_id: str = ""
        self.last_applied_seq = 0
        self.connected = False

        self.loc = loc.LocalizationState()
        self.palette = LabelPalette()
        self.mesh_timer = MeshCaptureTimer()
        self.mesh_capture_id: Optional[str] = None
        self.stroke: Optional[Annotation] = None
        self.frame: Optional[Tuple[DepthFrame, ColorFrame]] = None
        self.device_pose = Pose.identity()
        self.mesh_opacity = 0.5
        self.live_cursor: Optional[Cursor] = None
        self.snapshot_stride = snapshot_stride

        # lossy latest-wins views of the other peers
        self.presence: Dict[str, Tuple[Pose, float]] = {}
        self.remote_cursors: Dict[str, Cursor] = {}
        self.view_frames: Dict[str, ViewFrame] = {}

        self.queue = FlushQueue(window_s=flush_window_s)
        self.outbox: List[WireEnvelope] = []
        self.client_seq = 0
        self.gate_violations: List[GateViolation] = []
        self.sent_counts: Dict[str, int] = {}
        self.bytes_sent = 0

    # -- receiving ---------------------------------------------------------

    def ingest_text(self, text: str) -> None:
        self.ingest(decode(text))

    def ingest(self, env: WireEnvelope) -> None:
        body = env.body
        if isinstance(body, SnapshotMsg):
            self.state = MaterializedState.from_tree(body.state_tree)
            self.session_id = body.session_id
            self.last_applied_seq = body.as_of
            return
        if env.channel == RELIABLE:
            if self.state is None or env.server_seq is None:
                return
            if env.server_seq <= self.last_applied_seq:
                return  # already covered by the snapshot
            self.state.fold(env)
            self.last_applied_seq = env.server_seq
            return
        # lossy presence data, latest wins
        if isinstance(body, PresencePose):
            self.presence[body.peer] = (body.pose, body.mesh_opacity)
        elif isinstance(body, CursorLive):
            self.remote_cursors[body.cursor.peer] = body.cursor
        elif isinstance(body, ViewFrame):
            self.view_frames[body.peer] = body

    def state_hash(self) -> str:
        if self.state is None:
            raise RuntimeError("no snapshot received yet")
        return self.state.hash()

    # -- sending -----------------------------------------------------------

    def _send(self, body) -> None:
        self.client_seq += 1
        env = WireEnvelope(
            room=self.room,
            sender=self.peer,
            client_seq=self.client_seq,
            body=body,
            sent_at=self.clock_ms(),
        )
        self.sent_counts[body.type] = self.sent_counts.get(body.type, 0) + 1
        ready = self.queue.push(env, self.clock_ms() / 1000.0)
        self.outbox.extend(ready)

    def poll(self, now_s: float) -> None:
        """Flush the send window if it has elapsed (runner calls this)."""
        self.outbox.extend(self.queue.poll(now_s))
        timer, stopped = cap.tick_mesh_capture(self.mesh_timer, now_s)
        if stopped:
            self.mesh_timer = timer
            self._send(CaptureStopped(self.mesh_capture_id))

    def take_outbox(self) -> List[WireEnvelope]:
        out = self.outbox
        self.outbox = []
        self.bytes_sent += sum(len(encode(e)) for e in out)
        return out

    def next_deadline_s(self) -> Optional[float]:
        """Earliest time poll() has work: flush window or mesh auto-stop."""
        deadlines = []
        q = self.queue.next_deadline()
        if q is not None:
            deadlines.append(q)
        if self.mesh_timer.phase == cap.CAPTURING:
            deadlines.append(self.mesh_timer.started_at + self.mesh_timer.budget)
        return min(deadlines) if deadlines else None

    def _gate(self, kind: str, detail: str) -> bool:
        """True when spatial data may flow; otherwise record the refusal.

        Requires the device to be localized, and the join snapshot to have
        arrived (captures stamp the session id it carries)."""
        if self.loc.phase != loc.LOCALIZED:
            self.gate_violations.append(GateViolation(kind, detail))
            return False
        if self.state is None:
            self.gate_violations.append(GateViolation("not_synced", detail))
            return False
        return True

    # -- localization -------------------------------------------------------

    def start_localizing(self) -> None:
        self.loc = loc.start_localizing(self.loc)
        self._send(LocalizationEvent(self.peer, self.loc.phase))

    def offer_candidate(self, candidate: Pose) -> None:
        prev_phase = self.loc.phase
        if prev_phase == loc.UNLOCALIZED:
            self.loc = loc.start_localizing(self.loc)
            self._send(LocalizationEvent(self.peer, self.loc.phase))
        self.loc = loc.offer_candidate(self.loc, candidate)
        if self.loc.phase != prev_phase:
            self._send(LocalizationEvent(self.peer, self.loc.phase))

    def confirm(self) -> None:
        self.loc = loc.confirm(self.loc, self.clock_ms())
        self._send(
            LocalizationEvent(self.peer, self.loc.phase, self.loc.alignment, self.loc.confirmed_at)
        )

    def restart_localization(self) -> None:
        self.loc = loc.restart(self.loc)
        self._send(LocalizationEvent(self.peer, self.loc.phase))

    @property
    def alignment(self) -> Optional[Pose]:
        return self.loc.alignment

    # -- presence and frames -------------------------------------------------

    def move(self, pose: Pose) -> None:
        """Update the device pose; broadcasts anchored presence when localized.

        Ex-situ peers move their editor camera directly in the anchor
        frame (no gate)."""
        self.device_pose = pose
        if self.role == ann.EX_SITU:
            self._send(PresencePose(self.peer, pose, self.mesh_opacity))
            return
        if self.loc.phase == loc.LOCALIZED:
            anchored = loc.anchor_pose(self.loc, pose)
            self._send(PresencePose(self.peer, anchored, self.mesh_opacity))

    def set_mesh_opacity(self, opacity: float) -> None:
        self.mesh_opacity = float(opacity)

    def set_frame(self, depth: DepthFrame, color: ColorFrame, frame_b64: str = "") -> None:
        """Install the current RGB-D frame; in-situ peers stream it as the
        live view (lossy) with the anchored source camera."""
        self.frame = (depth, color)
        self.device_pose = depth.camera_pose
        if self.role == ann.IN_SITU and self.loc.phase == loc.LOCALIZED:
            anchored_cam = loc.anchor_pose(self.loc, depth.camera_pose)
            self._send(ViewFrame(self.peer, frame_b64, anchored_cam, depth.intrinsics))

    # -- spatial capture ------------------------------------------------------

    def take_snapshot(self, stride: Optional[int] = None) -> Optional[str]:
        """3D snapshot of the current frame; returns the capture id."""
        if not self._gate("capture", "snapshot"):
            return None
        if self.frame is None:
            raise RuntimeError("no RGB-D frame installed")
        depth, color = self.frame
        cid = new_object_id(self.rng)
        cloud = cap.snapshot(
            depth,
            color,
            self.loc.alignment,
            stride if stride is not None else self.snapshot_stride,
            capture_id=cid,
            session_id=self.session_id,
            author=self.peer,
            created_at=self.clock_ms(),
        )
        self._send(CaptureCloud(cloud))
        return cid

    def start_mesh_capture(self) -> Optional[str]:
        if not self._gate("capture", "start_mesh_capture"):
            return None
        self.mesh_timer = cap.start_mesh_capture(self.mesh_timer, self.clock_ms() / 1000.0)
        if self.mesh_capture_id is None:
            self.mesh_capture_id = new_object_id(self.rng)
        return self.mesh_capture_id

    def ingest_mesh_block(self, key: cap.BlockKey, mesh: TriangleMesh) -> None:
        """Forward one anchored coarse-mesh block (requires active capture)."""
        if not self._gate("capture", "mesh_block"):
            return
        if self.mesh_timer.phase != cap.CAPTURING:
            raise cap.NotCapturing("mesh capture is not running")
        self._send(
            MeshBlockUpdate(
                capture_id=self.mesh_capture_id,
                key=tuple(int(k) for k in key),
                mesh=mesh,
                block_size=cap.DEFAULT_BLOCK_SIZE,
                session_id=self.session_id,
            )
        )

    # -- annotations ----------------------------------------------------------

    def begin_stroke(self, kind: str, label: Optional[str] = None) -> None:
        if self.stroke is not None:
            self.end_stroke()
        color = (255, 255, 255)
        if label:
            self.palette, color = ann.assign_label(self.palette, label)
        self.stroke = Annotation(
            id=new_object_id(self.rng),
            session_id=self.session_id,
            author=self.peer,
            kind=kind,
            points=np.zeros((0, 3)),
            color=color,
            label=label,
            created_at=self.clock_ms(),
        )

    def set_label(self, label: str) -> None:
        if self.stroke is None:
            raise RuntimeError("no open stroke")
        self.palette, color = ann.assign_label(self.palette, label)
        self.stroke = Annotation(
            id=self.stroke.id,
            session_id=self.stroke.session_id,
            author=self.stroke.author,
            kind=self.stroke.kind,
            points=self.stroke.points,
            color=color,
            label=label,
            created_at=self.stroke.created_at,
        )

    def surface_point(self, pixel) -> None:
        if not self._gate("annotation", "surface_point"):
            return
        if self.stroke is None or self.stroke.kind != ann.SURFACE:
            self.begin_stroke(ann.SURFACE)
        if self.frame is None:
            raise RuntimeError("no RGB-D frame installed")
        self.stroke = ann.surface_stroke_append(self.stroke, pixel, self.frame[0], self.loc.alignment)

    def air_point(self, pose: Optional[Pose] = None) -> None:
        if not self._gate("annotation", "air_point"):
            return
        if self.stroke is None or self.stroke.kind != ann.AIR:
            self.begin_stroke(ann.AIR)
        device = pose if pose is not None else self.device_pose
        self.stroke = ann.air_stroke_append(self.stroke, device, self.loc.alignment)

    def end_stroke(self) -> Optional[str]:
        """Finalize and broadcast the open stroke (dropped if empty)."""
        stroke, self.stroke = self.stroke, None
        if stroke is None or len(stroke.points) == 0:
            return None
        if not self._gate("annotation", "end_stroke"):
            return None
        self._send(AnnotationAdd(stroke))
        return stroke.id

    # -- cursors ----------------------------------------------------------------

    def _cursor_meshes(self) -> List[TriangleMesh]:
        meshes: List[TriangleMesh] = []
        if self.location_mesh is not None:
            meshes.append(self.location_mesh)
        if self.state is not None:
            for cid in sorted(self.state.meshes):
                for key in sorted(self.state.meshes[cid].blocks):
                    meshes.append(self.state.meshes[cid].blocks[key])
        return meshes

    def cursor_at(self, pixel) -> Optional[Cursor]:
        """Project this peer's live cursor from a screen pixel.

        In-situ: ray through the device camera (gated on localization).
        Ex-situ: ray through the live in-situ view panel's source camera;
        a no-op until a view frame has arrived.
        """
        if self.role == ann.IN_SITU:
            if not self._gate("cursor", "cursor_at"):
                return None
            if self.frame is None:
                raise RuntimeError("no RGB-D frame installed")
            source_pose = loc.anchor_pose(self.loc, self.frame[0].camera_pose)
            intrinsics = self.frame[0].intrinsics
        else:
            vf = self._latest_view_frame()
            if vf is None:
                return None
            source_pose, intrinsics = vf.camera_pose, vf.intrinsics
        cursor = ann.project_cursor(
            self.peer, self.role, pixel, source_pose, intrinsics, self._cursor_meshes()
        )
        self.live_cursor = cursor
        self._send(CursorLive(cursor))
        return cursor

    def _latest_view_frame(self) -> Optional[ViewFrame]:
        for peer in sorted(self.view_frames):
            return self.view_frames[peer]
        return None

    def place_marker(self) -> Optional[str]:
        if self.live_cursor is None:
            return None
        if self.role == ann.IN_SITU and not self._gate("marker", "place_marker"):
            return None
        marker = ann.place_marker(self.live_cursor, new_object_id(self.rng), self.clock_ms())
        self._send(CursorMarker(marker))
        return marker.id

    # -- scene edits and screenshots ----------------------------------------------

    def send_deltas(self, deltas: List[Delta]) -> None:
        self._send(SceneDeltas(deltas))

    def take_screenshot(self) -> Optional[str]:
        """Anchor the latest live-view frame (ex-situ feature)."""
        vf = self._latest_view_frame()
        if vf is None:
            return None
        image_id = new_object_id(self.rng)
        self._send(
            ScreenshotAnchor(
                image_id=image_id,
                author=self.peer,
                image_b64=vf.frame_b64,
                camera_pose=vf.camera_pose,
                session_id=self.session_id,
                created_at=self.clock_ms(),
            )
        )
        return image_id

    def request_snapshot(self) -> None:
        self._send(Control("snapshot_request", self.peer))

    def reset_connection(self) -> None:
        """Forget in-flight state on disconnect; a fresh snapshot follows."""
        self.connected = False
        self.state = None
        self.queue = FlushQueue(window_s=self.queue.window_s)
        self.outbox = []
        self.presence.clear()
        self.remote_cursors.clear()
        self.view_frames.clear()
