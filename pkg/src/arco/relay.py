"""Room-based authoritative relay.

Each room assigns a total order (server_seq) to reliable messages, folds
them into its materialized state, appends them to the session log, and
broadcasts to every other peer. Lossy messages are forwarded latest-wins
without sequencing or persistence. Late joiners get a full snapshot and
then consume the live stream.

The core is transport-agnostic and synchronous: callers (the WebSocket
server or the simulator harness) drain per-peer outbound queues and move
the bytes. Rooms are independent; all processing within one room is
strictly serial.
"""

from __future__ import annotations

import random
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from . import persistence
from .protocol import (
    LOSSY,
    RELIABLE,
    Control,
    SnapshotMsg,
    WireEnvelope,
    _envelope_key,
)
from .room_state import MaterializedState
from .scene import SceneState

DEFAULT_QUEUE_CAP = 1000


class DuplicatePeer(ValueError):
    pass


class UnknownPeer(KeyError):
    pass


class QueueOverflow(RuntimeError):
    pass


class OutboundQueue:
    """Per-peer send queue with the relay's backpressure policy.

    Lossy entries are latest-wins per key and are dropped first
    (oldest-first) under pressure; reliable overflow raises, which
    disconnects the peer.
    """

    def __init__(self, cap: int = DEFAULT_QUEUE_CAP):
        self.cap = cap
        self.items: deque = deque()

    def __len__(self) -> int:
        return len(self.items)

    def push(self, env: WireEnvelope) -> None:
        if env.channel == LOSSY:
            key = _envelope_key(env)
            for i, queued in enumerate(self.items):
                if queued.channel == LOSSY and _envelope_key(queued) == key:
                    self.items[i] = env  # replace in place, keep position
                    return
        self.items.append(env)
        if len(self.items) > self.cap:
            for i, queued in enumerate(self.items):
                if queued.channel == LOSSY:
                    del self.items[i]
                    return
            raise QueueOverflow(f"reliable backlog exceeds {self.cap}")

    def pop_all(self) -> List[WireEnvelope]:
        out = list(self.items)
        self.items.clear()
        return out


@dataclass
class PeerInfo:
    peer: str
    role: str
    joined_at: int  # ms
    outbound: OutboundQueue = field(default_factory=OutboundQueue)


class Room:
    def __init__(
        self,
        room_id: str,
        base_scene: SceneState,
        session_id: str,
        persist_dir: Optional[Path] = None,
        queue_cap: int = DEFAULT_QUEUE_CAP,
    ):
        self.room_id = room_id
        self.session_id = session_id
        self.state = MaterializedState(scene=base_scene.copy())
        self.next_seq = 1
        self.peers: Dict[str, PeerInfo] = {}
        self.queue_cap = queue_cap
        self.session_dir: Optional[Path] = None
        self.log: Optional[persistence.SessionLogWriter] = None
        if persist_dir is not None:
            self.session_dir = Path(persist_dir) / room_id / session_id
            self.log = persistence.SessionLogWriter(self.session_dir / "session.log")

    def hash(self) -> str:
        return self.state.hash()


class RelayCore:
    """All rooms of one relay process.

    ``clock_ms`` and ``rng`` are injectable so the simulator can drive the
    relay on a virtual clock with reproducible session ids.
    """

    def __init__(
        self,
        base_scene: Optional[SceneState] = None,
        persist_dir=None,
        queue_cap: int = DEFAULT_QUEUE_CAP,
        clock_ms: Callable[[], int] = lambda: int(time.time() * 1000),
        rng: Optional[random.Random] = None,
    ):
        self.base_scene = base_scene if base_scene is not None else SceneState()
        self.persist_dir = None if persist_dir is None else Path(persist_dir)
        self.queue_cap = queue_cap
        self.clock_ms = clock_ms
        self.rng = rng
        self.rooms: Dict[str, Room] = {}

    def room(self, room_id: str) -> Room:
        r = self.rooms.get(room_id)
        if r is None:
            raise KeyError(f"no such room {room_id!r}")
        return r

    def join(self, room_id: str, peer: str, role: str) -> WireEnvelope:
        """Register a peer. The snapshot is pushed onto the new peer's
        outbound queue (so transports deliver it before any live traffic)
        and also returned for inspection.

        The room is created on first join. A Join control message is
        sequenced and broadcast so other peers (and the log) see it.
        """
        now = self.clock_ms()
        room = self.rooms.get(room_id)
        if room is None:
            session_id = persistence.make_session_id(now, self.rng)
            room = Room(room_id, self.base_scene, session_id, self.persist_dir, self.queue_cap)
            self.rooms[room_id] = room
        if peer in room.peers:
            raise DuplicatePeer(f"peer {peer!r} already in room {room_id!r}")
        info = PeerInfo(peer, role, now, OutboundQueue(room.queue_cap))
        room.peers[peer] = info

        snapshot = WireEnvelope(
            room=room_id,
            sender="server",
            client_seq=0,
            body=self.snapshot(room_id),
            sent_at=now,
        )
        info.outbound.push(snapshot)
        join_msg = WireEnvelope(
            room=room_id,
            sender=peer,
            client_seq=0,
            body=Control("join", peer, role),
            sent_at=now,
        )
        self._sequence_and_broadcast(room, join_msg)
        return snapshot

    def snapshot(self, room_id: str) -> SnapshotMsg:
        """Full materialized state as of the latest sequenced message."""
        room = self.room(room_id)
        return SnapshotMsg(
            as_of=room.next_seq - 1,
            session_id=room.session_id,
            state_tree=room.state.to_tree(),
            state_hash=room.state.hash(),
            peers={
                p.peer: {"joined_at": int(p.joined_at), "role": p.role}
                for p in room.peers.values()
            },
        )

    def route(self, env: WireEnvelope) -> None:
        """Process one inbound envelope from a joined peer."""
        room = self.room(env.room)
        if env.sender not in room.peers:
            raise UnknownPeer(f"peer {env.sender!r} not in room {env.room!r}")
        if env.channel == RELIABLE:
            self._sequence_and_broadcast(room, env)
        else:
            self._broadcast(room, env, exclude=env.sender)
        self._maybe_unload(env.room)

    def leave(self, room_id: str, peer: str) -> None:
        room = self.room(room_id)
        if peer not in room.peers:
            raise UnknownPeer(f"peer {peer!r} not in room {room_id!r}")
        self._do_leave(room, peer)
        self._maybe_unload(room_id)

    def _do_leave(self, room: Room, peer: str) -> None:
        # remove first so nothing (including the cascade below) pushes to
        # this peer's queue again; recursion depth is bounded by peer count
        del room.peers[peer]
        leave_msg = WireEnvelope(
            room=room.room_id,
            sender=peer,
            client_seq=0,
            body=Control("leave", peer),
            sent_at=self.clock_ms(),
        )
        self._sequence_and_broadcast(room, leave_msg)

    def _maybe_unload(self, room_id: str) -> None:
        room = self.rooms.get(room_id)
        if room is not None and not room.peers:
            self.unload(room_id)

    def unload(self, room_id: str) -> None:
        """Persist the room's materialized state and drop it from memory."""
        room = self.rooms.pop(room_id)
        if room.session_dir is not None:
            persistence.save_scene(room.state, room.session_dir)
            persistence.save_summary(
                room.session_dir, room.room_id, room.session_id, room.next_seq - 1, room.hash()
            )
        if room.log is not None:
            room.log.close()

    def room_hash(self, room_id: str) -> str:
        return self.room(room_id).hash()

    def drain(self, room_id: str, peer: str) -> List[WireEnvelope]:
        """Take everything queued for one peer (transport layer calls this)."""
        room = self.room(room_id)
        return room.peers[peer].outbound.pop_all()

    def drain_all(self, room_id: str) -> List[Tuple[str, WireEnvelope]]:
        out = []
        room = self.rooms.get(room_id)
        if room is None:
            return out
        for peer in list(room.peers):
            for env in room.peers[peer].outbound.pop_all():
                out.append((peer, env))
        return out

    # -- internals --

    def _sequence_and_broadcast(self, room: Room, env: WireEnvelope) -> None:
        env.server_seq = room.next_seq
        room.next_seq += 1
        room.state.fold(env)
        if room.log is not None:
            room.log.append(env)
        # reliable messages are echoed to the sender as well: clients fold
        # only the server-sequenced stream, so last-writer-wins is decided
        # by server_seq everywhere and all peers converge
        self._broadcast(room, env, exclude=None)

    def _broadcast(self, room: Room, env: WireEnvelope, exclude: Optional[str]) -> None:
        dead: List[str] = []
        for peer, info in room.peers.items():
            if peer == exclude:
                continue
            try:
                info.outbound.push(env)
            except QueueOverflow:
                dead.append(peer)  # reliable overflow: disconnect that peer
        for peer in dead:
            if peer in room.peers:
                self._do_leave(room, peer)
