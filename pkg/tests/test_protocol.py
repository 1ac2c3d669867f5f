import base64
import random

import numpy as np
import pytest

from arco.annotation import Annotation, Cursor
from arco.canonical import canon_float
from arco.capture import PointCloud
from arco.geometry import CameraIntrinsics, Pose, TriangleMesh
from arco.protocol import (
    FLUSH_MAX_BYTES,
    AnnotationAdd,
    CaptureCloud,
    CaptureStopped,
    Control,
    CursorLive,
    CursorMarker,
    FlushQueue,
    LocalizationEvent,
    MalformedMessage,
    MeshBlockUpdate,
    PresencePose,
    SceneDeltas,
    ScreenshotAnchor,
    SnapshotMsg,
    ViewFrame,
    WireEnvelope,
    coalesce,
    decode,
    encode,
)
from arco.room_state import MaterializedState
from arco.scene import (
    CREATE,
    SET_PARAM,
    SET_TRANSFORM,
    Delta,
    SceneObject,
    SceneState,
    Transform,
)

from conftest import canon_quat


def cpose(rng):
    return Pose(
        np.array([canon_float(rng.uniform(-5, 5)) for _ in range(3)]),
        np.array(canon_quat(rng)),
    )


def ctransform(rng):
    return Transform(
        tuple(canon_float(rng.uniform(-5, 5)) for _ in range(3)),
        canon_quat(rng),
        tuple(canon_float(rng.uniform(0.2, 3)) for _ in range(3)),
    )


def cmesh(rng, n=3):
    verts = np.array([[canon_float(rng.uniform(-2, 2)) for _ in range(3)] for _ in range(3 * n)])
    tris = np.arange(3 * n).reshape(-1, 3)
    return TriangleMesh(verts, tris)


def ccloud(rng, n=5):
    return PointCloud(
        capture_id=format(rng.getrandbits(128), "032x"),
        session_id="sess",
        points=np.array([[canon_float(rng.uniform(-3, 3)) for _ in range(3)] for _ in range(n)]),
        colors=np.array([[rng.randint(0, 255) for _ in range(3)] for _ in range(n)]),
        source_pose=cpose(rng),
        created_at=rng.randint(0, 10**12),
        author="field",
    )


def ccursor(rng, live=True):
    return Cursor(
        peer="p1",
        role=rng.choice(["insitu", "exsitu"]),
        position=np.array([canon_float(rng.uniform(-3, 3)) for _ in range(3)]),
        normal=None if rng.random() < 0.5 else np.array([0.0, 0.0, 1.0]),
        live=live,
        id=None if live else format(rng.getrandbits(128), "032x"),
        created_at=None if live else rng.randint(0, 10**12),
    )


def cannotation(rng):
    return Annotation(
        id=format(rng.getrandbits(128), "032x"),
        session_id="sess",
        author="field",
        kind=rng.choice(["surface", "air"]),
        points=np.array([[canon_float(rng.uniform(-3, 3)) for _ in range(3)]
                         for _ in range(rng.randint(1, 6))]),
        color=(rng.randint(0, 255), rng.randint(0, 255), rng.randint(0, 255)),
        label=rng.choice([None, "hazard", "bench"]),
        created_at=rng.randint(0, 10**12),
    )


def cintr():
    return CameraIntrinsics(fx=30.0, fy=30.0, cx=16.0, cy=12.0, width=32, height=24)


def random_delta(rng):
    oid = format(rng.getrandbits(128), "032x")
    kind = rng.choice(["create", "destroy", "set_transform", "set_material", "set_param", "set_parent"])
    if kind == "create":
        return Delta(CREATE, oid, spec=SceneObject(id=oid, name="x", transform=ctransform(rng)))
    if kind == "destroy":
        return Delta("destroy", oid)
    if kind == "set_transform":
        return Delta(SET_TRANSFORM, oid, transform=ctransform(rng))
    if kind == "set_material":
        return Delta("set_material", oid, prop="tint",
                     value=tuple(canon_float(rng.random()) for _ in range(4)))
    if kind == "set_param":
        return Delta(SET_PARAM, oid, prop="speed",
                     value=rng.choice([canon_float(rng.random()), rng.randint(0, 9), True, "txt"]))
    return Delta("set_parent", oid, parent=None)


def random_body(rng):
    pick = rng.randrange(13)
    if pick == 0:
        return SceneDeltas([random_delta(rng) for _ in range(rng.randint(0, 4))])
    if pick == 1:
        return CaptureCloud(ccloud(rng))
    if pick == 2:
        return MeshBlockUpdate("cap1", (rng.randint(-3, 3), 0, 1), cmesh(rng),
                               block_size=1.0, session_id="sess")
    if pick == 3:
        return CaptureStopped("cap1")
    if pick == 4:
        return AnnotationAdd(cannotation(rng))
    if pick == 5:
        return CursorLive(ccursor(rng, live=True))
    if pick == 6:
        return CursorMarker(ccursor(rng, live=False))
    if pick == 7:
        return PresencePose("p1", cpose(rng), canon_float(rng.random()))
    if pick == 8:
        frame = base64.b64encode(bytes([rng.randint(0, 255) for _ in range(16)])).decode()
        return ViewFrame("p1", frame, cpose(rng), cintr())
    if pick == 9:
        img = base64.b64encode(b"shot").decode()
        return ScreenshotAnchor(format(rng.getrandbits(128), "032x"), "studio", img,
                                cpose(rng), "sess", rng.randint(0, 10**12))
    if pick == 10:
        phase = rng.choice(["unlocalized", "localizing", "awaiting_confirmation", "localized"])
        return LocalizationEvent("p1", phase,
                                 cpose(rng) if phase == "localized" else None,
                                 123 if phase == "localized" else None)
    if pick == 11:
        return Control(rng.choice(["join", "leave", "snapshot_request"]), "p1",
                       rng.choice([None, "insitu", "exsitu"]))
    state = MaterializedState(scene=SceneState())
    return SnapshotMsg(as_of=rng.randint(0, 100), session_id="sess",
                       state_tree=state.to_tree(), state_hash=state.hash(),
                       peers={"p1": {"joined_at": 1, "role": "insitu"}})


def random_envelope(rng):
    return WireEnvelope(
        room="r1",
        sender="p1",
        client_seq=rng.randint(1, 10**6),
        body=random_body(rng),
        sent_at=rng.randint(0, 10**12),
        server_seq=rng.choice([None, rng.randint(1, 10**6)]),
    )


def test_round_trip_all_kinds_1000():
    rng = random.Random(51)
    for _ in range(1000):
        env = random_envelope(rng)
        text = encode(env)
        back = decode(text)
        assert encode(back) == text  # decode∘encode is the identity on texts


def test_encode_decode_canonical_fixed_point():
    rng = random.Random(52)
    for _ in range(200):
        text = encode(random_envelope(rng))
        assert encode(decode(text)) == text


def test_truncated_bytes_malformed():
    rng = random.Random(53)
    text = encode(random_envelope(rng))
    with pytest.raises(MalformedMessage):
        decode(text[: len(text) // 2])


def test_garbage_malformed():
    with pytest.raises(MalformedMessage):
        decode("[1,2,3]")
    with pytest.raises(MalformedMessage):
        decode('{"proto_version":1,"body":{"type":"nope"}}')
    with pytest.raises(MalformedMessage):
        decode('{"proto_version":99}')


def test_empty_scene_deltas_round_trip():
    env = WireEnvelope(room="r", sender="p", client_seq=1, body=SceneDeltas([]))
    back = decode(encode(env))
    assert isinstance(back.body, SceneDeltas) and back.body.deltas == []


def test_channel_fixed_per_kind():
    rng = random.Random(54)
    live = WireEnvelope(room="r", sender="p", client_seq=1, body=CursorLive(ccursor(rng)))
    assert live.channel == "lossy"
    marker = WireEnvelope(room="r", sender="p", client_seq=1,
                          body=CursorMarker(ccursor(rng, live=False)))
    assert marker.channel == "reliable"
    with pytest.raises(MalformedMessage):
        WireEnvelope(room="r", sender="p", client_seq=1,
                     body=CursorLive(ccursor(rng)), channel="reliable")


# --- coalescing -------------------------------------------------------------------


def env_of(body, n, sender="p1"):
    return WireEnvelope(room="r", sender=sender, client_seq=n, body=body, sent_at=n)


def test_coalesce_mesh_burst_keeps_last():
    rng = random.Random(55)
    envs = []
    last = None
    for i in range(100):
        body = MeshBlockUpdate("cap", (0, 0, 0), cmesh(rng), 1.0, "s")
        last = body
        envs.append(env_of(body, i))
    out = coalesce(envs)
    assert len(out) == 1
    assert out[0].body is last


def test_coalesce_keeps_final_occurrence_order():
    rng = random.Random(56)
    a1 = env_of(MeshBlockUpdate("cap", (0, 0, 0), cmesh(rng), 1.0, "s"), 1)
    b1 = env_of(MeshBlockUpdate("cap", (1, 0, 0), cmesh(rng), 1.0, "s"), 2)
    a2 = env_of(MeshBlockUpdate("cap", (0, 0, 0), cmesh(rng), 1.0, "s"), 3)
    b2 = env_of(MeshBlockUpdate("cap", (1, 0, 0), cmesh(rng), 1.0, "s"), 4)
    out = coalesce([a1, b1, a2, b2])
    assert [tuple(e.body.key) for e in out] == [(0, 0, 0), (1, 0, 0)]
    assert out[0].body is a2.body and out[1].body is b2.body


def test_coalesce_never_drops_reliable_one_shots():
    rng = random.Random(57)
    envs = [
        env_of(AnnotationAdd(cannotation(rng)), 1),
        env_of(CursorMarker(ccursor(rng, live=False)), 2),
        env_of(CaptureCloud(ccloud(rng)), 3),
        env_of(CaptureStopped("cap"), 4),
        env_of(Control("join", "p1", "insitu"), 5),
        env_of(LocalizationEvent("p1", "localizing"), 6),
    ]
    assert coalesce(list(envs)) == envs


def test_coalesce_scene_deltas_per_field():
    t1, t2 = Transform((1.0, 0, 0)), Transform((2.0, 0, 0))
    oid = "o" * 32
    envs = [
        env_of(SceneDeltas([Delta(SET_TRANSFORM, oid, transform=t1)]), 1),
        env_of(SceneDeltas([Delta(SET_PARAM, oid, prop="x", value=1)]), 2),
        env_of(SceneDeltas([Delta(SET_TRANSFORM, oid, transform=t2)]), 3),
    ]
    out = coalesce(envs)
    assert len(out) == 1
    deltas = out[0].body.deltas
    assert [d.kind for d in deltas] == ["set_param", "set_transform"]
    assert deltas[1].transform.position == (2.0, 0, 0)


def test_coalesce_lossy_latest_per_peer():
    rng = random.Random(58)
    envs = [env_of(CursorLive(ccursor(rng)), i) for i in range(10)]
    out = coalesce(envs)
    assert len(out) == 1 and out[0].body is envs[-1].body


def test_coalesce_preserves_folded_state():
    # applying coalesced vs raw stream to a fresh state gives equal hashes
    rng = random.Random(59)
    for trial in range(50):
        envs = []
        n = 0
        for _ in range(rng.randint(5, 40)):
            body = random_body(rng)
            if isinstance(body, (SnapshotMsg,)):
                continue
            n += 1
            envs.append(env_of(body, n))
        raw = MaterializedState()
        for i, e in enumerate(envs):
            if e.channel == "reliable":
                e.server_seq = i + 1
                raw.fold(e)
        squeezed = MaterializedState()
        for i, e in enumerate(coalesce(envs)):
            if e.channel == "reliable":
                squeezed.fold(e)
        assert raw.hash() == squeezed.hash()


# --- flush policy ------------------------------------------------------------------


def test_flush_single_delta_after_window():
    q = FlushQueue()
    env = env_of(SceneDeltas([Delta(SET_PARAM, "o" * 32, prop="x", value=1)]), 1)
    assert q.push(env, now=0.0) == []
    assert q.poll(now=0.049) == []
    out = q.poll(now=0.050)
    assert len(out) == 1
    assert q.poll(now=1.0) == []  # queue drained


def test_flush_size_bound_triggers_early():
    rng = random.Random(60)
    q = FlushQueue()
    flushes = []
    total_meshes = 0
    i = 0
    while total_meshes < 1024 * 1024:  # ~1 MiB of block updates
        body = MeshBlockUpdate("cap", (i, 0, 0), cmesh(rng, n=40), 1.0, "s")
        env = env_of(body, i)
        total_meshes += len(encode(env))
        out = q.push(env, now=0.001 * 0)
        if out:
            flushes.append(out)
        i += 1
    tail = q.flush_now()
    if tail:
        flushes.append(tail)
    assert len(flushes) > 1
    for batch in flushes[:-1]:
        size = sum(len(encode(e)) for e in batch)
        biggest = max(len(encode(e)) for e in batch)
        assert size <= FLUSH_MAX_BYTES + biggest


def test_flush_empty_queue():
    q = FlushQueue()
    assert q.poll(now=10.0) == []
    assert q.flush_now() == []


def test_flush_reliable_never_delayed_beyond_window():
    q = FlushQueue()
    env = env_of(AnnotationAdd(cannotation(random.Random(61))), 1)
    q.push(env, now=1.0)
    assert q.next_deadline() == pytest.approx(1.05)
    assert q.poll(1.05) == [env]
