"""Property tests over the core invariants."""

import random

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from arco.canonical import canon_float, dumps
from arco.geometry import Pose, apply, compose, invert
from arco.protocol import coalesce, decode, encode
from arco.room_state import MaterializedState
from arco.scene import apply_deltas, diff, state_hash

from conftest import random_scene
from test_protocol import random_body, random_envelope
from test_scene import mutate_randomly

seeds = st.integers(min_value=0, max_value=2**32 - 1)

finite = st.floats(min_value=-100, max_value=100, allow_nan=False)


def pose_from(data) -> Pose:
    q = np.array([data.draw(finite) for _ in range(4)])
    n = np.linalg.norm(q)
    if n < 1e-3:
        q = np.array([1.0, 0, 0, 0])
        n = 1.0
    return Pose(np.array([data.draw(finite) for _ in range(3)]), q / n)


@given(st.data())
@settings(max_examples=100, deadline=None)
def test_rigid_transform_group_laws(data):
    a, b = pose_from(data), pose_from(data)
    p = np.array([data.draw(finite) for _ in range(3)])
    assert np.allclose(apply(compose(a, b), p), apply(a, apply(b, p)), atol=1e-7)
    assert np.allclose(apply(compose(a, invert(a)), p), p, atol=1e-7)
    assert np.allclose(apply(invert(a), apply(a, p)), p, atol=1e-7)


@given(seeds, st.integers(min_value=1, max_value=60))
@settings(max_examples=60, deadline=None)
def test_diff_apply_identity(seed, n_ops):
    rng = random.Random(seed)
    prev = random_scene(rng, rng.randint(1, 8))
    nxt = mutate_randomly(prev, rng, n_ops)
    folded = apply_deltas(prev, diff(prev, nxt), strict=True).state
    assert state_hash(folded) == state_hash(nxt)


@given(seeds)
@settings(max_examples=60, deadline=None)
def test_envelope_codec_identity(seed):
    env = random_envelope(random.Random(seed))
    text = encode(env)
    assert encode(decode(text)) == text


@given(seeds, st.integers(min_value=1, max_value=30))
@settings(max_examples=40, deadline=None)
def test_coalescing_preserves_fold(seed, n):
    from arco.protocol import SnapshotMsg, WireEnvelope

    rng = random.Random(seed)
    envs = []
    for i in range(n):
        body = random_body(rng)
        if isinstance(body, SnapshotMsg):
            continue
        envs.append(WireEnvelope(room="r", sender="p", client_seq=i, body=body, sent_at=i))
    raw, squeezed = MaterializedState(), MaterializedState()
    for i, e in enumerate(envs):
        if e.channel == "reliable":
            raw.fold(e)
    for e in coalesce(list(envs)):
        if e.channel == "reliable":
            squeezed.fold(e)
    assert raw.hash() == squeezed.hash()


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_coalesce_is_idempotent(seed):
    from arco.protocol import SnapshotMsg, WireEnvelope

    rng = random.Random(seed)
    envs = []
    for i in range(rng.randint(1, 25)):
        body = random_body(rng)
        if isinstance(body, SnapshotMsg):
            continue
        envs.append(WireEnvelope(room="r", sender="p", client_seq=i, body=body, sent_at=i))
    once = coalesce(list(envs))
    twice = coalesce(list(once))
    assert [encode(e) for e in once] == [encode(e) for e in twice]


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_state_hash_is_content_function(seed):
    rng = random.Random(seed)
    s = random_scene(rng, rng.randint(1, 6))
    assert state_hash(s) == state_hash(s.copy())
    assert dumps(s.to_tree()) == dumps(s.copy().to_tree())


@given(st.floats(min_value=-1e12, max_value=1e12, allow_nan=False))
@settings(max_examples=200)
def test_canon_float_projection(x):
    # canon_float is a projection onto wire-representable values
    c = canon_float(x)
    assert canon_float(c) == c
    if x != 0:
        assert abs(c - x) <= abs(x) * 5e-9
