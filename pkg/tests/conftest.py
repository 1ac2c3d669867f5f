import random

import numpy as np
import pytest
from hypothesis import strategies as st

from arco.canonical import canon_float
from arco.geometry import Pose
from arco.scene import SceneObject, SceneState, Transform


def random_quat(rng: random.Random) -> np.ndarray:
    q = np.array([rng.gauss(0, 1) for _ in range(4)])
    n = np.linalg.norm(q)
    while n < 1e-6:
        q = np.array([rng.gauss(0, 1) for _ in range(4)])
        n = np.linalg.norm(q)
    return q / n


def random_pose(rng: random.Random, span: float = 5.0) -> Pose:
    return Pose(
        np.array([rng.uniform(-span, span) for _ in range(3)]),
        random_quat(rng),
    )


def canon_quat(rng: random.Random) -> tuple:
    """Unit quaternion with canonically-quantized components, renormalized
    to stay within the Transform unit-norm tolerance."""
    q = random_quat(rng)
    return tuple(canon_float(v) for v in q)


def random_scene(rng: random.Random, n_objects: int = 8) -> SceneState:
    state = SceneState()
    ids = []
    for i in range(n_objects):
        oid = format(rng.getrandbits(128), "032x")
        parent = rng.choice(ids) if ids and rng.random() < 0.4 else None
        obj = SceneObject(
            id=oid,
            name=f"obj{i}",
            parent=parent,
            transform=Transform(
                position=tuple(canon_float(rng.uniform(-3, 3)) for _ in range(3)),
                rotation=canon_quat(rng),
                scale=tuple(canon_float(rng.uniform(0.5, 2)) for _ in range(3)),
            ),
            material={"tint": tuple(canon_float(rng.random()) for _ in range(4))},
            params={"speed": canon_float(rng.uniform(0, 2)), "on": rng.random() < 0.5},
        )
        state.objects[oid] = obj
        ids.append(oid)
    return state


# hypothesis strategies for wire-canonical values
canon_floats = st.floats(
    min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False
).map(canon_float)

small_text = st.text(
    alphabet=st.characters(min_codepoint=32, max_codepoint=126), min_size=0, max_size=12
)


@pytest.fixture
def rng():
    return random.Random(1234)
