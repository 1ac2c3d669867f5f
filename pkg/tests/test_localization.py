import random

import numpy as np
import pytest

from arco.geometry import Pose, TriangleMesh
from arco.localization import (
    AWAITING_CONFIRMATION,
    LOCALIZED,
    LOCALIZING,
    UNLOCALIZED,
    InvalidPhase,
    LocalizationState,
    LocationMesh,
    NotLocalized,
    anchor_point,
    confirm,
    offer_candidate,
    restart,
    start_localizing,
)

from conftest import random_pose
from test_geometry import pose_matrix


def T(x, y, z):
    return Pose(np.array([x, y, z], dtype=float))


def test_offer_from_localizing():
    s = LocalizationState(LOCALIZING)
    s2 = offer_candidate(s, T(1, 2, 3))
    assert s2.phase == AWAITING_CONFIRMATION
    assert np.allclose(s2.candidate.position, [1, 2, 3])


def test_newer_candidate_replaces_older():
    s = offer_candidate(LocalizationState(LOCALIZING), T(1, 0, 0))
    s = offer_candidate(s, T(2, 0, 0))
    assert s.phase == AWAITING_CONFIRMATION
    assert np.allclose(s.candidate.position, [2, 0, 0])


@pytest.mark.parametrize("phase", [UNLOCALIZED, LOCALIZED])
def test_offer_invalid_phases(phase):
    s = LocalizationState(phase, alignment=Pose.identity() if phase == LOCALIZED else None)
    with pytest.raises(InvalidPhase):
        offer_candidate(s, T(0, 0, 0))


def test_confirm_promotes_candidate():
    s = offer_candidate(LocalizationState(LOCALIZING), T(1, 2, 3))
    s2 = confirm(s, now_ms=777)
    assert s2.phase == LOCALIZED
    assert s2.confirmed_at == 777
    assert np.allclose(s2.alignment.position, [1, 2, 3])


@pytest.mark.parametrize("phase", [UNLOCALIZED, LOCALIZING, LOCALIZED])
def test_confirm_invalid_phases(phase):
    s = LocalizationState(phase, alignment=Pose.identity() if phase == LOCALIZED else None)
    with pytest.raises(InvalidPhase):
        confirm(s)


def test_restart_from_any_phase():
    for s in (
        LocalizationState(UNLOCALIZED),
        LocalizationState(LOCALIZING),
        offer_candidate(LocalizationState(LOCALIZING), T(1, 0, 0)),
        confirm(offer_candidate(LocalizationState(LOCALIZING), T(1, 0, 0))),
    ):
        assert restart(s).phase == LOCALIZING


def test_anchor_point_identity_and_translation():
    s = confirm(offer_candidate(LocalizationState(LOCALIZING), Pose.identity()))
    p = np.array([0.5, -1.0, 2.0])
    assert np.allclose(anchor_point(s, p), p)

    s2 = confirm(offer_candidate(LocalizationState(LOCALIZING), T(1, 2, 3)))
    assert np.allclose(anchor_point(s2, p), p + [1, 2, 3])


def test_anchor_point_requires_localized():
    with pytest.raises(NotLocalized):
        anchor_point(LocalizationState(LOCALIZING), np.zeros(3))


def test_anchor_point_matches_matrix_oracle():
    rng = random.Random(21)
    for _ in range(200):
        align = random_pose(rng)
        s = confirm(offer_candidate(LocalizationState(LOCALIZING), align))
        p = np.array([rng.uniform(-4, 4) for _ in range(3)])
        m = pose_matrix(align)
        want = m[:3, :3] @ p + m[:3, 3]
        assert np.max(np.abs(anchor_point(s, p) - want)) < 1e-9


def test_anchor_point_is_isometry():
    rng = random.Random(22)
    align = random_pose(rng)
    s = confirm(offer_candidate(LocalizationState(LOCALIZING), align))
    for _ in range(100):
        a = np.array([rng.uniform(-3, 3) for _ in range(3)])
        b = np.array([rng.uniform(-3, 3) for _ in range(3)])
        d0 = np.linalg.norm(a - b)
        d1 = np.linalg.norm(anchor_point(s, a) - anchor_point(s, b))
        assert abs(d0 - d1) < 1e-9


def test_restart_does_not_reanchor_prior_data():
    rng = random.Random(23)
    t1, t2 = random_pose(rng), random_pose(rng)
    s = confirm(offer_candidate(LocalizationState(LOCALIZING), t1))
    p = np.array([1.0, 0.5, -0.5])
    before = anchor_point(s, p).copy()
    s = confirm(offer_candidate(restart(s), t2))
    after = anchor_point(s, p)
    # prior captures keep their stored coordinates; only new ones use t2
    assert np.allclose(before, t1.apply(p))
    assert np.allclose(after, t2.apply(p))
    assert not np.allclose(before, after)


def test_location_mesh_invariants():
    mesh = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), np.array([[0, 1, 2]]))
    lm = LocationMesh(mesh, opacity=0.3)
    assert lm.opacity == 0.3
    with pytest.raises(ValueError):
        LocationMesh(mesh, opacity=1.5)
    with pytest.raises(ValueError):
        LocationMesh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)))


def test_start_localizing():
    assert start_localizing(LocalizationState(UNLOCALIZED)).phase == LOCALIZING
