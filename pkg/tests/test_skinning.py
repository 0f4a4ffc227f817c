"""Skinning weights and LBS warps against per-point brute-force oracles.

The oracle path shares nothing with the library internals: distances come
from explicitly assembled quadratic forms, softmax from scalar math.exp,
and warps from dense 4x4 products blended one point at a time with
numpy.linalg.inv.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boneforge.geometry import TriMesh
from boneforge.rig import (
    Bone,
    Pose,
    RigidTransform,
    build_rig,
    canonical_pose,
    compose_world,
    leaf_bones,
)
from boneforge.skinning import (
    DeltaWeights,
    SkinnedSurface,
    backward_warp,
    bone_distances,
    cycle_error,
    forward_warp,
    leaf_distances,
    mahalanobis,
    pose_surface,
    skin_surface,
    skinning_weights,
    warp_matrices,
)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, [0, 1]] = q[:, [1, 0]]
    return q


def random_rigid(rng):
    return RigidTransform(random_rotation(rng), rng.normal(size=3))


def random_rig(rng, n_bones):
    bones = [Bone("n0", random_rigid(rng), rng.uniform(0.3, 1.5, size=3))]
    for i in range(1, n_bones):
        parent = f"n{rng.integers(0, i)}"
        bones.append(
            Bone(f"n{i}", random_rigid(rng), rng.uniform(0.3, 1.5, size=3), parent)
        )
    return build_rig(bones)


def random_pose(rng, rig, frame=0):
    return Pose(frame, {i: random_rigid(rng) for i in rig.bones})


def rot_z(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def mat4(rt):
    m = np.eye(4)
    m[:3, :3] = rt.rotation
    m[:3, 3] = rt.translation
    return m


# -- oracle path --------------------------------------------------------------


def oracle_mahalanobis(x, rot, cen, sca):
    s_mat = np.diag(1.0 / np.asarray(sca, dtype=np.float64) ** 2)
    diff = np.asarray(x, dtype=np.float64) - cen
    quad = diff @ rot.T @ s_mat @ rot @ diff
    return math.sqrt(quad)


def oracle_weights(x, rig, pose, delta_row=None):
    leaves = leaf_bones(rig)
    world = compose_world(rig, pose)
    d = [
        oracle_mahalanobis(x, world[b].rotation, world[b].translation, rig.bones[b].scale)
        for b in leaves
    ]
    logits = [-di for di in d]
    if delta_row is not None:
        logits = [l + dw for l, dw in zip(logits, delta_row)]
    m = max(logits)
    e = [math.exp(l - m) for l in logits]
    z = sum(e)
    return np.array([v / z for v in e])


def oracle_warp(x, rig, pose_src, pose_dst, weight_pose):
    w = oracle_weights(x, rig, weight_pose)
    world_src = compose_world(rig, pose_src)
    world_dst = compose_world(rig, pose_dst)
    blended = np.zeros((4, 4))
    for wb, b in zip(w, leaf_bones(rig)):
        blended += wb * (mat4(world_dst[b]) @ np.linalg.inv(mat4(world_src[b])))
    return (blended @ np.append(x, 1.0))[:3]


def oracle_backward(x, rig, pose_t, pose_c):
    return oracle_warp(x, rig, pose_t, pose_c, weight_pose=pose_t)


def oracle_forward(x, rig, pose_c, pose_t):
    return oracle_warp(x, rig, pose_c, pose_t, weight_pose=pose_c)


# -- mahalanobis --------------------------------------------------------------


def test_distance_zero_at_center():
    rt = RigidTransform(rot_z(30), [1.0, 2.0, 3.0])
    assert mahalanobis([1.0, 2.0, 3.0], rt, [0.5, 1.0, 2.0]) == 0.0


def test_distance_on_unit_sphere_axis():
    rt = RigidTransform(np.eye(3), np.zeros(3))
    assert abs(mahalanobis([2.0, 0.0, 0.0], rt, [1.0, 1.0, 1.0]) - 2.0) < 1e-15


def test_distance_rotated_anisotropic():
    # 90 degrees about z sends the +y offset onto the long (s=2) axis.
    rt = RigidTransform(rot_z(90), np.zeros(3))
    d = mahalanobis([0.0, 2.0, 0.0], rt, [2.0, 1.0, 1.0])
    assert abs(d - 1.0) < 1e-12
    assert abs(d - oracle_mahalanobis([0, 2, 0], rt.rotation, rt.translation, [2, 1, 1])) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_distance_matches_quadratic_form_oracle(seed):
    rng = np.random.default_rng(30 + seed)
    rt = random_rigid(rng)
    sca = rng.uniform(0.2, 3.0, size=3)
    for _ in range(10):
        x = rng.normal(size=3) * 3
        got = mahalanobis(x, rt, sca)
        want = oracle_mahalanobis(x, rt.rotation, rt.translation, sca)
        assert abs(got - want) < 1e-12


def test_distance_one_on_ellipsoid_surface():
    rng = np.random.default_rng(35)
    rt = random_rigid(rng)
    sca = np.array([0.5, 1.5, 2.5])
    # map unit sphere directions onto the ellipsoid surface
    u = rng.normal(size=(50, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    surface = (u * sca) @ rt.rotation + rt.translation
    d = mahalanobis(surface, rt, sca)
    assert np.abs(d - 1.0).max() < 1e-12


def test_batched_distances_match_single():
    rng = np.random.default_rng(36)
    rig = random_rig(rng, 5)
    pose = random_pose(rng, rig)
    pts = rng.normal(size=(20, 3))
    d = leaf_distances(pts, rig, pose)
    world = compose_world(rig, pose)
    for i, b in enumerate(leaf_bones(rig)):
        for n in range(20):
            want = mahalanobis(pts[n], world[b], rig.bones[b].scale)
            assert abs(d[n, i] - want) < 1e-12


# -- weights ------------------------------------------------------------------


def test_single_leaf_gets_weight_one():
    rig = build_rig([Bone("solo", RigidTransform.identity(), np.ones(3))])
    w = skinning_weights([3.0, 1.0, 0.0], rig, canonical_pose(rig))
    assert w.shape == (1,)
    assert w[0] == 1.0


def test_coincident_bones_split_evenly():
    rig = build_rig(
        [
            Bone("a", RigidTransform.identity(), np.ones(3)),
            Bone("b", RigidTransform.identity(), np.ones(3)),
        ]
    )
    w = skinning_weights([0.7, -0.2, 0.1], rig, canonical_pose(rig))
    assert np.abs(w - 0.5).max() < 1e-12


def test_two_bone_softmax_values():
    # distances 1 and 2 from x = (1,0,0)
    rig = build_rig(
        [
            Bone("a", RigidTransform.identity(), np.ones(3)),
            Bone("b", RigidTransform(np.eye(3), [3.0, 0.0, 0.0]), np.ones(3)),
        ]
    )
    w = skinning_weights([1.0, 0.0, 0.0], rig, canonical_pose(rig))
    z = math.exp(-1) + math.exp(-2)
    assert np.abs(w - [math.exp(-1) / z, math.exp(-2) / z]).max() < 1e-12
    assert abs(w[0] - 0.7311) < 1e-4 and abs(w[1] - 0.2689) < 1e-4


@pytest.mark.parametrize("seed", range(4))
def test_weights_match_scalar_oracle(seed):
    rng = np.random.default_rng(40 + seed)
    rig = random_rig(rng, int(rng.integers(2, 8)))
    pose = random_pose(rng, rig)
    for _ in range(5):
        x = rng.normal(size=3) * 2
        got = skinning_weights(x, rig, pose)
        assert np.abs(got - oracle_weights(x, rig, pose)).max() < 1e-12


def test_delta_shifts_match_oracle():
    rng = np.random.default_rng(44)
    rig = random_rig(rng, 4)
    pose = random_pose(rng, rig)
    n_leaves = len(leaf_bones(rig))
    pts = rng.normal(size=(6, 3))
    delta = DeltaWeights(rng.normal(size=(6, n_leaves)))
    got = skinning_weights(pts, rig, pose, delta)
    for n in range(6):
        want = oracle_weights(pts[n], rig, pose, delta.table[n])
        assert np.abs(got[n] - want).max() < 1e-12


def test_delta_rejects_nan():
    with pytest.raises(ValueError, match="finite"):
        DeltaWeights(np.array([[0.0, np.inf]]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n_bones=st.integers(1, 9))
def test_weights_live_on_the_simplex(seed, n_bones):
    rng = np.random.default_rng(seed)
    rig = random_rig(rng, n_bones)
    pose = random_pose(rng, rig)
    pts = rng.normal(size=(16, 3)) * rng.uniform(0.5, 50)
    w = skinning_weights(pts, rig, pose)
    assert w.min() >= 0.0
    assert np.abs(w.sum(axis=1) - 1.0).max() < 1e-6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-30, 30))
def test_constant_delta_shift_changes_nothing(seed, shift):
    rng = np.random.default_rng(seed)
    rig = random_rig(rng, 5)
    pose = random_pose(rng, rig)
    pts = rng.normal(size=(8, 3))
    n_leaves = len(leaf_bones(rig))
    base = rng.normal(size=(8, n_leaves))
    w0 = skinning_weights(pts, rig, pose, DeltaWeights(base))
    w1 = skinning_weights(pts, rig, pose, DeltaWeights(base + shift))
    assert np.abs(w0 - w1).max() < 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), factor=st.floats(1.0, 4.0))
def test_growing_a_bone_never_sheds_weight(seed, factor):
    rng = np.random.default_rng(seed)
    bones = [
        Bone(f"n{i}", random_rigid(rng), rng.uniform(0.3, 1.5, size=3))
        for i in range(4)
    ]
    rig = build_rig(bones)
    k = int(rng.integers(0, 4))
    grown_bones = [
        Bone(b.id, b.local, b.scale * factor if i == k else b.scale)
        for i, b in enumerate(bones)
    ]
    grown = build_rig(grown_bones)
    pts = rng.normal(size=(12, 3)) * 2
    pose = canonical_pose(rig)
    w_before = skinning_weights(pts, rig, pose)
    w_after = skinning_weights(pts, grown, canonical_pose(grown))
    assert np.all(w_after[:, k] - w_before[:, k] > -1e-12)


# -- warps --------------------------------------------------------------------


def test_backward_identity_when_poses_agree():
    rng = np.random.default_rng(50)
    rig = random_rig(rng, 4)
    pose = random_pose(rng, rig)
    pts = rng.normal(size=(10, 3))
    out = backward_warp(pts, rig, pose, pose)
    assert np.abs(out - pts).max() < 1e-12


def test_backward_single_bone_translation():
    rig = build_rig([Bone("a", RigidTransform.identity(), np.ones(3))])
    pose_c = canonical_pose(rig)
    pose_t = Pose(1, {"a": RigidTransform(np.eye(3), [1.0, 0.0, 0.0])})
    x = np.array([0.3, 0.4, 0.5])
    out = backward_warp(x, rig, pose_t, pose_c)
    assert np.abs(out - (x - [1.0, 0.0, 0.0])).max() < 1e-15


def test_backward_two_bone_chain_matches_oracle():
    rng = np.random.default_rng(51)
    rig = build_rig(
        [
            Bone("a", random_rigid(rng), [1.0, 0.5, 0.5]),
            Bone("b", random_rigid(rng), [0.8, 0.4, 0.4], parent="a"),
        ]
    )
    pose_t = random_pose(rng, rig, frame=1)
    pose_c = canonical_pose(rig)
    for _ in range(10):
        x = rng.normal(size=3) * 2
        got = backward_warp(x, rig, pose_t, pose_c)
        assert np.abs(got - oracle_backward(x, rig, pose_t, pose_c)).max() < 1e-10


def test_forward_identity_when_poses_agree():
    rng = np.random.default_rng(52)
    rig = random_rig(rng, 5)
    pose = random_pose(rng, rig)
    pts = rng.normal(size=(10, 3))
    assert np.abs(forward_warp(pts, rig, pose, pose) - pts).max() < 1e-12


def test_forward_global_rigid_motion_is_exact():
    rng = np.random.default_rng(53)
    rig = random_rig(rng, 6)
    pose_c = random_pose(rng, rig)
    t = random_rigid(rng)
    locals_t = {
        i: (t @ rt if rig.bones[i].parent is None else rt)
        for i, rt in pose_c.locals.items()
    }
    pose_t = Pose(1, locals_t)
    pts = rng.normal(size=(30, 3)) * 3
    got = forward_warp(pts, rig, pose_c, pose_t)
    want = t.apply(pts)
    assert np.abs(got - want).max() < 1e-9
    err = cycle_error(pts, rig, pose_t, pose_c)
    assert err.max() < 1e-9


def test_forward_articulated_bend_matches_oracle():
    rng = np.random.default_rng(54)
    rig = build_rig(
        [
            Bone("hip", RigidTransform.identity(), [1.0, 0.6, 0.6]),
            Bone("knee", RigidTransform(np.eye(3), [2.0, 0.0, 0.0]), [1.0, 0.5, 0.5], parent="hip"),
        ]
    )
    pose_c = canonical_pose(rig)
    bent = Pose(1, {"hip": rig.bones["hip"].local,
                    "knee": RigidTransform(rot_z(40), [2.0, 0.0, 0.0])})
    for _ in range(10):
        x = rng.normal(size=3) * 2 + [1.0, 0.0, 0.0]
        got = forward_warp(x, rig, pose_c, bent)
        assert np.abs(got - oracle_forward(x, rig, pose_c, bent)).max() < 1e-10


@pytest.mark.parametrize("seed", range(6))
def test_batched_warp_equals_per_point_oracle(seed):
    rng = np.random.default_rng(60 + seed)
    rig = random_rig(rng, int(rng.integers(2, 10)))
    pose_t = random_pose(rng, rig, frame=1)
    pose_c = random_pose(rng, rig, frame="canonical")
    pts = rng.normal(size=(25, 3)) * 2
    got_b = backward_warp(pts, rig, pose_t, pose_c)
    got_f = forward_warp(pts, rig, pose_c, pose_t)
    for n in range(len(pts)):
        assert np.abs(got_b[n] - oracle_backward(pts[n], rig, pose_t, pose_c)).max() < 1e-10
        assert np.abs(got_f[n] - oracle_forward(pts[n], rig, pose_c, pose_t)).max() < 1e-10


# -- cycle consistency --------------------------------------------------------


def test_cycle_zero_for_single_bone():
    rng = np.random.default_rng(70)
    rig = build_rig([Bone("a", random_rigid(rng), [1.0, 0.7, 0.4])])
    pose_t = random_pose(rng, rig, frame=1)
    pose_c = canonical_pose(rig)
    pts = rng.normal(size=(20, 3)) * 4
    assert cycle_error(pts, rig, pose_t, pose_c).max() < 1e-9


def test_cycle_small_for_well_separated_bones():
    # x sits 5 units inside bone a; bone b stays >= 10 units away in both
    # poses, so its blend weight is ~e^-12 and the round trip barely drifts.
    rig = build_rig(
        [
            Bone("a", RigidTransform.identity(), np.ones(3)),
            Bone("b", RigidTransform(np.eye(3), [25.0, 0.0, 0.0]), np.ones(3)),
        ]
    )
    pose_c = canonical_pose(rig)
    pose_t = Pose(
        1,
        {
            "a": RigidTransform(rot_z(25), [0.5, 0.0, 0.0]),
            "b": RigidTransform(rot_z(-40), [26.0, 1.0, 0.0]),
        },
    )
    x = np.array([5.0, 0.0, 0.0])  # d_a = 5, d_b = 20
    centers = np.array([[0, 0, 0], [25, 0, 0], [0.5, 0, 0], [26, 1, 0]], dtype=float)
    diag = np.linalg.norm(centers.max(axis=0) - centers.min(axis=0))
    assert cycle_error(x, rig, pose_t, pose_c) < 1e-4 * diag


def test_cycle_error_single_point_returns_scalar():
    rig = build_rig([Bone("a", RigidTransform.identity(), np.ones(3))])
    pose = canonical_pose(rig)
    assert isinstance(cycle_error([0.1, 0.2, 0.3], rig, pose, pose), float)


# -- skinned surfaces ---------------------------------------------------------


def test_skinned_surface_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        SkinnedSurface(np.zeros((2, 3)), np.zeros((0, 3), int), np.ones((2, 2)), ("a", "b"))
    with pytest.raises(ValueError, match="out of range"):
        SkinnedSurface(np.zeros((2, 3)), [[0, 1, 2]], np.full((2, 1), 1.0), ("a",))
    with pytest.raises(ValueError, match="shape"):
        SkinnedSurface(np.zeros((2, 3)), np.zeros((0, 3), int), np.full((3, 1), 1.0), ("a",))


def test_skin_and_pose_surface_matches_direct_warp():
    rng = np.random.default_rng(80)
    rig = random_rig(rng, 5)
    pose_c = canonical_pose(rig)
    pose_t = random_pose(rng, rig, frame=2)
    mesh = TriMesh(rng.normal(size=(40, 3)), [[0, 1, 2], [3, 4, 5]])
    surf = skin_surface(mesh, rig, pose_c)
    assert surf.leaf_ids == leaf_bones(rig)
    moved = pose_surface(surf, rig, pose_c, pose_t)
    direct = forward_warp(mesh.vertices, rig, pose_c, pose_t)
    assert np.abs(moved - direct).max() < 1e-12


def test_pose_surface_rejects_stale_binding():
    rng = np.random.default_rng(81)
    rig = random_rig(rng, 4)
    mesh = TriMesh(rng.normal(size=(10, 3)), [[0, 1, 2]])
    surf = skin_surface(mesh, rig, canonical_pose(rig))
    other = random_rig(np.random.default_rng(99), 6)
    with pytest.raises(ValueError, match="re-skin"):
        pose_surface(surf, other, canonical_pose(other), canonical_pose(other))


def test_warp_matrices_shape_and_order():
    rng = np.random.default_rng(82)
    rig = random_rig(rng, 6)
    pose = random_pose(rng, rig)
    mats = warp_matrices(rig, pose, pose)
    assert mats.shape == (len(leaf_bones(rig)), 4, 4)
    assert np.abs(mats - np.eye(4)).max() < 1e-12


def test_bone_distances_reduction_is_reproducible():
    rng = np.random.default_rng(83)
    rot = np.stack([random_rotation(rng) for _ in range(4)])
    cen = rng.normal(size=(4, 3))
    sca = rng.uniform(0.5, 2.0, size=(4, 3))
    pts = rng.normal(size=(100, 3))
    a = bone_distances(pts, rot, cen, sca)
    b = bone_distances(pts, rot, cen, sca)
    assert np.array_equal(a, b)
