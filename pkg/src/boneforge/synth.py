"""Procedural ground-truth scenes: rigs with known poses, meshes, and masks.

Three families cover the behaviors the optimizer tests need. A chain is k
capsule segments with explicit knuckle bones at the joints, so bending a
joint's rotation swings every distal segment rigidly about that joint. The
quadruped is a box torso with four legs and a tail, each limb hanging off
a hip knuckle; six roots refine into twelve leaf segments. The dumbbell is
two free spheres joined by a bar nothing is responsible for covering.

Leaf ellipsoids are sized so every capsule wall sits strictly inside the
unit-distance shell: with the default gamma/lambda settings the overlap
and coverage penalties on ground truth evaluate to zero, which is what
lets fitting tests treat ground truth as a loss floor.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from boneforge.geometry import TriMesh
from boneforge.occupancy import (
    MaskImage,
    OccupancyConfig,
    PinholeCamera,
    look_at,
    render_bone_mask,
)
from boneforge.optimizer import rotvec_matrix
from boneforge.rig import (
    Bone,
    Pose,
    Rig,
    RigidTransform,
    build_rig,
    canonical_pose,
    compose_world,
    leaf_bones,
)
from boneforge.skinning import (
    DeltaWeights,
    SkinnedSurface,
    pose_surface,
    skin_surface,
)

_CHAIN = re.compile(r"^chain-(\d+)$")

# capsule segments: ellipsoid shells padded past the wall so the surface
# is interior to every leaf; the radial pad keeps capsule corner and cap
# points comfortably under unit distance (worst case ~0.9)
_AXIAL_PAD = 1.15
_RADIAL_PAD = 1.35


@dataclass(frozen=True)
class SynthScenario:
    kind: str
    n_frames: int = 1
    seed: int = 0
    noise: float = 0.0

    def __post_init__(self):
        if self.kind not in ("quadruped", "dumbbell") and not _CHAIN.match(self.kind):
            raise ValueError(
                f"unknown scenario kind {self.kind!r}; "
                f"expected chain-<k>, quadruped, or dumbbell"
            )
        if _CHAIN.match(self.kind) and int(_CHAIN.match(self.kind).group(1)) < 1:
            raise ValueError("chain needs at least one segment")
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")


@dataclass(frozen=True, eq=False)
class ScenarioData:
    scenario: SynthScenario
    rig: Rig
    poses: tuple[Pose, ...]
    mesh: TriMesh
    skinned: SkinnedSurface
    frame_meshes: tuple[TriMesh, ...]
    masks: tuple[MaskImage, ...]
    camera: PinholeCamera


# ---------------------------------------------------------------------------
# Primitive meshes
# ---------------------------------------------------------------------------


def capsule_mesh(radius: float, half_length: float, segments: int = 16,
                 rings: int = 6) -> TriMesh:
    """Capsule along +x: cylinder of the given half-length with sphere caps.

    Total extent along x is half_length + radius each way.
    """
    if radius <= 0 or half_length < 0:
        raise ValueError("capsule needs radius > 0 and half_length >= 0")
    if segments < 3 or rings < 2:
        raise ValueError("capsule needs segments >= 3 and rings >= 2")
    verts = [np.array([half_length + radius, 0.0, 0.0])]
    ring_rows = []
    # cap rows sweep the polar angle; the equator row is emitted twice,
    # once at each end of the cylinder
    for side, xoff in ((1.0, half_length), (-1.0, -half_length)):
        polar = np.linspace(0, np.pi / 2, rings + 1)[1:]
        if side < 0:
            polar = polar[::-1]
        for phi in polar:
            row = []
            for j in range(segments):
                ang = 2 * np.pi * j / segments
                r = radius * np.sin(phi)
                row.append(
                    np.array([
                        xoff + side * radius * np.cos(phi),
                        r * np.cos(ang),
                        r * np.sin(ang),
                    ])
                )
            ring_rows.append(len(verts))
            verts.extend(row)
    verts.append(np.array([-(half_length + radius), 0.0, 0.0]))
    tris = []
    for j in range(segments):
        tris.append([0, ring_rows[0] + j, ring_rows[0] + (j + 1) % segments])
    for a, b in zip(ring_rows, ring_rows[1:]):
        for j in range(segments):
            jn = (j + 1) % segments
            tris.append([a + j, b + j, b + jn])
            tris.append([a + j, b + jn, a + jn])
    tip = len(verts) - 1
    last = ring_rows[-1]
    for j in range(segments):
        tris.append([tip, last + (j + 1) % segments, last + j])
    return TriMesh(np.array(verts), np.array(tris))


def box_mesh(half_extents, res: int = 3) -> TriMesh:
    """Axis-aligned box at the origin, each face an res x res grid."""
    h = np.asarray(half_extents, dtype=np.float64)
    if h.shape != (3,) or np.any(h <= 0):
        raise ValueError("box needs three positive half extents")
    if res < 1:
        raise ValueError("box face resolution must be >= 1")
    verts, tris = [], []
    lin = np.linspace(-1.0, 1.0, res + 1)
    for axis in range(3):
        u, v = (axis + 1) % 3, (axis + 2) % 3
        for sign in (1.0, -1.0):
            base = len(verts)
            for a in lin:
                for b in lin:
                    p = np.zeros(3)
                    p[axis] = sign * h[axis]
                    p[u] = a * h[u]
                    p[v] = b * h[v]
                    verts.append(p)
            n = res + 1
            for i in range(res):
                for j in range(res):
                    q = base + i * n + j
                    if sign > 0:
                        tris.append([q, q + n, q + n + 1])
                        tris.append([q, q + n + 1, q + 1])
                    else:
                        tris.append([q, q + n + 1, q + n])
                        tris.append([q, q + 1, q + n + 1])
    return TriMesh(np.array(verts), np.array(tris))


def transformed(mesh: TriMesh, rt: RigidTransform) -> TriMesh:
    return TriMesh(rt.apply(mesh.vertices), mesh.triangles, mesh.colors)


def merge_meshes(meshes) -> TriMesh:
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriMesh(np.vstack(verts), np.vstack(tris))


# ---------------------------------------------------------------------------
# Scene constructions
# ---------------------------------------------------------------------------


def _chain_parts(k: int):
    link, radius = 1.2, 0.25
    hc = link / 2 - radius
    bones, meshes, owner = [], [], []
    seg_scale = (link / 2 * _AXIAL_PAD, radius * _RADIAL_PAD, radius * _RADIAL_PAD)
    knuckle = (radius, radius, radius)
    for i in range(1, k + 1):
        joint_local = np.zeros(3) if i == 1 else np.array([link, 0.0, 0.0])
        bones.append(
            Bone(f"j{i}", RigidTransform(np.eye(3), joint_local), knuckle,
                 parent=None if i == 1 else f"j{i-1}")
        )
        bones.append(
            Bone(f"s{i}", RigidTransform(np.eye(3), np.array([link / 2, 0.0, 0.0])),
                 seg_scale, parent=f"j{i}")
        )
        part = transformed(
            capsule_mesh(radius, hc),
            RigidTransform(np.eye(3), np.array([(i - 0.5) * link, 0.0, 0.0])),
        )
        meshes.append(part)
        owner.extend([f"s{i}"] * len(part.vertices))
    return build_rig(bones), merge_meshes(meshes), owner


def _chain_animation(rig: Rig, k: int, n_frames: int, seed: int):
    rng = np.random.default_rng(seed)
    amps = rng.uniform(np.deg2rad(15), np.deg2rad(30), size=k)
    phases = rng.uniform(0, 2 * np.pi, size=k)
    base = canonical_pose(rig)
    poses = []
    for f in range(n_frames):
        t = f / max(n_frames - 1, 1)
        locals_ = dict(base.locals)
        for i in range(1, k + 1):
            ang = amps[i - 1] * np.sin(2 * np.pi * t + phases[i - 1]) * np.sin(np.pi * t)
            cur = locals_[f"j{i}"]
            locals_[f"j{i}"] = RigidTransform(
                rotvec_matrix([0, 0, ang]) @ cur.rotation, cur.translation
            )
        poses.append(Pose(f"frame{f}", locals_))
    return tuple(poses)


def _quadruped_parts():
    # limb segments are long enough that each leaf owns more surface
    # samples than a default coverage neighborhood; otherwise nearest
    # points leak onto the torso and the ground-truth floor is not zero
    torso_h = np.array([1.1, 0.45, 0.35])
    torso_c = np.array([0.0, 0.0, 0.55])
    leg_r, leg_len = 0.13, 0.6
    tail_r, tail_len = 0.11, 0.65
    bones, meshes, owner = [], [], []

    bones.append(Bone("torso", RigidTransform(np.eye(3), torso_c), (0.3, 0.3, 0.3)))
    for tag, sx in (("front", 1.0), ("back", -1.0)):
        c = torso_c + np.array([sx * torso_h[0] / 2, 0.0, 0.0])
        bones.append(
            Bone(f"torso_{tag}",
                 RigidTransform(np.eye(3), c - torso_c),
                 (torso_h[0] / 2 * 1.25, torso_h[1] * 1.25, torso_h[2] * 1.25),
                 parent="torso")
        )
    torso = transformed(box_mesh(torso_h), RigidTransform(np.eye(3), torso_c))
    meshes.append(torso)
    owner.extend(
        "torso_front" if v[0] >= 0 else "torso_back" for v in torso.vertices
    )

    down = rotvec_matrix([0, np.pi / 2, 0])  # x axis of the capsule points -z
    hip_z = torso_c[2] - torso_h[2]
    hc = leg_len / 2 - leg_r
    seg_scale = (leg_len / 2 * _AXIAL_PAD, leg_r * _RADIAL_PAD, leg_r * _RADIAL_PAD)
    for name, hx, hy in (
        ("leg_fl", 0.8, 0.33), ("leg_fr", 0.8, -0.33),
        ("leg_bl", -0.8, 0.33), ("leg_br", -0.8, -0.33),
    ):
        hip = np.array([hx, hy, hip_z])
        bones.append(Bone(name, RigidTransform(np.eye(3), hip), (0.15, 0.15, 0.15)))
        for i in (1, 2):
            zc = hip_z - (i - 0.5) * leg_len
            local_t = np.array([0.0, 0.0, -(i - 0.5) * leg_len])
            bones.append(
                Bone(f"{name}_{i}", RigidTransform(down, local_t), seg_scale,
                     parent=name)
            )
            part = transformed(
                capsule_mesh(leg_r, hc),
                RigidTransform(down, np.array([hx, hy, zc])),
            )
            meshes.append(part)
            owner.extend([f"{name}_{i}"] * len(part.vertices))

    tail_base = np.array([-torso_h[0], 0.0, torso_c[2] + 0.1])
    back = rotvec_matrix([0, 0, np.pi])  # capsule x points -x
    hc_t = tail_len / 2 - tail_r
    tail_scale = (tail_len / 2 * _AXIAL_PAD, tail_r * _RADIAL_PAD, tail_r * _RADIAL_PAD)
    bones.append(Bone("tail", RigidTransform(np.eye(3), tail_base), (0.12, 0.12, 0.12)))
    for i in (1, 2):
        xc = tail_base[0] - (i - 0.5) * tail_len
        bones.append(
            Bone(f"tail_{i}",
                 RigidTransform(back, np.array([-(i - 0.5) * tail_len, 0.0, 0.0])),
                 tail_scale, parent="tail")
        )
        part = transformed(
            capsule_mesh(tail_r, hc_t),
            RigidTransform(back, np.array([xc, tail_base[1], tail_base[2]])),
        )
        meshes.append(part)
        owner.extend([f"tail_{i}"] * len(part.vertices))
    return build_rig(bones), merge_meshes(meshes), owner


def _quadruped_animation(rig: Rig, n_frames: int, seed: int):
    rng = np.random.default_rng(seed)
    legs = ("leg_fl", "leg_fr", "leg_bl", "leg_br")
    amps = rng.uniform(0.3, 0.5, size=4)
    tail_amp = rng.uniform(0.2, 0.4)
    gait = {"leg_fl": 0.0, "leg_fr": np.pi, "leg_bl": np.pi, "leg_br": 0.0}
    base = canonical_pose(rig)
    poses = []
    for f in range(n_frames):
        t = f / max(n_frames - 1, 1)
        envelope = np.sin(np.pi * t)
        locals_ = dict(base.locals)
        for a, leg in zip(amps, legs):
            ang = a * np.sin(2 * np.pi * t + gait[leg]) * envelope
            cur = locals_[leg]
            locals_[leg] = RigidTransform(
                rotvec_matrix([0, ang, 0]) @ cur.rotation, cur.translation
            )
        cur = locals_["tail"]
        sway = tail_amp * np.sin(2 * np.pi * t) * envelope
        locals_["tail"] = RigidTransform(
            rotvec_matrix([0, 0, sway]) @ cur.rotation, cur.translation
        )
        poses.append(Pose(f"frame{f}", locals_))
    return tuple(poses)


def _dumbbell_parts():
    r, gap, bar_r = 0.5, 1.0, 0.15
    bones = [
        Bone("a", RigidTransform(np.eye(3), np.array([gap, 0.0, 0.0])), (r * 1.1,) * 3),
        Bone("b", RigidTransform(np.eye(3), np.array([-gap, 0.0, 0.0])), (r * 1.1,) * 3),
    ]
    ball = capsule_mesh(r, 0.0)  # zero cylinder = sphere
    bar = capsule_mesh(bar_r, gap - r / 2)
    parts = [
        transformed(ball, RigidTransform(np.eye(3), np.array([gap, 0.0, 0.0]))),
        transformed(ball, RigidTransform(np.eye(3), np.array([-gap, 0.0, 0.0]))),
        bar,
    ]
    owner = (
        ["a"] * len(parts[0].vertices)
        + ["b"] * len(parts[1].vertices)
        + ["a" if v[0] >= 0 else "b" for v in bar.vertices]
    )
    return build_rig(bones), merge_meshes(parts), owner


def _dumbbell_animation(rig: Rig, n_frames: int, seed: int):
    rng = np.random.default_rng(seed)
    amp_t = rng.uniform(0.1, 0.3)
    amp_r = rng.uniform(0.2, 0.5)
    base = canonical_pose(rig)
    poses = []
    for f in range(n_frames):
        t = f / max(n_frames - 1, 1)
        s = np.sin(2 * np.pi * t) * np.sin(np.pi * t)
        locals_ = dict(base.locals)
        la = locals_["a"]
        locals_["a"] = RigidTransform(
            rotvec_matrix([0, 0, amp_r * s]) @ la.rotation,
            la.translation + np.array([amp_t * s, 0.0, 0.0]),
        )
        lb = locals_["b"]
        locals_["b"] = RigidTransform(
            la.rotation, lb.translation - np.array([amp_t * s, 0.0, 0.0])
        )
        poses.append(Pose(f"frame{f}", locals_))
    return tuple(poses)


def default_camera(mesh: TriMesh, width: int = 64, height: int = 64) -> PinholeCamera:
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = float(np.linalg.norm(hi - lo))
    eye = center + np.array([0.0, -1.9 * extent, 0.45 * extent])
    return look_at(eye, center, width, height)


def make_scenario(scn: SynthScenario, occ_cfg: OccupancyConfig = OccupancyConfig(),
                  mask_size: int = 64, samples_per_ray: int = 48,
                  delta_sharp: float = 25.0) -> ScenarioData:
    """Build ground truth: rig, per-frame poses, warped meshes, and masks.

    Frame meshes are exactly the forward warp of the canonical mesh under
    each pose via the cached skinning weights; masks come from the
    occupancy renderer under the same poses. Everything is a pure function
    of the scenario, so equal seeds give bit-identical outputs.

    delta_sharp biases each vertex's weight toward the segment it was
    generated from, making mid-segment weights effectively one-hot; the
    warped meshes then articulate rigidly at the joints. Pass 0 for plain
    distance-softmax binding.
    """
    m = _CHAIN.match(scn.kind)
    if m:
        k = int(m.group(1))
        rig, mesh, owner = _chain_parts(k)
        poses = _chain_animation(rig, k, scn.n_frames, scn.seed)
    elif scn.kind == "quadruped":
        rig, mesh, owner = _quadruped_parts()
        poses = _quadruped_animation(rig, scn.n_frames, scn.seed)
    else:
        rig, mesh, owner = _dumbbell_parts()
        poses = _dumbbell_animation(rig, scn.n_frames, scn.seed)

    if scn.noise > 0:
        rng = np.random.default_rng(scn.seed + 7919)
        mesh = TriMesh(
            mesh.vertices + scn.noise * rng.normal(size=mesh.vertices.shape),
            mesh.triangles,
        )

    pc = canonical_pose(rig)
    delta = None
    if delta_sharp > 0:
        idx = {b: i for i, b in enumerate(leaf_bones(rig))}
        table = np.zeros((len(mesh.vertices), len(idx)))
        table[np.arange(len(owner)), [idx[o] for o in owner]] = delta_sharp
        delta = DeltaWeights(table)
    skinned = skin_surface(mesh, rig, pc, delta)
    frame_meshes = tuple(
        TriMesh(pose_surface(skinned, rig, pc, p), mesh.triangles) for p in poses
    )
    camera = default_camera(mesh, mask_size, mask_size)
    masks = tuple(
        render_bone_mask(rig, p, camera, occ_cfg, samples_per_ray) for p in poses
    )
    return ScenarioData(scn, rig, poses, mesh, skinned, frame_meshes, masks, camera)


def perturb_pose(rig: Rig, pose: Pose, magnitude: float, seed: int = 0) -> Pose:
    """Kick every bone: an exact-`magnitude` axis-angle rotation plus a
    translation of magnitude x the bone's mean scale, both in random
    directions drawn deterministically from the seed."""
    if magnitude < 0:
        raise ValueError(f"magnitude must be >= 0, got {magnitude}")
    if magnitude == 0:
        return pose
    rng = np.random.default_rng(seed)
    locals_ = dict(pose.locals)
    for b in rig.bone_order():
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        shift = rng.normal(size=3)
        shift /= np.linalg.norm(shift)
        cur = locals_[b]
        step = magnitude * float(np.mean(rig.bones[b].scale))
        locals_[b] = RigidTransform(
            rotvec_matrix(magnitude * axis) @ cur.rotation,
            cur.translation + step * shift,
        )
    return Pose(pose.frame, locals_)
