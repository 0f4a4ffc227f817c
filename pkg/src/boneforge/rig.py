"""Tree-structured ellipsoid bone rigs.

A rig is a forest of bones. Each bone carries a local rigid transform
(its canonical placement relative to its parent), a strictly positive
per-axis scale giving the ellipsoid semi-axes, and ordered children.
World transforms are obtained by composing local transforms from the
root down. Rigs and poses are immutable value objects: every edit
returns a new instance, so snapshots and undo stacks are free.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

import numpy as np

SCHEMA_VERSION = 1
ORTHONORMAL_TOL = 1e-6

_FRESH_ID = re.compile(r"^b(\d+)$")


class RigError(ValueError):
    """Structural problem with a rig, bone, or pose."""


class PoseCoverageError(RigError):
    """A pose does not cover exactly the rig's bone ids."""


class SchemaError(RigError):
    """Rig file could not be parsed or has an incompatible schema."""


def _ro_array(values, shape, what):
    arr = np.array(values, dtype=np.float64)
    if arr.shape != shape:
        raise RigError(f"{what}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RigError(f"{what}: non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation acting on points as x -> R x + t.

    The rotation must be orthonormal with determinant +1 (checked to
    ORTHONORMAL_TOL at construction). Composition follows matrix order:
    (a @ b).apply(x) == a.apply(b.apply(x)).
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _ro_array(self.rotation, (3, 3), "rotation")
        t = _ro_array(self.translation, (3,), "translation")
        err = np.abs(r @ r.T - np.eye(3)).max()
        det = np.linalg.det(r)
        if err > ORTHONORMAL_TOL or abs(det - 1.0) > ORTHONORMAL_TOL:
            raise RigError(
                f"rotation is not orthonormal with det +1 "
                f"(|R R^T - I|_max={err:.3g}, det={det:.6g})"
            )
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a batch (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise RigError(f"expected 4x4 matrix, got {m.shape}")
        return RigidTransform(m[:3, :3], m[:3, 3])


def transforms_close(a: RigidTransform, b: RigidTransform, tol: float = 0.0) -> bool:
    if tol == 0.0:
        return np.array_equal(a.rotation, b.rotation) and np.array_equal(
            a.translation, b.translation
        )
    return (
        np.abs(a.rotation - b.rotation).max() <= tol
        and np.abs(a.translation - b.translation).max() <= tol
    )


@dataclass(frozen=True, eq=False)
class Bone:
    """One ellipsoid bone: local placement, semi-axis scale, tree links."""

    id: str
    local: RigidTransform
    scale: np.ndarray
    parent: str | None = None
    children: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise RigError("bone id must be a non-empty string")
        s = _ro_array(self.scale, (3,), f"bone {self.id!r} scale")
        if np.any(s <= 0):
            raise RigError(f"bone {self.id!r}: scale components must be > 0, got {s}")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True, eq=False)
class Rig:
    """Immutable bone forest with derived depths and an id counter.

    ``id_seq`` only grows, so generated ids are never recycled across
    add/delete edits derived from the same rig.
    """

    bones: dict[str, Bone]
    roots: tuple[str, ...]
    depth_of: dict[str, int]
    id_seq: int = 0

    def __post_init__(self):
        if not self.bones:
            raise RigError("rig must contain at least one bone")

    def bone(self, bone_id: str) -> Bone:
        try:
            return self.bones[bone_id]
        except KeyError:
            raise RigError(f"unknown bone id {bone_id!r}") from None

    @property
    def max_depth(self) -> int:
        return max(self.depth_of.values())

    def bone_order(self) -> tuple[str, ...]:
        """Deterministic depth-first order: roots in order, then children."""
        out: list[str] = []
        stack = list(reversed(self.roots))
        while stack:
            bid = stack.pop()
            out.append(bid)
            stack.extend(reversed(self.bones[bid].children))
        return tuple(out)


@dataclass(frozen=True, eq=False)
class Pose:
    """Per-frame local transforms, one per bone id.

    ``frame`` is an integer frame index or the tag "canonical".
    """

    frame: int | str
    locals: dict[str, RigidTransform]

    def local(self, bone_id: str) -> RigidTransform:
        try:
            return self.locals[bone_id]
        except KeyError:
            raise PoseCoverageError(
                f"pose {self.frame!r} does not cover bone {bone_id!r}"
            ) from None

    def with_local(self, bone_id: str, transform: RigidTransform) -> "Pose":
        if bone_id not in self.locals:
            raise PoseCoverageError(f"pose does not cover bone {bone_id!r}")
        updated = dict(self.locals)
        updated[bone_id] = transform
        return Pose(self.frame, updated)


def build_rig(bones) -> Rig:
    """Assemble a rig from bones carrying parent links.

    Child order is the order the bones appear in ``bones``. Any
    ``children`` already set on the inputs are ignored and rebuilt.
    """
    bone_list = list(bones)
    ids = [b.id for b in bone_list]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise RigError(f"duplicate bone ids: {dupes}")
    known = set(ids)
    children: dict[str, list[str]] = {i: [] for i in ids}
    roots = []
    for b in bone_list:
        if b.parent is None:
            roots.append(b.id)
        else:
            if b.parent not in known:
                raise RigError(f"bone {b.id!r} references missing parent {b.parent!r}")
            children[b.parent].append(b.id)
    _check_acyclic(bone_list)
    if not roots:
        raise RigError("rig has no root bones")
    depth: dict[str, int] = {}
    stack = [(r, 1) for r in roots]
    while stack:
        bid, d = stack.pop()
        depth[bid] = d
        stack.extend((c, d + 1) for c in children[bid])
    if len(depth) != len(ids):
        orphaned = sorted(set(ids) - set(depth))
        raise RigError(f"bones not reachable from any root: {orphaned}")
    wired = {
        b.id: replace(b, children=tuple(children[b.id])) for b in bone_list
    }
    return Rig(wired, tuple(roots), depth, id_seq=_init_id_seq(ids))


def _check_acyclic(bone_list) -> None:
    parent = {b.id: b.parent for b in bone_list}
    for start in parent:
        seen = [start]
        cur = parent.get(start)
        while cur is not None:
            if cur in seen:
                cycle = seen[seen.index(cur):] + [cur]
                raise RigError(f"cycle in parent links: {' -> '.join(cycle)}")
            seen.append(cur)
            cur = parent.get(cur)


def _init_id_seq(ids) -> int:
    seq = 0
    for i in ids:
        m = _FRESH_ID.match(i)
        if m:
            seq = max(seq, int(m.group(1)) + 1)
    return seq


def fresh_ids(rig: Rig, k: int) -> tuple[tuple[str, ...], int]:
    """Generate k unused bone ids and the advanced id counter."""
    out = []
    seq = rig.id_seq
    while len(out) < k:
        candidate = f"b{seq}"
        seq += 1
        if candidate not in rig.bones:
            out.append(candidate)
    return tuple(out), seq


def canonical_pose(rig: Rig) -> Pose:
    return Pose("canonical", {i: b.local for i, b in rig.bones.items()})


def _check_coverage(rig: Rig, pose: Pose) -> None:
    missing = rig.bones.keys() - pose.locals.keys()
    if missing:
        raise PoseCoverageError(
            f"pose {pose.frame!r} missing bones: {sorted(missing)}"
        )
    extra = pose.locals.keys() - rig.bones.keys()
    if extra:
        raise PoseCoverageError(
            f"pose {pose.frame!r} carries unknown bones: {sorted(extra)}"
        )


def compose_world(rig: Rig, pose: Pose) -> dict[str, RigidTransform]:
    """World transform per bone: ancestors' locals composed left to right."""
    _check_coverage(rig, pose)
    world: dict[str, RigidTransform] = {}
    for bid in rig.bone_order():
        parent = rig.bones[bid].parent
        local = pose.local(bid)
        world[bid] = local if parent is None else world[parent] @ local
    return world


def leaf_bones(rig: Rig) -> tuple[str, ...]:
    """Leaf ids in deterministic depth-first order."""
    return tuple(i for i in rig.bone_order() if not rig.bones[i].children)


def leaf_world_arrays(rig: Rig, pose: Pose, world=None):
    """Stacked leaf geometry: (ids, rotations (B,3,3), centers (B,3), scales (B,3))."""
    if world is None:
        world = compose_world(rig, pose)
    ids = leaf_bones(rig)
    rot = np.stack([world[i].rotation for i in ids])
    cen = np.stack([world[i].translation for i in ids])
    sca = np.stack([rig.bones[i].scale for i in ids])
    return ids, rot, cen, sca


def add_child_bones(rig: Rig, parent_id: str, inits) -> Rig:
    """Append child bones under ``parent_id``.

    Each init is a (center, rotation, scale) triple in world canonical
    coordinates; locals are derived against the parent's canonical world
    transform, so the children keep this placement in the canonical pose.
    """
    parent = rig.bone(parent_id)
    inits = list(inits)
    if not inits:
        raise RigError("need at least one child init")
    parent_world = compose_world(rig, canonical_pose(rig))[parent_id]
    inv = parent_world.inverse()
    ids, seq = fresh_ids(rig, len(inits))
    new_bones = dict(rig.bones)
    for cid, (center, rotation, scale) in zip(ids, inits):
        world_rt = RigidTransform(rotation, center)
        new_bones[cid] = Bone(cid, inv @ world_rt, scale, parent=parent_id)
    new_bones[parent_id] = replace(parent, children=parent.children + ids)
    depth = dict(rig.depth_of)
    for cid in ids:
        depth[cid] = depth[parent_id] + 1
    return Rig(new_bones, rig.roots, depth, id_seq=seq)


def subtree_ids(rig: Rig, bone_id: str) -> tuple[str, ...]:
    rig.bone(bone_id)
    out = []
    stack = [bone_id]
    while stack:
        bid = stack.pop()
        out.append(bid)
        stack.extend(reversed(rig.bones[bid].children))
    return tuple(out)


def delete_subtree(rig: Rig, bone_id: str) -> Rig:
    """Remove a bone and all its descendants."""
    doomed = set(subtree_ids(rig, bone_id))
    if len(doomed) == len(rig.bones):
        raise RigError("deleting this subtree would leave an empty rig")
    bones = {}
    for bid, b in rig.bones.items():
        if bid in doomed:
            continue
        kept = tuple(c for c in b.children if c not in doomed)
        bones[bid] = replace(b, children=kept) if kept != b.children else b
    roots = tuple(r for r in rig.roots if r not in doomed)
    depth = {i: d for i, d in rig.depth_of.items() if i not in doomed}
    return Rig(bones, roots, depth, id_seq=rig.id_seq)


def flatten_rig(rig: Rig) -> Rig:
    """Depth-1 rig whose roots are this rig's leaves at their canonical worlds."""
    world = compose_world(rig, canonical_pose(rig))
    bones = [
        Bone(i, world[i], rig.bones[i].scale, parent=None) for i in leaf_bones(rig)
    ]
    return build_rig(bones)


def extend_pose(pose: Pose, new_locals: dict[str, RigidTransform]) -> Pose:
    clash = new_locals.keys() & pose.locals.keys()
    if clash:
        raise PoseCoverageError(f"pose already covers bones: {sorted(clash)}")
    return Pose(pose.frame, {**pose.locals, **new_locals})


def restrict_pose(pose: Pose, rig: Rig) -> Pose:
    kept = {i: t for i, t in pose.locals.items() if i in rig.bones}
    out = Pose(pose.frame, kept)
    _check_coverage(rig, out)
    return out


# ---------------------------------------------------------------------------
# Serialization. Floats go through json's repr-based encoder, which
# round-trips IEEE doubles exactly.
# ---------------------------------------------------------------------------


def _rt_to_json(rt: RigidTransform) -> dict:
    return {
        "rotation": [float(v) for v in rt.rotation.reshape(-1)],
        "translation": [float(v) for v in rt.translation],
    }


def _rt_from_json(obj, what: str) -> RigidTransform:
    try:
        rot = np.array(obj["rotation"], dtype=np.float64).reshape(3, 3)
        tra = np.array(obj["translation"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{what}: bad transform record ({e})") from None
    return RigidTransform(rot, tra)


def rig_to_dict(rig: Rig, poses=()) -> dict:
    bones = []
    for bid in rig.bone_order():
        b = rig.bones[bid]
        bones.append(
            {
                "id": b.id,
                "parent": b.parent,
                **_rt_to_json(b.local),
                "scale": [float(v) for v in b.scale],
            }
        )
    pose_records = []
    for p in poses:
        pose_records.append(
            {
                "frame": p.frame,
                "locals": {i: _rt_to_json(t) for i, t in p.locals.items()},
            }
        )
    return {"version": SCHEMA_VERSION, "bones": bones, "poses": pose_records}


def rig_from_dict(data: dict) -> tuple[Rig, list[Pose]]:
    if not isinstance(data, dict) or "version" not in data:
        raise SchemaError("not a rig document: missing 'version'")
    if data["version"] != SCHEMA_VERSION:
        raise SchemaError(
            f"schema version mismatch: file has {data['version']!r}, "
            f"this library reads {SCHEMA_VERSION}"
        )
    bones = []
    for rec in data.get("bones", []):
        what = f"bone {rec.get('id')!r}"
        try:
            bones.append(
                Bone(
                    rec["id"],
                    _rt_from_json(rec, what),
                    np.array(rec["scale"], dtype=np.float64),
                    parent=rec.get("parent"),
                )
            )
        except (KeyError, TypeError) as e:
            raise SchemaError(f"{what}: bad bone record ({e})") from None
    rig = build_rig(bones)
    poses = []
    for rec in data.get("poses", []):
        frame = rec.get("frame")
        locals_ = {
            i: _rt_from_json(t, f"pose {frame!r} bone {i!r}")
            for i, t in rec.get("locals", {}).items()
        }
        pose = Pose(frame, locals_)
        _check_coverage(rig, pose)
        poses.append(pose)
    return rig, poses


def save_rig(path, rig: Rig, poses=()) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(rig_to_dict(rig, poses), f, indent=1)
        f.write("\n")


def load_rig(path) -> tuple[Rig, list[Pose]]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: malformed JSON ({e})") from None
    return rig_from_dict(data)
