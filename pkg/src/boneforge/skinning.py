"""Ellipsoid-distance skinning weights and linear blend warps.

Distances to bones are Mahalanobis distances under each bone's world
placement: d = ||diag(1/s) R (x - t)||, which is 0 at the bone center
and exactly 1 on the ellipsoid surface with semi-axes s. Weights are a
softmax over the rig's leaf bones of (-d + delta), and warps blend the
leaves' 4x4 frame-change matrices with those weights.

All point functions accept a single 3-vector or an (N, 3) batch. Batched
reductions always run over leaves in ``leaf_bones`` order, so results are
bit-reproducible for a given rig.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from boneforge.rig import Pose, Rig, RigidTransform, compose_world, leaf_bones, leaf_world_arrays


@dataclass(frozen=True, eq=False)
class DeltaWeights:
    """Additive log-domain weight offsets, one row per point, one column per leaf."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if not np.all(np.isfinite(t)):
            raise ValueError("delta weights must be finite")
        object.__setattr__(self, "table", t)


def mahalanobis(x, bone_world: RigidTransform, scale) -> float:
    """Ellipsoid distance of point(s) x to one bone."""
    x = np.asarray(x, dtype=np.float64)
    v = (x - bone_world.translation) @ bone_world.rotation.T
    u = v / np.asarray(scale, dtype=np.float64)
    return np.linalg.norm(u, axis=-1) if x.ndim > 1 else float(np.linalg.norm(u))


def bone_distances(points, rot, cen, sca) -> np.ndarray:
    """Distances (N, B) from N points to B bones given stacked world arrays."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    diff = pts[None, :, :] - cen[:, None, :]            # (B, N, 3)
    v = np.einsum("bij,bnj->bni", rot, diff)
    u = v / sca[:, None, :]
    return np.sqrt((u * u).sum(axis=2)).T


def leaf_distances(points, rig: Rig, pose: Pose) -> np.ndarray:
    """Distances (N, B) to the rig's leaves under a pose, in leaf order."""
    _, rot, cen, sca = leaf_world_arrays(rig, pose)
    return bone_distances(points, rot, cen, sca)


def _delta_table(delta, n_points, n_leaves):
    if delta is None:
        return None
    table = delta.table if isinstance(delta, DeltaWeights) else np.asarray(delta, dtype=np.float64)
    return np.broadcast_to(table, (n_points, n_leaves))


def weights_from_distances(dist: np.ndarray, delta=None) -> np.ndarray:
    """Rowwise softmax of (-distance + delta), shifted for overflow safety."""
    logits = -dist
    table = _delta_table(delta, *dist.shape)
    if table is not None:
        logits = logits + table
    logits = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def skinning_weights(points, rig: Rig, pose: Pose, delta=None) -> np.ndarray:
    """Per-point weights over leaf bones; rows live on the probability simplex."""
    pts = np.asarray(points, dtype=np.float64)
    w = weights_from_distances(leaf_distances(pts, rig, pose), delta)
    return w[0] if pts.ndim == 1 else w


def warp_matrices(rig: Rig, pose_src: Pose, pose_dst: Pose) -> np.ndarray:
    """Per-leaf 4x4 frame-change matrices T_dst . T_src^-1, in leaf order."""
    world_src = compose_world(rig, pose_src)
    world_dst = compose_world(rig, pose_dst)
    mats = []
    for b in leaf_bones(rig):
        mats.append((world_dst[b] @ world_src[b].inverse()).as_matrix())
    return np.stack(mats)


def blend_apply(weights: np.ndarray, mats: np.ndarray, points) -> np.ndarray:
    """Apply the weight-blended affine matrices to points.

    Equivalent to forming sum_b w_b M_b per point and multiplying; computed
    as a weighted sum of per-bone transformed points instead.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    per_bone = np.einsum("bij,nj->bni", mats[:, :3, :3], pts) + mats[:, None, :3, 3]
    return np.einsum("nb,bni->ni", weights, per_bone)


def backward_warp(x, rig: Rig, pose_t: Pose, pose_c: Pose, delta=None) -> np.ndarray:
    """Map frame-space point(s) to canonical space.

    Blends T_b^c . (T_b^t)^-1 with weights evaluated at x under pose_t.
    """
    pts = np.asarray(x, dtype=np.float64)
    w = weights_from_distances(leaf_distances(pts, rig, pose_t), delta)
    out = blend_apply(w, warp_matrices(rig, pose_t, pose_c), pts)
    return out[0] if pts.ndim == 1 else out


def forward_warp(x_c, rig: Rig, pose_c: Pose, pose_t: Pose, delta=None,
                 weights=None) -> np.ndarray:
    """Map canonical point(s) into the target pose's frame space.

    Blends T_b^t . (T_b^c)^-1. Weights are evaluated at x_c under the
    canonical pose unless precomputed rows are passed in.
    """
    pts = np.asarray(x_c, dtype=np.float64)
    if weights is None:
        w = weights_from_distances(leaf_distances(pts, rig, pose_c), delta)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1, len(leaf_bones(rig)))
    out = blend_apply(w, warp_matrices(rig, pose_c, pose_t), pts)
    return out[0] if pts.ndim == 1 else out


def cycle_error(x, rig: Rig, pose_t: Pose, pose_c: Pose, delta=None):
    """Round-trip error ||forward(backward(x)) - x||_2 per point."""
    pts = np.asarray(x, dtype=np.float64)
    back = backward_warp(pts, rig, pose_t, pose_c, delta)
    forth = forward_warp(back, rig, pose_c, pose_t, delta)
    err = np.linalg.norm(np.atleast_2d(forth) - np.atleast_2d(pts), axis=1)
    return float(err[0]) if pts.ndim == 1 else err


@dataclass(frozen=True, eq=False)
class SkinnedSurface:
    """Canonical-space mesh with cached per-vertex leaf weights."""

    vertices: np.ndarray
    triangles: np.ndarray
    cached_weights: np.ndarray
    leaf_ids: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        w = np.asarray(self.cached_weights, dtype=np.float64)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle indices out of range")
        if w.shape != (len(v), len(self.leaf_ids)):
            raise ValueError(
                f"weights shape {w.shape} does not match "
                f"{len(v)} vertices x {len(self.leaf_ids)} leaves"
            )
        if w.min() < 0 or np.abs(w.sum(axis=1) - 1.0).max() > 1e-6:
            raise ValueError("weight rows must be nonnegative and sum to 1")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "cached_weights", w)
        object.__setattr__(self, "leaf_ids", tuple(self.leaf_ids))


def skin_surface(mesh, rig: Rig, pose_c: Pose, delta=None) -> SkinnedSurface:
    """Bind a canonical mesh to the rig by caching its skinning weights."""
    w = skinning_weights(mesh.vertices, rig, pose_c, delta)
    return SkinnedSurface(mesh.vertices, mesh.triangles, w, leaf_bones(rig))


def pose_surface(surface: SkinnedSurface, rig: Rig, pose_c: Pose, pose_t: Pose) -> np.ndarray:
    """Vertices of the bound surface deformed into pose_t, using cached weights."""
    if tuple(leaf_bones(rig)) != surface.leaf_ids:
        raise ValueError(
            "surface was bound to different leaves; re-skin after rig edits"
        )
    return forward_warp(
        surface.vertices, rig, pose_c, pose_t, weights=surface.cached_weights
    )
