"""Gradient-based retargeting, regularized bone fitting, and depth growth.

Rotations are optimized through axis-angle increments composed onto the
current matrices each step (a minimal chart, so finite-difference checks
are straightforward). Pose retargeting minimizes the Chamfer distance of
the forward-warped surface to a target cloud; nearest-neighbor
correspondences are held fixed within a step and refreshed between steps,
and a backtracking line search only ever accepts non-worsening true
objectives. Bone fitting descends the weighted mask + overlap + coverage
objective over the current leaf bones, leaving every ancestor frozen.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from boneforge.occupancy import (
    LeafGrads,
    OccupancyConfig,
    bone_mask_loss,
    coverage_loss,
    mask_bounds,
    mask_mse,
    overlap_loss,
    render_bone_mask,
)
from boneforge.rig import (
    Bone,
    Pose,
    Rig,
    RigidTransform,
    add_child_bones,
    build_rig,
    canonical_pose,
    compose_world,
    extend_pose,
    leaf_bones,
    leaf_world_arrays,
    subtree_ids,
)
from boneforge.skinning import SkinnedSurface, forward_warp

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Optimization ran away from the objective instead of descending it."""


@dataclass(frozen=True)
class LossWeights:
    bone_mask: float = 0.1
    overlap: float = 0.001
    cover: float = 0.001
    data: float = 1.0

    def __post_init__(self):
        for name in ("bone_mask", "overlap", "cover", "data"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


@dataclass(frozen=True)
class OptimConfig:
    step_size: float = 0.1
    max_steps: int = 200
    loss_weights: LossWeights = field(default_factory=LossWeights)
    convergence_tol: float = 1e-6
    seed: int = 0
    adaptive: bool = False        # adaptive-moment updates instead of line search
    all_depths: bool = True       # retarget every bone, not just leaves
    samples_per_ray: int = 32
    scale_min: float = 1e-3
    children_per_bone: int = 2

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")


def rotvec_matrix(w) -> np.ndarray:
    """Rodrigues exponential of an axis-angle 3-vector."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    k = np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * (k @ k)
    k /= theta
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


# ---------------------------------------------------------------------------
# Chamfer objective with a fixed-correspondence gradient
# ---------------------------------------------------------------------------


def chamfer_grad(y: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Symmetric Chamfer distance and its gradient w.r.t. the points y.

    The gradient treats the current nearest-neighbor pairing as fixed
    (the standard majorization step); the value itself is the true CD.
    """
    d1, i1 = cKDTree(target).query(y, k=1)
    d2, i2 = cKDTree(y).query(target, k=1)
    cd = 0.5 * (d1.mean() + d2.mean())
    g = np.zeros_like(y)
    safe1 = d1 > 1e-12
    g[safe1] += (0.5 / len(y)) * (y[safe1] - target[i1[safe1]]) / d1[safe1, None]
    safe2 = d2 > 1e-12
    np.add.at(
        g,
        i2[safe2],
        (0.5 / len(target)) * (y[i2[safe2]] - target[safe2]) / d2[safe2, None],
    )
    return float(cd), g


def leaf_world_point_grads(rig: Rig, pose_c: Pose, pose_t: Pose,
                           verts: np.ndarray, weights: np.ndarray,
                           g_points: np.ndarray):
    """Pull point-space gradients back to each leaf's world parameters.

    Returns (grad_t, grad_phi), both (B, 3): derivatives w.r.t. each leaf's
    world translation and a left axis-angle increment on its world rotation
    under pose_t.
    """
    world_c = compose_world(rig, pose_c)
    world_t = compose_world(rig, pose_t)
    leaves = leaf_bones(rig)
    a = np.stack(
        [world_t[b].rotation @ world_c[b].rotation.T for b in leaves]
    )                                                       # (B, 3, 3)
    u = np.stack(
        [
            world_t[b].translation - a[i] @ world_c[b].translation
            for i, b in enumerate(leaves)
        ]
    )
    per_bone = np.einsum("bij,vj->bvi", a, verts) + u[:, None, :]
    t_t = np.stack([world_t[b].translation for b in leaves])
    m = per_bone - t_t[:, None, :]                          # (B, V, 3)
    grad_t = np.einsum("vb,vi->bi", weights, g_points)
    grad_phi = np.einsum("vb,bvi->bi", weights, np.cross(m, g_points[None, :, :]))
    return grad_t, grad_phi


def pose_gradients(rig: Rig, pose_t: Pose, grad_t: np.ndarray,
                   grad_phi: np.ndarray, bone_ids) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Map leaf-world gradients onto per-bone local pose parameters.

    Each bone's local update is t_local += dt (parent frame) and
    R_local <- exp([w]x) R_local (pivot at the bone's own joint). For bone
    k with parent prefix rotation R_P and world center t_k, the chain rule
    gives dt-grad = R_P^T sum(grad_t over subtree leaves) and
    w-grad = R_P^T sum((t_leaf - t_k) x grad_t + grad_phi).
    """
    world = compose_world(rig, pose_t)
    leaf_index = {b: i for i, b in enumerate(leaf_bones(rig))}
    out = {}
    for k in bone_ids:
        rows = [leaf_index[b] for b in subtree_ids(rig, k) if b in leaf_index]
        parent = rig.bones[k].parent
        rp = world[parent].rotation if parent is not None else np.eye(3)
        tk = world[k].translation
        sum_t = grad_t[rows].sum(axis=0)
        leaf_pos = np.stack(
            [world[b].translation for b in subtree_ids(rig, k) if b in leaf_index]
        )
        sum_w = (
            np.cross(leaf_pos - tk, grad_t[rows]).sum(axis=0)
            + grad_phi[rows].sum(axis=0)
        )
        out[k] = (rp.T @ sum_t, rp.T @ sum_w)
    return out


def _step_pose(pose: Pose, grads: dict, eta: float) -> Pose:
    updated = dict(pose.locals)
    for k, (g_dt, g_w) in grads.items():
        cur = updated[k]
        updated[k] = RigidTransform(
            rotvec_matrix(-eta * g_w) @ cur.rotation,
            cur.translation - eta * g_dt,
        )
    return Pose(pose.frame, updated)


@dataclass(frozen=True, eq=False)
class RetargetReport:
    steps: tuple[dict, ...]        # {"step": int, "cd": float, "loss": float}
    final_pose: Pose
    wall_time: float
    stopped: str

    @property
    def final_cd(self) -> float:
        return self.steps[-1]["cd"]


def report_lines(report: RetargetReport) -> list[str]:
    """One JSON object per step; wall time is deliberately not serialized."""
    return [
        json.dumps({"step": s["step"], "cd": s["cd"], "loss": s["loss"]})
        for s in report.steps
    ]


def write_report(path, report: RetargetReport) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in report_lines(report):
            f.write(line + "\n")


def retarget(rig: Rig, skinned: SkinnedSurface, pose_init: Pose, target,
             cfg: OptimConfig, on_step=None) -> RetargetReport:
    """Optimize pose locals so the warped surface matches a target cloud.

    Canonical vertices, cached weights, and bone scales are never touched;
    only the pose's local rotations and translations move. Divergence
    (20 consecutive steps above 10x the initial CD) raises instead of
    silently returning garbage. ``on_step(step, cd)`` fires after every
    recorded step so callers can stream progress.
    """
    tgt = np.asarray(getattr(target, "points", target), dtype=np.float64).reshape(-1, 3)
    if len(tgt) == 0:
        raise ValueError("retarget target cloud is empty")
    if tuple(skinned.leaf_ids) != leaf_bones(rig):
        raise ValueError("surface binding is stale; re-skin after rig edits")
    verts = skinned.vertices
    weights = skinned.cached_weights
    pose_c = canonical_pose(rig)
    bone_ids = rig.bone_order() if cfg.all_depths else leaf_bones(rig)
    w_data = cfg.loss_weights.data

    def warp(p: Pose) -> np.ndarray:
        return forward_warp(verts, rig, pose_c, p, weights=weights)

    def true_cd(p: Pose) -> float:
        y = warp(p)
        d1, _ = cKDTree(tgt).query(y, k=1)
        d2, _ = cKDTree(y).query(tgt, k=1)
        return float(0.5 * (d1.mean() + d2.mean()))

    start = time.perf_counter()
    pose = pose_init
    cd0, g = chamfer_grad(warp(pose), tgt)
    records = [{"step": 0, "cd": cd0, "loss": w_data * cd0}]
    if on_step is not None:
        on_step(0, cd0)
    stopped = "max_steps"
    bad_streak = 0
    eta = cfg.step_size
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}

    if cd0 < cfg.convergence_tol or w_data == 0.0:
        stopped = "converged" if cd0 < cfg.convergence_tol else "zero_weight"
        return RetargetReport(
            tuple(records), pose, time.perf_counter() - start, stopped
        )

    cd = cd0
    for step in range(1, cfg.max_steps + 1):
        grad_t, grad_phi = leaf_world_point_grads(
            rig, pose_c, pose, verts, weights, w_data * g
        )
        grads = pose_gradients(rig, pose, grad_t, grad_phi, bone_ids)

        if cfg.adaptive:
            b1, b2, eps = 0.9, 0.999, 1e-8
            stepped = {}
            for k, (g_dt, g_w) in grads.items():
                vec = np.concatenate([g_dt, g_w])
                m = adam_m.get(k, np.zeros(6))
                v = adam_v.get(k, np.zeros(6))
                m = b1 * m + (1 - b1) * vec
                v = b2 * v + (1 - b2) * vec * vec
                adam_m[k], adam_v[k] = m, v
                mh = m / (1 - b1**step)
                vh = v / (1 - b2**step)
                d = mh / (np.sqrt(vh) + eps)
                stepped[k] = (d[:3], d[3:])
            pose = _step_pose(pose, stepped, cfg.step_size)
            cd_new = true_cd(pose)
        else:
            # backtracking on the true objective; accepted steps never worsen
            accepted = False
            for _ in range(40):
                candidate = _step_pose(pose, grads, eta)
                cd_new = true_cd(candidate)
                if cd_new <= cd:
                    pose = candidate
                    accepted = True
                    eta = min(eta * 1.5, cfg.step_size * 16)
                    break
                eta *= 0.5
            if not accepted:
                stopped = "stalled"
                break

        cd_prev, cd = cd, cd_new
        _, g = chamfer_grad(warp(pose), tgt)
        records.append({"step": step, "cd": cd, "loss": w_data * cd})
        if on_step is not None:
            on_step(step, cd)

        bad_streak = bad_streak + 1 if cd > 10.0 * cd0 else 0
        if bad_streak >= 20:
            raise DivergenceError(
                f"retarget diverged: cd stayed above 10x initial "
                f"({cd:.4g} vs {cd0:.4g}) for 20 consecutive steps at step {step}"
            )
        if cd < cfg.convergence_tol:
            stopped = "converged"
            break
        if not cfg.adaptive and abs(cd_prev - cd) < 1e-15:
            stopped = "stalled"
            break

    return RetargetReport(tuple(records), pose, time.perf_counter() - start, stopped)


# ---------------------------------------------------------------------------
# Regularized bone fitting over the current leaves
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FitResult:
    rig: Rig
    pose: Pose
    trace: tuple[dict, ...]

    @property
    def final_loss(self) -> float:
        return self.trace[-1]["loss"]


def _leaf_parent_inverses(rig: Rig, pose: Pose) -> list[RigidTransform]:
    world = compose_world(rig, pose)
    inv = []
    for b in leaf_bones(rig):
        parent = rig.bones[b].parent
        inv.append(
            world[parent].inverse() if parent is not None else RigidTransform.identity()
        )
    return inv


def _rebuild_leaves(rig: Rig, pose: Pose, parent_inv, rot, cen, sca):
    """Write optimized leaf world placements back into rig locals and pose."""
    canonical = pose.frame == "canonical"
    bones = dict(rig.bones)
    locals_ = dict(pose.locals)
    for i, b in enumerate(leaf_bones(rig)):
        local = parent_inv[i] @ RigidTransform(rot[i], cen[i])
        bones[b] = replace(bones[b], scale=sca[i], local=local if canonical else bones[b].local)
        locals_[b] = local
    new_rig = Rig(bones, rig.roots, rig.depth_of, rig.id_seq)
    new_pose = canonical_pose(new_rig) if canonical else Pose(pose.frame, locals_)
    return new_rig, new_pose


def fit_bones(rig: Rig, pose: Pose, points, views, cfg: OptimConfig,
              occ_cfg: OccupancyConfig = OccupancyConfig()) -> FitResult:
    """Descend mask + overlap + coverage over leaf centers, rotations, scales.

    Ancestor bones are frozen: only the current leaf layer moves. Mask
    sampling bounds are fixed up front (padded 25% around the initial rig)
    so the sample grid cannot chase the parameters.
    """
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("fit needs a nonempty surface point set")
    w = cfg.loss_weights
    views = list(views)
    if w.bone_mask > 0 and not views:
        raise ValueError("fit needs at least one mask view")
    for v in views:
        if v.camera is None:
            raise ValueError("every target mask must carry its camera")

    ids, rot, cen, sca = leaf_world_arrays(rig, pose)
    parent_inv = _leaf_parent_inverses(rig, pose)
    lo, hi = mask_bounds(rig, pose, occ_cfg)
    pad = 0.25 * (hi - lo)
    bounds = (lo - pad, hi + pad)

    def losses(r: Rig, p: Pose, want_grads: bool):
        total = 0.0
        parts = {"bone": 0.0, "overlap": 0.0, "cover": 0.0}
        grads = LeafGrads.zeros(leaf_bones(r)) if want_grads else None
        if w.bone_mask > 0 and views:
            share = w.bone_mask / len(views)
            for v in views:
                if want_grads:
                    l_m, g_m, _ = bone_mask_loss(
                        r, p, v.camera, v, occ_cfg, cfg.samples_per_ray, bounds
                    )
                    grads = grads + g_m.scaled(share)
                else:
                    img = render_bone_mask(
                        r, p, v.camera, occ_cfg, cfg.samples_per_ray, bounds
                    )
                    l_m = mask_mse(img, v)
                parts["bone"] += l_m / len(views)
                total += share * l_m
        if w.overlap > 0:
            l_o, g_o = overlap_loss(pts, r, p, occ_cfg)
            parts["overlap"] = l_o
            total += w.overlap * l_o
            if want_grads:
                grads = grads + g_o.scaled(w.overlap)
        if w.cover > 0:
            l_c, g_c = coverage_loss(pts, r, p, occ_cfg)
            parts["cover"] = l_c
            total += w.cover * l_c
            if want_grads:
                grads = grads + g_c.scaled(w.cover)
        return total, parts, grads

    cur_rig, cur_pose = rig, pose
    loss, parts, grads = losses(cur_rig, cur_pose, want_grads=True)
    trace = [{"step": 0, "loss": loss, **parts}]
    eta = cfg.step_size

    for step in range(1, cfg.max_steps + 1):
        if grads is None:
            break
        flat = np.concatenate(
            [grads.center.ravel(), grads.rot.ravel(), grads.scale.ravel()]
        )
        if not np.any(flat):
            break
        accepted = False
        for _ in range(40):
            cen_new = cen - eta * grads.center
            sca_new = np.maximum(sca - eta * grads.scale, cfg.scale_min)
            rot_new = np.stack(
                [rotvec_matrix(-eta * grads.rot[i]) @ rot[i] for i in range(len(ids))]
            )
            cand_rig, cand_pose = _rebuild_leaves(
                cur_rig, cur_pose, parent_inv, rot_new, cen_new, sca_new
            )
            cand_loss, cand_parts, _ = losses(cand_rig, cand_pose, want_grads=False)
            if cand_loss <= loss:
                cen, sca, rot = cen_new, sca_new, rot_new
                cur_rig, cur_pose = cand_rig, cand_pose
                improved = loss - cand_loss
                loss, parts = cand_loss, cand_parts
                accepted = True
                eta = min(eta * 1.5, cfg.step_size * 16)
                break
            eta *= 0.5
        if not accepted:
            break
        trace.append({"step": step, "loss": loss, **parts})
        if improved < cfg.convergence_tol and step > 1:
            break
        _, _, grads = losses(cur_rig, cur_pose, want_grads=True)

    return FitResult(cur_rig, cur_pose, tuple(trace))


# ---------------------------------------------------------------------------
# Clustering and depth growth
# ---------------------------------------------------------------------------


def lloyd(points, k: int, seed: int = 0, max_iters: int = 100):
    """Plain k-means: seeded distinct-point init, mean updates.

    Ties in assignment go to the lowest center index; a cluster that
    empties keeps its previous center. Deterministic for a fixed seed.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n} clusters, got {k}")
    rng = np.random.default_rng(seed)
    centers = pts[rng.choice(n, size=k, replace=False)].copy()
    labels = np.full(n, -1)
    for _ in range(max_iters):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = pts[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers, labels


def vertex_ownership(skinned: SkinnedSurface) -> np.ndarray:
    """Index of the leaf with the largest cached weight, per vertex."""
    return skinned.cached_weights.argmax(axis=1)


def child_inits_for(skinned: SkinnedSurface, leaf_index: int, k: int, seed: int,
                    parent_scale: np.ndarray, child_scale=None):
    """Cluster a leaf's owned vertices into k child seeds.

    A leaf whose argmax ownership came up short (bigger neighbors can
    claim every vertex) falls back to its highest-weight vertices so the
    subdivision stays k-regular; only a surface with fewer than k
    vertices in total gives None.
    """
    own = vertex_ownership(skinned) == leaf_index
    if own.sum() < k:
        if len(skinned.vertices) < k:
            return None
        ranked = np.argsort(-skinned.cached_weights[:, leaf_index], kind="stable")
        own = own.copy()
        own[ranked[~own[ranked]][: k - own.sum()]] = True
    owned = skinned.vertices[own]
    centers, _ = lloyd(owned, k, seed=seed)
    scale = np.asarray(
        child_scale if child_scale is not None else 0.5 * parent_scale,
        dtype=np.float64,
    )
    return [(c, np.eye(3), scale.copy()) for c in centers]


def grow_depth(rig: Rig, poses, skinned: SkinnedSurface, k_children: int,
               seed: int = 0, child_scale=None):
    """Give every current leaf k children seeded from its owned vertices.

    Leaves short on owned vertices borrow their highest-weight ones; only
    when the surface itself has fewer than k_children vertices is a leaf
    skipped (logged) and left childless. Existing bones are untouched,
    so every previous world transform survives growth bit for bit.
    """
    if k_children < 1:
        raise ValueError("k_children must be >= 1")
    if tuple(skinned.leaf_ids) != leaf_bones(rig):
        raise ValueError("surface binding is stale; re-skin before growing")
    new_rig = rig
    added: list[str] = []
    for i, leaf in enumerate(leaf_bones(rig)):
        inits = child_inits_for(
            skinned, i, k_children, seed + i, rig.bones[leaf].scale, child_scale
        )
        if inits is None:
            log.warning(
                "leaf %r owns fewer than %d vertices; no children added",
                leaf, k_children,
            )
            continue
        before = set(new_rig.bones)
        new_rig = add_child_bones(new_rig, leaf, inits)
        added.extend(sorted(set(new_rig.bones) - before))
    new_poses = [
        extend_pose(p, {c: new_rig.bones[c].local for c in added}) for p in poses
    ]
    return new_rig, new_poses


@dataclass(frozen=True, eq=False)
class FitData:
    """Everything a coarse-to-fine run consumes."""

    points: np.ndarray
    views: tuple
    mesh: object = None  # TriMesh used for re-skinning between depths


@dataclass(frozen=True, eq=False)
class CoarseToFineResult:
    rig: Rig
    depth_fits: tuple[FitResult, ...]


def coarse_to_fine(rig: Rig, data: FitData, depths: int, cfg: OptimConfig,
                   occ_cfg: OccupancyConfig = OccupancyConfig()) -> CoarseToFineResult:
    """Fit the current leaf layer, grow children, repeat.

    Each depth gets a full fit_bones budget; parents stay frozen once
    their layer is done because fitting only ever moves leaves.
    """
    from boneforge.skinning import skin_surface

    if depths < 1:
        raise ValueError("depths must be >= 1")
    fits = []
    for depth in range(1, depths + 1):
        fit = fit_bones(rig, canonical_pose(rig), data.points, data.views, cfg, occ_cfg)
        rig = fit.rig
        fits.append(fit)
        if depth < depths:
            if data.mesh is None:
                raise ValueError("growing depth requires the canonical mesh")
            skinned = skin_surface(data.mesh, rig, canonical_pose(rig))
            rig, _ = grow_depth(
                rig, [], skinned, cfg.children_per_bone, seed=cfg.seed + depth
            )
    return CoarseToFineResult(rig, tuple(fits))


def init_root_rig(points, n_roots: int, seed: int = 0, scale=0.5) -> Rig:
    """Seed a depth-1 rig by clustering surface points."""
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64).reshape(-1, 3)
    centers, _ = lloyd(pts, n_roots, seed=seed)
    s = np.broadcast_to(np.asarray(scale, dtype=np.float64), (3,)).copy()
    bones = [
        Bone(f"b{i}", RigidTransform(np.eye(3), centers[i]), s)
        for i in range(n_roots)
    ]
    return build_rig(bones)
