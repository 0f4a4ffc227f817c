"""Bone occupancy, soft mask rendering, and the fitting regularizers.

A bone's occupancy g_b(x) = d_M(x, b) - gamma is negative inside the
inflated ellipsoid and positive outside; the rig-level field G is the
minimum over leaf bones. Densities are sigmoid(-g / tau), masks integrate
that density along pixel rays, and the three losses (mask match, overlap,
coverage) come with analytic gradients.

Gradient convention, shared by every loss here: derivatives are taken per
leaf bone with respect to its world center t, a left-multiplied axis-angle
increment w on its world rotation (R <- exp([w]x) R), and its scale s.
The optimizer maps these world-frame gradients onto whatever parameters it
actually steps. Reductions run in leaf order, so results are reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.special import expit

from boneforge.rig import Pose, Rig, RigidTransform, leaf_world_arrays
from boneforge.skinning import bone_distances

_RAY_CHUNK = 2048


class MaskFormatError(ValueError):
    """Mask sidecar file is malformed or inconsistent with its header."""


@dataclass(frozen=True)
class OccupancyConfig:
    """Occupancy and regularizer knobs.

    gamma: iso-level of the occupancy in Mahalanobis units (1.0 puts the
        zero set exactly on the ellipsoid surface).
    tau: sigmoid temperature, also in Mahalanobis units.
    lambda_max: soft cap on how many bones may overlap a surface point.
    n_cover: how many nearest surface points each bone must cover.
    density_scale: opacity per unit ray length inside a bone.
    smooth_min: blend the per-bone occupancies with a log-sum-exp min
        instead of the exact min (smoother gradients, biased low).
    """

    gamma: float = 1.0
    tau: float = 0.1
    lambda_max: float = 2.0
    n_cover: int = 64
    density_scale: float = 20.0
    smooth_min: bool = False
    smooth_min_temp: float = 0.05

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.n_cover < 1:
            raise ValueError(f"n_cover must be >= 1, got {self.n_cover}")
        if self.density_scale <= 0:
            raise ValueError(f"density_scale must be > 0, got {self.density_scale}")
        if self.lambda_max < 0:
            raise ValueError(f"lambda_max must be >= 0, got {self.lambda_max}")
        if self.smooth_min and self.smooth_min_temp <= 0:
            raise ValueError("smooth_min_temp must be > 0")


@dataclass(frozen=True, eq=False)
class LeafGrads:
    """World-frame loss gradients per leaf bone."""

    ids: tuple[str, ...]
    center: np.ndarray
    rot: np.ndarray
    scale: np.ndarray

    @staticmethod
    def zeros(ids) -> "LeafGrads":
        b = len(ids)
        return LeafGrads(tuple(ids), np.zeros((b, 3)), np.zeros((b, 3)), np.zeros((b, 3)))

    def __add__(self, other: "LeafGrads") -> "LeafGrads":
        if self.ids != other.ids:
            raise ValueError("gradients belong to different leaf sets")
        return LeafGrads(
            self.ids,
            self.center + other.center,
            self.rot + other.rot,
            self.scale + other.scale,
        )

    def scaled(self, factor: float) -> "LeafGrads":
        return LeafGrads(
            self.ids, factor * self.center, factor * self.rot, factor * self.scale
        )


def bone_occ(x, bone_world: RigidTransform, scale, cfg: OccupancyConfig):
    """Signed occupancy of one bone: d_M - gamma."""
    from boneforge.skinning import mahalanobis

    return mahalanobis(x, bone_world, scale) - cfg.gamma


def leaf_occ(points, rig: Rig, pose: Pose, cfg: OccupancyConfig) -> np.ndarray:
    """Per-leaf occupancies, shape (N, B) in leaf order."""
    _, rot, cen, sca = leaf_world_arrays(rig, pose)
    return bone_distances(points, rot, cen, sca) - cfg.gamma


def _reduce_min(g: np.ndarray, cfg: OccupancyConfig) -> np.ndarray:
    # g has bones on the last axis
    if not cfg.smooth_min:
        return g.min(axis=-1)
    t = cfg.smooth_min_temp
    shifted = -g / t
    m = shifted.max(axis=-1, keepdims=True)
    return -t * (np.log(np.exp(shifted - m).sum(axis=-1)) + m[..., 0])


def unified_occ(points, rig: Rig, pose: Pose, cfg: OccupancyConfig):
    """Rig-level occupancy: minimum of the leaf occupancies."""
    pts = np.asarray(points, dtype=np.float64)
    g = _reduce_min(leaf_occ(pts, rig, pose, cfg), cfg)
    return float(g[0]) if pts.ndim == 1 else g


def occ_density(g, cfg: OccupancyConfig):
    """Occupancy to density in (0, 1): sigmoid(-g / tau), overflow-safe."""
    return expit(-np.asarray(g, dtype=np.float64) / cfg.tau)


# ---------------------------------------------------------------------------
# Distance gradients. For v = R (x - t), u = v / s, r = u / s, d = |u|:
#   dd/dt = -R^T r / d
#   dd/dw = (v x r) / d      (left increment: R <- exp([w]x) R)
#   dd/ds_i = -u_i^2 / (s_i d)
# ---------------------------------------------------------------------------


def _dist_grads(pts, rot, cen, sca):
    """Distances (B, N) and their parameter gradients (B, N, 3) per bone."""
    diff = pts[None, :, :] - cen[:, None, :]
    v = np.einsum("bij,bnj->bni", rot, diff)
    u = v / sca[:, None, :]
    r = u / sca[:, None, :]
    d = np.sqrt((u * u).sum(axis=2))
    dd = np.maximum(d, 1e-12)[:, :, None]
    grad_t = -np.einsum("bji,bnj->bni", rot, r) / dd
    grad_w = np.cross(v, r) / dd
    grad_s = -(u * u) / (sca[:, None, :] * dd)
    return d, grad_t, grad_w, grad_s


# ---------------------------------------------------------------------------
# Camera and mask rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PinholeCamera:
    """Pinhole intrinsics plus a camera-to-world rigid transform.

    Camera space: x right, y down, z forward (the viewing direction).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidTransform

    def __post_init__(self):
        if self.fx == 0 or self.fy == 0:
            raise ValueError("camera focal length must be nonzero")
        if self.width < 1 or self.height < 1:
            raise ValueError("camera needs a positive pixel count")


def look_at(eye, target, width: int, height: int, fov_y_deg: float = 45.0,
            up=(0.0, 0.0, 1.0)) -> PinholeCamera:
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera eye and target coincide")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-12:
        raise ValueError("camera up vector is parallel to the view direction")
    right = right / rnorm
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    f = 0.5 * height / np.tan(0.5 * np.deg2rad(fov_y_deg))
    return PinholeCamera(
        fx=f, fy=f, cx=0.5 * width, cy=0.5 * height,
        width=width, height=height, pose=RigidTransform(rot, eye),
    )


def camera_to_dict(camera: PinholeCamera) -> dict:
    """JSON-ready camera description; exact float round-trip."""
    return {
        "fx": float(camera.fx),
        "fy": float(camera.fy),
        "cx": float(camera.cx),
        "cy": float(camera.cy),
        "width": int(camera.width),
        "height": int(camera.height),
        "rotation": camera.pose.rotation.tolist(),
        "translation": camera.pose.translation.tolist(),
    }


def camera_from_dict(data: dict) -> PinholeCamera:
    return PinholeCamera(
        fx=float(data["fx"]), fy=float(data["fy"]),
        cx=float(data["cx"]), cy=float(data["cy"]),
        width=int(data["width"]), height=int(data["height"]),
        pose=RigidTransform(
            np.asarray(data["rotation"], dtype=np.float64),
            np.asarray(data["translation"], dtype=np.float64),
        ),
    )


def pixel_rays(camera: PinholeCamera) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray origin and unit directions, one per pixel, row-major."""
    jj, ii = np.meshgrid(
        np.arange(camera.width), np.arange(camera.height)
    )
    x = (jj.ravel() + 0.5 - camera.cx) / camera.fx
    y = (ii.ravel() + 0.5 - camera.cy) / camera.fy
    dirs = np.stack([x, y, np.ones_like(x)], axis=1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    world_dirs = dirs @ camera.pose.rotation.T
    return camera.pose.translation, world_dirs


@dataclass(frozen=True, eq=False)
class MaskImage:
    """Grayscale soft mask; values clamped to [0, 1]."""

    values: np.ndarray
    camera: PinholeCamera | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"mask values must be 2D, got shape {v.shape}")
        object.__setattr__(self, "values", np.clip(v, 0.0, 1.0))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def mask_bounds(rig: Rig, pose: Pose, cfg: OccupancyConfig) -> tuple[np.ndarray, np.ndarray]:
    """AABB that contains every leaf out to a negligible-density margin.

    Density at the box wall is at most sigmoid(-20) ~ 2e-9, so truncating
    the ray integral there is harmless. Fit loops must compute this once
    and pass it to the renderer explicitly: sample positions then stay
    fixed while bone parameters move, which keeps analytic gradients and
    finite differences consistent.
    """
    _, _, cen, sca = leaf_world_arrays(rig, pose)
    reach = sca.max(axis=1) * (cfg.gamma + 20.0 * cfg.tau)
    return (cen - reach[:, None]).min(axis=0), (cen + reach[:, None]).max(axis=0)


def _ray_box(origin, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - origin) / dirs
        t1 = (hi - origin) / dirs
    near = np.nanmax(np.minimum(t0, t1), axis=1)
    far = np.nanmin(np.maximum(t0, t1), axis=1)
    near = np.maximum(near, 0.0)
    hit = far > near
    return near, far, hit


def _mask_forward(rot, cen, sca, camera, cfg, samples, bounds, target=None,
                  leaf_ids=None):
    """Render; with a target, also return the MSE and its bone gradients."""
    origin, dirs = pixel_rays(camera)
    lo, hi = bounds
    near, far, hit = _ray_box(origin, dirs, lo, hi)
    n_pix = camera.width * camera.height
    values = np.zeros(n_pix)

    want_grad = target is not None
    if want_grad:
        tgt = target.values if isinstance(target, MaskImage) else np.asarray(target)
        if tgt.shape != (camera.height, camera.width):
            raise ValueError(
                f"mask shapes differ: target {tgt.shape}, "
                f"render {(camera.height, camera.width)}"
            )
        tgt = tgt.ravel()
        acc_t = np.zeros_like(cen)
        acc_w = np.zeros_like(cen)
        acc_s = np.zeros_like(sca)

    hit_idx = np.flatnonzero(hit)
    for start in range(0, len(hit_idx), _RAY_CHUNK):
        idx = hit_idx[start:start + _RAY_CHUNK]
        m = len(idx)
        t_near, t_far = near[idx], far[idx]
        delta = (t_far - t_near) / samples
        # midpoint samples across the fixed bounding interval
        steps = t_near[:, None] + (np.arange(samples) + 0.5) * delta[:, None]
        pts = origin + steps[:, :, None] * dirs[idx][:, None, :]
        flat = pts.reshape(-1, 3)

        if want_grad:
            d, grad_t, grad_w, grad_s = _dist_grads(flat, rot, cen, sca)
        else:
            d = bone_distances(flat, rot, cen, sca).T
        g = d - cfg.gamma                                    # (B, m*samples)
        if cfg.smooth_min:
            t_sm = cfg.smooth_min_temp
            shifted = -g / t_sm
            mx = shifted.max(axis=0, keepdims=True)
            ex = np.exp(shifted - mx)
            z = ex.sum(axis=0)
            g_min = -t_sm * (np.log(z) + mx[0])
            min_w = ex / z                                   # (B, m*samples)
        else:
            b_star = np.argmin(g, axis=0)                    # first leaf wins ties
            g_min = g[b_star, np.arange(g.shape[1])]

        sig = expit(-g_min / cfg.tau)
        rho = cfg.density_scale * sig
        acc = rho.reshape(m, samples).sum(axis=1) * delta
        vals = 1.0 - np.exp(-acc)
        values[idx] = vals

        if not want_grad:
            continue
        # dL/d(acc) for mean squared error over all pixels
        dl_dacc = (2.0 / n_pix) * (vals - tgt[idx]) * np.exp(-acc)
        # d(acc)/d(g_min) at each sample
        dsig = -sig * (1.0 - sig) / cfg.tau
        coef = (
            np.repeat(dl_dacc * delta, samples) * cfg.density_scale * dsig
        )                                                    # (m*samples,)
        if cfg.smooth_min:
            wcoef = coef[None, :] * min_w                    # (B, m*samples)
            acc_t += (wcoef[:, :, None] * grad_t).sum(axis=1)
            acc_w += (wcoef[:, :, None] * grad_w).sum(axis=1)
            acc_s += (wcoef[:, :, None] * grad_s).sum(axis=1)
        else:
            for b in range(len(cen)):
                sel = np.flatnonzero(b_star == b)
                if len(sel) == 0:
                    continue
                cb = coef[sel][:, None]
                acc_t[b] += (cb * grad_t[b, sel]).sum(axis=0)
                acc_w[b] += (cb * grad_w[b, sel]).sum(axis=0)
                acc_s[b] += (cb * grad_s[b, sel]).sum(axis=0)

    image = values.reshape(camera.height, camera.width)
    if not want_grad:
        return image
    loss = float(((image.ravel() - tgt) ** 2).mean())
    grads = LeafGrads(tuple(leaf_ids), acc_t, acc_w, acc_s)
    return image, loss, grads


def render_bone_mask(rig: Rig, pose: Pose, camera: PinholeCamera,
                     cfg: OccupancyConfig, samples_per_ray: int = 64,
                     bounds=None) -> MaskImage:
    """Soft silhouette of the rig: per pixel, 1 - exp(-sum rho delta)."""
    if samples_per_ray < 2:
        raise ValueError(f"need samples_per_ray >= 2, got {samples_per_ray}")
    ids, rot, cen, sca = leaf_world_arrays(rig, pose)
    if bounds is None:
        bounds = mask_bounds(rig, pose, cfg)
    image = _mask_forward(rot, cen, sca, camera, cfg, samples_per_ray, bounds)
    return MaskImage(image, camera)


def mask_mse(a, b) -> float:
    """Mean squared pixel difference; shapes must match exactly."""
    va = a.values if isinstance(a, MaskImage) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, MaskImage) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"mask shapes differ: {va.shape} vs {vb.shape}")
    return float(((va - vb) ** 2).mean())


def bone_mask_loss(rig: Rig, pose: Pose, camera: PinholeCamera, target,
                   cfg: OccupancyConfig, samples_per_ray: int = 64,
                   bounds=None) -> tuple[float, LeafGrads, MaskImage]:
    """Mask MSE against a target plus gradients w.r.t. leaf bone parameters."""
    if samples_per_ray < 2:
        raise ValueError(f"need samples_per_ray >= 2, got {samples_per_ray}")
    ids, rot, cen, sca = leaf_world_arrays(rig, pose)
    if bounds is None:
        bounds = mask_bounds(rig, pose, cfg)
    image, loss, grads = _mask_forward(
        rot, cen, sca, camera, cfg, samples_per_ray, bounds,
        target=target, leaf_ids=ids,
    )
    return loss, grads, MaskImage(image, camera)


# ---------------------------------------------------------------------------
# Point-set regularizers
# ---------------------------------------------------------------------------


def overlap_loss(points, rig: Rig, pose: Pose,
                 cfg: OccupancyConfig) -> tuple[float, LeafGrads]:
    """Penalty when soft bone memberships stack above lambda_max.

    (1/|V|) sum_x max(0, sum_b sigmoid(-g_b(x)/tau) - lambda).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("overlap loss needs at least one surface point")
    ids, rot, cen, sca = leaf_world_arrays(rig, pose)
    d, grad_t, grad_w, grad_s = _dist_grads(pts, rot, cen, sca)
    g = d - cfg.gamma
    sig = expit(-g / cfg.tau)
    h = sig.sum(axis=0) - cfg.lambda_max                     # (N,)
    loss = float(np.maximum(h, 0.0).mean())
    coef = np.where(h > 0.0, 1.0, 0.0) * (-sig * (1.0 - sig) / cfg.tau) / len(pts)
    return loss, LeafGrads(
        tuple(ids),
        (coef[:, :, None] * grad_t).sum(axis=1),
        (coef[:, :, None] * grad_w).sum(axis=1),
        (coef[:, :, None] * grad_s).sum(axis=1),
    )


def coverage_neighborhoods(points, rig: Rig, pose: Pose,
                           cfg: OccupancyConfig) -> np.ndarray:
    """Indices (B, n_cover) of each leaf's nearest points by Mahalanobis distance."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < cfg.n_cover:
        raise ValueError(
            f"coverage needs at least n_cover={cfg.n_cover} points, got {len(pts)}"
        )
    _, rot, cen, sca = leaf_world_arrays(rig, pose)
    d = bone_distances(pts, rot, cen, sca).T                 # (B, N)
    part = np.argpartition(d, cfg.n_cover - 1, axis=1)[:, :cfg.n_cover]
    return part


def coverage_loss(points, rig: Rig, pose: Pose,
                  cfg: OccupancyConfig) -> tuple[float, LeafGrads]:
    """Hinge on each leaf's n_cover nearest surface points sticking outside.

    sum_b sum_{x in N_b} max(0, g_b(x)), with N_b recomputed on every call,
    so the neighborhoods track the bones as they move.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < cfg.n_cover:
        raise ValueError(
            f"coverage needs at least n_cover={cfg.n_cover} points, got {len(pts)}"
        )
    ids, rot, cen, sca = leaf_world_arrays(rig, pose)
    d, grad_t, grad_w, grad_s = _dist_grads(pts, rot, cen, sca)
    g = d - cfg.gamma
    sel = np.argpartition(d, cfg.n_cover - 1, axis=1)[:, :cfg.n_cover]
    sel_g = np.take_along_axis(g, sel, axis=1)
    loss = float(np.maximum(sel_g, 0.0).sum())
    coef = (sel_g > 0.0).astype(np.float64)                  # (B, n)
    out_t = np.zeros_like(cen)
    out_w = np.zeros_like(cen)
    out_s = np.zeros_like(sca)
    for b in range(len(cen)):
        cb = coef[b][:, None]
        out_t[b] = (cb * grad_t[b, sel[b]]).sum(axis=0)
        out_w[b] = (cb * grad_w[b, sel[b]]).sum(axis=0)
        out_s[b] = (cb * grad_s[b, sel[b]]).sum(axis=0)
    return loss, LeafGrads(tuple(ids), out_t, out_w, out_s)


# ---------------------------------------------------------------------------
# Mask I/O: 8-bit PNG plus a lossless float sidecar
# ---------------------------------------------------------------------------

_MASK_MAGIC = b"BFMK"


def save_mask_png(path, mask: MaskImage) -> None:
    quantized = np.rint(mask.values * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(path, format="PNG")


def load_mask_png(path) -> MaskImage:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return MaskImage(arr / 255.0)


def save_mask_floats(path, mask: MaskImage) -> None:
    header = struct.pack("<4sIII", _MASK_MAGIC, mask.width, mask.height, 0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(mask.values.astype("<f4").tobytes())


def load_mask_floats(path) -> MaskImage:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != _MASK_MAGIC:
        raise MaskFormatError(f"{path}: missing mask magic")
    _, width, height, _ = struct.unpack("<4sIII", blob[:16])
    expected = 16 + 4 * width * height
    if len(blob) != expected:
        raise MaskFormatError(
            f"{path}: payload is {len(blob)} bytes, header implies {expected}"
        )
    values = np.frombuffer(blob, dtype="<f4", offset=16).astype(np.float64)
    return MaskImage(values.reshape(height, width))


def sidecar_path(png_path) -> str:
    p = str(png_path)
    return (p[:-4] if p.lower().endswith(".png") else p) + ".bfmk"


def save_mask(path, mask: MaskImage) -> None:
    """PNG for eyeballs, float sidecar for exact round trips."""
    save_mask_png(path, mask)
    save_mask_floats(sidecar_path(path), mask)


def load_mask(path) -> MaskImage:
    p = str(path)
    if p.endswith(".bfmk"):
        return load_mask_floats(p)
    import os

    side = sidecar_path(p)
    if os.path.exists(side):
        return load_mask_floats(side)
    return load_mask_png(p)
