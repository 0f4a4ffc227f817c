"""Meshes, point clouds, surface sampling, and evaluation metrics.

File I/O covers OBJ and PLY (ascii and binary little-endian). Saved
floats survive a round trip exactly: OBJ goes through repr, PLY stores
doubles. Metrics are the usual reconstruction trio: symmetric Chamfer
distance, F-score at a bounding-box-relative threshold, and ICP with a
closed-form similarity step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


class MeshFormatError(ValueError):
    """Unparseable mesh file; message carries file/line context."""


class DegenerateGeometryError(ValueError):
    """Input geometry too thin for the requested operation."""


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite vertex coordinates")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError(
                f"triangle indices out of range [0, {len(v)}): "
                f"min {t.min()}, max {t.max()}"
            )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.colors is not None:
            c = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(c) != len(v):
                raise ValueError("per-vertex colors must match vertex count")
            object.__setattr__(self, "colors", c)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", p)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(p):
                raise ValueError("normals must match point count")
            object.__setattr__(self, "normals", n)

    def __len__(self):
        return len(self.points)


def aabb(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise DegenerateGeometryError("empty point set has no bounding box")
    return pts.min(axis=0), pts.max(axis=0)


def longest_aabb_edge(points: np.ndarray) -> float:
    lo, hi = aabb(points)
    return float((hi - lo).max())


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _load_obj(path) -> TriMesh:
    vertices: list[list[float]] = []
    colors: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) not in (3, 6):
                    raise MeshFormatError(
                        f"{path}:{lineno}: vertex needs 3 or 6 floats, got {len(rest)}"
                    )
                try:
                    vals = [float(x) for x in rest]
                except ValueError:
                    raise MeshFormatError(
                        f"{path}:{lineno}: bad vertex number in {line!r}"
                    ) from None
                vertices.append(vals[:3])
                if len(vals) == 6:
                    colors.append(vals[3:])
            elif tag == "f":
                if len(rest) < 3:
                    raise MeshFormatError(
                        f"{path}:{lineno}: face needs at least 3 vertices"
                    )
                idx = []
                for part in rest:
                    head = part.split("/", 1)[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshFormatError(
                            f"{path}:{lineno}: bad face index {part!r}"
                        ) from None
                    # OBJ is 1-based; negative counts back from the end.
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                for a, b in zip(idx[1:], idx[2:]):
                    faces.append([idx[0], a, b])
            # vn/vt/o/g/s/usemtl/mtllib carry no geometry we keep
    if colors and len(colors) != len(vertices):
        raise MeshFormatError(f"{path}: only some vertices carry colors")
    try:
        return TriMesh(
            np.array(vertices, dtype=np.float64).reshape(-1, 3),
            np.array(faces, dtype=np.int64).reshape(-1, 3),
            np.array(colors, dtype=np.float64) if colors else None,
        )
    except ValueError as e:
        raise MeshFormatError(f"{path}: {e}") from None


def _save_obj(path, mesh: TriMesh) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, v in enumerate(mesh.vertices):
            nums = [_fmt(x) for x in v]
            if mesh.colors is not None:
                nums += [_fmt(x) for x in mesh.colors[i]]
            f.write("v " + " ".join(nums) + "\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _load_ply(path) -> TriMesh:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise MeshFormatError(f"{path}: not a PLY file (missing header)")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    body = blob[end + len(b"end_header\n"):]

    fmt = None
    elements: list[tuple[str, int, list]] = []
    for lineno, line in enumerate(header, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise MeshFormatError(
                    f"{path}:{lineno}: unsupported PLY format {parts[1]!r}"
                )
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(f"{path}:{lineno}: property before element")
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                elements[-1][2].append(("scalar", parts[1], parts[2]))
        else:
            raise MeshFormatError(f"{path}:{lineno}: unknown header line {line!r}")
    if fmt is None:
        raise MeshFormatError(f"{path}: PLY header missing format line")

    vertices = colors = triangles = None
    offset = 0
    ascii_rows = body.decode("ascii").split("\n") if fmt == "ascii" else None
    row_cursor = 0
    for name, count, props in elements:
        if fmt == "ascii":
            rows, row_cursor = _ply_ascii_rows(path, ascii_rows, row_cursor, count, props)
        else:
            rows, offset = _ply_binary_rows(path, body, offset, count, props)
        if name == "vertex":
            vertices, colors = _ply_extract_vertices(path, props, rows)
        elif name == "face":
            triangles = _ply_extract_faces(path, props, rows)
    if vertices is None:
        raise MeshFormatError(f"{path}: PLY file has no vertex element")
    try:
        return TriMesh(
            vertices,
            triangles if triangles is not None else np.zeros((0, 3), dtype=np.int64),
            colors,
        )
    except ValueError as e:
        raise MeshFormatError(f"{path}: {e}") from None


def _ply_ascii_rows(path, lines, cursor, count, props):
    rows = []
    for _ in range(count):
        while cursor < len(lines) and not lines[cursor].strip():
            cursor += 1
        if cursor >= len(lines):
            raise MeshFormatError(f"{path}: truncated PLY body (ascii)")
        fields = lines[cursor].split()
        cursor += 1
        row: dict = {}
        pos = 0
        for p in props:
            if p[0] == "list":
                n = int(fields[pos]); pos += 1
                row[p[3]] = [float(x) for x in fields[pos:pos + n]]
                if len(row[p[3]]) != n:
                    raise MeshFormatError(f"{path}: truncated list property")
                pos += n
            else:
                row[p[2]] = float(fields[pos]); pos += 1
        rows.append(row)
    return rows, cursor


def _ply_binary_rows(path, body, offset, count, props):
    rows = []
    for _ in range(count):
        row: dict = {}
        for p in props:
            if p[0] == "list":
                cnt_dt = np.dtype("<" + _PLY_SCALARS[p[1]])
                val_dt = np.dtype("<" + _PLY_SCALARS[p[2]])
                if offset + cnt_dt.itemsize > len(body):
                    raise MeshFormatError(f"{path}: truncated PLY body")
                n = int(np.frombuffer(body, cnt_dt, 1, offset)[0])
                offset += cnt_dt.itemsize
                nbytes = n * val_dt.itemsize
                if offset + nbytes > len(body):
                    raise MeshFormatError(f"{path}: truncated PLY body")
                row[p[3]] = np.frombuffer(body, val_dt, n, offset).tolist()
                offset += nbytes
            else:
                dt = np.dtype("<" + _PLY_SCALARS[p[1]])
                if offset + dt.itemsize > len(body):
                    raise MeshFormatError(f"{path}: truncated PLY body")
                row[p[2]] = float(np.frombuffer(body, dt, 1, offset)[0])
                offset += dt.itemsize
        rows.append(row)
    return rows, offset


def _ply_extract_vertices(path, props, rows):
    names = [p[2] for p in props if p[0] == "scalar"]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise MeshFormatError(f"{path}: vertex element missing property {axis!r}")
    verts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        raw = np.array(
            [[r["red"], r["green"], r["blue"]] for r in rows], dtype=np.float64
        )
        is_byte = any(
            p[0] == "scalar" and p[2] == "red" and _PLY_SCALARS[p[1]] == "u1"
            for p in props
        )
        colors = raw / 255.0 if is_byte else raw
    return verts.reshape(-1, 3), colors


def _ply_extract_faces(path, props, rows):
    list_names = [p[3] for p in props if p[0] == "list"]
    key = next(
        (n for n in list_names if n in ("vertex_indices", "vertex_index")),
        list_names[0] if list_names else None,
    )
    if key is None:
        raise MeshFormatError(f"{path}: face element has no index list")
    tris = []
    for r in rows:
        idx = [int(i) for i in r[key]]
        if len(idx) < 3:
            raise MeshFormatError(f"{path}: face with fewer than 3 indices")
        for a, b in zip(idx[1:], idx[2:]):
            tris.append([idx[0], a, b])
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def _save_ply(path, mesh: TriMesh, binary: bool) -> None:
    has_color = mesh.colors is not None
    header = ["ply"]
    header.append(
        "format binary_little_endian 1.0" if binary else "format ascii 1.0"
    )
    header.append(f"element vertex {len(mesh.vertices)}")
    header += ["property double x", "property double y", "property double z"]
    if has_color:
        header += [
            "property uchar red", "property uchar green", "property uchar blue"
        ]
    header.append(f"element face {len(mesh.triangles)}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            bytes_color = (
                np.clip(np.rint(mesh.colors * 255), 0, 255).astype(np.uint8)
                if has_color
                else None
            )
            for i, v in enumerate(mesh.vertices):
                f.write(struct.pack("<3d", *v))
                if has_color:
                    f.write(struct.pack("<3B", *bytes_color[i]))
            for t in mesh.triangles:
                f.write(struct.pack("<B3i", 3, *t))
        else:
            for i, v in enumerate(mesh.vertices):
                row = [_fmt(x) for x in v]
                if has_color:
                    row += [
                        str(int(c))
                        for c in np.clip(np.rint(mesh.colors[i] * 255), 0, 255)
                    ]
                f.write((" ".join(row) + "\n").encode("ascii"))
            for t in mesh.triangles:
                f.write(f"3 {t[0]} {t[1]} {t[2]}\n".encode("ascii"))


def load_mesh(path) -> TriMesh:
    p = str(path)
    if p.lower().endswith(".obj"):
        return _load_obj(path)
    if p.lower().endswith(".ply"):
        return _load_ply(path)
    raise MeshFormatError(f"{path}: unsupported mesh extension (want .obj or .ply)")


def save_mesh(path, mesh: TriMesh, *, binary: bool = True) -> None:
    p = str(path)
    if p.lower().endswith(".obj"):
        _save_obj(path, mesh)
    elif p.lower().endswith(".ply"):
        _save_ply(path, mesh, binary)
    else:
        raise MeshFormatError(f"{path}: unsupported mesh extension (want .obj or .ply)")


# ---------------------------------------------------------------------------
# Sampling and metrics
# ---------------------------------------------------------------------------


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_surface(mesh: TriMesh, n: int, seed: int = 0) -> PointCloud:
    """Area-weighted uniform surface samples, deterministic per seed."""
    if n < 1:
        raise ValueError(f"need n >= 1 samples, got {n}")
    if len(mesh.triangles) == 0:
        raise DegenerateGeometryError("mesh has no triangles to sample")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total <= 0:
        raise DegenerateGeometryError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    # sqrt warp makes barycentric samples uniform over each triangle
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    pts = (
        (1.0 - r1)[:, None] * a
        + (r1 * (1.0 - r2))[:, None] * b
        + (r1 * r2)[:, None] * c
    )
    ab, ac = b - a, c - a
    nrm = np.cross(ab, ac)
    lens = np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm = np.divide(nrm, lens, out=np.zeros_like(nrm), where=lens > 0)
    return PointCloud(pts, nrm)


def _as_points(obj) -> np.ndarray:
    pts = obj.points if isinstance(obj, PointCloud) else np.asarray(obj, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    if len(pts) == 0:
        raise DegenerateGeometryError("metric input is empty")
    return pts


def nn_query(src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Nearest neighbor in dst for each src point: (distances, indices)."""
    s, d = _as_points(src), _as_points(dst)
    dist, idx = cKDTree(d).query(s, k=1)
    return np.asarray(dist, dtype=np.float64), np.asarray(idx, dtype=np.int64)


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance: mean NN distance each way, averaged."""
    da, _ = nn_query(a, b)
    db, _ = nn_query(b, a)
    return float(0.5 * (da.mean() + db.mean()))


def f_score(pred, gt, bbox=None, threshold_frac: float = 0.02) -> float:
    """F-score in [0, 100] at a threshold relative to the reference bbox.

    The distance threshold is ``threshold_frac`` times the longest edge
    of the axis-aligned bounding box of ``gt`` (or of ``bbox`` when a
    (min, max) pair is given explicitly).
    """
    p, g = _as_points(pred), _as_points(gt)
    if bbox is None:
        d = threshold_frac * longest_aabb_edge(g)
    else:
        lo, hi = np.asarray(bbox[0], dtype=np.float64), np.asarray(bbox[1], dtype=np.float64)
        d = threshold_frac * float((hi - lo).max())
    dp, _ = nn_query(p, g)
    dg, _ = nn_query(g, p)
    precision = float((dp <= d).mean())
    recall = float((dg <= d).mean())
    if precision + recall == 0.0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def eval_record(pred, gt, report_factor: float = 100.0) -> dict:
    """Structured metric record; Chamfer is scaled by the report factor."""
    p, g = _as_points(pred), _as_points(gt)
    threshold = 0.02 * longest_aabb_edge(g)
    return {
        "cd": report_factor * chamfer(p, g),
        "f2": f_score(p, g),
        "n_src": int(len(p)),
        "n_dst": int(len(g)),
        "threshold": float(threshold),
    }


# ---------------------------------------------------------------------------
# ICP with a closed-form similarity step
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IcpResult:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    aligned: PointCloud
    residuals: tuple[float, ...]

    @property
    def iterations(self) -> int:
        return len(self.residuals)


def similarity_fit(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Least-squares similarity (R, t, uniform s) mapping src onto dst.

    Closed form via SVD of the cross-covariance; the sign correction
    keeps R a proper rotation even for reflective optima.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    if n < 3:
        raise DegenerateGeometryError(f"similarity fit needs >= 3 points, got {n}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    x, y = src - mu_s, dst - mu_d
    var_s = (x * x).sum() / n
    if var_s < 1e-18:
        raise DegenerateGeometryError("source points are coincident")
    cov = y.T @ x / n
    u, d, vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1e-300):
        raise DegenerateGeometryError("source points are collinear")
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    rot = u @ np.diag(s) @ vt
    scale = float((d * s).sum() / var_s)
    t = mu_d - scale * rot @ mu_s
    return rot, t, scale


def icp_align(src, dst, max_iters: int = 50, tol: float = 1e-10,
              trim_fraction: float = 0.0) -> IcpResult:
    """Point-to-point ICP estimating rotation, translation, uniform scale.

    Each iteration re-solves the similarity on current nearest-neighbor
    pairs, so the RMS residual never increases. Stops when the residual
    improves by less than ``tol``.
    """
    s_pts, d_pts = _as_points(src), _as_points(dst)
    tree = cKDTree(d_pts)
    rot, t, scale = np.eye(3), np.zeros(3), 1.0
    residuals: list[float] = []
    for _ in range(max_iters):
        moved = scale * (s_pts @ rot.T) + t
        dist, idx = tree.query(moved, k=1)
        if trim_fraction > 0.0:
            keep = max(3, int(np.ceil(len(dist) * (1.0 - trim_fraction))))
            order = np.argsort(dist)[:keep]
        else:
            order = slice(None)
        rot, t, scale = similarity_fit(s_pts[order], d_pts[idx[order]])
        moved = scale * (s_pts @ rot.T) + t
        dist, _ = tree.query(moved, k=1)
        rms = float(np.sqrt((dist**2).mean()))
        residuals.append(rms)
        if len(residuals) > 1 and residuals[-2] - rms < tol:
            break
    aligned = PointCloud(scale * (s_pts @ rot.T) + t)
    return IcpResult(rot, t, scale, aligned, tuple(residuals))
