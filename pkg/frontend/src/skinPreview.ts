// Optimistic skinning preview.
//
// Mirrors the service's deformation model: per-vertex weights are a
// rowwise softmax of negative ellipsoid distances to the leaf bones at
// their canonical placement, and a posed vertex is the weight-blended
// application of each leaf's frame change world_pose . world_canonical^-1.
// The preview runs on the f32 canonical vertices the mesh endpoint
// returns, so it tracks the authoritative warp to float precision; the
// next mesh_update always replaces it.

import type { Vec3 } from "./protocol";
import { composeRigid, invertRigid, Rigid } from "./math3";
import type { RigMirror, WorldOverride } from "./rigMirror";

export interface LeafFrame {
  id: string;
  rot: number[][]; // world rotation, rows
  cen: Vec3;
  scale: Vec3;
}

export function leafFrames(mirror: RigMirror, opts?: { canonical?: boolean; override?: WorldOverride }): LeafFrame[] {
  const world = mirror.worldTransforms(opts);
  return mirror.leafIds().map((id) => {
    const w = world.get(id)!;
    return { id, rot: w.r, cen: w.t, scale: mirror.bone(id).scale };
  });
}

/** Row-major (n, L) ellipsoid distances: d = |diag(1/s) R (x - cen)|. */
export function leafDistances(verts: Float32Array, leaves: LeafFrame[]): Float64Array {
  const n = verts.length / 3;
  const L = leaves.length;
  const out = new Float64Array(n * L);
  for (let b = 0; b < L; b++) {
    const { rot, cen, scale } = leaves[b];
    for (let i = 0; i < n; i++) {
      const dx = verts[3 * i] - cen[0];
      const dy = verts[3 * i + 1] - cen[1];
      const dz = verts[3 * i + 2] - cen[2];
      const u0 = (rot[0][0] * dx + rot[0][1] * dy + rot[0][2] * dz) / scale[0];
      const u1 = (rot[1][0] * dx + rot[1][1] * dy + rot[1][2] * dz) / scale[1];
      const u2 = (rot[2][0] * dx + rot[2][1] * dy + rot[2][2] * dz) / scale[2];
      out[i * L + b] = Math.sqrt(u0 * u0 + u1 * u1 + u2 * u2);
    }
  }
  return out;
}

/** Rowwise softmax of -distance, shifted by the row max for stability. */
export function weightsFromDistances(dist: Float64Array, nLeaves: number): Float64Array {
  const n = dist.length / nLeaves;
  const w = new Float64Array(dist.length);
  for (let i = 0; i < n; i++) {
    let hi = -Infinity;
    for (let b = 0; b < nLeaves; b++) hi = Math.max(hi, -dist[i * nLeaves + b]);
    let sum = 0;
    for (let b = 0; b < nLeaves; b++) {
      const e = Math.exp(-dist[i * nLeaves + b] - hi);
      w[i * nLeaves + b] = e;
      sum += e;
    }
    for (let b = 0; b < nLeaves; b++) w[i * nLeaves + b] /= sum;
  }
  return w;
}

/** Weights over leaves for the mirror's canonical placement. */
export function skinWeights(canonicalVerts: Float32Array, mirror: RigMirror): Float64Array {
  const leaves = leafFrames(mirror, { canonical: true });
  return weightsFromDistances(leafDistances(canonicalVerts, leaves), leaves.length);
}

/** Per-leaf frame changes world_pose . world_canonical^-1, in leaf order. */
export function warpFrames(mirror: RigMirror, override?: WorldOverride): Rigid[] {
  const canonical = mirror.worldTransforms({ canonical: true });
  const posed = mirror.worldTransforms({ override });
  return mirror.leafIds().map((id) => composeRigid(posed.get(id)!, invertRigid(canonical.get(id)!)));
}

/** Blend the per-leaf warps over the cached weights. */
export function previewVertices(
  canonicalVerts: Float32Array,
  weights: Float64Array,
  warps: Rigid[],
): Float32Array {
  const n = canonicalVerts.length / 3;
  const L = warps.length;
  const out = new Float32Array(canonicalVerts.length);
  for (let i = 0; i < n; i++) {
    const x = canonicalVerts[3 * i];
    const y = canonicalVerts[3 * i + 1];
    const z = canonicalVerts[3 * i + 2];
    let ox = 0;
    let oy = 0;
    let oz = 0;
    for (let b = 0; b < L; b++) {
      const w = weights[i * L + b];
      if (w === 0) continue;
      const { r, t } = warps[b];
      ox += w * (r[0][0] * x + r[0][1] * y + r[0][2] * z + t[0]);
      oy += w * (r[1][0] * x + r[1][1] * y + r[1][2] * z + t[1]);
      oz += w * (r[2][0] * x + r[2][1] * y + r[2][2] * z + t[2]);
    }
    out[3 * i] = ox;
    out[3 * i + 1] = oy;
    out[3 * i + 2] = oz;
  }
  return out;
}
