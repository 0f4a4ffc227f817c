// Ellipsoid glyph placement.
//
// A bone's glyph is the unit-distance surface of its ellipsoid metric:
// position at the world translation, axes along the rows of the world
// rotation, semi-axes equal to the per-axis scale. As a point transform
// that is translate(t) . R^T . diag(scale) applied to a unit sphere.
// Bones sharing a parent share a tint so sibling groups read as one
// subdivision level; the depth filter hides every other depth.

import type { Mat3, Vec3 } from "./protocol";
import { transpose, Rigid } from "./math3";
import type { RigMirror } from "./rigMirror";
import { boneVisible, DepthFilter } from "./viewState";

export interface Glyph {
  id: string;
  depth: number;
  position: Vec3;
  rotation: Mat3; // R^T: ellipsoid axes as columns, ready for a TRS matrix
  scale: Vec3;
  tint: number; // index into TINTS
}

export const TINTS: readonly number[] = [
  0x7fb2ff, 0xffb37f, 0x8fe08f, 0xe69ae6, 0xfff07f,
  0x7fe0e0, 0xff8f9e, 0xb3a1ff, 0xa1c86e, 0xd9b38c,
];

export function glyphsFor(mirror: RigMirror, worlds: Map<string, Rigid>): Glyph[] {
  const tintOfParent = new Map<string, number>();
  const glyphs: Glyph[] = [];
  for (const id of mirror.boneOrder()) {
    const bone = mirror.bone(id);
    const key = bone.parent ?? "(roots)";
    if (!tintOfParent.has(key)) tintOfParent.set(key, tintOfParent.size % TINTS.length);
    const world = worlds.get(id)!;
    glyphs.push({
      id,
      depth: bone.depth,
      position: world.t,
      rotation: transpose(world.r),
      scale: bone.scale,
      tint: tintOfParent.get(key)!,
    });
  }
  return glyphs;
}

export function visibleGlyphs(glyphs: Glyph[], filter: DepthFilter): Glyph[] {
  return glyphs.filter((g) => boneVisible(filter, g.depth));
}
