import { describe, expect, it } from "vitest";
import {
  addChildren,
  deleteSubtree,
  Mat3,
  parseMeshBlob,
  parseVertexFrame,
  retargetStart,
  SCHEMA_V,
  setBoneLocal,
} from "../src/protocol";

function packFrame(verts: number[], tris?: number[]): ArrayBuffer {
  const n = verts.length / 3;
  const t = tris ? tris.length / 3 : 0;
  const buf = new ArrayBuffer(4 + verts.length * 4 + (tris ? 4 + tris.length * 4 : 0));
  const view = new DataView(buf);
  view.setUint32(0, n, true);
  verts.forEach((v, i) => view.setFloat32(4 + 4 * i, v, true));
  if (tris) {
    const base = 4 + verts.length * 4;
    view.setUint32(base, t, true);
    tris.forEach((v, i) => view.setUint32(base + 4 + 4 * i, v, true));
  }
  return buf;
}

describe("binary frames", () => {
  it("round-trips a vertex frame", () => {
    const verts = [0.5, -1.25, 3, 0, 7.5, -2];
    const out = parseVertexFrame(packFrame(verts));
    expect([...out]).toEqual(verts);
  });

  it("rejects truncated vertex frames", () => {
    const buf = packFrame([1, 2, 3]).slice(0, 10);
    expect(() => parseVertexFrame(buf)).toThrow(/truncated/);
  });

  it("round-trips a mesh blob with triangles", () => {
    const { vertices, triangles } = parseMeshBlob(
      packFrame([0, 0, 0, 1, 0, 0, 0, 1, 0], [0, 1, 2]),
    );
    expect(vertices.length).toBe(9);
    expect([...triangles]).toEqual([0, 1, 2]);
  });

  it("rejects a blob with a missing index block", () => {
    const full = packFrame([0, 0, 0, 1, 0, 0, 0, 1, 0], [0, 1, 2]);
    expect(() => parseMeshBlob(full.slice(0, full.byteLength - 4))).toThrow(/truncated/);
  });
});

describe("client messages", () => {
  it("carry the schema version and documented fields", () => {
    const rot: Mat3 = [
      [1, 0, 0],
      [0, 1, 0],
      [0, 0, 1],
    ];
    expect(setBoneLocal("b1", rot, [1, 2, 3])).toEqual({
      v: SCHEMA_V,
      type: "set_bone_local",
      bone_id: "b1",
      rotation: rot,
      translation: [1, 2, 3],
    });
    expect(addChildren("s1", 4)).toEqual({
      v: SCHEMA_V,
      type: "add_children",
      parent_id: "s1",
      k: 4,
    });
    expect(deleteSubtree("s1")).toEqual({ v: SCHEMA_V, type: "delete_subtree", bone_id: "s1" });
    expect(retargetStart(50, "rig:frame_001.obj")).toEqual({
      v: SCHEMA_V,
      type: "retarget_start",
      steps: 50,
      target_ref: "rig:frame_001.obj",
    });
  });
});
