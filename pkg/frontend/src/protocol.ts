// Wire types for the rig session service, schema v1.
//
// Every JSON message carries `v`. Binary mesh updates arrive as a JSON
// envelope {type:"mesh_update", encoding:"binary", count:N} followed by
// one binary frame: u32 vertex count, then N little-endian f32 xyz
// triples. The HTTP mesh endpoint appends a u32 triangle count and u32
// index triples after the same vertex block.

export const SCHEMA_V = 1;

export type Vec3 = [number, number, number];
// Row-major, i.e. the nested-list layout the server sends.
export type Mat3 = [Vec3, Vec3, Vec3];

export interface LocalTransform {
  rotation: Mat3;
  translation: Vec3;
}

export interface BoneEntry {
  id: string;
  parent: string | null;
  children: string[];
  depth: number;
  scale: Vec3;
  local: LocalTransform;
}

// GET /sessions/{id}/state
export interface StateBody {
  v: number;
  session_id: string;
  rig_id: string;
  pose_frame: string;
  bones: BoneEntry[];
  roots: string[];
  leaf_ids: string[];
  max_depth: number;
  undo_depth: number;
  redo_depth: number;
  busy: boolean;
  dirty: boolean;
}

export interface StateDelta {
  v: number;
  type: "state_delta";
  changed: BoneEntry[];
  removed: string[];
  pose_frame: string;
  undo_depth: number;
  redo_depth: number;
  busy: boolean;
  dirty: boolean;
}

export interface MeshUpdateEnvelope {
  v: number;
  type: "mesh_update";
  encoding: "binary" | "json";
  count?: number;
  vertices?: number[][];
}

export interface RetargetProgress {
  v: number;
  type: "retarget_progress";
  step: number;
  cd: number;
}

export interface RetargetDone {
  v: number;
  type: "retarget_done";
  step: number;
  cd: number;
  stopped: string;
}

export interface ErrorMsg {
  v: number;
  type: "error";
  code: string;
  message: string;
}

export type ServerMsg =
  | StateDelta
  | MeshUpdateEnvelope
  | RetargetProgress
  | RetargetDone
  | ErrorMsg;

export type ClientMsg =
  | { v: number; type: "set_bone_local"; bone_id: string; rotation: Mat3; translation: Vec3 }
  | { v: number; type: "add_children"; parent_id: string; k: number }
  | { v: number; type: "delete_subtree"; bone_id: string }
  | { v: number; type: "undo" }
  | { v: number; type: "redo" }
  | { v: number; type: "retarget_start"; steps: number; target_ref: string };

export interface MeshData {
  vertices: Float32Array; // flat xyz triples
  triangles: Uint32Array; // flat index triples
}

/** Decode a u32-count + f32-xyz vertex frame. Little-endian host assumed. */
export function parseVertexFrame(buf: ArrayBuffer, offset = 0): Float32Array {
  const view = new DataView(buf, offset);
  const count = view.getUint32(0, true);
  const need = 4 + count * 12;
  if (buf.byteLength - offset < need) {
    throw new Error(`vertex frame truncated: ${buf.byteLength - offset} < ${need} bytes`);
  }
  return new Float32Array(buf.slice(offset + 4, offset + need));
}

/** Decode the HTTP mesh blob: vertex frame, then u32 count + u32 index triples. */
export function parseMeshBlob(buf: ArrayBuffer): MeshData {
  const vertices = parseVertexFrame(buf);
  const triOffset = 4 + vertices.length * 4;
  const view = new DataView(buf, triOffset);
  const count = view.getUint32(0, true);
  const need = triOffset + 4 + count * 12;
  if (buf.byteLength < need) {
    throw new Error(`mesh blob truncated: ${buf.byteLength} < ${need} bytes`);
  }
  return { vertices, triangles: new Uint32Array(buf.slice(triOffset + 4, need)) };
}

export function setBoneLocal(boneId: string, rotation: Mat3, translation: Vec3): ClientMsg {
  return { v: SCHEMA_V, type: "set_bone_local", bone_id: boneId, rotation, translation };
}

export function addChildren(parentId: string, k: number): ClientMsg {
  return { v: SCHEMA_V, type: "add_children", parent_id: parentId, k };
}

export function deleteSubtree(boneId: string): ClientMsg {
  return { v: SCHEMA_V, type: "delete_subtree", bone_id: boneId };
}

export function retargetStart(steps: number, targetRef: string): ClientMsg {
  return { v: SCHEMA_V, type: "retarget_start", steps, target_ref: targetRef };
}
