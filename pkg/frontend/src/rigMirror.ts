// Client-side mirror of one session's rig.
//
// The mirror is rebuilt from the initial state body and then advanced
// by every state_delta in arrival order, so it is a pure function of
// the server's messages. It never invents geometry: optimistic gizmo
// previews pass a local override into worldTransforms without touching
// the stored pose.

import type { BoneEntry, StateBody, StateDelta, Vec3 } from "./protocol";
import { composeRigid, Rigid } from "./math3";

export interface MirrorBone {
  id: string;
  parent: string | null;
  children: string[];
  depth: number;
  scale: Vec3;
  local: Rigid; // current pose local
  // Placement local captured when the bone first appeared. Exact for
  // the session lifetime of a bone; a bone resurrected by undo after
  // being edited and deleted re-enters with its pose local instead.
  // Previews built on it are reconciled by the next mesh_update.
  canonicalLocal: Rigid;
}

export interface WorldOverride {
  id: string;
  local: Rigid;
}

function toRigid(entry: BoneEntry): Rigid {
  return { r: entry.local.rotation, t: entry.local.translation };
}

export class RigMirror {
  bones = new Map<string, MirrorBone>();
  roots: string[] = [];
  sessionId = "";
  rigId = "";
  poseFrame = "canonical";
  undoDepth = 0;
  redoDepth = 0;
  busy = false;
  dirty = false;

  static fromState(body: StateBody): RigMirror {
    const m = new RigMirror();
    m.sessionId = body.session_id;
    m.rigId = body.rig_id;
    m.roots = [...body.roots];
    m.poseFrame = body.pose_frame;
    m.undoDepth = body.undo_depth;
    m.redoDepth = body.redo_depth;
    m.busy = body.busy;
    m.dirty = body.dirty;
    for (const entry of body.bones) m.upsert(entry);
    return m;
  }

  private upsert(entry: BoneEntry): void {
    const known = this.bones.get(entry.id);
    this.bones.set(entry.id, {
      id: entry.id,
      parent: entry.parent,
      children: [...entry.children],
      depth: entry.depth,
      scale: entry.scale,
      local: toRigid(entry),
      canonicalLocal: known ? known.canonicalLocal : toRigid(entry),
    });
    if (entry.parent === null && !this.roots.includes(entry.id)) {
      this.roots.push(entry.id);
    }
  }

  applyDelta(delta: StateDelta): void {
    for (const entry of delta.changed) this.upsert(entry);
    for (const id of delta.removed) this.bones.delete(id);
    this.roots = this.roots.filter((r) => this.bones.has(r));
    this.poseFrame = delta.pose_frame;
    this.undoDepth = delta.undo_depth;
    this.redoDepth = delta.redo_depth;
    this.busy = delta.busy;
    this.dirty = delta.dirty;
  }

  has(id: string): boolean {
    return this.bones.has(id);
  }

  bone(id: string): MirrorBone {
    const b = this.bones.get(id);
    if (!b) throw new Error(`unknown bone ${id}`);
    return b;
  }

  /** Depth-first order: roots in order, then children recursively. */
  boneOrder(): string[] {
    const out: string[] = [];
    const stack = [...this.roots].reverse();
    while (stack.length) {
      const id = stack.pop()!;
      out.push(id);
      const kids = this.bone(id).children;
      for (let i = kids.length - 1; i >= 0; i--) stack.push(kids[i]);
    }
    return out;
  }

  leafIds(): string[] {
    return this.boneOrder().filter((id) => this.bone(id).children.length === 0);
  }

  maxDepth(): number {
    let d = 0;
    for (const b of this.bones.values()) d = Math.max(d, b.depth);
    return d;
  }

  /**
   * Per-bone world transforms under the current pose (or the tracked
   * canonical placement). An override substitutes one bone's local so
   * drag previews can be composed without mutating the mirror.
   */
  worldTransforms(opts?: { canonical?: boolean; override?: WorldOverride }): Map<string, Rigid> {
    const world = new Map<string, Rigid>();
    for (const id of this.boneOrder()) {
      const b = this.bone(id);
      let local = opts?.canonical ? b.canonicalLocal : b.local;
      if (opts?.override && opts.override.id === id) local = opts.override.local;
      world.set(id, b.parent === null ? local : composeRigid(world.get(b.parent)!, local));
    }
    return world;
  }
}
