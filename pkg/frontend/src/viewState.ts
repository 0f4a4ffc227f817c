// UI view state: everything the panels and viewport derive their
// rendering from, next to the mirrored server state. Pure updates only;
// the invariant is that a selected bone id always exists in the mirror
// (otherwise selection collapses to null).

import type { RigMirror } from "./rigMirror";

export type DepthFilter = { mode: "all" } | { mode: "depth"; depth: number };
export type GizmoMode = "rotate" | "translate";

export interface ViewState {
  selected: string | null;
  filter: DepthFilter;
  gizmo: GizmoMode;
  connected: boolean;
}

export function initialViewState(): ViewState {
  return { selected: null, filter: { mode: "all" }, gizmo: "rotate", connected: false };
}

/** Select a bone (click in the viewport or in the tree; both land here). */
export function withSelection(vs: ViewState, mirror: RigMirror, id: string | null): ViewState {
  const selected = id !== null && mirror.has(id) ? id : null;
  return { ...vs, selected };
}

/** Re-check the invariant after a state delta removed bones. */
export function reconcileSelection(vs: ViewState, mirror: RigMirror): ViewState {
  if (vs.selected !== null && !mirror.has(vs.selected)) return { ...vs, selected: null };
  return vs;
}

export function withFilter(vs: ViewState, filter: DepthFilter): ViewState {
  return { ...vs, filter };
}

export function withGizmo(vs: ViewState, gizmo: GizmoMode): ViewState {
  return { ...vs, gizmo };
}

export function withConnection(vs: ViewState, connected: boolean): ViewState {
  return { ...vs, connected };
}

export function boneVisible(filter: DepthFilter, depth: number): boolean {
  return filter.mode === "all" || filter.depth === depth;
}
