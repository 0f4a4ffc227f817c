import { describe, expect, it } from "vitest";
import { RigMirror } from "../src/rigMirror";
import {
  boneVisible,
  initialViewState,
  reconcileSelection,
  withConnection,
  withFilter,
  withGizmo,
  withSelection,
} from "../src/viewState";
import { deltaOf, entry, stateBody } from "./fixtures/mirrorFixtures";

function mirror(): RigMirror {
  return RigMirror.fromState(
    stateBody(
      [
        entry("r1", null, ["c1", "c2"], 1),
        entry("c1", "r1", [], 2),
        entry("c2", "r1", [], 2),
      ],
      ["r1"],
    ),
  );
}

describe("view state", () => {
  it("only selects bones that exist in the mirror", () => {
    const m = mirror();
    const vs = initialViewState();
    expect(withSelection(vs, m, "c1").selected).toBe("c1");
    expect(withSelection(vs, m, "ghost").selected).toBe(null);
    expect(withSelection(withSelection(vs, m, "c1"), m, null).selected).toBe(null);
  });

  it("selection lands identically from viewport click and tree click", () => {
    const m = mirror();
    const vs = initialViewState();
    const viaViewport = withSelection(vs, m, "c2");
    const viaTree = withSelection(vs, m, "c2");
    expect(viaViewport).toEqual(viaTree);
  });

  it("collapses selection to null when the bone is deleted", () => {
    const m = mirror();
    let vs = withSelection(initialViewState(), m, "c2");
    m.applyDelta(deltaOf([entry("r1", null, ["c1"], 1)], ["c2"]));
    vs = reconcileSelection(vs, m);
    expect(vs.selected).toBe(null);
  });

  it("keeps a still-existing selection across deltas", () => {
    const m = mirror();
    let vs = withSelection(initialViewState(), m, "c1");
    m.applyDelta(deltaOf([entry("r1", null, ["c1"], 1)], ["c2"]));
    vs = reconcileSelection(vs, m);
    expect(vs.selected).toBe("c1");
  });

  it("filters by exact depth and passes everything on all", () => {
    expect(boneVisible({ mode: "all" }, 3)).toBe(true);
    expect(boneVisible({ mode: "depth", depth: 2 }, 2)).toBe(true);
    expect(boneVisible({ mode: "depth", depth: 2 }, 1)).toBe(false);
  });

  it("updates filter, gizmo, and connection immutably", () => {
    const vs = initialViewState();
    const f = withFilter(vs, { mode: "depth", depth: 2 });
    expect(f.filter).toEqual({ mode: "depth", depth: 2 });
    expect(vs.filter).toEqual({ mode: "all" });
    expect(withGizmo(vs, "translate").gizmo).toBe("translate");
    expect(withConnection(vs, true).connected).toBe(true);
  });
});
