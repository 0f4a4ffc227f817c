import { describe, expect, it } from "vitest";
import { glyphsFor, visibleGlyphs } from "../src/glyphs";
import { axisAngle, cross3, norm3, sub3, transpose } from "../src/math3";
import { RigMirror } from "../src/rigMirror";
import { entry, stateBody } from "./fixtures/mirrorFixtures";

describe("ellipsoid glyphs", () => {
  it("shows only root glyphs when the depth filter is 1", () => {
    const m = RigMirror.fromState(
      stateBody(
        [
          entry("r1", null, ["a", "b"], 1),
          entry("a", "r1", [], 2),
          entry("b", "r1", [], 2),
          entry("r2", null, ["c"], 1, { t: [3, 0, 0] }),
          entry("c", "r2", [], 2),
        ],
        ["r1", "r2"],
      ),
    );
    const glyphs = glyphsFor(m, m.worldTransforms());
    expect(glyphs).toHaveLength(5);
    const roots = visibleGlyphs(glyphs, { mode: "depth", depth: 1 }).map((g) => g.id);
    expect(roots).toEqual(["r1", "r2"]);
    expect(visibleGlyphs(glyphs, { mode: "all" })).toHaveLength(5);
  });

  it("tints siblings together and other parents differently", () => {
    const m = RigMirror.fromState(
      stateBody(
        [
          entry("r1", null, ["a", "b"], 1),
          entry("a", "r1", ["a1"], 2),
          entry("b", "r1", [], 2),
          entry("a1", "a", [], 3),
        ],
        ["r1"],
      ),
    );
    const byId = new Map(glyphsFor(m, m.worldTransforms()).map((g) => [g.id, g]));
    expect(byId.get("a")!.tint).toBe(byId.get("b")!.tint);
    expect(byId.get("a")!.tint).not.toBe(byId.get("r1")!.tint);
    expect(byId.get("a1")!.tint).not.toBe(byId.get("a")!.tint);
  });

  it("places the glyph at the world center with transposed axes and scale", () => {
    const r = axisAngle([0, 1, 0], 0.6);
    const m = RigMirror.fromState(
      stateBody([entry("r1", null, [], 1, { r, t: [1, 2, 3], scale: [0.5, 0.3, 0.2] })], ["r1"]),
    );
    const [g] = glyphsFor(m, m.worldTransforms());
    expect(g.position).toEqual([1, 2, 3]);
    expect(g.scale).toEqual([0.5, 0.3, 0.2]);
    expect(g.rotation).toEqual(transpose(r));
  });

  it("renders a straight chain's segment glyphs collinear", () => {
    const m = RigMirror.fromState(
      stateBody(
        [
          entry("j1", null, ["s1", "j2"], 1),
          entry("s1", "j1", [], 2, { t: [0.5, 0, 0] }),
          entry("j2", "j1", ["s2", "j3"], 2, { t: [1, 0, 0] }),
          entry("s2", "j2", [], 3, { t: [0.5, 0, 0] }),
          entry("j3", "j2", ["s3"], 3, { t: [1, 0, 0] }),
          entry("s3", "j3", [], 4, { t: [0.5, 0, 0] }),
        ],
        ["j1"],
      ),
    );
    const glyphs = glyphsFor(m, m.worldTransforms());
    const centers = ["s1", "s2", "s3"].map((id) => glyphs.find((g) => g.id === id)!.position);
    const a = sub3(centers[1], centers[0]);
    const b = sub3(centers[2], centers[1]);
    expect(norm3(cross3(a, b))).toBeLessThan(1e-12);
  });
});
