import { describe, expect, it } from "vitest";
import { Bounds, SIDE, TOP_DOWN, convexHull2d, polyVertices, project } from "../src/views.js";

const BOUNDS: Bounds = [[-10, -10, 0], [10, 10, 20]];

describe("orthographic projection", () => {
  it("maps world bounds corners to canvas margins (top-down)", () => {
    expect(project([-10, -10, 0], BOUNDS, TOP_DOWN, 200, 100)).toEqual([10, 90]);
    expect(project([10, 10, 0], BOUNDS, TOP_DOWN, 200, 100)).toEqual([190, 10]);
  });

  it("uses x/z in the side view, z up", () => {
    const [, yGround] = project([0, 5, 0], BOUNDS, SIDE, 200, 100);
    const [, yHigh] = project([0, 5, 20], BOUNDS, SIDE, 200, 100);
    expect(yGround).toBeGreaterThan(yHigh);
  });
});

describe("polyhedron outline", () => {
  it("recovers the 8 vertices of an axis-aligned box", () => {
    const normals = [
      [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
    ];
    const offsets = [2, 1, 3, 0, 5, -4]; // x ∈ [-1,2], y ∈ [0,3], z ∈ [4,5]
    const verts = polyVertices(normals, offsets);
    expect(verts.length).toBe(8);
    for (const v of verts) {
      expect([-1, 2]).toContain(Math.round(v[0]! * 1e9) / 1e9);
      expect([0, 3]).toContain(Math.round(v[1]! * 1e9) / 1e9);
      expect([4, 5]).toContain(Math.round(v[2]! * 1e9) / 1e9);
    }
  });

  it("projected box hull is its 4-corner footprint", () => {
    const pts: [number, number][] = [
      [0, 0], [2, 0], [2, 1], [0, 1], [1, 0.5], [0.5, 0.2],
    ];
    const hull = convexHull2d(pts);
    expect(hull.length).toBe(4);
    const set = new Set(hull.map((p) => p.join(",")));
    expect(set).toEqual(new Set(["0,0", "2,0", "2,1", "0,1"]));
  });
});
