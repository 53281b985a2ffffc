/** 2-D orthographic scene rendering: top-down (x/y) and side (x/z) views
 * of UAVs, target, camera frustum, obstacles, and corridor outlines. */

import { EntityCorridor, StateFrame } from "./types.js";

export type Bounds = [[number, number, number], [number, number, number]];
export type Axis = 0 | 1 | 2;

export interface Projection {
  /** world-axis indices mapped to canvas x and y */
  ax: Axis;
  ay: Axis;
  flipY: boolean;
}

export const TOP_DOWN: Projection = { ax: 0, ay: 1, flipY: true };
export const SIDE: Projection = { ax: 0, ay: 2, flipY: true };

/** World point -> canvas pixel for an orthographic view with margins. */
export function project(
  p: readonly number[],
  bounds: Bounds,
  proj: Projection,
  width: number,
  height: number,
  margin = 10,
): [number, number] {
  const lo = bounds[0];
  const hi = bounds[1];
  const nx = (p[proj.ax]! - lo[proj.ax]!) / (hi[proj.ax]! - lo[proj.ax]!);
  const ny = (p[proj.ay]! - lo[proj.ay]!) / (hi[proj.ay]! - lo[proj.ay]!);
  const x = margin + nx * (width - 2 * margin);
  const yRaw = margin + ny * (height - 2 * margin);
  return [x, proj.flipY ? height - yRaw : yRaw];
}

/** Vertices of {x : N x <= b} by enumerating plane triples. */
export function polyVertices(normals: number[][], offsets: number[]): number[][] {
  const m = normals.length;
  const verts: number[][] = [];
  for (let i = 0; i < m; i++) {
    for (let j = i + 1; j < m; j++) {
      for (let k = j + 1; k < m; k++) {
        const v = solve3(normals[i]!, normals[j]!, normals[k]!,
          offsets[i]!, offsets[j]!, offsets[k]!);
        if (v === null) continue;
        let inside = true;
        for (let f = 0; f < m; f++) {
          const n = normals[f]!;
          if (n[0]! * v[0]! + n[1]! * v[1]! + n[2]! * v[2]! > offsets[f]! + 1e-6) {
            inside = false;
            break;
          }
        }
        if (inside) verts.push(v);
      }
    }
  }
  return verts;
}

function solve3(
  a: number[], b: number[], c: number[],
  pa: number, pb: number, pc: number,
): number[] | null {
  const det =
    a[0]! * (b[1]! * c[2]! - b[2]! * c[1]!) -
    a[1]! * (b[0]! * c[2]! - b[2]! * c[0]!) +
    a[2]! * (b[0]! * c[1]! - b[1]! * c[0]!);
  if (Math.abs(det) < 1e-10) return null;
  const x =
    (pa * (b[1]! * c[2]! - b[2]! * c[1]!) -
      a[1]! * (pb * c[2]! - b[2]! * pc) +
      a[2]! * (pb * c[1]! - b[1]! * pc)) / det;
  const y =
    (a[0]! * (pb * c[2]! - b[2]! * pc) -
      pa * (b[0]! * c[2]! - b[2]! * c[0]!) +
      a[2]! * (b[0]! * pc - pb * c[0]!)) / det;
  const z =
    (a[0]! * (b[1]! * pc - pb * c[1]!) -
      a[1]! * (b[0]! * pc - pb * c[0]!) +
      pa * (b[0]! * c[1]! - b[1]! * c[0]!)) / det;
  return [x, y, z];
}

/** 2-D convex hull (Andrew monotone chain), returns hull in CCW order. */
export function convexHull2d(points: [number, number][]): [number, number][] {
  const pts = [...points].sort((p, q) => p[0] - q[0] || p[1] - q[1]);
  if (pts.length <= 2) return pts;
  const cross = (o: [number, number], a: [number, number], b: [number, number]) =>
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  const lower: [number, number][] = [];
  for (const p of pts) {
    while (lower.length >= 2 && cross(lower[lower.length - 2]!, lower[lower.length - 1]!, p) <= 0) {
      lower.pop();
    }
    lower.push(p);
  }
  const upper: [number, number][] = [];
  for (const p of [...pts].reverse()) {
    while (upper.length >= 2 && cross(upper[upper.length - 2]!, upper[upper.length - 1]!, p) <= 0) {
      upper.pop();
    }
    upper.push(p);
  }
  lower.pop();
  upper.pop();
  return lower.concat(upper);
}

const ENTITY_COLORS = ["#ffd166", "#06d6a0", "#66b3ff", "#ef76a2", "#c9a7ff"];

export function entityColor(idx: number): string {
  return ENTITY_COLORS[idx % ENTITY_COLORS.length]!;
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  frame: StateFrame,
  bounds: Bounds,
  proj: Projection,
  obstaclePoints: number[][],
  fov: { h: number; v: number },
  trails: Map<string, number[][]>,
): void {
  ctx.fillStyle = "#14171c";
  ctx.fillRect(0, 0, width, height);
  const px = (p: readonly number[]) => project(p, bounds, proj, width, height);

  ctx.fillStyle = "#4a4f58";
  for (const p of obstaclePoints) {
    const [x, y] = px(p);
    ctx.fillRect(x - 1, y - 1, 2, 2);
  }

  if (frame.corridors) drawCorridors(ctx, frame.corridors, bounds, proj, width, height);

  for (const [name, trail] of trails) {
    const idx = frame.entities.findIndex((e) => e.name === name);
    ctx.strokeStyle = entityColor(idx < 0 ? 0 : idx) + "55";
    ctx.beginPath();
    trail.forEach((p, i) => {
      const [x, y] = px(p);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }

  const [tx, ty] = px(frame.target.p);
  ctx.strokeStyle = "#ff5d5d";
  ctx.beginPath();
  ctx.moveTo(tx - 5, ty);
  ctx.lineTo(tx + 5, ty);
  ctx.moveTo(tx, ty - 5);
  ctx.lineTo(tx, ty + 5);
  ctx.stroke();

  const leader = frame.entities[0];
  if (leader) drawFrustum(ctx, leader, bounds, proj, width, height, fov);

  frame.entities.forEach((e, i) => {
    const [x, y] = px(e.p);
    ctx.fillStyle = entityColor(i);
    ctx.beginPath();
    ctx.arc(x, y, i === 0 ? 5 : 4, 0, 2 * Math.PI);
    ctx.fill();
    if (e.braking || e.slacked) {
      ctx.strokeStyle = e.braking ? "#ff5d5d" : "#ffae42";
      ctx.beginPath();
      ctx.arc(x, y, 8, 0, 2 * Math.PI);
      ctx.stroke();
    }
    ctx.fillStyle = "#aab2bd";
    ctx.font = "10px sans-serif";
    ctx.fillText(e.name, x + 7, y - 5);
  });
}

function drawFrustum(
  ctx: CanvasRenderingContext2D,
  leader: { p: readonly number[]; heading: number; pitch: number },
  bounds: Bounds,
  proj: Projection,
  width: number,
  height: number,
  fov: { h: number; v: number },
): void {
  const depth = 14;
  const isTop = proj.ay === 1;
  const center = isTop ? leader.heading : leader.pitch;
  const half = isTop ? fov.h : fov.v;
  const base = isTop
    ? [leader.p[0]!, leader.p[1]!]
    : [leader.p[0]!, leader.p[2]!];
  const dir = (ang: number): [number, number] =>
    isTop
      ? [Math.cos(ang), Math.sin(ang)]
      : [Math.cos(leader.heading) >= 0 ? Math.cos(ang) : -Math.cos(ang), Math.sin(ang)];
  const [ox, oy] = project(leader.p, bounds, proj, width, height);
  ctx.strokeStyle = "#ffd16677";
  ctx.fillStyle = "#ffd16614";
  ctx.beginPath();
  ctx.moveTo(ox, oy);
  for (const ang of [center - half, center + half]) {
    const d = dir(ang);
    const tip = isTop
      ? [base[0]! + depth * d[0], base[1]! + depth * d[1], 0]
      : [base[0]! + depth * d[0], 0, base[1]! + depth * d[1]];
    const [x, y] = project(tip, bounds, proj, width, height);
    ctx.lineTo(x, y);
  }
  ctx.closePath();
  ctx.fill();
  ctx.stroke();
}

function drawCorridors(
  ctx: CanvasRenderingContext2D,
  corridors: EntityCorridor[],
  bounds: Bounds,
  proj: Projection,
  width: number,
  height: number,
): void {
  corridors.forEach((cor, ci) => {
    ctx.strokeStyle = entityColor(ci) + "44";
    for (const poly of cor.polys) {
      const verts = polyVertices(poly.normals, poly.offsets);
      const projected = verts.map((v) =>
        project(v, bounds, proj, width, height),
      ) as [number, number][];
      const hull = convexHull2d(projected);
      if (hull.length < 3) continue;
      ctx.beginPath();
      hull.forEach(([x, y], i) => {
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      });
      ctx.closePath();
      ctx.stroke();
    }
  });
}
