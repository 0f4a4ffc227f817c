// Minimal 3-vector / 3x3-matrix helpers on plain arrays, so rig math
// stays independent of the render library and runs under node tests.

import type { Mat3, Vec3 } from "./protocol";

export interface Rigid {
  r: Mat3;
  t: Vec3;
}

export const IDENT3: Mat3 = [
  [1, 0, 0],
  [0, 1, 0],
  [0, 0, 1],
];

export function matMul(a: Mat3, b: Mat3): Mat3 {
  const out: number[][] = [[0, 0, 0], [0, 0, 0], [0, 0, 0]];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    }
  }
  return out as Mat3;
}

export function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
    m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
    m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
  ];
}

export function transpose(m: Mat3): Mat3 {
  return [
    [m[0][0], m[1][0], m[2][0]],
    [m[0][1], m[1][1], m[2][1]],
    [m[0][2], m[1][2], m[2][2]],
  ];
}

export function add3(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function sub3(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function cross3(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function norm3(v: Vec3): number {
  return Math.hypot(v[0], v[1], v[2]);
}

/** Points map as x -> R x + t; composition follows matrix order. */
export function composeRigid(a: Rigid, b: Rigid): Rigid {
  return { r: matMul(a.r, b.r), t: add3(matVec(a.r, b.t), a.t) };
}

export function invertRigid(a: Rigid): Rigid {
  const rt = transpose(a.r);
  const t = matVec(rt, a.t);
  return { r: rt, t: [-t[0], -t[1], -t[2]] };
}

export function applyRigid(a: Rigid, v: Vec3): Vec3 {
  return add3(matVec(a.r, v), a.t);
}

/** Rodrigues rotation about a (not necessarily unit) axis. */
export function axisAngle(axis: Vec3, rad: number): Mat3 {
  const n = norm3(axis);
  if (n === 0) return IDENT3;
  const [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
  const c = Math.cos(rad);
  const s = Math.sin(rad);
  const k = 1 - c;
  return [
    [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
    [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
    [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
  ];
}
