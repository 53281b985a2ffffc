/** Client-side command validation: mirrors the service's checks so invalid
 * drafts are rejected locally and no request is sent. */

import { DirectorCommand, LightingForm, SHOT_TYPES, ShotForm } from "./types.js";

export type Validation =
  | { ok: true; command: DirectorCommand }
  | { ok: false; reason: string };

export function validateShot(form: ShotForm): Validation {
  if (!SHOT_TYPES.includes(form.type as never)) {
    return { ok: false, reason: `unknown shot type '${form.type}'` };
  }
  const a = form.shooting_angle_deg;
  if (!Number.isFinite(a) || a <= 0 || a >= 90) {
    return { ok: false, reason: "shooting angle must be in (0, 90) degrees" };
  }
  const payload: Record<string, unknown> = {
    type: form.type,
    shooting_angle_deg: a,
  };
  for (const key of ["lateral_distance", "behind_distance", "overtake_distance"] as const) {
    const v = form[key];
    if (v === undefined) continue;
    if (!Number.isFinite(v) || v <= 0) {
      return { ok: false, reason: `${key.replace("_", " ")} must be positive` };
    }
    payload[key] = v;
  }
  if (form.duration !== undefined) {
    if (!Number.isFinite(form.duration) || form.duration <= 0) {
      return { ok: false, reason: "duration must be positive" };
    }
    payload.duration = form.duration;
  }
  return { ok: true, command: { kind: "set_shot", payload } };
}

export function validateLighting(
  followerId: number,
  form: LightingForm,
  followerCount: number,
): Validation {
  if (!Number.isInteger(followerId) || followerId < 0 || followerId >= followerCount) {
    return { ok: false, reason: `unknown follower ${followerId}` };
  }
  if (!Number.isFinite(form.chi_deg) || Math.abs(form.chi_deg) > 180) {
    return { ok: false, reason: "azimuth must be within ±180 degrees" };
  }
  if (!Number.isFinite(form.varrho_deg) || Math.abs(form.varrho_deg) > 89) {
    return { ok: false, reason: "elevation must be within ±89 degrees" };
  }
  if (!Number.isFinite(form.distance) || form.distance <= 0) {
    return { ok: false, reason: "distance must be positive" };
  }
  if (!Number.isFinite(form.virtual_distance) || form.virtual_distance <= 0) {
    return { ok: false, reason: "virtual distance must be positive" };
  }
  return {
    ok: true,
    command: {
      kind: "set_lighting",
      payload: { follower_id: followerId, lighting: { ...form } },
    },
  };
}
