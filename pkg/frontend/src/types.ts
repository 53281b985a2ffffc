/** Wire types mirroring docs/service-schema.md (snake_case, SI units). */

export interface EntityFrame {
  name: string;
  p: [number, number, number];
  v: [number, number, number];
  heading: number;
  pitch: number;
  braking: boolean;
  slacked: boolean;
  poly_violation: number | null;
}

export interface TargetFrame {
  p: [number, number, number];
  v: [number, number, number];
  est_p: [number, number, number];
  est_v: [number, number, number];
}

export interface CorridorPoly {
  normals: number[][];
  offsets: number[];
}

export interface EntityCorridor {
  entity: string;
  polys: CorridorPoly[];
}

export interface StateFrame {
  tick: number;
  time: number;
  paused: boolean;
  entities: EntityFrame[];
  target: TargetFrame;
  shot: string;
  d_f: Record<string, number>;
  dev_heading: Record<string, number>;
  dev_pitch: Record<string, number>;
  corridors?: EntityCorridor[];
}

export interface ScenarioInfo {
  name: string;
  duration: number;
  seed: number;
  tick: number;
  bounds: [[number, number, number], [number, number, number]];
  leader_period: number;
  follower_period: number;
  followers: { name: string; lighting: LightingForm }[];
  shots: { start_time: number; type: string }[];
  obstacle_points: number[][];
}

export type ShotType = "lateral" | "fly_over" | "chase" | "orbit" | "static_frame";
export const SHOT_TYPES: ShotType[] = [
  "lateral", "fly_over", "chase", "orbit", "static_frame",
];

export interface ShotForm {
  type: string;
  shooting_angle_deg: number;
  lateral_distance?: number;
  behind_distance?: number;
  overtake_distance?: number;
  duration?: number;
}

export interface LightingForm {
  chi_deg: number;
  varrho_deg: number;
  distance: number;
  virtual_distance: number;
}

export interface DirectorCommand {
  kind: "set_shot" | "set_lighting" | "set_target" | "pause" | "resume";
  payload?: Record<string, unknown>;
}

export interface Ack {
  ack?: boolean;
  nack?: boolean;
  tick?: number;
  reason?: string;
}
