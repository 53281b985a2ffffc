/** Director console wiring: stream -> views/charts, forms -> POST /command.
 * The UI mutates simulation state only through POST /command; chart values
 * come verbatim from StateFrame fields. */

import { RingBuffer, drawStripChart } from "./charts.js";
import { StreamClient } from "./stream.js";
import { Ack, DirectorCommand, ScenarioInfo, StateFrame } from "./types.js";
import { validateLighting, validateShot } from "./validate.js";
import { Bounds, SIDE, TOP_DOWN, drawScene, entityColor } from "./views.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const CHART_CAPACITY = 600;
const TRAIL_LEN = 250;

interface UiState {
  base: string;
  scenario: ScenarioInfo | null;
  latest: StateFrame | null;
  pendingTick: number | null;
  dF: Map<string, RingBuffer>;
  devH: Map<string, RingBuffer>;
  devP: Map<string, RingBuffer>;
  trails: Map<string, number[][]>;
  fov: { h: number; v: number };
}

const state: UiState = {
  base: "",
  scenario: null,
  latest: null,
  pendingTick: null,
  dF: new Map(),
  devH: new Map(),
  devP: new Map(),
  trails: new Map(),
  fov: { h: (45 * Math.PI) / 180, v: (30 * Math.PI) / 180 },
};

function buffer(map: Map<string, RingBuffer>, key: string): RingBuffer {
  let buf = map.get(key);
  if (!buf) {
    buf = new RingBuffer(CHART_CAPACITY);
    map.set(key, buf);
  }
  return buf;
}

function onFrame(frame: StateFrame): void {
  state.latest = frame;
  for (const [name, v] of Object.entries(frame.d_f)) {
    buffer(state.dF, name).push(frame.tick, v);
  }
  for (const [name, v] of Object.entries(frame.dev_heading)) {
    buffer(state.devH, name).push(frame.tick, v);
  }
  for (const [name, v] of Object.entries(frame.dev_pitch)) {
    buffer(state.devP, name).push(frame.tick, v);
  }
  for (const e of frame.entities) {
    let trail = state.trails.get(e.name);
    if (!trail) {
      trail = [];
      state.trails.set(e.name, trail);
    }
    trail.push([...e.p]);
    if (trail.length > TRAIL_LEN) trail.shift();
  }
  if (state.pendingTick !== null && frame.tick >= state.pendingTick) {
    state.pendingTick = null;
    $("pending").textContent = "";
  }
  $("tick").textContent = `tick ${frame.tick}  t=${frame.time.toFixed(2)}s  shot=${frame.shot}` +
    (frame.paused ? "  [paused]" : "");
  requestAnimationFrame(render);
}

function render(): void {
  const frame = state.latest;
  const sc = state.scenario;
  if (!frame || !sc) return;
  const bounds = sc.bounds as Bounds;
  for (const [id, proj] of [["top-view", TOP_DOWN], ["side-view", SIDE]] as const) {
    const canvas = $<HTMLCanvasElement>(id);
    const ctx = canvas.getContext("2d");
    if (!ctx) continue;
    drawScene(ctx, canvas.width, canvas.height, frame, bounds, proj,
      sc.obstacle_points, state.fov, state.trails);
  }
  drawCharts();
}

function drawCharts(): void {
  const names = [...state.dF.keys()].sort();
  const chartDf = $<HTMLCanvasElement>("chart-df");
  const ctxDf = chartDf.getContext("2d");
  if (ctxDf) {
    drawStripChart(ctxDf, chartDf.width, chartDf.height,
      names.map((n) => state.dF.get(n)!),
      names.map((n, i) => ({ label: `${n} d_F`, color: entityColor(i + 1) })),
      { zeroLine: true, yLabel: "d_F [m]" });
  }
  const chartDev = $<HTMLCanvasElement>("chart-dev");
  const ctxDev = chartDev.getContext("2d");
  if (ctxDev) {
    drawStripChart(ctxDev, chartDev.width, chartDev.height,
      [...names.map((n) => state.devH.get(n)!), ...names.map((n) => state.devP.get(n)!)],
      [
        ...names.map((n, i) => ({ label: `${n} φ`, color: entityColor(i + 1) })),
        ...names.map((n, i) => ({ label: `${n} ξ`, color: entityColor(i + 1), dashed: true })),
      ],
      { zeroLine: true, yLabel: "lighting deviation [rad]" });
  }
}

async function sendCommand(cmd: DirectorCommand): Promise<void> {
  const note = $("command-note");
  try {
    const resp = await fetch(`${state.base}/command`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(cmd),
    });
    const ack = (await resp.json()) as Ack;
    if (ack.ack) {
      note.textContent = `ack: adopts at tick ${ack.tick}`;
      note.className = "ok";
      if (cmd.kind === "set_shot" || cmd.kind === "set_lighting") {
        state.pendingTick = ack.tick ?? null;
        $("pending").textContent =
          state.pendingTick === null ? "" : `pending until tick ${state.pendingTick}`;
      }
    } else {
      note.textContent = `nack: ${ack.reason}`;
      note.className = "err";
    }
  } catch (err) {
    note.textContent = `request failed: ${err}`;
    note.className = "err";
  }
}

function num(id: string): number {
  return parseFloat($<HTMLInputElement>(id).value);
}

function wireControls(): void {
  $("send-shot").onclick = () => {
    const res = validateShot({
      type: $<HTMLSelectElement>("shot-type").value,
      shooting_angle_deg: num("shot-angle"),
      lateral_distance: num("shot-lateral"),
      behind_distance: num("shot-behind"),
      overtake_distance: num("shot-overtake"),
    });
    const note = $("command-note");
    if (!res.ok) {
      note.textContent = `invalid: ${res.reason}`;
      note.className = "err";
      return; // client-side rejection: no request sent
    }
    void sendCommand(res.command);
  };

  $("send-lighting").onclick = () => {
    const res = validateLighting(
      parseInt($<HTMLInputElement>("light-follower").value, 10),
      {
        chi_deg: num("light-chi"),
        varrho_deg: num("light-varrho"),
        distance: num("light-distance"),
        virtual_distance: num("light-virtual"),
      },
      state.scenario?.followers.length ?? 0,
    );
    const note = $("command-note");
    if (!res.ok) {
      note.textContent = `invalid: ${res.reason}`;
      note.className = "err";
      return;
    }
    void sendCommand(res.command);
  };

  $("pause").onclick = () => void sendCommand({ kind: "pause" });
  $("resume").onclick = () => void sendCommand({ kind: "resume" });
}

async function start(): Promise<void> {
  const params = new URLSearchParams(location.search);
  state.base = params.get("service") ?? "http://127.0.0.1:8000";
  $("service-url").textContent = state.base;
  wireControls();

  try {
    const resp = await fetch(`${state.base}/scenario`);
    state.scenario = (await resp.json()) as ScenarioInfo;
    $("scenario-name").textContent =
      `${state.scenario.name} (${state.scenario.duration}s, ` +
      `${state.scenario.followers.length} lights)`;
  } catch {
    $("scenario-name").textContent = "service unreachable";
  }

  const withCorridors = params.get("corridors") === "true";
  const url = `${state.base}/stream${withCorridors ? "?corridors=true" : ""}`;
  const client = new StreamClient(url, {
    onFrame,
    onStatus: (s) => {
      const el = $("status");
      el.textContent = s;
      el.className = s === "live" ? "ok" : s === "ended" ? "" : "err";
    },
  });
  client.connect();
}

start();
