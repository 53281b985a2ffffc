"""Live director service: streams simulation state over HTTP server-sent
events and accepts shot/lighting commands that take effect at the next
replan boundary of the affected vehicle.

One writer (the simulation loop, paced to wall time) publishes frames;
any number of SSE subscribers read them with latest-frame-wins semantics.
Commands are validated here, queued into the simulation, and drained at
tick boundaries, so a replan cycle sees either the old or the new command,
never a blend. See ``docs/service-schema.md`` for the wire format.
"""
from __future__ import annotations

import asyncio
import errno
from contextlib import asynccontextmanager
import json
import logging
import math
import threading
import time

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
import uvicorn

from .formation import LightingSpec
from .shots import ShotCommand, ShotType
from .sim import Scenario, Simulation

log = logging.getLogger(__name__)


class BindError(RuntimeError):
    """The requested address could not be bound."""


def _frame_payload(sim: Simulation, frame: dict, include_corridors: bool) -> dict:
    out = dict(frame)
    out["paused"] = False  # overwritten by the publisher when paused
    if include_corridors:
        polys = []
        for veh in [sim.leader, *sim.followers]:
            cor = veh.corridor
            if cor is None:
                polys.append({"entity": veh.name, "polys": []})
                continue
            seen = {}
            uniq = []
            for p in cor.polys:
                if id(p) in seen:
                    continue
                seen[id(p)] = True
                uniq.append({"normals": p.normals.tolist(),
                             "offsets": p.offsets.tolist()})
            polys.append({"entity": veh.name, "polys": uniq})
        out["corridors"] = polys
    return out


class DirectorSession:
    """Owns one simulation, its pacing thread, and the frame fan-out."""

    def __init__(self, scenario: Scenario, tick_rate: float, realtime: bool = True):
        self.sim = Simulation(scenario)
        self.scenario = scenario
        self.tick_rate = float(tick_rate)
        self.realtime = realtime
        self.decim = max(1, int(round(1.0 / (scenario.tick * self.tick_rate))))
        self.paused = False
        self.done = False
        self.stopped = False
        self._lock = threading.Lock()
        self._latest: dict | None = None
        self._latest_id = -1
        self._subscribers: set[asyncio.Queue] = set()
        self._loop: asyncio.AbstractEventLoop | None = None
        self._thread: threading.Thread | None = None

    # -- simulation loop ---------------------------------------------------
    def start(self, loop: asyncio.AbstractEventLoop) -> None:
        self._loop = loop
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        sc = self.scenario
        n_ticks = int(round(sc.duration / sc.tick))
        next_wall = time.monotonic()
        while self.sim.tick_idx < n_ticks and not self.stopped:
            if self.paused:
                time.sleep(0.02)
                next_wall = time.monotonic()
                continue
            with self._lock:
                frame = self.sim.step()
            if (frame["tick"] % self.decim) == 0:
                self._publish(frame)
            if self.realtime:
                next_wall += sc.tick
                delay = next_wall - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                else:
                    next_wall = time.monotonic()
        self.done = True
        self._publish(None)

    def _publish(self, frame: dict | None) -> None:
        if frame is not None:
            self._latest = frame
            self._latest_id = frame["tick"]
        if self._loop is None or self.stopped:
            return

        def fan_out():
            for q in list(self._subscribers):
                # latest-frame-wins: drop the stale frame for slow readers
                if q.full():
                    try:
                        q.get_nowait()
                    except asyncio.QueueEmpty:
                        pass
                q.put_nowait(frame)
        try:
            self._loop.call_soon_threadsafe(fan_out)
        except RuntimeError:  # event loop already shut down
            pass

    # -- subscriptions -----------------------------------------------------
    def subscribe(self) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue(maxsize=1)
        self._subscribers.add(q)
        return q

    def unsubscribe(self, q: asyncio.Queue) -> None:
        self._subscribers.discard(q)

    # -- commands ----------------------------------------------------------
    def apply_command(self, cmd: dict) -> dict:
        kind = cmd.get("kind")
        payload = cmd.get("payload") or {}
        try:
            with self._lock:
                if kind == "set_shot":
                    shot = _parse_shot(payload)
                    tick = self.sim.queue_shot(shot)
                    return {"ack": True, "tick": tick}
                if kind == "set_lighting":
                    idx = payload.get("follower_id")
                    if not isinstance(idx, int) or not (0 <= idx < len(self.sim.followers)):
                        return {"nack": True, "reason": f"unknown follower {idx!r}"}
                    spec = _parse_lighting(payload.get("lighting") or {})
                    tick = self.sim.queue_lighting(idx, spec)
                    return {"ack": True, "tick": tick}
                if kind == "set_target":
                    if payload.get("target_id", 0) != 0:
                        return {"nack": True, "reason": "unknown target"}
                    return {"ack": True, "tick": self.sim.tick_idx}
                if kind == "pause":
                    self.paused = True
                    return {"ack": True, "tick": self.sim.tick_idx}
                if kind == "resume":
                    self.paused = False
                    return {"ack": True, "tick": self.sim.tick_idx}
        except (ValueError, KeyError, TypeError) as exc:
            return {"nack": True, "reason": str(exc)}
        return {"nack": True, "reason": f"unknown command kind {kind!r}"}


def _parse_shot(payload: dict) -> ShotCommand:
    try:
        shot_type = ShotType(payload["type"])
    except (KeyError, ValueError):
        raise ValueError(f"unknown shot type {payload.get('type')!r}")
    kwargs = {"shot_type": shot_type}
    if "shooting_angle_deg" in payload:
        kwargs["shooting_angle"] = math.radians(float(payload["shooting_angle_deg"]))
    for key in ("lateral_distance", "behind_distance", "overtake_distance", "duration"):
        if key in payload:
            val = float(payload[key])
            if key != "duration" and val <= 0.0:
                raise ValueError(f"{key} must be positive")
            kwargs[key] = val
    return ShotCommand(**kwargs)


def _parse_lighting(obj: dict) -> LightingSpec:
    distance = float(obj.get("distance", 6.0))
    virtual_distance = float(obj.get("virtual_distance", 5.0))
    if distance <= 0.0 or virtual_distance <= 0.0:
        raise ValueError("lighting distances must be positive")
    return LightingSpec(
        chi=math.radians(float(obj.get("chi_deg", 45.0))),
        varrho=math.radians(float(obj.get("varrho_deg", 15.0))),
        distance=distance,
        virtual_distance=virtual_distance,
    )


def _scenario_summary(sc: Scenario) -> dict:
    return {
        "name": sc.name,
        "duration": sc.duration,
        "seed": sc.seed,
        "tick": sc.tick,
        "bounds": [list(sc.bounds[0]), list(sc.bounds[1])],
        "leader_period": sc.leader_period,
        "follower_period": sc.follower_period,
        "followers": [
            {"name": f"follower{i}",
             "lighting": {"chi_deg": math.degrees(f.lighting.chi),
                          "varrho_deg": math.degrees(f.lighting.varrho),
                          "distance": f.lighting.distance,
                          "virtual_distance": f.lighting.virtual_distance}}
            for i, f in enumerate(sc.followers)
        ],
        "shots": [{"start_time": t, "type": s.shot_type.value} for t, s in sc.shots],
        "obstacle_points": sc.cloud.points.tolist(),
    }


def create_app(scenario: Scenario, tick_rate: float = 20.0,
               realtime: bool = True) -> FastAPI:
    session = DirectorSession(scenario, tick_rate, realtime=realtime)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        session.start(asyncio.get_running_loop())
        yield
        session.stopped = True

    app = FastAPI(title="cineswarm director service", lifespan=lifespan)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.session = session

    @app.get("/health")
    async def health() -> dict:
        return {"status": "ok", "tick": session.sim.tick_idx,
                "paused": session.paused, "done": session.done}

    @app.get("/scenario")
    async def scenario_info() -> dict:
        return _scenario_summary(session.scenario)

    @app.post("/command")
    async def command(request: Request) -> JSONResponse:
        try:
            cmd = await request.json()
        except Exception:
            return JSONResponse({"nack": True, "reason": "malformed JSON"}, status_code=400)
        result = session.apply_command(cmd)
        status = 200 if result.get("ack") else 422
        return JSONResponse(result, status_code=status)

    @app.get("/stream")
    async def stream(request: Request, corridors: bool = False) -> StreamingResponse:
        q = session.subscribe()

        async def gen():
            try:
                # greet with the latest frame so late joiners render at once
                if session._latest is not None:
                    payload = _frame_payload(session.sim, session._latest, corridors)
                    payload["paused"] = session.paused
                    yield f"id: {payload['tick']}\ndata: {json.dumps(payload)}\n\n"
                while True:
                    frame = await q.get()
                    if frame is None:
                        yield "event: end\ndata: {}\n\n"
                        return
                    payload = _frame_payload(session.sim, frame, corridors)
                    payload["paused"] = session.paused
                    yield f"id: {payload['tick']}\ndata: {json.dumps(payload)}\n\n"
            finally:
                session.unsubscribe(q)

        return StreamingResponse(gen(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache"})

    return app


def serve(scenario: Scenario, host: str, port: int, tick_rate: float = 20.0,
          realtime: bool = True) -> None:
    """Run the service until interrupted; raises BindError if the port is taken."""
    app = create_app(scenario, tick_rate, realtime=realtime)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    try:
        server.run()
    except SystemExit as exc:  # uvicorn exits on startup failure
        raise BindError(f"cannot bind {host}:{port}") from exc
    except OSError as exc:
        if exc.errno in (errno.EADDRINUSE, errno.EACCES, errno.EADDRNOTAVAIL):
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
        raise
