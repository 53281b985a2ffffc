/** SSE client with reconnect backoff.
 *
 * The EventSource constructor is injectable so the reconnect logic is
 * testable without a browser. Frames are delivered in arrival order; the
 * server already guarantees latest-frame-wins decimation.
 */

import { StateFrame } from "./types.js";

export type ConnectionStatus = "connecting" | "live" | "reconnecting" | "ended";

export interface EventSourceLike {
  onopen: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  addEventListener(type: string, cb: (ev: MessageEvent) => void): void;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface StreamCallbacks {
  onFrame: (frame: StateFrame) => void;
  onStatus: (status: ConnectionStatus) => void;
}

const BACKOFF_START_MS = 500;
const BACKOFF_MAX_MS = 8000;

export class StreamClient {
  private es: EventSourceLike | null = null;
  private backoffMs = BACKOFF_START_MS;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;
  status: ConnectionStatus = "connecting";
  lastTick = -1;

  constructor(
    private url: string,
    private callbacks: StreamCallbacks,
    private factory: EventSourceFactory = (u) =>
      new EventSource(u) as unknown as EventSourceLike,
  ) {}

  connect(): void {
    if (this.closed) return;
    this.setStatus(this.status === "connecting" ? "connecting" : "reconnecting");
    const es = this.factory(this.url);
    this.es = es;
    es.onopen = () => {
      this.backoffMs = BACKOFF_START_MS;
      this.setStatus("live");
    };
    es.addEventListener("message", (ev) => {
      const frame = JSON.parse(ev.data) as StateFrame;
      this.lastTick = frame.tick;
      this.callbacks.onFrame(frame);
    });
    es.addEventListener("end", () => {
      this.setStatus("ended");
      this.close();
    });
    es.onerror = () => {
      if (this.closed || this.status === "ended") return;
      es.close();
      this.setStatus("reconnecting");
      this.timer = setTimeout(() => this.connect(), this.backoffMs);
      this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_MAX_MS);
    };
  }

  close(): void {
    this.closed = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.es?.close();
  }

  private setStatus(s: ConnectionStatus): void {
    this.status = s;
    this.callbacks.onStatus(s);
  }
}
