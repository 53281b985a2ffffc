import { describe, expect, it } from "vitest";
import { RingBuffer } from "../src/charts.js";

describe("chart ring buffer", () => {
  it("stores streamed values verbatim (bitwise after JSON round-trip)", () => {
    // awkward doubles exactly as a StateFrame JSON parse would produce them
    const frameJson = `{"tick": 7, "d_f": {"follower0": 3.0000000000000004,
      "follower1": 0.30000000000000004}}`;
    const frame = JSON.parse(frameJson) as { tick: number; d_f: Record<string, number> };
    const buf = new RingBuffer(100);
    buf.push(frame.tick, frame.d_f["follower0"]!);
    const { values } = buf.series();
    expect(Object.is(values[0], frame.d_f["follower0"])).toBe(true);
    expect(values[0]).toBe(3.0000000000000004);
  });

  it("keeps at most `capacity` samples, dropping the oldest", () => {
    const buf = new RingBuffer(3);
    for (let k = 0; k < 5; k++) buf.push(k, k * 0.1);
    const { ticks, values } = buf.series();
    expect(ticks).toEqual([2, 3, 4]);
    expect(values).toEqual([0.2, 0.30000000000000004, 0.4]);
  });

  it("keeps ticks and values aligned", () => {
    const buf = new RingBuffer(10);
    buf.push(4, -0.25);
    buf.push(6, 1.5);
    const { ticks, values } = buf.series();
    expect(ticks.length).toBe(values.length);
    expect(ticks[1]).toBe(6);
    expect(values[1]).toBe(1.5);
  });
});
