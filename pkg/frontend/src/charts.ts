/** Strip charts over ring buffers.
 *
 * Values are stored exactly as received from the stream — no rounding,
 * scaling, or recomputation — so the plotted series is bit-identical to
 * the corresponding metrics.json series for the same run.
 */

export class RingBuffer {
  private ticks: number[] = [];
  private values: number[] = [];

  constructor(readonly capacity: number) {}

  push(tick: number, value: number): void {
    this.ticks.push(tick);
    this.values.push(value);
    if (this.ticks.length > this.capacity) {
      this.ticks.shift();
      this.values.shift();
    }
  }

  get length(): number {
    return this.values.length;
  }

  series(): { ticks: readonly number[]; values: readonly number[] } {
    return { ticks: this.ticks, values: this.values };
  }
}

export interface SeriesStyle {
  label: string;
  color: string;
  dashed?: boolean;
}

export function drawStripChart(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  buffers: RingBuffer[],
  styles: SeriesStyle[],
  opts: { zeroLine?: boolean; yLabel?: string } = {},
): void {
  ctx.clearRect(0, 0, width, height);
  let lo = Infinity;
  let hi = -Infinity;
  let t0 = Infinity;
  let t1 = -Infinity;
  for (const buf of buffers) {
    const { ticks, values } = buf.series();
    for (let i = 0; i < values.length; i++) {
      const v = values[i]!;
      const t = ticks[i]!;
      if (v < lo) lo = v;
      if (v > hi) hi = v;
      if (t < t0) t0 = t;
      if (t > t1) t1 = t;
    }
  }
  if (!Number.isFinite(lo)) return;
  if (opts.zeroLine) {
    lo = Math.min(lo, 0);
    hi = Math.max(hi, 0);
  }
  const pad = (hi - lo) * 0.08 + 1e-9;
  lo -= pad;
  hi += pad;
  const sx = (t: number) => (t1 === t0 ? width : ((t - t0) / (t1 - t0)) * width);
  const sy = (v: number) => height - ((v - lo) / (hi - lo)) * height;

  if (opts.zeroLine) {
    ctx.strokeStyle = "#888";
    ctx.setLineDash([4, 3]);
    ctx.beginPath();
    ctx.moveTo(0, sy(0));
    ctx.lineTo(width, sy(0));
    ctx.stroke();
    ctx.setLineDash([]);
  }
  buffers.forEach((buf, i) => {
    const style = styles[i]!;
    const { ticks, values } = buf.series();
    ctx.strokeStyle = style.color;
    ctx.setLineDash(style.dashed ? [5, 3] : []);
    ctx.beginPath();
    for (let k = 0; k < values.length; k++) {
      const x = sx(ticks[k]!);
      const y = sy(values[k]!);
      if (k === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
  });
  ctx.setLineDash([]);
  ctx.fillStyle = "#ccc";
  ctx.font = "10px sans-serif";
  if (opts.yLabel) ctx.fillText(opts.yLabel, 4, 12);
  ctx.fillText(hi.toPrecision(3), width - 46, 12);
  ctx.fillText(lo.toPrecision(3), width - 46, height - 4);
  styles.forEach((s, i) => {
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, 4 + 90 * i, height - 4);
  });
}
