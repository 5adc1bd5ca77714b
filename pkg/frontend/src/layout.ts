/** Axis ranges, tick selection, and data->pixel mapping shared by the
 * SVG and PNG renderers. */

import { FigureError, FigureModel, Scale } from "./figure.js";

export interface Margins {
  left: number;
  right: number;
  top: number;
  bottom: number;
}

export const MARGINS: Margins = { left: 64, right: 16, top: 28, bottom: 44 };

export interface AxisRange {
  min: number;
  max: number;
  scale: Scale;
}

export interface Layout {
  width: number;
  height: number;
  plotX: number;
  plotY: number;
  plotW: number;
  plotH: number;
  x: AxisRange;
  y: AxisRange;
  xTicks: number[];
  yTicks: number[];
}

function finiteExtent(values: number[], positiveOnly: boolean): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (!Number.isFinite(v)) continue;
    if (positiveOnly && v <= 0) continue;
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (lo === Infinity) {
    throw new FigureError("no finite data to plot");
  }
  return [lo, hi];
}

function linearTicks(lo: number, hi: number, target = 6): number[] {
  const span = hi - lo || 1;
  const step0 = span / target;
  const mag = 10 ** Math.floor(Math.log10(step0));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((s) => span / s <= target) ?? mag * 10;
  const start = Math.ceil(lo / step) * step;
  const ticks: number[] = [];
  for (let v = start; v <= hi + 1e-12 * span; v += step) {
    ticks.push(Number(v.toPrecision(12)));
  }
  return ticks;
}

function logTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  for (let e = Math.ceil(Math.log10(lo) - 1e-9); 10 ** e <= hi * (1 + 1e-9); e++) {
    ticks.push(10 ** e);
  }
  if (ticks.length === 0) ticks.push(lo, hi);
  return ticks;
}

export function computeLayout(model: FigureModel): Layout {
  const xs = model.series.flatMap((s) => s.x).concat(model.markers.map((m) => m.x));
  const ys = model.series.flatMap((s) => [...s.y, ...s.lo, ...s.hi]);
  const [xLo, xHi] = finiteExtent(xs, model.xScale === "log");
  let [yLo, yHi] = finiteExtent(ys, model.yScale === "log");
  if (model.yScale === "linear") {
    const pad = 0.05 * (yHi - yLo || Math.abs(yHi) || 1);
    yLo = Math.min(yLo - pad, yLo >= 0 ? 0 : yLo - pad);
    yHi += pad;
  } else {
    yLo /= 1.5;
    yHi *= 1.5;
  }
  const x: AxisRange = { min: xLo, max: xHi === xLo ? xLo + 1 : xHi, scale: model.xScale };
  const y: AxisRange = { min: yLo, max: yHi === yLo ? yLo + 1 : yHi, scale: model.yScale };
  return {
    width: model.width,
    height: model.height,
    plotX: MARGINS.left,
    plotY: MARGINS.top,
    plotW: model.width - MARGINS.left - MARGINS.right,
    plotH: model.height - MARGINS.top - MARGINS.bottom,
    x,
    y,
    xTicks: x.scale === "log" ? logTicks(x.min, x.max) : linearTicks(x.min, x.max),
    yTicks: y.scale === "log" ? logTicks(y.min, y.max) : linearTicks(y.min, y.max),
  };
}

function fraction(r: AxisRange, v: number): number {
  if (r.scale === "log") {
    return (Math.log10(v) - Math.log10(r.min)) / (Math.log10(r.max) - Math.log10(r.min));
  }
  return (v - r.min) / (r.max - r.min);
}

export function toPixelX(l: Layout, v: number): number {
  return l.plotX + fraction(l.x, v) * l.plotW;
}

export function toPixelY(l: Layout, v: number): number {
  return l.plotY + (1 - fraction(l.y, v)) * l.plotH;
}

export function formatTick(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 0.01 && a < 10_000) {
    return Number(v.toPrecision(4)).toString();
  }
  return v.toExponential(0).replace("+", "");
}

/** y values clamped into the drawable range for log scales (CI bands can
 * touch zero, which a log axis cannot represent). */
export function clampForScale(l: Layout, v: number): number {
  if (l.y.scale === "log" && v < l.y.min) return l.y.min;
  return v;
}
