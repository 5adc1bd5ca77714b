/** Figure specs and the pure data model every renderer consumes.
 *
 * Rendering never computes statistics: the model's arrays are copied
 * verbatim from the metrics records, which is what the structural tests
 * compare against.
 */

import { MetricsError, MetricsRecord, readMetricsFile } from "./metrics.js";

export type AxisKind = "error_vs_k" | "error_vs_loop";
export type Scale = "linear" | "log";
export type Format = "png" | "svg";

export interface SeriesSelect {
  kind?: string;
  model_id?: string;
  transform?: string | null;
  index?: number; // among matches, default 0
}

export interface SeriesSpec {
  file: string;
  label: string;
  select?: SeriesSelect;
}

export interface ReferenceLine {
  x: number;
  style: "dashed" | "solid";
  label?: string;
}

export interface FigureSpec {
  kind: AxisKind;
  inputs: SeriesSpec[];
  title?: string;
  x_scale?: Scale;
  y_scale?: Scale;
  /** extra vertical markers; trained-b dashed lines are added automatically
   * for error_vs_loop series that carry trained_b */
  reference_lines?: ReferenceLine[];
  width?: number;
  height?: number;
}

export interface Series {
  label: string;
  x: number[];
  y: number[];
  lo: number[];
  hi: number[];
  color: string;
}

export interface FigureModel {
  kind: AxisKind;
  title: string;
  xLabel: string;
  yLabel: string;
  xScale: Scale;
  yScale: Scale;
  series: Series[];
  markers: ReferenceLine[];
  width: number;
  height: number;
}

export class FigureError extends Error {}

const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

export function validateSpec(spec: unknown): FigureSpec {
  const s = spec as Partial<FigureSpec>;
  if (s.kind !== "error_vs_k" && s.kind !== "error_vs_loop") {
    throw new FigureError(`spec.kind must be error_vs_k or error_vs_loop, got ${String(s.kind)}`);
  }
  if (!Array.isArray(s.inputs) || s.inputs.length === 0) {
    throw new FigureError("spec.inputs must be a non-empty array");
  }
  for (const inp of s.inputs) {
    if (typeof inp.file !== "string" || typeof inp.label !== "string") {
      throw new FigureError("every input needs a file and a label");
    }
  }
  for (const scale of [s.x_scale, s.y_scale]) {
    if (scale !== undefined && scale !== "linear" && scale !== "log") {
      throw new FigureError(`scale must be linear or log, got ${String(scale)}`);
    }
  }
  return s as FigureSpec;
}

function matches(rec: MetricsRecord, sel: SeriesSelect | undefined, kind: AxisKind): boolean {
  if (rec.kind !== (sel?.kind ?? kind)) return false;
  if (sel?.model_id !== undefined && rec.model_id !== sel.model_id) return false;
  if (sel?.transform !== undefined) {
    const t = rec.transform?.kind ?? null;
    if (t !== sel.transform) return false;
  }
  return true;
}

export function buildFigureModel(spec: FigureSpec): FigureModel {
  const series: Series[] = [];
  const markers: ReferenceLine[] = [...(spec.reference_lines ?? [])];
  spec.inputs.forEach((inp, i) => {
    const records = readMetricsFile(inp.file);
    if (records.length === 0) {
      throw new FigureError(`${inp.file}: empty metrics file`);
    }
    const hits = records.filter((r) => matches(r, inp.select, spec.kind));
    const rec = hits[inp.select?.index ?? 0];
    if (rec === undefined) {
      throw new FigureError(
        `series '${inp.label}': no record in ${inp.file} matches ` +
          JSON.stringify({ kind: spec.kind, ...inp.select }),
      );
    }
    series.push({
      label: inp.label,
      x: [...rec.axis],
      y: [...rec.mean],
      lo: [...rec.ci_lo],
      hi: [...rec.ci_hi],
      color: PALETTE[i % PALETTE.length],
    });
    if (spec.kind === "error_vs_loop" && rec.trained_b !== undefined) {
      markers.push({ x: rec.trained_b, style: "dashed", label: `b=${rec.trained_b}` });
    }
  });
  return {
    kind: spec.kind,
    title: spec.title ?? "",
    xLabel: spec.kind === "error_vs_k" ? "in-context examples" : "loop iteration",
    yLabel: "normalized squared error",
    xScale: spec.x_scale ?? "linear",
    yScale: spec.y_scale ?? "linear",
    series,
    markers,
    width: spec.width ?? 640,
    height: spec.height ?? 420,
  };
}

/** The structural-test hook: plotted arrays exactly as rendered. */
export function extractPlottedArrays(model: FigureModel): {
  series: { label: string; x: number[]; y: number[]; lo: number[]; hi: number[] }[];
  markers: ReferenceLine[];
} {
  return {
    series: model.series.map(({ label, x, y, lo, hi }) => ({ label, x, y, lo, hi })),
    markers: model.markers,
  };
}
