/** Reader for the training lab's metrics JSONL (schema looplab.metrics.v1). */

import { readFileSync } from "node:fs";

export const METRICS_SCHEMA = "looplab.metrics.v1";

export interface MetricsRecord {
  schema: string;
  kind: "error_vs_k" | "error_vs_loop" | "accuracy";
  task: Record<string, unknown>;
  model_id: string;
  transform: { kind: string } | null;
  axis: number[];
  mean: number[];
  ci_lo: number[];
  ci_hi: number[];
  n_prompts: number;
  n_bootstrap: number;
  seed: number;
  step?: number;
  trained_b?: number;
  b_cur?: number;
}

export class MetricsError extends Error {}

export function parseMetricsLine(line: string, context: string): MetricsRecord {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch (e) {
    throw new MetricsError(`${context}: malformed JSONL line: ${(e as Error).message}`);
  }
  const rec = obj as Partial<MetricsRecord>;
  if (rec.schema !== METRICS_SCHEMA) {
    throw new MetricsError(`${context}: unsupported schema ${String(rec.schema)}`);
  }
  for (const key of ["kind", "model_id", "axis", "mean", "ci_lo", "ci_hi"] as const) {
    if (rec[key] === undefined) {
      throw new MetricsError(`${context}: record is missing '${key}'`);
    }
  }
  const n = (rec.axis as number[]).length;
  for (const key of ["mean", "ci_lo", "ci_hi"] as const) {
    if ((rec[key] as number[]).length !== n) {
      throw new MetricsError(`${context}: '${key}' length differs from axis`);
    }
  }
  return rec as MetricsRecord;
}

export function readMetricsFile(path: string): MetricsRecord[] {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch {
    throw new MetricsError(`cannot read metrics file ${path}`);
  }
  const records: MetricsRecord[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line.length === 0) continue;
    records.push(parseMetricsLine(line, `${path}:${i + 1}`));
  }
  return records;
}
