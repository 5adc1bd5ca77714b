#!/usr/bin/env node
/** plot --spec figure.json --out fig.png
 *
 * The output format comes from --format or the output extension. On any
 * error (missing series, malformed metrics, empty inputs) nothing is
 * written and the exit status is nonzero. */

import { readFileSync, writeFileSync } from "node:fs";
import { dirname, extname, resolve } from "node:path";

import { FigureError, buildFigureModel, validateSpec } from "./figure.js";
import { MetricsError } from "./metrics.js";
import { renderPng } from "./render_png.js";
import { renderSvg } from "./render_svg.js";

interface Args {
  spec: string;
  out: string;
  format?: "png" | "svg";
}

function parseArgs(argv: string[]): Args {
  const out: Partial<Args> = {};
  const positional: string[] = [];
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    if (a === "--spec") out.spec = argv[++i];
    else if (a === "--out") out.out = argv[++i];
    else if (a === "--format") out.format = argv[++i] as Args["format"];
    else if (a === "plot") continue; // tolerated subcommand word
    else if (a === "--help" || a === "-h") {
      console.log("usage: looplab-plot plot --spec figure.json --out fig.{png,svg} [--format png|svg]");
      process.exit(0);
    } else positional.push(a);
  }
  if (!out.spec || !out.out) {
    throw new FigureError("both --spec and --out are required (see --help)");
  }
  if (out.format && out.format !== "png" && out.format !== "svg") {
    throw new FigureError(`unknown format '${out.format}'`);
  }
  return out as Args;
}

export function run(argv: string[]): number {
  try {
    const args = parseArgs(argv);
    const specRaw = JSON.parse(readFileSync(args.spec, "utf-8"));
    const spec = validateSpec(specRaw);
    // metrics paths resolve relative to the spec file
    const base = dirname(resolve(args.spec));
    spec.inputs = spec.inputs.map((inp) => ({ ...inp, file: resolve(base, inp.file) }));
    const model = buildFigureModel(spec);
    const format = args.format ?? (extname(args.out).slice(1) as Args["format"]);
    if (format === "svg") {
      writeFileSync(args.out, renderSvg(model));
    } else if (format === "png") {
      writeFileSync(args.out, renderPng(model));
    } else {
      throw new FigureError(`cannot infer format from '${args.out}'; pass --format`);
    }
    console.log(`wrote ${args.out} (${model.series.length} series, ${format})`);
    return 0;
  } catch (e) {
    if (e instanceof FigureError || e instanceof MetricsError || (e as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`error: ${(e as Error).message}`);
      return 1;
    }
    throw e;
  }
}

const invokedDirectly = process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(run(process.argv.slice(2)));
}
