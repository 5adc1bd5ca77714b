/** SVG renderer. The figure model is embedded verbatim in <metadata> so
 * downstream tooling (and the structural tests) can recover the plotted
 * arrays from the file itself. */

import { FigureModel } from "./figure.js";
import { Layout, clampForScale, computeLayout, formatTick, toPixelX, toPixelY } from "./layout.js";

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

function px(v: number): string {
  return Number(v.toFixed(2)).toString();
}

function polyline(points: [number, number][]): string {
  return points.map(([a, b]) => `${px(a)},${px(b)}`).join(" ");
}

function bandPath(l: Layout, x: number[], lo: number[], hi: number[]): string {
  const up: [number, number][] = x.map((xv, i) => [
    toPixelX(l, xv),
    toPixelY(l, clampForScale(l, hi[i])),
  ]);
  const down: [number, number][] = [...x.keys()]
    .reverse()
    .map((i) => [toPixelX(l, x[i]), toPixelY(l, clampForScale(l, lo[i]))]);
  return polyline(up.concat(down));
}

export function renderSvg(model: FigureModel): string {
  const l = computeLayout(model);
  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${l.width}" height="${l.height}" ` +
      `viewBox="0 0 ${l.width} ${l.height}" font-family="Helvetica, Arial, sans-serif">`,
  );
  parts.push(`<metadata id="figure-model">${esc(JSON.stringify(model))}</metadata>`);
  parts.push(`<rect width="${l.width}" height="${l.height}" fill="white"/>`);

  // grid + ticks
  for (const t of l.yTicks) {
    const y = toPixelY(l, t);
    parts.push(
      `<line x1="${px(l.plotX)}" y1="${px(y)}" x2="${px(l.plotX + l.plotW)}" y2="${px(y)}" ` +
        `stroke="#e0e0e0" stroke-width="1"/>`,
      `<text x="${px(l.plotX - 6)}" y="${px(y + 3)}" text-anchor="end" font-size="10" ` +
        `fill="#333">${formatTick(t)}</text>`,
    );
  }
  for (const t of l.xTicks) {
    const x = toPixelX(l, t);
    parts.push(
      `<line x1="${px(x)}" y1="${px(l.plotY + l.plotH)}" x2="${px(x)}" ` +
        `y2="${px(l.plotY + l.plotH + 4)}" stroke="#333" stroke-width="1"/>`,
      `<text x="${px(x)}" y="${px(l.plotY + l.plotH + 16)}" text-anchor="middle" ` +
        `font-size="10" fill="#333">${formatTick(t)}</text>`,
    );
  }

  // CI bands under the curves
  for (const s of model.series) {
    parts.push(
      `<polygon points="${bandPath(l, s.x, s.lo, s.hi)}" fill="${s.color}" ` +
        `fill-opacity="0.15" stroke="none"/>`,
    );
  }
  // curves
  for (const s of model.series) {
    const pts: [number, number][] = s.x.map((xv, i) => [
      toPixelX(l, xv),
      toPixelY(l, clampForScale(l, s.y[i])),
    ]);
    parts.push(
      `<polyline points="${polyline(pts)}" fill="none" stroke="${s.color}" ` +
        `stroke-width="1.8" class="series" data-label="${esc(s.label)}"/>`,
    );
  }
  // vertical reference markers (e.g. the trained loop depth)
  for (const m of model.markers) {
    const x = toPixelX(l, m.x);
    const dash = m.style === "dashed" ? ` stroke-dasharray="5,4"` : "";
    parts.push(
      `<line x1="${px(x)}" y1="${px(l.plotY)}" x2="${px(x)}" y2="${px(l.plotY + l.plotH)}" ` +
        `stroke="#555" stroke-width="1.2"${dash} class="marker" data-x="${m.x}"/>`,
    );
    if (m.label) {
      parts.push(
        `<text x="${px(x + 3)}" y="${px(l.plotY + 10)}" font-size="9" fill="#555">` +
          `${esc(m.label)}</text>`,
      );
    }
  }
  // frame
  parts.push(
    `<rect x="${px(l.plotX)}" y="${px(l.plotY)}" width="${px(l.plotW)}" height="${px(l.plotH)}" ` +
      `fill="none" stroke="#333" stroke-width="1"/>`,
  );
  // labels + title
  parts.push(
    `<text x="${px(l.plotX + l.plotW / 2)}" y="${px(l.height - 8)}" text-anchor="middle" ` +
      `font-size="12" fill="#111">${esc(model.xLabel)}</text>`,
    `<text x="14" y="${px(l.plotY + l.plotH / 2)}" text-anchor="middle" font-size="12" ` +
      `fill="#111" transform="rotate(-90 14 ${px(l.plotY + l.plotH / 2)})">` +
      `${esc(model.yLabel)}</text>`,
  );
  if (model.title) {
    parts.push(
      `<text x="${px(l.plotX + l.plotW / 2)}" y="18" text-anchor="middle" font-size="13" ` +
        `fill="#111">${esc(model.title)}</text>`,
    );
  }
  // legend
  model.series.forEach((s, i) => {
    const ly = l.plotY + 14 + 14 * i;
    const lx = l.plotX + l.plotW - 130;
    parts.push(
      `<line x1="${px(lx)}" y1="${px(ly - 3)}" x2="${px(lx + 18)}" y2="${px(ly - 3)}" ` +
        `stroke="${s.color}" stroke-width="2"/>`,
      `<text x="${px(lx + 23)}" y="${px(ly)}" font-size="10" fill="#111">${esc(s.label)}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("\n") + "\n";
}

/** Recover the embedded figure model from a rendered SVG. */
export function extractModelFromSvg(svg: string): FigureModel {
  const m = svg.match(/<metadata id="figure-model">([\s\S]*?)<\/metadata>/);
  if (!m) throw new Error("no embedded figure model found");
  const json = m[1].replace(/&amp;/g, "&").replace(/&lt;/g, "<").replace(/&gt;/g, ">");
  return JSON.parse(json) as FigureModel;
}
