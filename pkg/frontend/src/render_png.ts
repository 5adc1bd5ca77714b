/** PNG renderer: same layout as the SVG path, rasterized in software.
 * The figure model rides along in a tEXt chunk. */

import { FigureModel } from "./figure.js";
import { Layout, clampForScale, computeLayout, formatTick, toPixelX, toPixelY } from "./layout.js";
import { encodePng } from "./png.js";
import { Canvas, hexColor } from "./raster.js";

const INK = hexColor("#333333");
const GRID = hexColor("#e0e0e0");
const MARKER = hexColor("#555555");

export function renderPng(model: FigureModel): Buffer {
  const l = computeLayout(model);
  const cv = new Canvas(l.width, l.height);

  for (const t of l.yTicks) {
    const y = Math.round(toPixelY(l, t));
    cv.line(l.plotX, y, l.plotX + l.plotW, y, GRID);
    cv.text(l.plotX - 4, y + 3, formatTick(t), INK, "right");
  }
  for (const t of l.xTicks) {
    const x = Math.round(toPixelX(l, t));
    cv.line(x, l.plotY + l.plotH, x, l.plotY + l.plotH + 3, INK);
    cv.text(x, l.plotY + l.plotH + 16, formatTick(t), INK, "center");
  }

  for (const s of model.series) {
    const band = hexColor(s.color, 0.15);
    for (let i = 0; i + 1 < s.x.length; i++) {
      const x0 = toPixelX(l, s.x[i]);
      const x1 = toPixelX(l, s.x[i + 1]);
      for (let x = Math.round(x0); x <= Math.round(x1); x++) {
        const f = x1 === x0 ? 0 : (x - x0) / (x1 - x0);
        const lo = toPixelY(l, clampForScale(l, s.lo[i] + f * (s.lo[i + 1] - s.lo[i])));
        const hi = toPixelY(l, clampForScale(l, s.hi[i] + f * (s.hi[i + 1] - s.hi[i])));
        cv.vspan(x, hi, lo, band);
      }
    }
  }
  for (const s of model.series) {
    const c = hexColor(s.color);
    for (let i = 0; i + 1 < s.x.length; i++) {
      cv.line(
        toPixelX(l, s.x[i]),
        toPixelY(l, clampForScale(l, s.y[i])),
        toPixelX(l, s.x[i + 1]),
        toPixelY(l, clampForScale(l, s.y[i + 1])),
        c,
      );
    }
  }
  for (const m of model.markers) {
    const x = Math.round(toPixelX(l, m.x));
    cv.line(x, l.plotY, x, l.plotY + l.plotH, MARKER, m.style === "dashed" ? [5, 4] : undefined);
    if (m.label) cv.text(x + 3, l.plotY + 10, m.label, MARKER);
  }
  cv.rect(l.plotX, l.plotY, l.plotX + l.plotW, l.plotY + l.plotH, INK);

  // legend swatches
  model.series.forEach((s, i) => {
    const y = l.plotY + 12 + 12 * i;
    const x = l.plotX + l.plotW - 120;
    cv.line(x, y - 3, x + 16, y - 3, hexColor(s.color));
  });

  return encodePng(l.width, l.height, cv.data, {
    "figure-model": JSON.stringify(model),
  });
}
