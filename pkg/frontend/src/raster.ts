/** Tiny software rasterizer: lines (optionally dashed), filled vertical
 * spans for CI bands, and a 5x7 bitmap font for tick labels. */

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number;
}

export function hexColor(hex: string, alpha = 1): Rgba {
  const v = parseInt(hex.slice(1), 16);
  return { r: (v >> 16) & 0xff, g: (v >> 8) & 0xff, b: v & 0xff, a: alpha };
}

export class Canvas {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8ClampedArray; // RGBA rows

  constructor(width: number, height: number) {
    this.width = width;
    this.height = height;
    this.data = new Uint8ClampedArray(width * height * 4).fill(255);
  }

  blend(x: number, y: number, c: Rgba): void {
    if (x < 0 || y < 0 || x >= this.width || y >= this.height) return;
    const i = (y * this.width + x) * 4;
    const a = c.a;
    this.data[i] = c.r * a + this.data[i] * (1 - a);
    this.data[i + 1] = c.g * a + this.data[i + 1] * (1 - a);
    this.data[i + 2] = c.b * a + this.data[i + 2] * (1 - a);
  }

  vspan(x: number, y0: number, y1: number, c: Rgba): void {
    const [lo, hi] = y0 <= y1 ? [y0, y1] : [y1, y0];
    for (let y = Math.round(lo); y <= Math.round(hi); y++) this.blend(x, y, c);
  }

  line(x0: number, y0: number, x1: number, y1: number, c: Rgba, dash?: [number, number]): void {
    // Bresenham with an on/off pattern measured in steps
    let xi = Math.round(x0);
    let yi = Math.round(y0);
    const xe = Math.round(x1);
    const ye = Math.round(y1);
    const dx = Math.abs(xe - xi);
    const dy = -Math.abs(ye - yi);
    const sx = xi < xe ? 1 : -1;
    const sy = yi < ye ? 1 : -1;
    let err = dx + dy;
    let step = 0;
    for (;;) {
      const on = !dash || step % (dash[0] + dash[1]) < dash[0];
      if (on) {
        this.blend(xi, yi, c);
        // thicken perpendicular-ish for visibility
        if (dx >= -dy) this.blend(xi, yi + 1, { ...c, a: c.a * 0.5 });
        else this.blend(xi + 1, yi, { ...c, a: c.a * 0.5 });
      }
      if (xi === xe && yi === ye) break;
      const e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        xi += sx;
      }
      if (e2 <= dx) {
        err += dx;
        yi += sy;
      }
      step++;
    }
  }

  rect(x0: number, y0: number, x1: number, y1: number, c: Rgba): void {
    this.line(x0, y0, x1, y0, c);
    this.line(x1, y0, x1, y1, c);
    this.line(x1, y1, x0, y1, c);
    this.line(x0, y1, x0, y0, c);
  }

  text(x: number, y: number, s: string, c: Rgba, align: "left" | "center" | "right" = "left"): void {
    const w = s.length * 6;
    let cx = align === "left" ? x : align === "center" ? x - w / 2 : x - w;
    cx = Math.round(cx);
    for (const ch of s) {
      const glyph = FONT[ch] ?? FONT["?"];
      for (let row = 0; row < 7; row++) {
        for (let col = 0; col < 5; col++) {
          if ((glyph[row] >> (4 - col)) & 1) this.blend(cx + col, y - 6 + row, c);
        }
      }
      cx += 6;
    }
  }
}

// 5x7 glyphs for tick labels (digits, sign, dot, exponent notation)
const FONT: Record<string, number[]> = {
  "0": [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
  "1": [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
  "2": [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
  "3": [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
  "4": [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
  "5": [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
  "6": [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
  "7": [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
  "8": [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
  "9": [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
  ".": [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100],
  "-": [0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000],
  "+": [0b00000, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0b00000],
  e: [0b00000, 0b00000, 0b01110, 0b10001, 0b11111, 0b10000, 0b01110],
  b: [0b10000, 0b10000, 0b11110, 0b10001, 0b10001, 0b10001, 0b11110],
  "=": [0b00000, 0b00000, 0b11111, 0b00000, 0b11111, 0b00000, 0b00000],
  "?": [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b00000, 0b00100],
  " ": [0, 0, 0, 0, 0, 0, 0],
};
