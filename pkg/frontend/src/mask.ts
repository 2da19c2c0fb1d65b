/** Editable-region mask layer: circular brush/erase stamps over a byte
 * grid at image resolution. Export is strictly binary (thresholded), and
 * an untouched mask exports as null so the server treats the whole image
 * as editable. */

export class MaskLayer {
  readonly width: number;
  readonly height: number;
  data: Uint8Array;
  private touched = false;

  constructor(width: number, height: number) {
    this.width = width;
    this.height = height;
    this.data = new Uint8Array(width * height);
  }

  stamp(cx: number, cy: number, radius: number, value: 0 | 255): void {
    const r2 = radius * radius;
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) this.data[y * this.width + x] = value;
      }
    }
    this.touched = true;
  }

  brush(cx: number, cy: number, radius: number): void {
    this.stamp(cx, cy, radius, 255);
  }

  erase(cx: number, cy: number, radius: number): void {
    this.stamp(cx, cy, radius, 0);
  }

  clear(): void {
    this.data.fill(0);
    this.touched = false;
  }

  isEmpty(): boolean {
    return !this.touched || this.data.every((v) => v === 0);
  }

  /** Binary grayscale bytes (0 or 255 only), or null when untouched. */
  toBinaryBytes(): Uint8Array | null {
    if (this.isEmpty()) return null;
    const out = new Uint8Array(this.data.length);
    for (let i = 0; i < this.data.length; i++) {
      out[i] = this.data[i] > 127 ? 255 : 0;
    }
    return out;
  }

  /** RGBA overlay bytes for on-canvas preview (semi-transparent fill). */
  toOverlayRgba(r = 64, g = 160, b = 255, alpha = 96): Uint8ClampedArray<ArrayBuffer> {
    const rgba = new Uint8ClampedArray(new ArrayBuffer(this.data.length * 4));
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] > 127) {
        rgba[i * 4] = r;
        rgba[i * 4 + 1] = g;
        rgba[i * 4 + 2] = b;
        rgba[i * 4 + 3] = alpha;
      }
    }
    return rgba;
  }
}
