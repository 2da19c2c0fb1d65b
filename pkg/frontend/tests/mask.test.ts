import { describe, expect, it } from "vitest";

import { MaskLayer } from "../src/mask.js";

describe("mask layer", () => {
  it("untouched mask exports null (server default: all editable)", () => {
    const mask = new MaskLayer(32, 32);
    expect(mask.isEmpty()).toBe(true);
    expect(mask.toBinaryBytes()).toBeNull();
  });

  it("brush stamps a filled disc", () => {
    const mask = new MaskLayer(32, 32);
    mask.brush(16, 16, 4);
    expect(mask.data[16 * 32 + 16]).toBe(255);
    expect(mask.data[16 * 32 + 20]).toBe(255); // on the radius
    expect(mask.data[16 * 32 + 21]).toBe(0);   // just outside
  });

  it("erase clears inside the disc only", () => {
    const mask = new MaskLayer(32, 32);
    mask.brush(16, 16, 8);
    mask.erase(16, 16, 3);
    expect(mask.data[16 * 32 + 16]).toBe(0);
    expect(mask.data[16 * 32 + 22]).toBe(255);
  });

  it("export is strictly binary", () => {
    const mask = new MaskLayer(16, 16);
    mask.brush(8, 8, 5);
    mask.data[0] = 77; // sneak in a grey value
    const bytes = mask.toBinaryBytes()!;
    const unique = new Set(bytes);
    expect([...unique].every((v) => v === 0 || v === 255)).toBe(true);
    expect(bytes[0]).toBe(0); // 77 thresholds to 0
  });

  it("clamps stamps at the borders", () => {
    const mask = new MaskLayer(16, 16);
    mask.brush(0, 0, 6);
    expect(mask.data[0]).toBe(255);
    expect(mask.isEmpty()).toBe(false);
  });

  it("overlay bytes mark only masked pixels", () => {
    const mask = new MaskLayer(8, 8);
    mask.brush(2, 2, 1);
    const rgba = mask.toOverlayRgba();
    expect(rgba[(2 * 8 + 2) * 4 + 3]).toBeGreaterThan(0);
    expect(rgba[(7 * 8 + 7) * 4 + 3]).toBe(0);
  });
});
