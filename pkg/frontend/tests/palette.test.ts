import { describe, expect, it } from "vitest";

import { decodeSemanticBin, diffCells, insideDilatedRegion, rasterToRgba } from "../src/palette";

function makeBin(width: number, height: number, fill: number): ArrayBuffer {
  const buf = new ArrayBuffer(8 + width * height);
  const view = new DataView(buf);
  view.setUint32(0, width, true);
  view.setUint32(4, height, true);
  new Uint8Array(buf, 8).fill(fill);
  return buf;
}

describe("semantic raster decoding", () => {
  it("parses the width/height header and cells", () => {
    const raster = decodeSemanticBin(makeBin(6, 4, 2));
    expect(raster.width).toBe(6);
    expect(raster.height).toBe(4);
    expect(raster.cells).toHaveLength(24);
    expect(raster.cells[0]).toBe(2);
  });

  it("rejects truncated payloads", () => {
    const buf = makeBin(6, 4, 2).slice(0, 8 + 10);
    expect(() => decodeSemanticBin(buf)).toThrow(/expected/);
  });

  it("maps cells to palette RGBA", () => {
    const raster = decodeSemanticBin(makeBin(2, 1, 5));
    const rgba = rasterToRgba(raster);
    expect([rgba[0], rgba[1], rgba[2], rgba[3]]).toEqual([55, 126, 184, 255]);
  });

  it("diffs rasters cell by cell", () => {
    const a = decodeSemanticBin(makeBin(4, 4, 1));
    const b = decodeSemanticBin(makeBin(4, 4, 1));
    b.cells[5] = 3;
    b.cells[9] = 2;
    expect(diffCells(a, b)).toEqual([5, 9]);
  });

  it("classifies cells against the block-dilated region", () => {
    const bbox: [number, number, number, number] = [20, 20, 25, 25];
    // block-dilated region is x,y in [16, 32)
    expect(insideDilatedRegion(17 * 512 + 17, 512, bbox)).toBe(true);
    expect(insideDilatedRegion(31 * 512 + 31, 512, bbox)).toBe(true);
    expect(insideDilatedRegion(15 * 512 + 20, 512, bbox)).toBe(false);
    expect(insideDilatedRegion(20 * 512 + 33, 512, bbox)).toBe(false);
  });
});
