import type { SemanticRaster } from "./types";

/** Class colors matching the service's paletted PNG export. */
export const SEMANTIC_COLORS: [number, number, number][] = [
  [0, 0, 0], // null
  [228, 26, 28], // roads
  [255, 217, 47], // buildings
  [77, 175, 74], // green lands
  [0, 205, 205], // construction
  [55, 126, 184], // water
  [160, 160, 160], // others
  [245, 130, 48], // facade
  [145, 30, 180], // roof
];

export const BLOCK_SIZE = 16; // token block edge in layout pixels

/** Parse the service's semantic.bin payload (u32 width, u32 height, u8 cells). */
export function decodeSemanticBin(buffer: ArrayBuffer): SemanticRaster {
  const header = new DataView(buffer, 0, 8);
  const width = header.getUint32(0, true);
  const height = header.getUint32(4, true);
  const cells = new Uint8Array(buffer, 8);
  if (cells.length !== width * height) {
    throw new Error(`semantic.bin payload is ${cells.length} cells, expected ${width * height}`);
  }
  return { width, height, cells };
}

/** Expand a raster into RGBA bytes for ImageData. */
export function rasterToRgba(raster: SemanticRaster): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(raster.width * raster.height * 4));
  for (let i = 0; i < raster.cells.length; i++) {
    const [r, g, b] = SEMANTIC_COLORS[raster.cells[i]] ?? [255, 0, 255];
    out[4 * i] = r;
    out[4 * i + 1] = g;
    out[4 * i + 2] = b;
    out[4 * i + 3] = 255;
  }
  return out;
}

/** Cells that differ between two rasters of equal dimensions. */
export function diffCells(a: SemanticRaster, b: SemanticRaster): number[] {
  if (a.width !== b.width || a.height !== b.height) {
    throw new Error("raster dimensions differ");
  }
  const changed: number[] = [];
  for (let i = 0; i < a.cells.length; i++) {
    if (a.cells[i] !== b.cells[i]) changed.push(i);
  }
  return changed;
}

/**
 * The backend regenerates whole token blocks, so any legitimate change
 * from an edit with bbox [x0, y0, x1, y1] stays inside the blocks that
 * bbox touches. Returns true when a changed flat index is inside them.
 */
export function insideDilatedRegion(
  flatIndex: number,
  width: number,
  bbox: [number, number, number, number],
  blockSize = BLOCK_SIZE,
): boolean {
  const x = flatIndex % width;
  const y = Math.floor(flatIndex / width);
  const bx0 = Math.floor(bbox[0] / blockSize) * blockSize;
  const by0 = Math.floor(bbox[1] / blockSize) * blockSize;
  const bx1 = (Math.floor(bbox[2] / blockSize) + 1) * blockSize;
  const by1 = (Math.floor(bbox[3] / blockSize) + 1) * blockSize;
  return x >= bx0 && x < bx1 && y >= by0 && y < by1;
}
