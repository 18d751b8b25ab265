import type { Point } from "./types";

/**
 * Pan/zoom mapping between layout raster coordinates and screen pixels.
 * All geometry sent to the service must pass through screenToLayout first,
 * so the backend only ever sees layout-space coordinates.
 */
export class ViewTransform {
  constructor(
    public zoom = 1,
    public panX = 0,
    public panY = 0,
  ) {}

  layoutToScreen(p: Point): Point {
    return { x: p.x * this.zoom + this.panX, y: p.y * this.zoom + this.panY };
  }

  screenToLayout(p: Point): Point {
    return { x: (p.x - this.panX) / this.zoom, y: (p.y - this.panY) / this.zoom };
  }

  /** Zoom by a factor while keeping the given screen point fixed. */
  zoomAround(screen: Point, factor: number): void {
    const before = this.screenToLayout(screen);
    this.zoom *= factor;
    const after = this.layoutToScreen(before);
    this.panX += screen.x - after.x;
    this.panY += screen.y - after.y;
  }

  panBy(dx: number, dy: number): void {
    this.panX += dx;
    this.panY += dy;
  }
}

/** Max round-trip error in px over a polygon at the current zoom. */
export function roundTripError(view: ViewTransform, screenPolygon: Point[]): number {
  let worst = 0;
  for (const p of screenPolygon) {
    const back = view.layoutToScreen(view.screenToLayout(p));
    worst = Math.max(worst, Math.abs(back.x - p.x), Math.abs(back.y - p.y));
  }
  return worst;
}
