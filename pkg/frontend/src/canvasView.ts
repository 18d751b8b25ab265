import { rasterToRgba } from "./palette";
import { ViewTransform } from "./transform";
import { orbitTicks } from "./trajectory";
import type { Point, SemanticRaster, Tool, TrajectoryDraft } from "./types";

const DIFF_HIGHLIGHT_MS = 3000;

/**
 * Layout canvas: draws the semantic raster under the current pan/zoom,
 * captures polygon/path vertices in layout coordinates, and overlays
 * trajectory drafts and inpaint diffs.
 */
export class CanvasLayoutView {
  view = new ViewTransform();
  tool: Tool = "pan";
  /** vertices of the in-progress polygon or path, layout coordinates */
  vertices: Point[] = [];
  orbitDraft: TrajectoryDraft | null = null;
  /** fired whenever the drawn vertex list changes */
  onVerticesChanged: (() => void) | null = null;

  private raster: SemanticRaster | null = null;
  private rasterCanvas: HTMLCanvasElement | null = null;
  private diffCells: number[] = [];
  private diffUntil = 0;
  private dragging = false;
  private lastDrag: Point = { x: 0, y: 0 };

  constructor(private canvas: HTMLCanvasElement) {
    canvas.addEventListener("pointerdown", (e) => this.onPointerDown(e));
    canvas.addEventListener("pointermove", (e) => this.onPointerMove(e));
    canvas.addEventListener("pointerup", () => (this.dragging = false));
    canvas.addEventListener("wheel", (e) => this.onWheel(e), { passive: false });
  }

  setRaster(raster: SemanticRaster): void {
    this.raster = raster;
    const off = document.createElement("canvas");
    off.width = raster.width;
    off.height = raster.height;
    const ctx = off.getContext("2d")!;
    ctx.putImageData(new ImageData(rasterToRgba(raster), raster.width, raster.height), 0, 0);
    this.rasterCanvas = off;
    this.redraw();
  }

  /** Highlight changed cells for a few seconds after an inpaint. */
  showDiff(cells: number[]): void {
    this.diffCells = cells;
    this.diffUntil = performance.now() + DIFF_HIGHLIGHT_MS;
    this.redraw();
    setTimeout(() => this.redraw(), DIFF_HIGHLIGHT_MS + 50);
  }

  clearDrawing(): void {
    this.vertices = [];
    this.orbitDraft = null;
    this.onVerticesChanged?.();
    this.redraw();
  }

  private screenPoint(e: PointerEvent): Point {
    const rect = this.canvas.getBoundingClientRect();
    return { x: e.clientX - rect.left, y: e.clientY - rect.top };
  }

  private onPointerDown(e: PointerEvent): void {
    const screen = this.screenPoint(e);
    if (this.tool === "pan") {
      this.dragging = true;
      this.lastDrag = screen;
      return;
    }
    // all captured geometry is stored in layout space immediately
    this.vertices.push(this.view.screenToLayout(screen));
    this.onVerticesChanged?.();
    this.redraw();
  }

  private onPointerMove(e: PointerEvent): void {
    if (!this.dragging) return;
    const screen = this.screenPoint(e);
    this.view.panBy(screen.x - this.lastDrag.x, screen.y - this.lastDrag.y);
    this.lastDrag = screen;
    this.redraw();
  }

  private onWheel(e: WheelEvent): void {
    e.preventDefault();
    const rect = this.canvas.getBoundingClientRect();
    const screen = { x: e.clientX - rect.left, y: e.clientY - rect.top };
    this.view.zoomAround(screen, e.deltaY < 0 ? 1.25 : 0.8);
    this.redraw();
  }

  redraw(): void {
    const ctx = this.canvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.rasterCanvas) {
      ctx.imageSmoothingEnabled = false;
      ctx.save();
      ctx.translate(this.view.panX, this.view.panY);
      ctx.scale(this.view.zoom, this.view.zoom);
      ctx.drawImage(this.rasterCanvas, 0, 0);
      ctx.restore();
    }
    this.drawDiff(ctx);
    this.drawVertices(ctx);
    this.drawOrbit(ctx);
  }

  private drawDiff(ctx: CanvasRenderingContext2D): void {
    if (!this.raster || performance.now() > this.diffUntil) return;
    ctx.fillStyle = "rgba(255, 64, 64, 0.45)";
    const z = this.view.zoom;
    for (const idx of this.diffCells) {
      const p = this.view.layoutToScreen({
        x: idx % this.raster.width,
        y: Math.floor(idx / this.raster.width),
      });
      ctx.fillRect(p.x, p.y, Math.max(z, 1), Math.max(z, 1));
    }
  }

  private drawVertices(ctx: CanvasRenderingContext2D): void {
    if (this.vertices.length === 0) return;
    ctx.strokeStyle = this.tool === "mask-draw" ? "#ff3333" : "#3366ff";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    this.vertices.forEach((v, i) => {
      const p = this.view.layoutToScreen(v);
      if (i === 0) ctx.moveTo(p.x, p.y);
      else ctx.lineTo(p.x, p.y);
    });
    if (this.tool === "mask-draw" && this.vertices.length > 2) ctx.closePath();
    ctx.stroke();
    for (const v of this.vertices) {
      const p = this.view.layoutToScreen(v);
      ctx.fillStyle = "#ffffff";
      ctx.fillRect(p.x - 2, p.y - 2, 4, 4);
    }
  }

  private drawOrbit(ctx: CanvasRenderingContext2D): void {
    const draft = this.orbitDraft;
    if (!draft || draft.mode !== "orbit" || draft.vertices.length !== 1) return;
    const center = this.view.layoutToScreen(draft.vertices[0]);
    const radiusPx = (draft.radiusM / 0.5972) * this.view.zoom;
    ctx.strokeStyle = "#22aa22";
    ctx.beginPath();
    ctx.arc(center.x, center.y, radiusPx, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.fillStyle = "#22aa22";
    for (const t of orbitTicks(center, radiusPx, draft.frames)) {
      ctx.fillRect(t.x - 1.5, t.y - 1.5, 3, 3);
    }
  }
}
