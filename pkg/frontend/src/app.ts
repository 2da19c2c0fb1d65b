/** Canvas application: upload, point placement, mask brushing, submit,
 * and live rendering of per-iteration progress. Pure logic lives in the
 * sibling modules; this file is DOM and drawing only. */

import { ApiClient } from "./api.js";
import { identityView, imageToScreen, screenToImage, ViewTransform } from "./coords.js";
import { MaskLayer } from "./mask.js";
import { PairStore } from "./points.js";
import { streamProgress } from "./poll.js";
import { TraceView } from "./trace.js";
import type { PointPairJson, SelectionMode, ToolMode } from "./types.js";

const COLORS = {
  handle: "#2b6bff",
  target: "#e23b3b",
  intermediate: "#37b34a",
  trajectory: "#ffd700",
  greyed: "rgba(128,128,128,0.6)",
};

class App {
  api = new ApiClient("");
  view: ViewTransform = { ...identityView };
  tool: ToolMode = "place-handle";
  brushRadius = 12;
  image: HTMLImageElement | null = null;
  imageBitmapUrl: string | null = null;
  pairs: PairStore | null = null;
  mask: MaskLayer | null = null;
  trace: TraceView | null = null;
  sessionId: string | null = null;
  running = false;
  startedAt = 0;
  hint = "";

  canvas = document.getElementById("canvas") as HTMLCanvasElement;
  sparkline = document.getElementById("sparkline") as HTMLCanvasElement;
  statusEl = document.getElementById("status") as HTMLElement;
  submitBtn = document.getElementById("submit") as HTMLButtonElement;

  constructor() {
    this.bindControls();
    this.canvas.addEventListener("pointerdown", (e) => this.onPointer(e, true));
    this.canvas.addEventListener("pointermove", (e) => this.onPointer(e, false));
    setInterval(() => this.renderStatus(), 1000);
  }

  bindControls(): void {
    const upload = document.getElementById("upload") as HTMLInputElement;
    upload.addEventListener("change", () => {
      if (upload.files?.[0]) void this.loadImage(upload.files[0]);
    });
    for (const mode of ["place-handle", "place-target", "brush", "erase"] as ToolMode[]) {
      document.getElementById(`tool-${mode}`)!.addEventListener("click", () => {
        this.tool = mode;
        this.renderStatus();
      });
    }
    (document.getElementById("zoom") as HTMLInputElement).addEventListener("input", (e) => {
      this.view.zoom = parseFloat((e.target as HTMLInputElement).value);
      this.resizeCanvas();
      this.render();
    });
    (document.getElementById("brush-radius") as HTMLInputElement).addEventListener(
      "input", (e) => { this.brushRadius = parseInt((e.target as HTMLInputElement).value, 10); });
    this.submitBtn.addEventListener("click", () => void this.submit());
    document.getElementById("clear-points")!.addEventListener("click", () => {
      this.pairs = this.image ? new PairStore(this.image.naturalWidth, this.image.naturalHeight) : null;
      this.trace = null;
      this.render();
    });
    document.getElementById("export-points")!.addEventListener("click", () => this.exportPoints());
    (document.getElementById("import-points") as HTMLInputElement).addEventListener(
      "change", (e) => void this.importPoints(e.target as HTMLInputElement));
  }

  async loadImage(file: File): Promise<void> {
    const url = URL.createObjectURL(file);
    const img = new Image();
    await new Promise<void>((resolve, reject) => {
      img.onload = () => resolve();
      img.onerror = () => reject(new Error("could not decode image"));
      img.src = url;
    });
    this.image = img;
    this.imageBitmapUrl = url;
    this.pairs = new PairStore(img.naturalWidth, img.naturalHeight);
    this.mask = new MaskLayer(img.naturalWidth, img.naturalHeight);
    this.trace = null;
    this.resizeCanvas();
    this.setStatus("creating session...");
    this.sessionId = await this.api.createSession(file);
    const info = await this.api.waitReady(this.sessionId);
    this.setStatus(info.status === "ready" ? "session ready" : `session failed: ${info.error}`);
    this.render();
  }

  resizeCanvas(): void {
    if (!this.image) return;
    this.canvas.width = this.image.naturalWidth * this.view.zoom;
    this.canvas.height = this.image.naturalHeight * this.view.zoom;
  }

  onPointer(event: PointerEvent, isDown: boolean): void {
    if (!this.image || !this.pairs || !this.mask || this.running) return;
    const rect = this.canvas.getBoundingClientRect();
    const { x, y } = screenToImage(this.view, event.clientX - rect.left, event.clientY - rect.top);
    if (this.tool === "brush" || this.tool === "erase") {
      if (!isDown && event.buttons !== 1) return;
      if (this.tool === "brush") this.mask.brush(x, y, this.brushRadius);
      else this.mask.erase(x, y, this.brushRadius);
      this.render();
      return;
    }
    if (!isDown) return;
    const ok = this.tool === "place-handle" ? this.pairs.placeHandle(x, y)
                                            : this.pairs.placeTarget(x, y);
    this.hint = !ok ? "click landed outside the image"
      : this.pairs.overTrainedLimit() ? "more than 7 pairs: training used 1-7 points"
      : "";
    if (ok && this.tool === "place-handle") this.tool = "place-target";
    else if (ok && !this.pairs.hasUnpairedHandle()) this.tool = "place-handle";
    this.render();
    this.renderStatus();
  }

  async submit(): Promise<void> {
    if (!this.pairs || !this.sessionId || this.running || !this.pairs.canSubmit()) return;
    const points = this.pairs.serialize();
    const mode = (document.getElementById("mode") as HTMLSelectElement).value as SelectionMode;
    this.trace = new TraceView(points);
    this.running = true;
    this.startedAt = Date.now();
    this.submitBtn.disabled = true;
    try {
      const editId = await this.api.startEdit(
        this.sessionId, points, this.maskToBase64(), mode);
      const final = await streamProgress(this.api, this.sessionId, editId, {
        onRecord: (record) => {
          this.trace!.ingest(record);
          if (record.intermediate_image) void this.swapImage(record.intermediate_image);
          this.render();
          this.renderSparkline();
        },
      });
      if (final.status === "failed") {
        this.setStatus(`edit failed: ${final.error ?? "unknown error"}`);
      } else {
        if (final.final_image) await this.swapImage(final.final_image);
        this.setStatus(`done in ${this.elapsed()}s, ${this.trace.recordCount()} iterations`);
      }
    } catch (err) {
      this.setStatus(`error: ${(err as Error).message}`);
    } finally {
      this.running = false;
      this.submitBtn.disabled = false;
      this.render();
    }
  }

  maskToBase64(): string | null {
    const bytes = this.mask?.toBinaryBytes();
    if (!bytes || !this.mask) return null;
    const off = document.createElement("canvas");
    off.width = this.mask.width;
    off.height = this.mask.height;
    const ctx = off.getContext("2d")!;
    const data = ctx.createImageData(off.width, off.height);
    for (let i = 0; i < bytes.length; i++) {
      data.data[i * 4] = data.data[i * 4 + 1] = data.data[i * 4 + 2] = bytes[i];
      data.data[i * 4 + 3] = 255;
    }
    ctx.putImageData(data, 0, 0);
    return off.toDataURL("image/png").split(",", 2)[1];
  }

  async swapImage(path: string): Promise<void> {
    const img = new Image();
    await new Promise<void>((resolve) => {
      img.onload = () => resolve();
      img.onerror = () => resolve(); // keep the previous frame on error
      img.src = this.api.imageUrl(path);
    });
    if (img.naturalWidth > 0) {
      this.image = img;
      this.render();
    }
  }

  exportPoints(): void {
    if (!this.pairs?.canSubmit()) return;
    const blob = new Blob([JSON.stringify(this.pairs.serialize(), null, 2)],
                          { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "points.json";
    a.click();
  }

  async importPoints(input: HTMLInputElement): Promise<void> {
    if (!input.files?.[0] || !this.pairs) return;
    const parsed = JSON.parse(await input.files[0].text()) as PointPairJson[];
    this.pairs.load(parsed);
    this.render();
  }

  elapsed(): number {
    return Math.round((Date.now() - this.startedAt) / 1000);
  }

  setStatus(text: string): void {
    this.statusEl.textContent = text;
  }

  renderStatus(): void {
    if (this.running) {
      this.setStatus(`editing... ${this.elapsed()}s elapsed, `
        + `${this.trace?.recordCount() ?? 0} iterations so far (tool: ${this.tool})`);
    }
    this.submitBtn.disabled = this.running || !this.pairs?.canSubmit() || !this.sessionId;
    document.getElementById("hint")!.textContent = this.hint;
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx || !this.image) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.imageSmoothingEnabled = this.view.zoom < 1;
    ctx.drawImage(this.image, this.view.panX, this.view.panY,
                  this.image.naturalWidth * this.view.zoom,
                  this.image.naturalHeight * this.view.zoom);
    this.drawMask(ctx);
    this.drawPairs(ctx);
  }

  drawMask(ctx: CanvasRenderingContext2D): void {
    if (!this.mask || this.mask.isEmpty()) return;
    const off = document.createElement("canvas");
    off.width = this.mask.width;
    off.height = this.mask.height;
    const octx = off.getContext("2d")!;
    octx.putImageData(new ImageData(this.mask.toOverlayRgba(), off.width, off.height), 0, 0);
    ctx.drawImage(off, this.view.panX, this.view.panY,
                  off.width * this.view.zoom, off.height * this.view.zoom);
  }

  drawPairs(ctx: CanvasRenderingContext2D): void {
    if (!this.pairs) return;
    this.pairs.pairs.forEach((pair, i) => {
      const track = this.trace?.tracks[i];
      const greyed = track ? !track.valid : false;
      if (track && track.vertices.length > 0) {
        ctx.strokeStyle = greyed ? COLORS.greyed : COLORS.trajectory;
        ctx.lineWidth = 2;
        ctx.beginPath();
        this.trace!.polyline(i).forEach(([x, y], j) => {
          const s = imageToScreen(this.view, x, y);
          j === 0 ? ctx.moveTo(s.x, s.y) : ctx.lineTo(s.x, s.y);
        });
        ctx.stroke();
        for (const [x, y] of track.vertices.slice(0, -1)) {
          this.dot(ctx, x, y, greyed ? COLORS.greyed : COLORS.intermediate, 3);
        }
      }
      const current = track?.vertices.at(-1) ?? pair.handle;
      this.dot(ctx, current[0], current[1], greyed ? COLORS.greyed : COLORS.handle, 5);
      if (pair.target) {
        this.dot(ctx, pair.target[0], pair.target[1],
                 greyed ? COLORS.greyed : COLORS.target, 5);
        const a = imageToScreen(this.view, current[0], current[1]);
        const b = imageToScreen(this.view, pair.target[0], pair.target[1]);
        ctx.strokeStyle = greyed ? COLORS.greyed : "rgba(255,255,255,0.5)";
        ctx.setLineDash([4, 4]);
        ctx.beginPath();
        ctx.moveTo(a.x, a.y);
        ctx.lineTo(b.x, b.y);
        ctx.stroke();
        ctx.setLineDash([]);
      }
    });
  }

  dot(ctx: CanvasRenderingContext2D, x: number, y: number, color: string, r: number): void {
    const s = imageToScreen(this.view, x, y);
    ctx.fillStyle = color;
    ctx.beginPath();
    ctx.arc(s.x, s.y, r, 0, 2 * Math.PI);
    ctx.fill();
  }

  renderSparkline(): void {
    const ctx = this.sparkline.getContext("2d");
    const losses = this.trace?.losses ?? [];
    if (!ctx || losses.length < 2) return;
    const { width, height } = this.sparkline;
    ctx.clearRect(0, 0, width, height);
    const max = Math.max(...losses);
    const min = Math.min(...losses);
    const span = max - min || 1;
    ctx.strokeStyle = COLORS.handle;
    ctx.beginPath();
    losses.forEach((loss, i) => {
      const x = (i / (losses.length - 1)) * width;
      const y = height - ((loss - min) / span) * (height - 4) - 2;
      i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    });
    ctx.stroke();
  }
}

new App();
