/** Canvas and DOM rendering for the annotation flow. */

import { QueryItem } from "./api.js";
import { AnnotationView, classForKey } from "./state.js";

export const CROP = 65;
export const SCALE = 6;

const PALETTE = [
  "#4b5563", "#dc2626", "#16a34a", "#2563eb", "#ca8a04", "#9333ea",
  "#0d9488", "#be185d", "#65a30d", "#7c3aed",
];

export function classColor(index: number): string {
  return PALETTE[index % PALETTE.length];
}

export interface Elements {
  crop: HTMLCanvasElement;
  context: HTMLCanvasElement;
  palette: HTMLElement;
  progress: HTMLElement;
  status: HTMLElement;
  advance: HTMLButtonElement;
}

function drawCrosshair(
  ctx: CanvasRenderingContext2D,
  cx: number,
  cy: number,
  arm: number,
): void {
  ctx.save();
  ctx.strokeStyle = "#ff2ab0";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(cx - arm, cy);
  ctx.lineTo(cx - 4, cy);
  ctx.moveTo(cx + 4, cy);
  ctx.lineTo(cx + arm, cy);
  ctx.moveTo(cx, cy - arm);
  ctx.lineTo(cx, cy - 4);
  ctx.moveTo(cx, cy + 4);
  ctx.lineTo(cx, cy + arm);
  ctx.stroke();
  ctx.strokeRect(cx - 3.5, cy - 3.5, 7, 7);
  ctx.restore();
}

/** Zoomed 65x65 neighborhood with a crosshair on the query pixel. */
export function renderCrop(canvas: HTMLCanvasElement, q: QueryItem): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  canvas.width = CROP * SCALE;
  canvas.height = CROP * SCALE;
  const img = new Image();
  img.onload = () => {
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
    const mid = (CROP * SCALE) / 2;
    drawCrosshair(ctx, mid, mid, 30);
  };
  img.src = `data:image/png;base64,${q.neighborhood}`;
}

/** Full image with the query position marked, for context. */
export function renderContext(
  canvas: HTMLCanvasElement,
  imageUrl: string,
  q: QueryItem,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const img = new Image();
  img.onload = () => {
    const scale = Math.max(1, Math.floor(256 / Math.max(img.width, img.height)));
    canvas.width = img.width * scale;
    canvas.height = img.height * scale;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
    drawCrosshair(ctx, (q.col + 0.5) * scale, (q.row + 0.5) * scale, 12);
  };
  img.src = imageUrl;
}

export function renderPalette(
  host: HTMLElement,
  names: string[],
  onPick: (classId: number) => void,
): void {
  host.textContent = "";
  names.forEach((name, i) => {
    const btn = document.createElement("button");
    btn.className = "class-btn";
    btn.style.borderColor = classColor(i);
    btn.textContent = `${i}: ${name}`;
    btn.addEventListener("click", () => onPick(i));
    host.appendChild(btn);
  });
}

export function renderProgress(view: AnnotationView, els: Elements): void {
  const p = view.progress;
  els.progress.textContent = `${p.answered} / ${p.total} answered`;
  els.advance.disabled = !view.roundComplete;
}

/** Wire keyboard digits to class picks; returns the listener for teardown. */
export function bindHotkeys(
  view: AnnotationView,
  onPick: (classId: number) => void,
): (ev: KeyboardEvent) => void {
  const handler = (ev: KeyboardEvent) => {
    const n = view.session?.manifest.num_classes ?? 0;
    const cls = classForKey(ev.key, n);
    if (cls !== null) {
      ev.preventDefault();
      onPick(cls);
    }
  };
  window.addEventListener("keydown", handler);
  return handler;
}
