// Canvas drawing layer. All geometry comes from overlayRects; this file
// only paints.

import { overlayRects } from "./geometry.js";
import type { Detection } from "./types.js";

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  image: CanvasImageSource | null,
  detections: Detection[],
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  if (image) ctx.drawImage(image, 0, 0, width, height);

  if (detections.length === 0) {
    drawBadge(ctx, "no detections", 8, 8);
    return;
  }
  ctx.lineWidth = 2;
  ctx.font = "13px sans-serif";
  for (const rect of overlayRects(detections, width, height)) {
    ctx.strokeStyle = "#27e227";
    ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
    const textWidth = ctx.measureText(rect.label).width + 8;
    const labelY = rect.y >= 18 ? rect.y - 18 : rect.y + rect.h;
    ctx.fillStyle = "rgba(0, 0, 0, 0.65)";
    ctx.fillRect(rect.x, labelY, textWidth, 18);
    ctx.fillStyle = "#ffffff";
    ctx.fillText(rect.label, rect.x + 4, labelY + 13);
  }
}

export function drawPlaceholder(ctx: CanvasRenderingContext2D, width: number, height: number): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#222";
  ctx.fillRect(0, 0, width, height);
  ctx.fillStyle = "#bbb";
  ctx.font = "14px sans-serif";
  ctx.fillText("image unavailable, press r to retry", 16, height / 2);
}

function drawBadge(ctx: CanvasRenderingContext2D, text: string, x: number, y: number): void {
  ctx.font = "13px sans-serif";
  const width = ctx.measureText(text).width + 12;
  ctx.fillStyle = "rgba(0, 0, 0, 0.65)";
  ctx.fillRect(x, y, width, 20);
  ctx.fillStyle = "#ffd24a";
  ctx.fillText(text, x + 6, y + 14);
}
