// Overlay geometry: exact denormalization of detection boxes to display
// pixels. Pure math so it can be pinned by snapshot tests; the canvas
// layer draws whatever this returns, nothing more.

import type { Detection } from "./types.js";

export interface OverlayRect {
  x: number;
  y: number;
  w: number;
  h: number;
  label: string;
  conf: number;
  detectionIndex: number;
}

export function denormalizeRect(
  bbox: [number, number, number, number],
  displayWidth: number,
  displayHeight: number,
): { x: number; y: number; w: number; h: number } {
  const [nx, ny, nw, nh] = bbox;
  return {
    x: nx * displayWidth,
    y: ny * displayHeight,
    w: nw * displayWidth,
    h: nh * displayHeight,
  };
}

// Rectangles for every detection of an item, z-ordered by ascending
// confidence so the most confident box is drawn last (on top).
export function overlayRects(
  detections: Detection[],
  displayWidth: number,
  displayHeight: number,
): OverlayRect[] {
  const rects = detections.map((det, index) => {
    const { x, y, w, h } = denormalizeRect(det.bbox, displayWidth, displayHeight);
    return {
      x,
      y,
      w,
      h,
      conf: det.conf,
      detectionIndex: index,
      label: `animal ${(det.conf * 100).toFixed(1)}%`,
    };
  });
  rects.sort((a, b) => a.conf - b.conf || a.detectionIndex - b.detectionIndex);
  return rects;
}
