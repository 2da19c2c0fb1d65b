/** Zoom/pan transform between screen (canvas) and image pixel space.
 * Point coordinates are stored in image space regardless of zoom, so a
 * click at screen (sx, sy) under 2x zoom lands at image (sx/2, sy/2). */

export interface ViewTransform {
  zoom: number;
  panX: number;
  panY: number;
}

export const identityView: ViewTransform = { zoom: 1, panX: 0, panY: 0 };

export function screenToImage(view: ViewTransform, sx: number, sy: number) {
  return { x: (sx - view.panX) / view.zoom, y: (sy - view.panY) / view.zoom };
}

export function imageToScreen(view: ViewTransform, x: number, y: number) {
  return { x: view.panX + x * view.zoom, y: view.panY + y * view.zoom };
}

export function inBounds(x: number, y: number, width: number, height: number): boolean {
  return x >= 0 && y >= 0 && x <= width - 1 && y <= height - 1;
}
