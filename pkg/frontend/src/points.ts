/** Handle/target pair placement: a small state machine over clicks.
 *
 * In place-handle mode a click creates a handle waiting for its target;
 * the next click in place-target mode completes the pair. An unpaired
 * handle blocks submission. Coordinates are image pixels. */

import { inBounds } from "./coords.js";
import type { PointPairJson } from "./types.js";

export interface PairDraft {
  handle: [number, number];
  target: [number, number] | null;
}

export const TRAINED_PAIR_LIMIT = 7; // more is allowed, with a hint

export class PairStore {
  pairs: PairDraft[] = [];
  width: number;
  height: number;

  constructor(width: number, height: number) {
    this.width = width;
    this.height = height;
  }

  /** Returns false when the click was ignored (outside the image). */
  placeHandle(x: number, y: number): boolean {
    if (!inBounds(x, y, this.width, this.height)) return false;
    this.pairs.push({ handle: [x, y], target: null });
    return true;
  }

  /** Pairs the earliest unpaired handle; false if none exists or the
   * click fell outside the image. */
  placeTarget(x: number, y: number): boolean {
    if (!inBounds(x, y, this.width, this.height)) return false;
    const open = this.pairs.find((p) => p.target === null);
    if (!open) return false;
    open.target = [x, y];
    return true;
  }

  /** Deleting a handle removes its target and arrow with it. */
  deletePair(index: number): void {
    this.pairs.splice(index, 1);
  }

  hasUnpairedHandle(): boolean {
    return this.pairs.some((p) => p.target === null);
  }

  overTrainedLimit(): boolean {
    return this.pairs.length > TRAINED_PAIR_LIMIT;
  }

  canSubmit(): boolean {
    return this.pairs.length > 0 && !this.hasUnpairedHandle();
  }

  /** Exact points.json schema, pixel coordinates, origin top-left. */
  serialize(): PointPairJson[] {
    if (!this.canSubmit()) {
      throw new Error("every handle needs a target before submitting");
    }
    return this.pairs.map((p) => ({
      handle: [p.handle[0], p.handle[1]],
      target: [p.target![0], p.target![1]],
    }));
  }

  load(pairs: PointPairJson[]): void {
    this.pairs = pairs.map((p) => ({
      handle: [p.handle[0], p.handle[1]],
      target: [p.target[0], p.target[1]],
    }));
  }
}
