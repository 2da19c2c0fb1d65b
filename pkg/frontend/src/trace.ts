/** Live trace model: per-pair trajectory polylines, the latest valid/grey
 * flags, and the supervision-loss sparkline series. Never invents data:
 * every vertex comes from a fetched record. */

import type { PointPairJson, ProgressRecord } from "./types.js";

export interface PairTrack {
  start: [number, number];
  target: [number, number];
  vertices: [number, number][]; // one per ingested record
  valid: boolean;               // from the latest record
  greyedSince: number | null;   // first iteration the pair was filtered out
}

export class TraceView {
  tracks: PairTrack[] = [];
  losses: number[] = [];
  lastIteration = -1;

  constructor(initialPoints: PointPairJson[]) {
    this.tracks = initialPoints.map((p) => ({
      start: [p.handle[0], p.handle[1]],
      target: [p.target[0], p.target[1]],
      vertices: [],
      valid: true,
      greyedSince: null,
    }));
  }

  ingest(record: ProgressRecord): void {
    if (record.iteration <= this.lastIteration) return; // already seen
    this.lastIteration = record.iteration;
    const validSet = new Set(record.valid_pair_indices);
    record.handle_positions.forEach((pos, i) => {
      const track = this.tracks[i];
      if (!track) return;
      track.vertices.push([pos[0], pos[1]]);
      track.valid = validSet.has(i);
      if (!track.valid && track.greyedSince === null) {
        track.greyedSince = record.iteration;
      } else if (track.valid) {
        track.greyedSince = null; // re-selected in a later iteration
      }
    });
    for (const step of record.ms_loss_curve) this.losses.push(step.loss);
  }

  /** Full polyline for a pair: user start point plus one vertex per record. */
  polyline(index: number): [number, number][] {
    const track = this.tracks[index];
    return [track.start, ...track.vertices];
  }

  recordCount(): number {
    return this.lastIteration + 1;
  }
}
