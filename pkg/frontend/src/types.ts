/** Wire types matching the edit service API. */

export interface PointPairJson {
  handle: [number, number];
  target: [number, number];
}

export interface SessionInfo {
  session_id: string;
  status: string;
  width: number;
  height: number;
  scale_x: number;
  scale_y: number;
  error?: string | null;
}

export interface MsStepJson {
  loss: number;
  term1: number;
  term2: number;
}

export interface ProgressRecord {
  iteration: number;
  valid_pair_indices: number[];
  similarities: number[];
  predicted_next_positions: ([number, number] | null)[];
  ms_loss_curve: MsStepJson[];
  handle_positions: [number, number][];
  intermediate_image: string | null;
}

export interface ProgressResponse {
  records: ProgressRecord[];
  status: "running" | "done" | "failed";
  initial_points: PointPairJson[];
  final_image: string | null;
  error?: string | null;
}

export type ToolMode = "place-handle" | "place-target" | "brush" | "erase";

export type SelectionMode = "ADS" | "FDS" | "RS" | "OFF";
