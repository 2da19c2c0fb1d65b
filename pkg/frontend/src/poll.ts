/** Progress streaming: sequential long-poll loop with a client-side
 * cadence. One request is in flight at a time by construction; the server
 * blocks up to its timeout when no new records exist. */

import type { ApiClient } from "./api.js";
import type { ProgressRecord, ProgressResponse } from "./types.js";

export interface PollCallbacks {
  onRecord: (record: ProgressRecord) => void;
  onStatus?: (status: string) => void;
}

export async function streamProgress(
  api: ApiClient,
  sessionId: string,
  editId: string,
  callbacks: PollCallbacks,
  cadenceMs = 500,
): Promise<ProgressResponse> {
  let since = -1;
  for (;;) {
    const progress = await api.fetchProgress(sessionId, editId, since);
    for (const record of progress.records) {
      callbacks.onRecord(record);
      since = record.iteration;
    }
    callbacks.onStatus?.(progress.status);
    if (progress.status !== "running") return progress;
    if (progress.records.length === 0) {
      await new Promise((r) => setTimeout(r, cadenceMs));
    }
  }
}
