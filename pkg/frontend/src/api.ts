/** Thin client over the edit service HTTP API. */

import type { PointPairJson, ProgressResponse, SessionInfo } from "./types.js";

export class ApiClient {
  constructor(private base: string = "") {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async createSession(image: Blob, configText?: string): Promise<string> {
    const form = new FormData();
    form.append("image", image, "upload.png");
    if (configText) form.append("config", new Blob([configText]), "config.toml");
    const resp = await fetch(this.url("/sessions"), { method: "POST", body: form });
    if (!resp.ok) throw new Error(await errorDetail(resp));
    return (await resp.json()).session_id;
  }

  async getSession(sessionId: string): Promise<SessionInfo> {
    const resp = await fetch(this.url(`/sessions/${sessionId}`));
    if (!resp.ok) throw new Error(await errorDetail(resp));
    return resp.json();
  }

  async waitReady(sessionId: string, intervalMs = 500): Promise<SessionInfo> {
    for (;;) {
      const info = await this.getSession(sessionId);
      if (info.status === "ready" || info.status === "failed") return info;
      await new Promise((r) => setTimeout(r, intervalMs));
    }
  }

  async startEdit(sessionId: string, points: PointPairJson[],
                  maskB64: string | null, mode: string | null): Promise<string> {
    const resp = await fetch(this.url(`/sessions/${sessionId}/edits`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ points, mask: maskB64, mode }),
    });
    if (!resp.ok) throw new Error(await errorDetail(resp));
    return (await resp.json()).edit_id;
  }

  async fetchProgress(sessionId: string, editId: string, since: number,
                      timeoutS = 10): Promise<ProgressResponse> {
    const resp = await fetch(this.url(
      `/sessions/${sessionId}/edits/${editId}/progress?since=${since}&timeout=${timeoutS}`));
    if (!resp.ok) throw new Error(await errorDetail(resp));
    return resp.json();
  }

  imageUrl(path: string): string {
    return this.url(path);
  }
}

async function errorDetail(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    return body.detail ?? `${resp.status} ${resp.statusText}`;
  } catch {
    return `${resp.status} ${resp.statusText}`;
  }
}
