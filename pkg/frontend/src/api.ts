// Thin client for the documented /v1 HTTP API; no private endpoints.

import { ChatResponse, ExportSnapshot } from "./types.js";
import { parseExport } from "./state.js";

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function jsonOrThrow(response: Response) {
  if (!response.ok) {
    let detail = `HTTP ${response.status}`;
    try {
      const body = await response.json();
      detail = JSON.stringify(body.detail ?? body);
    } catch {
      // keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return response.json();
}

export async function createSession(
  base: string,
  userProfile: string,
  botProfile: string,
): Promise<string> {
  const data = await jsonOrThrow(
    await fetch(`${base}/v1/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ user_profile: userProfile, bot_profile: botProfile }),
    }),
  );
  return data.session_id;
}

export async function sendChat(
  base: string,
  sessionId: string,
  text: string,
  search: boolean,
): Promise<ChatResponse> {
  return jsonOrThrow(
    await fetch(`${base}/v1/chat`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session_id: sessionId, text, search }),
    }),
  );
}

export interface StreamHandlers {
  onEvent: (event: string, data: any) => void;
  onClose: () => void;
}

export function openStream(
  base: string,
  sessionId: string,
  text: string,
  search: boolean,
  handlers: StreamHandlers,
): EventSource {
  const params = new URLSearchParams({
    session_id: sessionId,
    text,
    search: String(search),
  });
  const source = new EventSource(`${base}/v1/chat/stream?${params}`);
  for (const kind of ["meta", "token", "done", "error"]) {
    source.addEventListener(kind, (event) => {
      let data: any = {};
      try {
        data = JSON.parse((event as MessageEvent).data ?? "{}");
      } catch {
        data = {};
      }
      handlers.onEvent(kind, data);
      if (kind === "done" || kind === "error") {
        source.close();
        handlers.onClose();
      }
    });
  }
  source.onerror = () => {
    handlers.onEvent("error", { detail: "connection lost" });
    source.close();
    handlers.onClose();
  };
  return source;
}

export async function submitRating(base: string, body: Record<string, unknown>): Promise<void> {
  await jsonOrThrow(
    await fetch(`${base}/v1/rate`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    }),
  );
}

export async function fetchExport(base: string, sessionId: string): Promise<ExportSnapshot> {
  const response = await fetch(`${base}/v1/export?session_id=${encodeURIComponent(sessionId)}`);
  if (!response.ok) throw new ApiError(response.status, `export failed: ${response.status}`);
  return parseExport(await response.text());
}

export async function fetchExportRaw(base: string, sessionId: string): Promise<string> {
  const response = await fetch(`${base}/v1/export?session_id=${encodeURIComponent(sessionId)}`);
  if (!response.ok) throw new ApiError(response.status, `export failed: ${response.status}`);
  return response.text();
}
