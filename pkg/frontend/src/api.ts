/**
 * Thin typed client for the rolecraft HTTP API.
 *
 * No validation happens here; the server is the source of truth and
 * the test suite validates real payloads against the schemas. Errors
 * with a JSON body become ApiError so the UI can show code + message.
 */

import type {
  MessageResponse,
  Persona,
  PersonaSummary,
  PipelineConfig,
  SessionRecord,
  TraceRecord,
} from "./schema.js";

export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const res = await fetch(url, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  let body: unknown = null;
  try {
    body = await res.json();
  } catch {
    body = null;
  }
  if (!res.ok) {
    const err = body as { code?: unknown; message?: unknown } | null;
    throw new ApiError(
      typeof err?.code === "string" ? err.code : "internal",
      typeof err?.message === "string" ? err.message : res.statusText,
      res.status,
    );
  }
  return body as T;
}

export class RolecraftClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  health(): Promise<{ status: string }> {
    return request(this.url("/healthz"));
  }

  listPersonas(): Promise<PersonaSummary[]> {
    return request(this.url("/personas"));
  }

  getPersona(name: string): Promise<Persona> {
    return request(this.url(`/personas/${encodeURIComponent(name)}`));
  }

  putPersona(name: string, edit: Partial<Persona>): Promise<Persona> {
    return request(this.url(`/personas/${encodeURIComponent(name)}`), {
      method: "PUT",
      body: JSON.stringify(edit),
    });
  }

  createSession(
    persona: string,
    config?: Partial<PipelineConfig>,
  ): Promise<SessionRecord> {
    return request(this.url("/sessions"), {
      method: "POST",
      body: JSON.stringify(config ? { persona, config } : { persona }),
    });
  }

  getSession(sessionId: string): Promise<SessionRecord> {
    return request(this.url(`/sessions/${encodeURIComponent(sessionId)}`));
  }

  postMessage(sessionId: string, text: string): Promise<MessageResponse> {
    return request(
      this.url(`/sessions/${encodeURIComponent(sessionId)}/messages`),
      { method: "POST", body: JSON.stringify({ text }) },
    );
  }

  getTrace(traceId: string): Promise<TraceRecord> {
    return request(this.url(`/traces/${encodeURIComponent(traceId)}`));
  }
}
