/** Thin typed client for the conduct service; no dose logic lives here. */
import type {
  ApiErrorBody,
  DesignCatalog,
  Recommendation,
  SessionCreated,
  SessionView,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly body: ApiErrorBody;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.status = status;
    this.body = body;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ConductClient {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const payload = await response.json();
    if (!response.ok) {
      const err = payload as Partial<ApiErrorBody>;
      throw new ApiError(response.status, {
        code: err.code ?? "error",
        message: err.message ?? response.statusText,
        fields: err.fields ?? [],
      });
    }
    return payload as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  designs(): Promise<DesignCatalog> {
    return this.request("GET", "/designs");
  }

  createSession(config: Record<string, unknown>): Promise<SessionCreated> {
    return this.request("POST", "/sessions", config);
  }

  getSession(id: string): Promise<SessionView> {
    return this.request("GET", `/sessions/${id}`);
  }

  postOutcomes(id: string, outcomes: number[]): Promise<{ id: string; recommendation: Recommendation }> {
    return this.request("POST", `/sessions/${id}/outcomes`, { outcomes });
  }

  undo(id: string): Promise<{ id: string; recommendation: Recommendation }> {
    return this.request("POST", `/sessions/${id}/undo`);
  }

  close(id: string): Promise<{ id: string; closed: boolean }> {
    return this.request("POST", `/sessions/${id}/close`);
  }
}
