// Thin typed client over the session service. Every method maps to
// exactly one documented route; nothing else is ever requested.

import type {
  Catalog,
  CreateSessionOptions,
  HealthInfo,
  QueryResponse,
  RecommendationList,
  SessionSummary,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** A non-2xx response, carrying the service's {code, message} body. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export class SessionApi {
  private readonly base: string;

  constructor(
    baseUrl: string,
    private readonly fetchImpl: FetchLike,
  ) {
    this.base = baseUrl.replace(/\/+$/, '');
  }

  health(): Promise<HealthInfo> {
    return this.get('/healthz');
  }

  catalog(): Promise<Catalog> {
    return this.get('/items');
  }

  createSession(options: CreateSessionOptions = {}): Promise<SessionSummary> {
    return this.post('/sessions', options);
  }

  getSession(id: string): Promise<SessionSummary> {
    return this.get(`/sessions/${encodeURIComponent(id)}`);
  }

  nextQuery(id: string, topK: number): Promise<QueryResponse> {
    return this.get(`/sessions/${encodeURIComponent(id)}/query?top_k=${topK}`);
  }

  submitRating(id: string, item: number, rating: number): Promise<SessionSummary> {
    return this.post(`/sessions/${encodeURIComponent(id)}/ratings`, { item, rating });
  }

  recommendations(id: string, topN: number): Promise<RecommendationList> {
    return this.get(`/sessions/${encodeURIComponent(id)}/recommendations?top_n=${topN}`);
  }

  private async get<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(this.base + path);
    return this.unwrap<T>(resp);
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    return this.unwrap<T>(resp);
  }

  private async unwrap<T>(resp: Response): Promise<T> {
    if (resp.ok) {
      return (await resp.json()) as T;
    }
    let code = 'http_error';
    let message = `request failed with status ${resp.status}`;
    try {
      const body = (await resp.json()) as { code?: string; message?: string };
      if (body.code) code = body.code;
      if (body.message) message = body.message;
    } catch {
      // non-JSON error body; keep the generic message
    }
    throw new ApiError(resp.status, code, message);
  }
}
