/**
 * Typed client for the annotation service HTTP API.
 *
 * The fetch implementation is injectable so tests can run against an
 * in-memory server. All methods throw ApiError with the server's
 * {code, message} body on non-2xx responses.
 */

export type SentimentLabel = 'POSITIVE' | 'NEGATIVE' | 'NEUTRAL';

export const LABELS: SentimentLabel[] = ['POSITIVE', 'NEGATIVE', 'NEUTRAL'];

export interface Progress {
  rater: string;
  rated: number;
  total: number;
}

export interface AnnotationTask {
  task_id: string;
  abstract: string;
  progress: Progress;
}

export interface NextTaskResponse {
  task: AnnotationTask | null;
  progress?: Progress;
}

export interface SubmitResponse {
  ok: boolean;
  progress: Progress;
}

export interface AdminProgress {
  raters: Progress[];
}

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

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class AnnotationClient {
  constructor(
    private readonly token: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
    private readonly baseUrl = '',
  ) {}

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    const resp = await this.fetchImpl(this.baseUrl + path, {
      ...init,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(init.body ? { 'Content-Type': 'application/json' } : {}),
        ...(init.headers ?? {}),
      },
    });
    if (!resp.ok) {
      let code = 'error';
      let message = `request failed with status ${resp.status}`;
      try {
        const body = (await resp.json()) as { code?: string; message?: string };
        code = body.code ?? code;
        message = body.message ?? message;
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(resp.status, code, message);
    }
    return resp;
  }

  async nextTask(): Promise<NextTaskResponse> {
    const resp = await this.request('/api/tasks/next');
    return (await resp.json()) as NextTaskResponse;
  }

  async submitRating(taskId: string, label: SentimentLabel): Promise<SubmitResponse> {
    const resp = await this.request('/api/ratings', {
      method: 'POST',
      body: JSON.stringify({ task_id: taskId, label }),
    });
    return (await resp.json()) as SubmitResponse;
  }

  async progress(): Promise<Progress | AdminProgress> {
    const resp = await this.request('/api/progress');
    return (await resp.json()) as Progress | AdminProgress;
  }

  /** Admin-only: the raw newline-delimited JSON annotations export. */
  async exportAnnotations(): Promise<string> {
    const resp = await this.request('/api/export');
    return resp.text();
  }
}

export function isAdminProgress(p: Progress | AdminProgress): p is AdminProgress {
  return Array.isArray((p as AdminProgress).raters);
}
