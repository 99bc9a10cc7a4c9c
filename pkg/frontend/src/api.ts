import type {
  EditOpBody,
  FinalizedPayload,
  LeaseInfo,
  RecordDetail,
  RecordSummary,
  SessionView,
} from './types';

export class ApiError extends Error {
  status: number;
  code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = 'unknown';
  let message = response.statusText;
  try {
    const body = await response.json();
    if (body?.detail?.error) {
      code = body.detail.error;
      message = body.detail.message ?? message;
    }
  } catch {
    // non-JSON error body; keep defaults
  }
  return new ApiError(response.status, code, message);
}

/**
 * Typed client for the review service. The UI holds no authoritative state;
 * every mutation goes through here as a single edit op and the caller
 * re-renders from the returned derived state.
 */
export class ReviewApi {
  baseUrl: string;
  reviewer: string;

  constructor(baseUrl = '', reviewer = 'ui') {
    this.baseUrl = baseUrl.replace(/\/$/, '');
    this.reviewer = reviewer;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: {
        'Content-Type': 'application/json',
        'X-Reviewer-Id': this.reviewer,
      },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  listRecords(): Promise<RecordSummary[]> {
    return this.request('GET', '/api/records');
  }

  getRecord(uid: string): Promise<RecordDetail> {
    return this.request('GET', `/api/records/${uid}`);
  }

  imageUrl(uid: string): string {
    return `${this.baseUrl}/api/records/${uid}/image`;
  }

  propose(uid: string, qaId: string, backend?: string): Promise<SessionView> {
    return this.request('POST', `/api/records/${uid}/qa/${qaId}/propose`,
      backend ? { backend } : {});
  }

  getSession(uid: string, qaId: string): Promise<SessionView> {
    return this.request('GET', `/api/records/${uid}/qa/${qaId}/session`);
  }

  postEdit(uid: string, qaId: string, op: EditOpBody): Promise<SessionView> {
    return this.request('POST', `/api/records/${uid}/qa/${qaId}/edits`, op);
  }

  finalize(uid: string, qaId: string, retainIou?: number): Promise<FinalizedPayload> {
    return this.request('POST', `/api/records/${uid}/qa/${qaId}/finalize`,
      retainIou === undefined ? {} : { retain_iou: retainIou });
  }

  lease(uid: string, qaId: string, action: 'acquire' | 'renew' | 'release' = 'acquire'):
      Promise<LeaseInfo> {
    return this.request('POST', `/api/records/${uid}/qa/${qaId}/lease`, { action });
  }

  utilityRows(): Promise<Array<Record<string, string>>> {
    return this.request('GET', '/api/metrics/utility');
  }
}
