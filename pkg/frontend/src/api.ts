/** Typed client for the review service's HTTP API. */

export interface SessionInfo {
  day: number;
  set: number;
  count: number;
}

export interface CropItem {
  crop_id: string;
  individual: string;
  day: number;
  set: number;
  qc: string;
  url: string;
}

export interface CropsPage {
  items: CropItem[];
  total: number;
  page: number;
  page_size: number;
}

export type DecisionStatus = 'keep' | 'discard';

export interface DecisionPost {
  crop_id: string;
  status: DecisionStatus;
  reviewer: string;
}

/** Non-2xx response; permanent for a given request (no retry). */
export class ApiError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
    this.name = 'ApiError';
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: typeof fetch = globalThis.fetch.bind(globalThis),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path);
    if (!resp.ok) {
      throw new ApiError(resp.status, `GET ${path} -> ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  sessions(): Promise<SessionInfo[]> {
    return this.getJson<SessionInfo[]>('/api/sessions');
  }

  crops(params: {
    day?: number;
    set?: number;
    status?: string;
    page?: number;
    page_size?: number;
  }): Promise<CropsPage> {
    const query = new URLSearchParams();
    for (const [key, value] of Object.entries(params)) {
      if (value !== undefined) query.set(key, String(value));
    }
    const suffix = query.toString() ? `?${query.toString()}` : '';
    return this.getJson<CropsPage>(`/api/crops${suffix}`);
  }

  /** Every page of one session, in server order. */
  async allCrops(day: number, set: number): Promise<CropItem[]> {
    const pageSize = 500;
    const out: CropItem[] = [];
    for (let page = 1; ; page++) {
      const batch = await this.crops({ day, set, page, page_size: pageSize });
      out.push(...batch.items);
      if (out.length >= batch.total || batch.items.length === 0) return out;
    }
  }

  async postDecision(decision: DecisionPost): Promise<void> {
    const resp = await this.fetchFn(this.baseUrl + '/api/decision', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(decision),
    });
    if (!resp.ok) {
      throw new ApiError(resp.status, `POST /api/decision -> ${resp.status}`);
    }
  }
}
