// API client: the only path through which review state is mutated.
// Verdict submission keeps an outbox; a network failure leaves the draft
// queued and a later flush delivers it, so no acknowledged-looking action
// is ever silently lost.

import type {
  Category,
  Cluster,
  ImageDetail,
  QueuePage,
  StoredVerdict,
  VerdictDraft,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

interface OutboxEntry {
  draft: VerdictDraft;
  resolve: (v: StoredVerdict) => void;
  reject: (e: unknown) => void;
}

export class ApiClient {
  private outbox: OutboxEntry[] = [];
  private flushing = false;

  constructor(
    private readonly fetchImpl: FetchLike,
    private readonly base: string = "",
  ) {}

  get pendingVerdicts(): number {
    return this.outbox.length;
  }

  async queue(params: {
    band_lo?: number;
    band_hi?: number;
    order?: "asc" | "desc";
    offset?: number;
    limit?: number;
  }): Promise<QueuePage> {
    const search = new URLSearchParams();
    for (const [key, value] of Object.entries(params)) {
      if (value !== undefined) search.set(key, String(value));
    }
    return this.getJson(`/api/queue?${search.toString()}`);
  }

  async image(imageId: string): Promise<ImageDetail> {
    return this.getJson(`/api/images/${encodeURIComponent(imageId)}`);
  }

  async categories(): Promise<Category[]> {
    const body = await this.getJson<{ categories: Category[] }>("/api/categories");
    return body.categories;
  }

  async clusters(): Promise<Cluster[]> {
    const body = await this.getJson<{ clusters: Cluster[] }>("/api/clusters");
    return body.clusters;
  }

  async resolveCluster(clusterId: string, allowlisted: boolean): Promise<{ status: string }> {
    const response = await this.fetchImpl(
      `${this.base}/api/clusters/${encodeURIComponent(clusterId)}/allowlist`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ allowlisted }),
      },
    );
    if (!response.ok) throw new ApiError(response.status, await errorDetail(response));
    return response.json();
  }

  // Submit via the outbox. An API rejection (4xx) fails the promise and
  // drops the draft (the caller surfaces it inline); a network failure
  // keeps the draft queued for a later flush.
  submitVerdict(draft: VerdictDraft): Promise<StoredVerdict> {
    return new Promise<StoredVerdict>((resolve, reject) => {
      this.outbox.push({ draft, resolve, reject });
      void this.flush();
    });
  }

  // Deliver queued verdicts in order; stops at the first network failure
  // and leaves the remainder queued. Returns the number delivered.
  async flush(): Promise<number> {
    if (this.flushing) return 0;
    this.flushing = true;
    let delivered = 0;
    try {
      while (this.outbox.length > 0) {
        const entry = this.outbox[0];
        let response: Response;
        try {
          response = await this.fetchImpl(`${this.base}/api/verdicts`, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(entry.draft),
          });
        } catch (err) {
          break; // network failure: keep the entry queued, retry later
        }
        this.outbox.shift();
        if (response.ok) {
          entry.resolve((await response.json()) as StoredVerdict);
          delivered += 1;
        } else {
          entry.reject(new ApiError(response.status, await errorDetail(response)));
        }
      }
    } finally {
      this.flushing = false;
    }
    return delivered;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(`${this.base}${path}`);
    if (!response.ok) throw new ApiError(response.status, await errorDetail(response));
    return (await response.json()) as T;
  }
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    return typeof body?.detail === "string" ? body.detail : `HTTP ${response.status}`;
  } catch {
    return `HTTP ${response.status}`;
  }
}
