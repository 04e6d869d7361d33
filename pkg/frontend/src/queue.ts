// View state for working a queue: current filter, position, pending
// verdict selection. All mutations of review state go through the API
// client; this class only reflects acknowledged results.

import type { ApiClient } from "./api.js";
import type { Decision, ReviewItem, StoredVerdict } from "./types.js";

export interface QueueFilter {
  band_lo: number;
  band_hi: number;
  order: "asc" | "desc";
}

export class QueueView {
  items: ReviewItem[] = [];
  total = 0;
  index = 0;
  filter: QueueFilter = { band_lo: 0, band_hi: 1, order: "desc" };
  clusterMode = false;
  lastError: string | null = null;
  private inFlight = false;

  constructor(private readonly api: ApiClient, private readonly pageSize = 200) {}

  get current(): ReviewItem | null {
    return this.items[this.index] ?? null;
  }

  async load(filter?: Partial<QueueFilter>): Promise<void> {
    this.filter = { ...this.filter, ...filter };
    const page = await this.api.queue({
      band_lo: this.filter.band_lo,
      band_hi: this.filter.band_hi,
      order: this.filter.order,
      offset: 0,
      limit: this.pageSize,
    });
    this.items = page.items;
    this.total = page.total;
    this.index = 0;
  }

  advance(): void {
    if (this.index < this.items.length - 1) this.index += 1;
  }

  back(): void {
    if (this.index > 0) this.index -= 1;
  }

  // Submit a verdict for the current item. On acknowledgment the item is
  // marked reviewed and the view advances; an API rejection surfaces in
  // lastError without advancing. At most one verdict is in flight.
  async submit(
    decision: Decision,
    detectionIndex: number | null = null,
    species: string | null = null,
  ): Promise<StoredVerdict | null> {
    const item = this.current;
    if (!item || this.inFlight) return null;
    this.inFlight = true;
    this.lastError = null;
    try {
      const stored = await this.api.submitVerdict({
        image_id: item.image_id,
        decision,
        detection_index: detectionIndex,
        species,
      });
      item.status = "reviewed";
      this.advance();
      return stored;
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      return null;
    } finally {
      this.inFlight = false;
    }
  }
}
