/** Review state machine: cursor, counts, and the pending decision queue.
 *
 * Keypresses apply optimistically (qc + counts + cursor move immediately) and
 * enqueue a POST. The queue is FIFO and at-least-once: network failures keep
 * the decision queued for the next drain, while a definitive server rejection
 * (4xx/5xx) rolls the optimistic update back, restores the cursor and raises
 * a banner.
 */

import { ApiClient, ApiError, CropItem, DecisionStatus } from './api.js';

export interface QueuedDecision {
  crop: CropItem;
  status: DecisionStatus;
  previousQc: string;
  cursorBefore: number;
}

export type TriageAction = DecisionStatus | 'skip';

export interface Counts {
  pending: number;
  keep: number;
  discard: number;
}

const KEY_ACTIONS: Record<string, TriageAction> = {
  k: 'keep',
  d: 'discard',
  s: 'skip',
};

export class ReviewSession {
  crops: CropItem[] = [];
  cursor = 0;
  banner: string | null = null;
  day: number | null = null;
  set: number | null = null;

  private queue: QueuedDecision[] = [];
  private drainPromise: Promise<void> | null = null;

  constructor(
    private readonly api: ApiClient,
    public reviewer: string = 'reviewer',
  ) {}

  async load(day: number, set: number): Promise<void> {
    this.crops = await this.api.allCrops(day, set);
    this.day = day;
    this.set = set;
    this.cursor = 0;
    this.banner = null;
  }

  current(): CropItem | undefined {
    return this.crops[this.cursor];
  }

  counts(): Counts {
    const counts: Counts = { pending: 0, keep: 0, discard: 0 };
    for (const crop of this.crops) {
      if (crop.qc === 'keep') counts.keep++;
      else if (crop.qc === 'discard') counts.discard++;
      else counts.pending++;
    }
    return counts;
  }

  pendingPosts(): number {
    return this.queue.length;
  }

  /** Handle one triage key; returns the action taken or null if ignored. */
  triageKey(key: string): TriageAction | null {
    const action = KEY_ACTIONS[key.toLowerCase()];
    const crop = this.current();
    if (!action || !crop) return null;
    if (action === 'skip') {
      this.advance();
      return 'skip';
    }
    this.queue.push({
      crop,
      status: action,
      previousQc: crop.qc,
      cursorBefore: this.cursor,
    });
    crop.qc = action; // optimistic
    this.advance();
    void this.drain();
    return action;
  }

  private advance(): void {
    if (this.cursor < this.crops.length) this.cursor++;
  }

  /** Push queued decisions to the server in order; safe to call repeatedly.
   * A call made while a drain is already running awaits that drain. */
  drain(): Promise<void> {
    if (!this.drainPromise) {
      this.drainPromise = this.drainLoop().finally(() => {
        this.drainPromise = null;
      });
    }
    return this.drainPromise;
  }

  private async drainLoop(): Promise<void> {
    while (this.queue.length > 0) {
      const item = this.queue[0];
      try {
        await this.api.postDecision({
          crop_id: item.crop.crop_id,
          status: item.status,
          reviewer: this.reviewer,
        });
        this.queue.shift();
        if (this.banner?.startsWith('network error')) this.banner = null;
      } catch (err) {
        if (err instanceof ApiError) {
          // Definitive rejection: roll back and drop the decision.
          this.queue.shift();
          item.crop.qc = item.previousQc;
          this.cursor = item.cursorBefore;
          this.banner = `server rejected ${item.status} for ${item.crop.crop_id} (${err.status})`;
        } else {
          // Network trouble: keep it queued for the next drain.
          this.banner = 'network error - decisions queued for retry';
          return;
        }
      }
    }
  }

  /** Server-side totals for the loaded session (for count reconciliation). */
  async reconcile(): Promise<Counts> {
    if (this.day === null || this.set === null) {
      return { pending: 0, keep: 0, discard: 0 };
    }
    const totals: Counts = { pending: 0, keep: 0, discard: 0 };
    for (const status of ['pending', 'keep', 'discard'] as const) {
      const page = await this.api.crops({
        day: this.day,
        set: this.set,
        status,
        page: 1,
        page_size: 1,
      });
      totals[status] = page.total;
    }
    return totals;
  }
}

/** Sessions ordered so the one with the most unreviewed crops comes first. */
export function defaultSessionOrder(
  sessions: { day: number; set: number; count: number }[],
  pendingBySession: Map<string, number>,
): { day: number; set: number; count: number }[] {
  return [...sessions].sort((a, b) => {
    const pa = pendingBySession.get(`${a.day}:${a.set}`) ?? a.count;
    const pb = pendingBySession.get(`${b.day}:${b.set}`) ?? b.count;
    return pb - pa || a.day - b.day || a.set - b.set;
  });
}
