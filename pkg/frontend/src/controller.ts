// Session state machine, free of any DOM so it can run headless.
//
// All numbers shown to the user (EVOI, posterior means, pruning
// counts) come straight from the service; this layer only sequences
// requests and tracks the skip cursor. "Skip" walks the server's
// ranked candidate list client-side and never posts anything.

import { ApiError, SessionApi } from './api.js';
import type {
  CreateSessionOptions,
  HistoryEntry,
  QueryResponse,
  RankedCandidate,
  Recommendation,
} from './types.js';

export type Phase = 'idle' | 'starting' | 'ready' | 'done' | 'error';

export interface SessionState {
  phase: Phase;
  rho: number;
  modelKind: string;
  nItems: number;
  sessionId: string | null;
  query: QueryResponse | null;
  /** Position in query.ranked the user has skipped to. */
  skipOffset: number;
  /** True when skips ran past every candidate the server can offer. */
  exhausted: boolean;
  recommendations: Recommendation[];
  history: HistoryEntry[];
  candidatesPruned: number;
  stopReason: string | null;
  /** A mutation is in flight; inputs must be disabled. */
  pending: boolean;
  errorMessage: string | null;
}

export interface ControllerOptions {
  /** Ranked candidates fetched per query request (grows as the user skips). */
  topK?: number;
  /** Recommendations kept on screen. */
  topN?: number;
  session?: CreateSessionOptions;
  onChange?: (state: SessionState) => void;
}

function initialState(): SessionState {
  return {
    phase: 'idle',
    rho: 0,
    modelKind: '',
    nItems: 0,
    sessionId: null,
    query: null,
    skipOffset: 0,
    exhausted: false,
    recommendations: [],
    history: [],
    candidatesPruned: 0,
    stopReason: null,
    pending: false,
    errorMessage: null,
  };
}

export class SessionController {
  private state = initialState();
  private topK: number;
  private readonly topN: number;
  private lastFailed: (() => Promise<void>) | null = null;

  constructor(
    private readonly api: SessionApi,
    private readonly options: ControllerOptions = {},
  ) {
    this.topK = options.topK ?? 5;
    this.topN = options.topN ?? 10;
  }

  getState(): SessionState {
    return this.state;
  }

  /** The candidate the user is currently being asked about. */
  current(): RankedCandidate | null {
    const q = this.state.query;
    if (!q || q.stop) return null;
    return q.ranked[this.state.skipOffset] ?? null;
  }

  async start(): Promise<void> {
    await this.run(async () => {
      this.state = initialState();
      this.state.phase = 'starting';
      this.notify();
      const health = await this.api.health();
      this.state.rho = health.rho;
      this.state.modelKind = health.model_kind;
      this.state.nItems = health.n_items;
      const session = await this.api.createSession(this.options.session ?? {});
      this.state.sessionId = session.id;
      this.state.history = session.history;
      await this.refreshQuery();
      await this.refreshRecommendations();
      this.notify();
    });
  }

  /** Post a rating for the current candidate, then refresh everything. */
  async rate(rating: number): Promise<void> {
    const target = this.current();
    const id = this.state.sessionId;
    if (!target || id === null || this.state.pending) return;
    await this.run(async () => {
      this.state.pending = true;
      this.notify();
      try {
        let summary;
        try {
          summary = await this.api.submitRating(id, target.item, rating);
        } catch (err) {
          // a retried submit whose first attempt actually landed comes
          // back 409; the rating is in, so resync instead of failing
          if (!(err instanceof ApiError) || err.code !== 'duplicate_item') throw err;
          summary = await this.api.getSession(id);
        }
        this.state.history = summary.history;
        await this.refreshQuery();
        await this.refreshRecommendations();
      } finally {
        this.state.pending = false;
      }
      this.notify();
    });
  }

  /**
   * Advance to the next-best candidate without recording anything.
   * Once the fetched list runs out the server is asked for a deeper
   * one; when even that is short, there is nothing left to suggest.
   */
  async skip(): Promise<void> {
    const q = this.state.query;
    if (!q || q.stop || this.state.pending) return;
    if (this.state.skipOffset + 1 < q.ranked.length) {
      this.state.skipOffset += 1;
      this.notify();
      return;
    }
    if (q.ranked.length < this.topK || this.topK >= this.state.nItems) {
      // the server already returned every candidate it can score
      this.state.exhausted = true;
      this.notify();
      return;
    }
    this.topK = Math.min(this.topK * 2, this.state.nItems);
    const keep = this.state.skipOffset + 1;
    await this.run(async () => {
      await this.refreshQuery();
      const ranked = this.state.query?.ranked ?? [];
      this.state.skipOffset = Math.min(keep, Math.max(ranked.length - 1, 0));
      this.state.exhausted = keep >= ranked.length;
      this.notify();
    });
  }

  /** Re-run whatever request last failed; server state was never lost. */
  async retry(): Promise<void> {
    const op = this.lastFailed;
    if (!op) return;
    await this.run(op);
  }

  private async refreshQuery(): Promise<void> {
    const id = this.state.sessionId;
    if (id === null) return;
    const q = await this.api.nextQuery(id, this.topK);
    this.state.query = q;
    this.state.skipOffset = 0;
    this.state.exhausted = false;
    this.state.candidatesPruned = q.candidates_pruned;
    if (q.stop) {
      this.state.stopReason = q.reason ?? 'stopped';
      this.state.phase = 'done';
    } else {
      this.state.stopReason = null;
      this.state.phase = 'ready';
    }
  }

  private async refreshRecommendations(): Promise<void> {
    const id = this.state.sessionId;
    if (id === null) return;
    const recs = await this.api.recommendations(id, this.topN);
    // rendered exactly as served: order, labels, and means are the server's
    this.state.recommendations = recs.items;
  }

  private async run(op: () => Promise<void>): Promise<void> {
    try {
      this.state.errorMessage = null;
      await op();
      this.lastFailed = null;
    } catch (err) {
      this.lastFailed = op;
      this.state.errorMessage = err instanceof Error ? err.message : String(err);
      if (this.state.sessionId === null) this.state.phase = 'error';
      this.notify();
    }
  }

  private notify(): void {
    this.options.onChange?.(this.state);
  }
}
