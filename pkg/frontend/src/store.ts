/** Client-side view state with a monotone version guard.
 *
 * The store never computes auction quantities; it only merges service
 * responses. Pushed or fetched states older than what is already
 * rendered are dropped, so the rendered version never goes backwards.
 * What-if projections are kept separate from live state and carry the
 * version they were computed against.
 */

import type { StatePayload, WhatIfPayload } from "./types";

export interface LiveView {
  state: StatePayload | null;
  whatIf: WhatIfPayload | null;
  stale: boolean;
}

type Listener = (view: LiveView) => void;

export class LiveStore {
  private view: LiveView = { state: null, whatIf: null, stale: false };
  private listeners: Listener[] = [];

  get current(): LiveView {
    return this.view;
  }

  get version(): number {
    return this.view.state?.version ?? -1;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  /** Apply a full state payload; stale versions are ignored. */
  applyState(state: StatePayload): boolean {
    if (state.version < this.version) return false;
    this.view = { ...this.view, state };
    this.emit();
    return true;
  }

  /** Record a hypothetical projection; never touches live state. */
  applyWhatIf(result: WhatIfPayload): void {
    this.view = { ...this.view, whatIf: result };
    this.emit();
  }

  clearWhatIf(): void {
    if (!this.view.whatIf) return;
    this.view = { ...this.view, whatIf: null };
    this.emit();
  }

  setStale(stale: boolean): void {
    if (this.view.stale === stale) return;
    this.view = { ...this.view, stale };
    this.emit();
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.view);
  }
}
