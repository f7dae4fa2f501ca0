/** Headless dashboard client: service connection wired to the store.
 *
 * All behavior that does not need a DOM lives here so it can be tested
 * end-to-end against a real service. `main.ts` only renders the store.
 */

import { AuctionApi } from "./api";
import { SseClient } from "./sse";
import { LiveStore } from "./store";
import { WhatIfDriver } from "./whatif";
import type { PushPayload } from "./types";

export class DashboardClient {
  readonly api: AuctionApi;
  readonly store = new LiveStore();
  readonly whatIf: WhatIfDriver;
  agentId: string | null = null;
  private sse: SseClient | null = null;

  constructor(private base: string) {
    this.api = new AuctionApi(base);
    this.whatIf = new WhatIfDriver(
      (budget, valuation) => {
        if (!this.agentId) return Promise.reject(new Error("not joined"));
        return this.api.whatIf(this.agentId, budget, valuation);
      },
      (result) => this.store.applyWhatIf(result),
    );
  }

  /** Fetch the initial state and start the push stream. */
  async start(): Promise<void> {
    this.store.applyState(await this.api.getState());
    this.sse = new SseClient(this.base + "/stream", {
      onMessage: (data) => this.onPush(JSON.parse(data) as PushPayload),
      onStale: (stale) => this.store.setStale(stale),
    });
    this.sse.start();
  }

  stop(): void {
    this.sse?.stop();
  }

  /** Push events carry only the headline numbers; refetch the full
   *  state (lorenz, winner count) when the version advances. */
  private onPush(push: PushPayload): void {
    if (push.version <= this.store.version) return;
    void this.api.getState().then((state) => this.store.applyState(state));
  }

  async join(agentId: string, budget: number): Promise<void> {
    await this.api.join(agentId, budget);
    this.agentId = agentId;
  }

  async submitBudget(budget: number): Promise<void> {
    if (!this.agentId) throw new Error("not joined");
    await this.api.updateBudget(this.agentId, budget);
  }

  async leave(): Promise<void> {
    if (!this.agentId) return;
    await this.api.leave(this.agentId);
    this.agentId = null;
    this.store.clearWhatIf();
  }

  /** Wait until the rendered version reaches at least `version`. */
  waitForVersion(version: number, timeoutMs = 5000): Promise<number> {
    if (this.store.version >= version) {
      return Promise.resolve(this.store.version);
    }
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        unsub();
        reject(new Error(`version ${version} not reached in ${timeoutMs}ms`));
      }, timeoutMs);
      const unsub = this.store.subscribe((view) => {
        if ((view.state?.version ?? -1) >= version) {
          clearTimeout(timer);
          unsub();
          resolve(view.state!.version);
        }
      });
    });
  }
}
