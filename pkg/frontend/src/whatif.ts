/** Debounced what-if slider driver.
 *
 * Slider moves are debounced (default 150 ms) and at most one request
 * is in flight; if the slider moved again meanwhile, the newest value
 * is sent once the current request settles and intermediate values are
 * dropped. Responses are delivered in order of issue, so a stale
 * projection never overwrites a newer one.
 */

import type { WhatIfPayload } from "./types";

export type WhatIfFetcher = (
  budget: number,
  valuation?: number,
) => Promise<WhatIfPayload>;

export class WhatIfDriver {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private pending: { budget: number; valuation?: number } | null = null;

  constructor(
    private fetcher: WhatIfFetcher,
    private onResult: (result: WhatIfPayload) => void,
    private onError: (err: unknown) => void = () => {},
    private debounceMs = 150,
  ) {}

  /** Called on every slider/input move. */
  request(budget: number, valuation?: number): void {
    if (this.timer) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.enqueue(budget, valuation);
    }, this.debounceMs);
  }

  private enqueue(budget: number, valuation?: number): void {
    this.pending = { budget, valuation };
    if (!this.inFlight) void this.drain();
  }

  private async drain(): Promise<void> {
    this.inFlight = true;
    while (this.pending) {
      const { budget, valuation } = this.pending;
      this.pending = null;
      try {
        this.onResult(await this.fetcher(budget, valuation));
      } catch (err) {
        this.onError(err);
      }
    }
    this.inFlight = false;
  }
}
