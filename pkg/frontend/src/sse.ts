/** Minimal server-sent-events client over fetch streaming.
 *
 * Works in both browsers and node 20 (no EventSource dependency), and
 * reconnects with exponential backoff, reporting staleness while down.
 */

export interface SseHandlers {
  onMessage: (data: string) => void;
  /** Called with true when the stream drops, false once it is back. */
  onStale?: (stale: boolean) => void;
}

/** Incremental parser for the text/event-stream wire format.
 *
 * Feed arbitrary chunks; returns the `data:` payloads of any events
 * completed by this chunk. Only the data field is used by the service.
 */
export class SseParser {
  private buffer = "";

  feed(chunk: string): string[] {
    this.buffer += chunk;
    const events: string[] = [];
    let idx: number;
    while ((idx = this.buffer.indexOf("\n\n")) >= 0) {
      const raw = this.buffer.slice(0, idx);
      this.buffer = this.buffer.slice(idx + 2);
      const data = raw
        .split("\n")
        .filter((line) => line.startsWith("data:"))
        .map((line) => line.slice(5).trimStart())
        .join("\n");
      if (data) events.push(data);
    }
    return events;
  }
}

export class SseClient {
  private stopped = false;
  private backoffMs = 500;

  constructor(
    private url: string,
    private handlers: SseHandlers,
    private maxBackoffMs = 10_000,
  ) {}

  start(): void {
    void this.loop();
  }

  stop(): void {
    this.stopped = true;
  }

  private async loop(): Promise<void> {
    while (!this.stopped) {
      try {
        const resp = await fetch(this.url, {
          headers: { accept: "text/event-stream" },
        });
        if (!resp.ok || !resp.body) throw new Error(`stream ${resp.status}`);
        this.handlers.onStale?.(false);
        this.backoffMs = 500;
        const parser = new SseParser();
        const decoder = new TextDecoder();
        const reader = resp.body.getReader();
        for (;;) {
          const { done, value } = await reader.read();
          if (done || this.stopped) break;
          for (const data of parser.feed(decoder.decode(value, { stream: true }))) {
            this.handlers.onMessage(data);
          }
        }
      } catch {
        // fall through to the backoff below
      }
      if (this.stopped) return;
      this.handlers.onStale?.(true);
      await new Promise((r) => setTimeout(r, this.backoffMs));
      this.backoffMs = Math.min(this.backoffMs * 2, this.maxBackoffMs);
    }
  }
}
