/** Thin typed wrappers over the auction service HTTP API.
 *
 * The dashboard does no mechanism math of its own: every number it
 * renders comes back from one of these calls.
 */

import type {
  AgentPayload,
  BoundsPayload,
  StatePayload,
  WhatIfPayload,
} from "./types";

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(base + path, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = await resp.json();
  if (!resp.ok) {
    throw new ApiError(resp.status, body?.detail ?? resp.statusText);
  }
  return body as T;
}

export class AuctionApi {
  constructor(private base: string) {}

  getState(): Promise<StatePayload> {
    return request(this.base, "/state");
  }

  getAgent(agentId: string): Promise<AgentPayload> {
    return request(this.base, `/agents/${encodeURIComponent(agentId)}`);
  }

  join(agentId: string, budget: number): Promise<AgentPayload> {
    return request(this.base, "/agents", {
      method: "POST",
      body: JSON.stringify({ agent_id: agentId, budget }),
    });
  }

  updateBudget(agentId: string, budget: number): Promise<AgentPayload> {
    return request(this.base, `/agents/${encodeURIComponent(agentId)}/budget`, {
      method: "PUT",
      body: JSON.stringify({ budget }),
    });
  }

  leave(agentId: string): Promise<{ version: number; agent_count: number }> {
    return request(this.base, `/agents/${encodeURIComponent(agentId)}`, {
      method: "DELETE",
    });
  }

  whatIf(agentId: string, budget: number, valuation?: number): Promise<WhatIfPayload> {
    const params = new URLSearchParams({ budget: String(budget) });
    if (valuation !== undefined) params.set("valuation", String(valuation));
    return request(
      this.base,
      `/agents/${encodeURIComponent(agentId)}/whatif?${params}`,
    );
  }

  getBounds(agentId: string): Promise<BoundsPayload> {
    return request(this.base, `/agents/${encodeURIComponent(agentId)}/bounds`);
  }

  close(): Promise<StatePayload & { already_closed: boolean }> {
    return request(this.base, "/close", { method: "POST" });
  }
}
