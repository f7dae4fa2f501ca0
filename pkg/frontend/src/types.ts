/** Shapes of the service responses the dashboard consumes. */

export interface StatePayload {
  version: number;
  open: boolean;
  agent_count: number;
  feasible: boolean;
  price: number | null;
  winner_count: number | null;
  gini: number | null;
  positive_share_count?: number;
  lorenz: [number, number][];
  reason?: string | null;
}

/** Lightweight push sent on every mutation (no lorenz/winner detail). */
export interface PushPayload {
  version: number;
  open: boolean;
  price: number | null;
  gini: number | null;
}

export interface AgentPayload {
  agent_id: string;
  budget: number;
  version: number;
  share: number;
  spending: number;
  price?: number | null;
}

export interface WhatIfPayload {
  agent_id: string;
  budget: number;
  version: number;
  feasible: boolean;
  price: number | null;
  share: number;
  spending: number;
  utility?: number;
  b_min: number | null;
  b_max: number | null;
}

export interface BoundsPayload {
  agent_id: string;
  b_min: number | null;
  b_max: number | null;
  version: number;
}
