/** DOM wiring: render the store into the dashboard page. */

import { DashboardClient } from "./client";
import { equalityPath, lorenzPath } from "./lorenz";
import type { LiveView } from "./store";

const SVG_W = 280;
const SVG_H = 280;

const base = (window as { AUCTION_BASE?: string }).AUCTION_BASE ?? "";
const client = new DashboardClient(base);

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function fmt(v: number | null | undefined, digits = 6): string {
  return v === null || v === undefined ? "-" : v.toFixed(digits);
}

function render(view: LiveView): void {
  const s = view.state;
  el("stale-banner").hidden = !view.stale;
  if (!s) return;
  el("version").textContent = String(s.version);
  el("price").textContent = fmt(s.price);
  el("gini").textContent = fmt(s.gini, 4);
  el("winners").textContent =
    s.winner_count === null ? "-" : `${s.winner_count} of ${s.agent_count}`;
  el("status").textContent = s.open
    ? s.feasible
      ? "open"
      : `open (infeasible: ${s.reason ?? "?"})`
    : "closed";
  el<SVGPathElement & HTMLElement>("lorenz-curve").setAttribute(
    "d",
    lorenzPath(s.lorenz, SVG_W, SVG_H),
  );
  el<SVGPathElement & HTMLElement>("lorenz-equality").setAttribute(
    "d",
    equalityPath(SVG_W, SVG_H),
  );

  const w = view.whatIf;
  const panel = el("whatif-panel");
  panel.hidden = w === null;
  if (w) {
    el("whatif-version").textContent = String(w.version);
    el("whatif-price").textContent = fmt(w.price);
    el("whatif-share").textContent = fmt(w.share);
    el("whatif-spending").textContent = fmt(w.spending);
    el("whatif-utility").textContent = fmt(w.utility);
    el("whatif-band").textContent =
      `b_min ${fmt(w.b_min, 4)} / b_max ${w.b_max === null ? "none" : fmt(w.b_max, 4)}`;
  }
}

async function refreshMe(): Promise<void> {
  if (!client.agentId) return;
  const me = await client.api.getAgent(client.agentId);
  el("my-share").textContent = fmt(me.share);
  el("my-spending").textContent = fmt(me.spending);
  el("my-budget").textContent = fmt(me.budget, 4);
}

function wire(): void {
  client.store.subscribe((view) => {
    render(view);
    void refreshMe();
  });

  el<HTMLFormElement>("join-form").addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const id = el<HTMLInputElement>("join-id").value.trim();
    const budget = Number(el<HTMLInputElement>("join-budget").value);
    if (!id || !(budget >= 0)) return;
    try {
      await client.join(id, budget);
      el("me-panel").hidden = false;
    } catch (err) {
      el("error").textContent = String(err);
    }
  });

  el<HTMLFormElement>("budget-form").addEventListener("submit", async (ev) => {
    ev.preventDefault();
    const budget = Number(el<HTMLInputElement>("budget-input").value);
    if (!(budget >= 0)) return;
    try {
      await client.submitBudget(budget);
    } catch (err) {
      el("error").textContent = String(err);
    }
  });

  const slider = el<HTMLInputElement>("whatif-slider");
  slider.addEventListener("input", () => {
    const valuation = Number(el<HTMLInputElement>("valuation-input").value);
    client.whatIf.request(
      Number(slider.value),
      Number.isFinite(valuation) && valuation > 0 ? valuation : undefined,
    );
  });

  el<HTMLButtonElement>("close-btn").addEventListener("click", async () => {
    await client.api.close();
  });
}

wire();
void client.start();
