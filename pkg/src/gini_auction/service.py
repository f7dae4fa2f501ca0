"""Live auction service: agents join, adjust budgets, and leave while the
mechanism's price and allocation are kept current.

The stateful part is :class:`AuctionEngine`, a plain synchronous object
that serializes mutations and recomputes the full solution on every
accepted change (desk-scale populations recompute in milliseconds, so
incremental maintenance is not worth its complexity).  The FastAPI app
built by :func:`create_app` is a thin HTTP skin over one engine: reads
serve immutable snapshots, mutations go through a single lock, and a
server-sent-events stream broadcasts (version, price, gini) after every
accepted mutation.

Winner counts may be configured as absolute counts or as population
fractions; fractions are resolved against the current number of agents on
every recompute.
"""

from __future__ import annotations

import asyncio
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from .core import (
    BudgetProfile,
    MechanismInfeasible,
    MechanismParams,
    PriceSolution,
    investment_bounds,
    lorenz_points,
    run_mechanism,
)


@dataclass(frozen=True)
class WinnerCountPolicy:
    """Allowed winner counts, absolute or as fractions of the population."""

    counts: tuple[int, ...] = ()
    fractions: tuple[float, ...] = ()

    def __post_init__(self):
        if bool(self.counts) == bool(self.fractions):
            raise ValueError("give either counts or fractions, not both")
        if any(k < 2 for k in self.counts):
            raise ValueError("winner counts below 2 are not allowed")
        if any(not 0.0 < f <= 1.0 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")

    def resolve(self, n: int) -> tuple[int, ...]:
        """Winner counts valid for a population of n agents."""
        if self.counts:
            ks = sorted({k for k in self.counts if k <= n})
        else:
            ks = sorted(
                k for k in {max(2, math.ceil(f * n)) for f in self.fractions}
                if k <= n
            )
        return tuple(ks)

    @classmethod
    def default(cls) -> "WinnerCountPolicy":
        return cls(fractions=(0.5, 0.6, 0.7, 0.8, 0.9, 1.0))


@dataclass(frozen=True)
class Snapshot:
    """One consistent, immutable view of the auction."""

    version: int
    open: bool
    budgets: dict[str, float]
    solution: Optional[PriceSolution]
    infeasible_reason: Optional[str] = None

    def state_payload(self) -> dict:
        n = len(self.budgets)
        body = {
            "version": self.version,
            "open": self.open,
            "agent_count": n,
            "feasible": self.solution is not None,
        }
        if self.solution is None:
            body.update(price=None, winner_count=None, gini=None, lorenz=[],
                        reason=self.infeasible_reason)
            return body
        alloc = self.solution.allocation
        winners = alloc.shares[alloc.shares > 0]
        pts = lorenz_points(alloc.shares) if n else []
        body.update(
            price=self.solution.price,
            winner_count=self.solution.winner_count,
            gini=alloc.gini,
            positive_share_count=int(winners.size),
            lorenz=[[float(x), float(y)] for x, y in pts],
        )
        return body


@dataclass
class AuctionEvent:
    """Append-only log entry for replayability."""

    version: int
    kind: str  # "join" | "update" | "leave" | "close"
    agent_id: Optional[str]
    budget: Optional[float]
    timestamp: float = field(default_factory=time.time)


class AuctionClosed(RuntimeError):
    pass


class UnknownAgent(KeyError):
    pass


class AuctionEngine:
    """Serialized mutations over a budget profile with a live solution.

    Every accepted mutation recomputes the exact mechanism outcome and
    bumps the version counter; readers always get the snapshot taken
    under the same lock as the mutation, so observable history is a
    total order of accepted updates.
    """

    def __init__(self, gini_cap: float = 0.6,
                 policy: Optional[WinnerCountPolicy] = None):
        self.gini_cap = gini_cap
        self.policy = policy or WinnerCountPolicy.default()
        self._lock = threading.Lock()
        self._budgets: dict[str, float] = {}
        self._version = 0
        self._open = True
        self._events: list[AuctionEvent] = []
        self._snapshot = self._recompute()

    # -- internals ---------------------------------------------------

    def _params_for(self, n: int) -> Optional[MechanismParams]:
        ks = self.policy.resolve(n)
        if not ks:
            return None
        return MechanismParams(gini_cap=self.gini_cap, winner_counts=ks)

    def _recompute(self) -> Snapshot:
        n = len(self._budgets)
        solution = None
        reason = None
        params = self._params_for(n) if n else None
        if params is None:
            reason = "not enough agents for any allowed winner count"
        else:
            try:
                solution = run_mechanism(
                    BudgetProfile.of(self._budgets), params
                )
            except MechanismInfeasible as exc:
                reason = str(exc)
        self._snapshot = Snapshot(
            version=self._version, open=self._open,
            budgets=dict(self._budgets), solution=solution,
            infeasible_reason=reason,
        )
        return self._snapshot

    def _mutate(self, kind: str, agent_id: Optional[str],
                budget: Optional[float]) -> Snapshot:
        with self._lock:
            if not self._open:
                raise AuctionClosed("auction is closed")
            if kind == "join":
                if agent_id in self._budgets:
                    raise ValueError(f"agent {agent_id} already joined")
                self._budgets[agent_id] = budget
            elif kind == "update":
                if agent_id not in self._budgets:
                    raise UnknownAgent(agent_id)
                self._budgets[agent_id] = budget
            elif kind == "leave":
                if agent_id not in self._budgets:
                    raise UnknownAgent(agent_id)
                del self._budgets[agent_id]
            self._version += 1
            self._events.append(AuctionEvent(self._version, kind, agent_id, budget))
            return self._recompute()

    # -- mutations ---------------------------------------------------

    def join(self, agent_id: str, budget: float) -> Snapshot:
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        return self._mutate("join", agent_id, float(budget))

    def update_budget(self, agent_id: str, budget: float) -> Snapshot:
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        return self._mutate("update", agent_id, float(budget))

    def leave(self, agent_id: str) -> Snapshot:
        return self._mutate("leave", agent_id, None)

    def close(self) -> Snapshot:
        """Freeze the auction; repeated closes are no-ops."""
        with self._lock:
            if self._open:
                self._open = False
                self._version += 1
                self._events.append(
                    AuctionEvent(self._version, "close", None, None)
                )
                self._recompute()
            return self._snapshot

    # -- reads (lock-free over immutable snapshots) -------------------

    @property
    def snapshot(self) -> Snapshot:
        return self._snapshot

    @property
    def events(self) -> list[AuctionEvent]:
        return list(self._events)

    def agent_payload(self, snap: Snapshot, agent_id: str) -> dict:
        if agent_id not in snap.budgets:
            raise UnknownAgent(agent_id)
        body = {"agent_id": agent_id, "budget": snap.budgets[agent_id],
                "version": snap.version}
        if snap.solution is not None:
            alloc = snap.solution.allocation
            body["share"] = alloc.share_of(agent_id)
            body["spending"] = alloc.spending_of(agent_id)
        else:
            body["share"] = 0.0
            body["spending"] = 0.0
        return body

    def what_if(self, agent_id: str, budget: float,
                valuation: Optional[float] = None) -> dict:
        """Pure evaluation of a hypothetical budget against a snapshot."""
        snap = self._snapshot
        if agent_id not in snap.budgets:
            raise UnknownAgent(agent_id)
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        others = {a: b for a, b in snap.budgets.items() if a != agent_id}
        trial = dict(others)
        trial[agent_id] = float(budget)
        params = self._params_for(len(trial))
        body = {"agent_id": agent_id, "budget": float(budget),
                "version": snap.version}
        if params is None:
            body.update(feasible=False, price=None, share=0.0, spending=0.0)
            return body
        try:
            sol = run_mechanism(BudgetProfile.of(trial), params)
        except MechanismInfeasible:
            body.update(feasible=False, price=None, share=0.0, spending=0.0)
        else:
            share = sol.allocation.share_of(agent_id)
            body.update(
                feasible=True, price=sol.price, share=share,
                spending=sol.allocation.spending_of(agent_id),
            )
            if valuation is not None:
                body["utility"] = valuation * share - sol.allocation.spending_of(agent_id)
        bounds = self.bounds(agent_id)
        body["b_min"] = bounds["b_min"]
        body["b_max"] = bounds["b_max"]
        return body

    def bounds(self, agent_id: str) -> dict:
        """Investment bounds for an agent against the others' budgets."""
        snap = self._snapshot
        if agent_id not in snap.budgets:
            raise UnknownAgent(agent_id)
        others = {a: b for a, b in snap.budgets.items() if a != agent_id}
        params = self._params_for(len(others) + 1)
        if params is None or not others:
            return {"agent_id": agent_id, "b_min": None, "b_max": None,
                    "version": snap.version}
        lo, hi = investment_bounds(BudgetProfile.of(others), params)
        return {
            "agent_id": agent_id,
            "b_min": lo,
            "b_max": None if math.isinf(hi) else hi,
            "version": snap.version,
        }


# ---------------------------------------------------------------------------
# HTTP layer


class JoinBody(BaseModel):
    agent_id: str
    budget: float


class BudgetBody(BaseModel):
    budget: float


def create_app(
    gini_cap: float = 0.6,
    policy: Optional[WinnerCountPolicy] = None,
    preload: Optional[dict[str, float]] = None,
) -> FastAPI:
    """Build the HTTP app around a fresh engine.

    ``preload`` seeds the auction with initial budgets, e.g. from a
    dataset, before the server starts taking traffic.
    """
    engine = AuctionEngine(gini_cap=gini_cap, policy=policy)
    if preload:
        for agent_id, budget in preload.items():
            engine.join(agent_id, budget)
    app = FastAPI(title="inequality-capped auction")
    app.state.engine = engine
    subscribers: set[asyncio.Queue] = set()

    def broadcast(snap: Snapshot) -> None:
        sol = snap.solution
        payload = {
            "version": snap.version,
            "open": snap.open,
            "price": None if sol is None else sol.price,
            "gini": None if sol is None else sol.allocation.gini,
        }
        for q in list(subscribers):
            try:
                q.put_nowait(payload)
            except asyncio.QueueFull:
                pass

    def run_mutation(fn, *args) -> Snapshot:
        try:
            snap = fn(*args)
        except AuctionClosed as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except UnknownAgent as exc:
            raise HTTPException(status_code=404,
                                detail=f"unknown agent {exc.args[0]}")
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        broadcast(snap)
        return snap

    @app.post("/agents")
    async def join(body: JoinBody):
        snap = run_mutation(engine.join, body.agent_id, body.budget)
        return engine.agent_payload(snap, body.agent_id) | {
            "price": None if snap.solution is None else snap.solution.price
        }

    @app.put("/agents/{agent_id}/budget")
    async def update_budget(agent_id: str, body: BudgetBody):
        snap = run_mutation(engine.update_budget, agent_id, body.budget)
        return engine.agent_payload(snap, agent_id) | {
            "price": None if snap.solution is None else snap.solution.price
        }

    @app.delete("/agents/{agent_id}")
    async def leave(agent_id: str):
        snap = run_mutation(engine.leave, agent_id)
        return {"version": snap.version, "agent_count": len(snap.budgets)}

    @app.get("/state")
    async def state():
        return engine.snapshot.state_payload()

    @app.get("/agents/{agent_id}")
    async def agent(agent_id: str):
        try:
            return engine.agent_payload(engine.snapshot, agent_id)
        except UnknownAgent:
            raise HTTPException(status_code=404,
                                detail=f"unknown agent {agent_id}")

    @app.get("/agents/{agent_id}/whatif")
    async def whatif(agent_id: str, budget: float,
                     valuation: Optional[float] = None):
        try:
            return engine.what_if(agent_id, budget, valuation)
        except UnknownAgent:
            raise HTTPException(status_code=404,
                                detail=f"unknown agent {agent_id}")
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/agents/{agent_id}/bounds")
    async def bounds(agent_id: str):
        try:
            return engine.bounds(agent_id)
        except UnknownAgent:
            raise HTTPException(status_code=404,
                                detail=f"unknown agent {agent_id}")

    @app.post("/close")
    async def close():
        already = not engine.snapshot.open
        snap = engine.close()
        if not already:
            broadcast(snap)
        body = snap.state_payload()
        body["already_closed"] = already
        return body

    @app.get("/events")
    async def events():
        return [
            {"version": e.version, "kind": e.kind, "agent_id": e.agent_id,
             "budget": e.budget, "timestamp": e.timestamp}
            for e in engine.events
        ]

    @app.get("/stream")
    async def stream():
        q: asyncio.Queue = asyncio.Queue(maxsize=256)
        subscribers.add(q)

        async def gen():
            import json
            try:
                yield "data: " + json.dumps(
                    engine.snapshot.state_payload()) + "\n\n"
                while True:
                    payload = await q.get()
                    yield "data: " + json.dumps(payload) + "\n\n"
            finally:
                subscribers.discard(q)

        return StreamingResponse(gen(), media_type="text/event-stream")

    return app
