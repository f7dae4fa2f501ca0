"""Core auction engine: inequality-capped price discovery for one divisible token.

The mechanism sells a single, infinitely divisible coin.  Agents report
budgets only.  For every allowed winner count k the engine finds the highest
price at which an allocation exists whose Gini index stays below the cap,
then takes the best price over all allowed k.  All functions here are pure;
there is no shared mutable state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from numba import njit

# Comparisons against the Gini cap get this much slack to absorb rounding.
GINI_SLACK = 1e-12
# Numeric tolerance used for share sums and spending identities.
SUM_TOL = 1e-9
# The "infinitesimally small" starting price, relative to the total budget.
EPS_LOW_FACTOR = 1e-12
_MAX_BISECT = 80


class ParameterError(ValueError):
    """An argument violates an operation's contract."""


class MechanismInfeasible(RuntimeError):
    """No allowed winner count admits a feasible allocation.

    The usual fix is to raise the Gini cap or allow smaller winner counts.
    """


# ---------------------------------------------------------------------------
# Gini index


def gini_index(shares: Sequence[float]) -> float:
    """Gini index of an ascending-sorted list of nonnegative shares.

    For k entries y_1 <= ... <= y_k the value is
    2 * sum(i * y_i) / (k * sum(y)) - (k + 1) / k, which lies in
    [0, (k-1)/k] and is 0 exactly for equal shares.
    """
    y = np.asarray(shares, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ParameterError("shares must be a nonempty 1-d sequence")
    if np.any(y < -1e-15):
        raise ParameterError("shares must be nonnegative")
    if np.any(np.diff(y) < -1e-12):
        raise ParameterError("shares must be sorted ascending")
    total = float(y.sum())
    if total <= 0.0:
        raise ParameterError("shares must have a positive sum")
    k = y.size
    idx = np.arange(1, k + 1)
    return float(2.0 * np.dot(idx, y) / (k * total) - (k + 1.0) / k)


def lorenz_points(shares: Sequence[float]) -> list[tuple[float, float]]:
    """Lorenz curve of an allocation: cumulative population vs cumulative share.

    Accepts shares in any order; returns (0, 0) plus one point per agent.
    """
    y = np.sort(np.asarray(shares, dtype=float))
    n = y.size
    if n == 0:
        return [(0.0, 0.0)]
    total = y.sum()
    cum = np.cumsum(y) / total if total > 0 else np.zeros(n)
    pts = [(0.0, 0.0)]
    pts.extend(((i + 1) / n, float(cum[i])) for i in range(n))
    return pts


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class MechanismParams:
    """Mechanism parameters: Gini cap, allowed winner counts, search tolerance."""

    gini_cap: float
    winner_counts: tuple[int, ...]
    price_tolerance: float = 1e-9

    def __post_init__(self):
        if not (0.0 < self.gini_cap < 1.0):
            raise ParameterError(f"gini cap must be in (0, 1), got {self.gini_cap}")
        ks = tuple(sorted(set(int(k) for k in self.winner_counts)))
        if not ks:
            raise ParameterError("winner_counts must be nonempty")
        if ks[0] <= 1:
            # A single winner always has Gini index 0, which defeats the cap.
            raise ParameterError("winner counts must all be greater than 1")
        if self.price_tolerance <= 0:
            raise ParameterError("price_tolerance must be positive")
        object.__setattr__(self, "winner_counts", ks)

    def counts_for(self, n: int) -> np.ndarray:
        ks = np.asarray(self.winner_counts, dtype=np.int64)
        if ks[-1] > n:
            raise ParameterError(
                f"winner count {ks[-1]} exceeds the number of agents {n}"
            )
        return ks


class BudgetProfile:
    """Reported budgets, one per agent, with a deterministic sorted view.

    Ties in budget are broken by agent id so that the ascending order
    b_1 <= b_2 <= ... <= b_n (and hence the winner selection) is unique.
    """

    __slots__ = ("agent_ids", "budgets", "order", "_view")

    def __init__(self, agent_ids: Sequence, budgets: Sequence[float]):
        ids = tuple(agent_ids)
        b = np.asarray(budgets, dtype=float)
        if b.ndim != 1 or len(ids) != b.size:
            raise ParameterError("agent_ids and budgets must have equal length")
        if b.size == 0:
            raise ParameterError("profile must contain at least one agent")
        if len(set(ids)) != len(ids):
            raise ParameterError("agent ids must be unique")
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise ParameterError("budgets must be finite and nonnegative")
        self.agent_ids = ids
        self.budgets = b
        self.budgets.setflags(write=False)
        order = sorted(range(b.size), key=lambda i: (b[i], ids[i]))
        self.order = np.asarray(order, dtype=np.int64)
        self._view = _SortedView(b[self.order])

    @classmethod
    def of(cls, budgets: Mapping | Iterable[float]) -> "BudgetProfile":
        if isinstance(budgets, Mapping):
            ids = list(budgets.keys())
            return cls(ids, [budgets[i] for i in ids])
        vals = list(budgets)
        return cls(list(range(len(vals))), vals)

    @property
    def n(self) -> int:
        return self.budgets.size

    @property
    def total(self) -> float:
        return float(self._view.total)

    def sorted_budgets(self) -> np.ndarray:
        return self._view.b

    def without(self, agent_id) -> "BudgetProfile":
        keep = [i for i, a in enumerate(self.agent_ids) if a != agent_id]
        if len(keep) == len(self.agent_ids):
            raise ParameterError(f"unknown agent id {agent_id!r}")
        return BudgetProfile(
            [self.agent_ids[i] for i in keep], self.budgets[keep]
        )


@dataclass(frozen=True)
class CapSolveResult:
    """Outcome of the Gini-minimizing allocation at a fixed price.

    When feasible, the winners are the k highest-budget agents; each gets
    min(b_i / p, cap) and the caps are chosen so the shares sum to one.
    """

    feasible: bool
    gini: float
    cap: Optional[float] = None
    shares: Optional[np.ndarray] = None  # aligned with the profile's agents
    winner_count: int = 0
    price: float = 0.0


@dataclass(frozen=True)
class Allocation:
    """A complete mechanism outcome for one profile."""

    agent_ids: tuple
    shares: np.ndarray        # aligned with agent_ids
    price: float
    spendings: np.ndarray     # shares * price
    winner_count: int
    gini: float

    def share_of(self, agent_id) -> float:
        return float(self.shares[self.agent_ids.index(agent_id)])

    def spending_of(self, agent_id) -> float:
        return float(self.spendings[self.agent_ids.index(agent_id)])


@dataclass(frozen=True)
class PriceSolution:
    """Final price, chosen winner count, and the per-count maximum prices."""

    price: float
    winner_count: int
    allocation: Allocation
    prices_by_count: dict[int, Optional[float]]


# ---------------------------------------------------------------------------
# Sorted-profile kernel
#
# All price/Gini computations reduce to suffix sums over the ascending
# budgets.  With b_(1) <= ... <= b_(n), the minimum-Gini allocation for k
# winners at price p caps the m largest budgets at a common share C solving
# sum over winners of min(b_i/p, C) = 1.  The correct m is the largest one
# whose cap candidate stays below the next budget, which a single
# searchsorted over the precomputed "cap gap" array finds for every k at
# once.  All aggregate arrays are in money units so they can be shared
# across prices.


class _SortedView:
    __slots__ = ("b", "n", "topsum", "topw", "capgap", "total")

    def __init__(self, ascending: np.ndarray):
        b = np.ascontiguousarray(ascending, dtype=float)
        n = b.size
        rev = b[::-1]
        self.b = b
        self.n = n
        # topsum[m] = sum of the m largest budgets (m = 0..n)
        self.topsum = np.concatenate(([0.0], np.cumsum(rev)))
        # topw[m] = sum of (ascending position) * budget over the m largest
        mult = np.arange(n, 0, -1, dtype=float)
        self.topw = np.concatenate(([0.0], np.cumsum(mult * rev)))
        # capgap[m-1] = topsum[m] - m * b_(n-m+1); nondecreasing in m.
        m = np.arange(1, n + 1)
        self.capgap = self.topsum[1:] - m * rev[m - 1]
        self.total = float(self.topsum[n])


@njit(cache=True)
def _k_capped_count(topsum, capgap, k, p):
    """Number of cap-bound winners for winner count k at price p."""
    m = np.searchsorted(capgap, topsum[k] - p, side="right")
    if m < 1:
        m = 1
    if m > k:
        m = k
    return m


@njit(cache=True)
def _k_gstar(topsum, topw, capgap, b, k, p):
    """Minimum Gini index at (k, p) in O(log n); 1.0 where infeasible."""
    n = b.shape[0]
    S = topsum[k]
    if S < p * (1.0 - 1e-12):
        return 1.0
    m = _k_capped_count(topsum, capgap, k, p)
    Tm = topsum[m]
    C = (p - S + Tm) / (m * p)
    weighted = (topw[k] - topw[m] - (n - k) * (S - Tm)) / p
    weighted += C * m * (2.0 * k - m + 1.0) * 0.5
    gini = 2.0 * weighted / k - (k + 1.0) / k
    if gini < 0.0:
        gini = 0.0
    elif gini > 1.0:
        gini = 1.0
    return gini


@njit(cache=True)
def _k_max_price_above(topsum, topw, capgap, b, k, gcap, tol, eps_low, floor):
    """Highest feasible price for winner count k, or NaN if it is below
    ``floor`` (or does not exist at all).

    If the fully-maxed-out price (sum of the top-k budgets) already meets
    the cap it is returned directly; otherwise the price is bisected inside
    [max(k * b_(n-k+1), floor), sum of top-k], which brackets the cap
    crossing: the minimum Gini index is nondecreasing in the price, so one
    evaluation at the bracket's low end rejects any k that cannot reach
    past the floor.
    """
    n = b.shape[0]
    S = topsum[k]
    if S <= 0.0 or S <= floor:
        return np.nan
    if _k_gstar(topsum, topw, capgap, b, k, S) <= gcap:
        return S
    lo = k * b[n - k]
    if lo < eps_low:
        lo = eps_low
    if lo < floor:
        lo = floor
    if _k_gstar(topsum, topw, capgap, b, k, lo) > gcap:
        return np.nan
    hi = S
    for _ in range(80):
        if hi - lo <= tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if _k_gstar(topsum, topw, capgap, b, k, mid) <= gcap:
            lo = mid
        else:
            hi = mid
    return lo


@njit(cache=True)
def _k_max_price(topsum, topw, capgap, b, k, gcap, tol, eps_low):
    """Highest feasible price for winner count k; NaN when none exists."""
    return _k_max_price_above(
        topsum, topw, capgap, b, k, gcap, tol, eps_low, 0.0
    )


@njit(cache=True)
def _k_solve(topsum, topw, capgap, b, ks, gcap, tol, eps_low):
    """Best price over allowed winner counts, ties to the largest count.

    ks must be ascending.  The per-count maximum price is unimodal-ish in
    practice, so a geometric ladder of counts cheaply establishes a
    strong incumbent price.  A count can only matter if its minimum Gini
    index at (just under) that price meets the cap (the index is
    nondecreasing in the price); that screen runs in one ascending pass
    because the number of cap-bound winners at a fixed price never
    decreases with k.  Survivors are bisected in descending count order
    with a strict floor, which resolves exact price ties (plateaus where
    several counts share the same sum) toward the largest count.
    """
    n = b.shape[0]
    nk = ks.shape[0]
    tie = 4.0 * tol

    # Phase A: ladder floor.
    floor0 = -1.0
    j = nk - 1
    step = 1
    while True:
        k = ks[j]
        if topsum[k] > floor0:
            f = floor0 if floor0 > 0.0 else 0.0
            p = _k_max_price_above(
                topsum, topw, capgap, b, k, gcap, tol, eps_low, f
            )
            if p == p and p > floor0:
                floor0 = p
        if j == 0:
            break
        j -= step
        step *= 2
        if j < 0:
            j = 0

    # Phase B: screen every count against the ladder floor (kept loose by
    # the tie window so exact ties survive).  Without any floor the screen
    # is vacuous and every count stays a candidate.
    cand = np.empty(nk, np.int64)
    ncand = 0
    if floor0 > 0.0:
        floor_s = floor0 * (1.0 - tie)
        mm = 0
        for i in range(nk):
            k = ks[i]
            S = topsum[k]
            if S <= floor_s:
                continue
            target = S - floor_s
            while mm < n and capgap[mm] <= target:
                mm += 1
            m = mm
            if m < 1:
                m = 1
            if m > k:
                m = k
            Tm = topsum[m]
            C = (floor_s - S + Tm) / (m * floor_s)
            weighted = (topw[k] - topw[m] - (n - k) * (S - Tm)) / floor_s
            weighted += C * m * (2.0 * k - m + 1.0) * 0.5
            gini = 2.0 * weighted / k - (k + 1.0) / k
            if gini <= gcap:
                cand[ncand] = i
                ncand += 1
    else:
        for i in range(nk):
            cand[i] = i
        ncand = nk

    # Phase C: exact search over the survivors, largest count first.
    best = -1.0
    best_k = 0
    thr0 = floor0 * (1.0 - tie) if floor0 > 0.0 else 0.0
    for j in range(ncand - 1, -1, -1):
        k = ks[cand[j]]
        floor = thr0
        if best > 0.0 and best * (1.0 + tie) > floor:
            floor = best * (1.0 + tie)
        if topsum[k] <= floor:
            continue
        p = _k_max_price_above(
            topsum, topw, capgap, b, k, gcap, tol, eps_low, floor
        )
        if p == p and (best_k == 0 or p > best * (1.0 + tie)):
            best = p
            best_k = k
    return best, best_k


def _max_prices_view(
    view: _SortedView, ks: np.ndarray, gini_cap: float, tol: float
) -> np.ndarray:
    """Highest feasible price for every winner count; NaN where none exists."""
    ks = np.asarray(ks, dtype=np.int64)
    prices = np.full(ks.shape, np.nan)
    if view.total <= 0.0:
        return prices
    eps_low = view.total * EPS_LOW_FACTOR
    cap = gini_cap + GINI_SLACK
    for i, k in enumerate(ks):
        prices[i] = _k_max_price(
            view.topsum, view.topw, view.capgap, view.b, int(k), cap, tol, eps_low
        )
    return prices


def _solve_fast(view: _SortedView, ks: np.ndarray, gini_cap: float, tol: float):
    """(price, chosen k) on a sorted view; (None, 0) when infeasible."""
    if view.total <= 0.0:
        return None, 0
    cap = gini_cap + GINI_SLACK
    ks = np.asarray(ks, dtype=np.int64)
    # A winner set of size k holds z = k - npos zero shares when only npos
    # budgets are positive, and z zeros force a Gini index of at least z/k.
    # Winner counts beyond npos / (1 - cap) are therefore infeasible at any
    # price and can be sliced off before the scan.
    npos = view.n - int(np.searchsorted(view.b, 0.0, side="right"))
    if npos < view.n and cap < 1.0:
        kmax = int(npos / (1.0 - cap) * (1.0 + 1e-12))
        ks = ks[: int(np.searchsorted(ks, kmax, side="right"))]
        if ks.size == 0:
            return None, 0
    price, k = _k_solve(
        view.topsum, view.topw, view.capgap, view.b,
        ks, cap, tol,
        view.total * EPS_LOW_FACTOR,
    )
    if k == 0:
        return None, 0
    return float(price), int(k)


def _alloc_sorted(view: _SortedView, k: int, price: float):
    """Ascending winner shares (cap, shares) of the min-Gini allocation."""
    m = int(_k_capped_count(view.topsum, view.capgap, k, price))
    cap = float((price - view.topsum[k] + view.topsum[m]) / (m * price))
    shares = np.minimum(view.b[view.n - k:] / price, cap)
    return cap, shares


# ---------------------------------------------------------------------------
# Public operations


def min_gini_allocation(profile: BudgetProfile, price: float, k: int) -> CapSolveResult:
    """Gini-minimizing allocation for k winners at a fixed price.

    Infeasible (Gini defined as 1) when the k largest budgets cannot jointly
    afford the whole coin.  Solved by a closed-form scan over the number of
    cap-bound winners; no numeric root finding is involved.
    """
    if price <= 0:
        raise ParameterError("price must be positive")
    n = profile.n
    k = int(k)
    if k < 1 or k > n:
        raise ParameterError(f"winner count {k} out of range [1, {n}]")
    view = profile._view
    if view.topsum[k] < price * (1.0 - 1e-12):
        return CapSolveResult(
            feasible=False, gini=1.0, winner_count=k, price=price
        )
    cap, winner_shares = _alloc_sorted(view, k, price)
    shares = np.zeros(n)
    shares[profile.order[n - k:]] = winner_shares
    g = gini_index(winner_shares) if winner_shares.sum() > 0 else 0.0
    return CapSolveResult(
        feasible=True, gini=g, cap=cap, shares=shares,
        winner_count=k, price=price,
    )


def g_star(profile: BudgetProfile, price: float, k: int) -> float:
    """Minimum achievable Gini index at the given price and winner count."""
    if price <= 0:
        raise ParameterError("price must be positive")
    if not (1 <= int(k) <= profile.n):
        raise ParameterError(f"winner count {k} out of range [1, {profile.n}]")
    view = profile._view
    return float(
        _k_gstar(view.topsum, view.topw, view.capgap, view.b, int(k), float(price))
    )


def max_price_k(
    profile: BudgetProfile, k: int, params: MechanismParams
) -> Optional[float]:
    """Highest price whose minimum Gini index meets the cap; None if infeasible."""
    k = int(k)
    if k > profile.n:
        raise ParameterError(f"winner count {k} exceeds {profile.n} agents")
    p = _max_prices_view(
        profile._view, np.asarray([k]), params.gini_cap, params.price_tolerance
    )[0]
    return None if math.isnan(p) else float(p)


def run_mechanism(profile: BudgetProfile, params: MechanismParams) -> PriceSolution:
    """Run the full mechanism: best price over every allowed winner count.

    Price ties are broken toward more winners; non-winner selection drops
    the lowest-budget agents, breaking budget ties by agent id.
    """
    ks = params.counts_for(profile.n)
    prices = _max_prices_view(
        profile._view, ks, params.gini_cap, params.price_tolerance
    )
    price, k = _solve_fast(
        profile._view, ks, params.gini_cap, params.price_tolerance
    )
    by_count = {
        int(kk): (None if math.isnan(p) else float(p))
        for kk, p in zip(ks, prices)
    }
    if price is None:
        raise MechanismInfeasible(
            "no allowed winner count admits a feasible allocation; "
            "consider raising the Gini cap"
        )
    result = min_gini_allocation(profile, price, k)
    allocation = Allocation(
        agent_ids=profile.agent_ids,
        shares=result.shares,
        price=price,
        spendings=result.shares * price,
        winner_count=k,
        gini=result.gini,
    )
    return PriceSolution(
        price=price, winner_count=k, allocation=allocation,
        prices_by_count=by_count,
    )


def derivative_bound(gini_cap: float) -> float:
    """Upper bound on the price's sensitivity to any single budget."""
    return (gini_cap + 3.0) / (1.0 - gini_cap)


# ---------------------------------------------------------------------------
# Investment bounds for a prospective agent


@njit(cache=True)
def _probe_kernel(sorted_others, x, ks, cap, tol):
    """(price, probe share) after inserting budget x into an ascending
    array; (-1, 0) when infeasible.  The probe wins budget ties.

    Builds the prefix arrays inline so a probe costs one pass over the
    profile plus the winner count search, with no interpreter round trips.
    """
    no = sorted_others.shape[0]
    n = no + 1
    pos = np.searchsorted(sorted_others, x, side="right")
    b = np.empty(n)
    for i in range(pos):
        b[i] = sorted_others[i]
    b[pos] = x
    for i in range(pos, no):
        b[i + 1] = sorted_others[i]
    topsum = np.empty(n + 1)
    topw = np.empty(n + 1)
    capgap = np.empty(n)
    topsum[0] = 0.0
    topw[0] = 0.0
    s = 0.0
    w = 0.0
    npos = 0
    for m in range(1, n + 1):
        v = b[n - m]
        if v > 0.0:
            npos += 1
        s += v
        w += (n - m + 1) * v
        topsum[m] = s
        topw[m] = w
        capgap[m - 1] = s - m * v
    if s <= 0.0:
        return -1.0, 0.0
    kuse = ks
    if npos < n and cap < 1.0:
        kmax = int(npos / (1.0 - cap) * (1.0 + 1e-12))
        cut = np.searchsorted(ks, kmax, side="right")
        if cut == 0:
            return -1.0, 0.0
        kuse = ks[:cut]
    price, k = _k_solve(
        topsum, topw, capgap, b, kuse, cap, tol, s * EPS_LOW_FACTOR
    )
    if k == 0:
        return -1.0, 0.0
    if pos < n - k:
        return price, 0.0
    m = _k_capped_count(topsum, capgap, k, price)
    c = (price - topsum[k] + topsum[m]) / (m * price)
    share = x / price
    if share > c:
        share = c
    return price, share


def _probe_outcome(
    sorted_others: np.ndarray, x: float, ks: np.ndarray, g: float, tol: float
):
    """(price, probe share) for the profile others + {x}; (0, 0) if infeasible."""
    price, share = _probe_kernel(
        np.ascontiguousarray(sorted_others, dtype=float), float(x),
        np.asarray(ks, dtype=np.int64), g + GINI_SLACK, tol,
    )
    if price < 0.0:
        return 0.0, 0.0
    return price, share


def investment_bounds(
    others: BudgetProfile, params: MechanismParams, tolerance: Optional[float] = None
) -> tuple[float, float]:
    """Minimum winning budget and maximum effective budget for a new agent.

    ``b_min`` is the infimum reported budget at which the agent receives a
    positive share; ``b_max`` the budget beyond which the price no longer
    reacts.  Both are located by bisection with the full mechanism as the
    oracle.  ``b_max`` is infinite in degenerate profiles where the price
    keeps scaling with the probe budget (e.g. all other budgets zero).
    """
    sorted_others = others.sorted_budgets()
    n_eff = others.n + 1
    ks = params.counts_for(n_eff)
    g, tol = params.gini_cap, params.price_tolerance

    scale = max(others.total, float(sorted_others[-1]), 1.0)
    huge = scale * (4.0 / (1.0 - g) + 4.0)
    p_huge, _ = _probe_outcome(sorted_others, huge, ks, g, tol)
    p_huge2, _ = _probe_outcome(sorted_others, 2.0 * huge, ks, g, tol)
    if p_huge <= 0.0 and p_huge2 <= 0.0:
        raise MechanismInfeasible("no probe budget admits a feasible allocation")
    abs_tol = tolerance if tolerance is not None else max(tol * huge, 1e-15 * scale)

    # b_min: smallest budget with a positive share.
    _, share0 = _probe_outcome(sorted_others, abs_tol, ks, g, tol)
    if share0 > 0.0:
        b_min = 0.0
    else:
        lo, hi = 0.0, huge
        while hi - lo > abs_tol:
            mid = 0.5 * (lo + hi)
            _, s = _probe_outcome(sorted_others, mid, ks, g, tol)
            if s > 0.0:
                hi = mid
            else:
                lo = mid
        b_min = hi

    # b_max: smallest budget at which the price has saturated.
    if p_huge2 > p_huge * (1.0 + 10.0 * tol):
        return b_min, math.inf
    target = p_huge * (1.0 - 10.0 * tol)
    lo, hi = 0.0, huge
    while hi - lo > abs_tol:
        mid = 0.5 * (lo + hi)
        p, _ = _probe_outcome(sorted_others, mid, ks, g, tol)
        if p >= target:
            hi = mid
        else:
            lo = mid
    return b_min, hi
