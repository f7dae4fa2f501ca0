"""Strategy classification, best responses, first best, and the dynamics."""

import math

import numpy as np
import pytest

from gini_auction import (
    Agent,
    BudgetProfile,
    MechanismInfeasible,
    MechanismParams,
    ParameterError,
    StrategyKind,
    asymptotic_trial,
    best_response,
    build_allocation_curve,
    classify,
    derivative_bound,
    first_best,
    iterate_equilibrium,
    repair_concave,
    run_mechanism,
)
from gini_auction.core import _probe_outcome
from gini_auction.data import generate_observers, make_synthetic_dataset


# ---------------------------------------------------------------------------
# Concavity repair


class TestRepairConcave:
    def test_concave_input_untouched(self):
        y = [0.0, 0.5, 0.8, 0.9]
        repaired, delta = repair_concave(y)
        assert delta == pytest.approx(0.0, abs=1e-9)
        assert repaired == pytest.approx(y, abs=1e-9)

    def test_worked_example(self):
        # [DERIVED] y = (0, 1, 3, 4) has the convex kink at index 1.  The
        # optimal repair spreads the error evenly: y' = (0, 4/3, 8/3, 4)
        # moves points 1 and 2 by exactly 1/3 in opposite directions, and
        # no concave chain through the band |y' - y| < 1/3 exists.
        repaired, delta = repair_concave([0.0, 1.0, 3.0, 4.0])
        assert delta == pytest.approx(1 / 3, abs=1e-8)
        assert repaired == pytest.approx([0, 4 / 3, 8 / 3, 4], abs=1e-7)

    def test_matches_cvxpy(self, rng):
        cvxpy = pytest.importorskip("cvxpy")
        for _ in range(10):
            m = int(rng.integers(3, 12))
            y = np.concatenate(([0.0], np.sort(rng.uniform(0, 1, m))))
            y[1:] += rng.normal(0, 0.05, m)  # perturb off the concave hull
            repaired, delta = repair_concave(y)
            yv = cvxpy.Variable(m + 1)
            d = cvxpy.Variable(nonneg=True)
            cons = [yv[0] == 0, cvxpy.abs(yv - y) <= d]
            cons += [yv[j + 1] >= yv[j] for j in range(m)]
            cons += [yv[j + 2] - 2 * yv[j + 1] + yv[j] <= 0 for j in range(m - 1)]
            prob = cvxpy.Problem(cvxpy.Minimize(d), cons)
            prob.solve()
            assert delta == pytest.approx(float(d.value), abs=1e-6)

    def test_output_is_monotone_concave(self, rng):
        for _ in range(50):
            m = int(rng.integers(2, 20))
            y = np.concatenate(([0.0], rng.uniform(0, 1, m)))
            repaired, delta = repair_concave(y)
            assert np.all(np.diff(repaired) >= -1e-9)
            assert np.all(np.diff(repaired, 2) <= 1e-9)
            assert np.max(np.abs(repaired - y)) <= delta + 1e-8

    def test_rejects_bad_input(self):
        with pytest.raises(ParameterError):
            repair_concave([0.0])
        with pytest.raises(ParameterError):
            repair_concave([0.5, 0.6])


# ---------------------------------------------------------------------------
# Classification


class TestClassify:
    def test_pull_out_when_priced_out(self):
        # Without the agent the two budget-5 whales already clear p = 10.
        others = BudgetProfile.of({"w1": 5.0, "w2": 5.0})
        params = MechanismParams(gini_cap=0.6, winner_counts=(2,))
        agent = Agent(id="me", valuation=5.0, max_budget=1.0)
        cls = classify(agent, others, params)
        assert cls.kind is StrategyKind.PULL_OUT
        assert cls.price_out == pytest.approx(10.0, abs=1e-6)

    def test_zero_valuation_pulls_out(self):
        others = BudgetProfile.of({"w1": 1.0, "w2": 1.0})
        params = MechanismParams(gini_cap=0.6, winner_counts=(2,))
        cls = classify(Agent(id="me", valuation=0.0, max_budget=9.0), others, params)
        assert cls.kind is StrategyKind.PULL_OUT

    def test_max_out_threshold_price_over_0991(self):
        # [PAPER §4] g = 0.6 gives the sensitivity factor 9; an agent whose
        # maximal share is 0.001 maxes out iff her valuation reaches the
        # price divided by 1 - 0.001 * 9 = 0.991.  Among 1000 equal unit
        # budgets the price at full participation is 1000, so the
        # threshold sits at 1000 / 0.991.
        n = 1000
        others = BudgetProfile.of({f"o{j:04d}": 1.0 for j in range(n - 1)})
        params = MechanismParams(gini_cap=0.6, winner_counts=(n,))
        assert derivative_bound(0.6) == pytest.approx(9.0)
        threshold = 1000.0 / 0.991

        rich = Agent(id="me", valuation=threshold + 1.0, max_budget=1.0)
        cls = classify(rich, others, params)
        assert cls.kind is StrategyKind.MAX_OUT
        assert cls.price_high == pytest.approx(1000.0, rel=1e-9)
        assert cls.max_share == pytest.approx(0.001, rel=1e-9)

        hesitant = Agent(id="me", valuation=threshold - 1.0, max_budget=1.0)
        assert classify(hesitant, others, params).kind is StrategyKind.NONTRIVIAL

    def test_pull_out_takes_precedence(self):
        # An agent with tiny valuation among big spenders is pull-out even
        # though her max-out denominator is positive.
        others = BudgetProfile.of({"w1": 8.0, "w2": 8.0, "w3": 8.0})
        params = MechanismParams(gini_cap=0.5, winner_counts=(2, 3))
        cls = classify(Agent(id="me", valuation=0.5, max_budget=0.1), others, params)
        assert cls.kind is StrategyKind.PULL_OUT


# ---------------------------------------------------------------------------
# Allocation curves and best responses


TOY_OTHERS = BudgetProfile.of({"a": 1.0, "b": 2.0, "c": 4.0})
TOY_PARAMS = MechanismParams(gini_cap=0.2, winner_counts=(2, 3))


def true_utility(agent, others, params, budget):
    """Exact utility of one report: v * share - price * share."""
    p, s = _probe_outcome(
        others.sorted_budgets(), budget,
        params.counts_for(others.n + 1), params.gini_cap, 1e-9,
    )
    return agent.valuation * s - p * s


class TestBestResponse:
    def test_pull_out_reports_zero(self):
        others = BudgetProfile.of({"w1": 5.0, "w2": 5.0})
        params = MechanismParams(gini_cap=0.6, winner_counts=(2,))
        agent = Agent(id="me", valuation=5.0, max_budget=1.0)
        assert best_response(agent, others, params) == (0.0, 0.0)

    def test_max_out_reports_full_budget(self):
        # A classified max-out agent plays the dominant strategy exactly.
        n = 1000
        others = BudgetProfile.of({f"o{j:04d}": 1.0 for j in range(n - 1)})
        params = MechanismParams(gini_cap=0.6, winner_counts=(n,))
        agent = Agent(id="me", valuation=1200.0, max_budget=1.0)
        assert classify(agent, others, params).kind is StrategyKind.MAX_OUT
        assert best_response(agent, others, params) == (1.0, 0.0)

    def test_huge_valuation_spends_everything(self):
        # Utility rises along the whole curve when v is huge relative to
        # the price scale, so the best report is the full true budget even
        # for a nontrivially classified agent.
        agent = Agent(id="me", valuation=1000.0, max_budget=3.0)
        b, err = best_response(agent, TOY_OTHERS, TOY_PARAMS)
        assert b == pytest.approx(3.0)
        assert err >= 0.0

    def test_interior_optimum_beats_grid_scan(self):
        # Nontrivial agent on the (1, 2, 4) toy profile: the curve optimum
        # must come within its own error bound of a dense scan of the true
        # utility.
        agent = Agent(id="me", valuation=14.0, max_budget=6.0)
        cls = classify(agent, TOY_OTHERS, TOY_PARAMS)
        assert cls.kind is StrategyKind.NONTRIVIAL
        b_star, err = best_response(agent, TOY_OTHERS, TOY_PARAMS)
        grid = np.linspace(0.0, agent.max_budget, 4001)
        u_grid = max(true_utility(agent, TOY_OTHERS, TOY_PARAMS, float(b)) for b in grid)
        u_star = true_utility(agent, TOY_OTHERS, TOY_PARAMS, b_star)
        assert u_star >= u_grid - err - 1e-6

    def test_error_bound_holds_on_random_profiles(self, rng):
        for _ in range(25):
            n = int(rng.integers(3, 8))
            others = BudgetProfile.of([float(b) for b in rng.uniform(0.5, 4.0, n)])
            params = MechanismParams(
                gini_cap=float(rng.uniform(0.2, 0.7)), winner_counts=(2, n)
            )
            agent = Agent(
                id="me",
                valuation=float(rng.uniform(1.0, 4.0) * others.total),
                max_budget=float(rng.uniform(0.2, 2.0) * others.total),
            )
            b_star, err = best_response(agent, others, params)
            grid = np.linspace(0.0, agent.max_budget, 1500)
            u_grid = max(true_utility(agent, others, params, float(b)) for b in grid)
            u_star = true_utility(agent, others, params, b_star)
            assert u_star >= u_grid - err - 1e-5


class TestAllocationCurve:
    def test_shape_and_range(self):
        agent = Agent(id="me", valuation=10.0, max_budget=5.0)
        curve = build_allocation_curve(agent, TOY_OTHERS, TOY_PARAMS)
        assert curve.budgets[0] == 0.0
        assert curve.shares[0] == 0.0
        assert curve.b_max <= agent.max_budget + 1e-12
        assert np.all(np.diff(curve.shares) >= -1e-9)
        assert np.all(np.diff(curve.shares, 2) <= 1e-9)

    def test_share_at_interpolates(self):
        agent = Agent(id="me", valuation=10.0, max_budget=5.0)
        curve = build_allocation_curve(agent, TOY_OTHERS, TOY_PARAMS)
        j = len(curve.budgets) // 2
        assert curve.share_at(float(curve.budgets[j])) == pytest.approx(
            float(curve.shares[j]), abs=1e-12
        )
        assert curve.share_at(0.0) == 0.0


# ---------------------------------------------------------------------------
# First best


class TestFirstBest:
    def test_toy_example(self):
        # [DERIVED] agents (v, b): (10, 5), (10, 5), (3, 5) with cap 0.5 and
        # counts {2, 3}.  Keeping the two high-value agents supports price
        # 10 = min(5 + 5, 10); keeping everyone caps revenue at t = 3.
        agents = [
            Agent(id="a", valuation=10.0, max_budget=5.0),
            Agent(id="b", valuation=10.0, max_budget=5.0),
            Agent(id="c", valuation=3.0, max_budget=5.0),
        ]
        params = MechanismParams(gini_cap=0.5, winner_counts=(2, 3))
        assert first_best(agents, params) == pytest.approx(10.0, abs=1e-6)

    def test_single_valuation_ample(self):
        # All agents value the coin at 100 >> total budget: revenue is the
        # full budget sum.
        agents = [
            Agent(id=i, valuation=100.0, max_budget=b)
            for i, b in enumerate([2.0, 3.0, 4.0])
        ]
        params = MechanismParams(gini_cap=0.5, winner_counts=(2, 3))
        assert first_best(agents, params) == pytest.approx(9.0, abs=1e-6)

    def test_matches_exhaustive_threshold_scan(self, rng):
        # The ternary search over >64 distinct valuations must agree with
        # the brute-force scan over every threshold.
        for _ in range(5):
            n = 150
            vals = rng.uniform(0.0, 1.0, n)
            buds = rng.exponential(0.05, n)
            agents = [
                Agent(id=f"x{i:03d}", valuation=float(v), max_budget=float(b))
                for i, (v, b) in enumerate(zip(vals, buds))
            ]
            ks = tuple(range(10, n + 1))
            params = MechanismParams(gini_cap=0.6, winner_counts=ks)
            got = first_best(agents, params)
            best = -math.inf
            for t in np.unique(vals):
                masked = np.where(vals >= t, buds, 0.0)
                try:
                    price = run_mechanism(
                        BudgetProfile.of([float(x) for x in masked]), params
                    ).price
                except MechanismInfeasible:
                    continue
                best = max(best, min(price, float(t)))
            assert got == pytest.approx(best, abs=1e-9)


# ---------------------------------------------------------------------------
# Best-response dynamics


class TestIterateEquilibrium:
    def test_all_max_out_fixed_point(self):
        # Twenty identical whales: each share is 1/20, so the max-out
        # margin 1 - 0.05 * 9 = 0.55 puts the threshold at 20/0.55 < 100.
        # Everyone maxes out immediately and revenue equals the first best
        # (the full budget sum) with zero error.
        agents = [
            Agent(id=f"w{j:02d}", valuation=100.0, max_budget=1.0)
            for j in range(20)
        ]
        params = MechanismParams(gini_cap=0.6, winner_counts=tuple(range(2, 21)))
        report = iterate_equilibrium(agents, params)
        assert report.converged
        assert report.revenue == pytest.approx(20.0, abs=1e-6)
        assert report.first_best == pytest.approx(20.0, abs=1e-6)
        assert report.decomposition() == "20=0+20+0"
        assert report.max_error == 0.0

    def test_degenerate_uniform_population(self):
        # [TRIVIAL] identical values U >> total budget: revenue is the
        # budget sum, min(U, n * B).
        agents = [
            Agent(id=f"d{j}", valuation=1.0, max_budget=0.001) for j in range(10)
        ]
        params = MechanismParams(gini_cap=0.6, winner_counts=tuple(range(2, 11)))
        report = iterate_equilibrium(agents, params)
        assert report.converged
        assert report.revenue == pytest.approx(0.01, abs=1e-9)
        assert report.first_best == pytest.approx(0.01, abs=1e-9)

    def test_synthetic_sale_near_first_best(self):
        # Sale-shaped population (real bidders entered above the clearing
        # price, observers value it below): revenue within 1% of first best.
        dataset = make_synthetic_dataset("sale", n_agents=60, rng_seed=7)
        agents = dataset.to_agents() + generate_observers(dataset, 60, rng_seed=8)
        n = len(agents)
        ks = tuple(sorted({max(2, int(math.ceil(f * n)))
                           for f in (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)}))
        params = MechanismParams(gini_cap=0.6, winner_counts=ks)
        report = iterate_equilibrium(agents, params)
        assert report.converged
        assert abs(report.revenue - report.first_best) <= 0.01 * report.first_best

    def test_final_classification_is_consistent(self):
        # On the settled profile, dominant-strategy agents must sit exactly
        # on their dominant reports.
        rng = np.random.default_rng(42)
        agents = [
            Agent(id=f"r{j:02d}", valuation=float(v), max_budget=float(b))
            for j, (v, b) in enumerate(
                zip(rng.uniform(0, 1, 30), rng.exponential(0.1, 30))
            )
        ]
        params = MechanismParams(gini_cap=0.6, winner_counts=tuple(range(5, 31)))
        report = iterate_equilibrium(agents, params)
        assert report.converged
        by_id = {a.id: a for a in agents}
        others_pool = {a.id: report.budgets[a.id] for a in agents}
        for aid, b in report.budgets.items():
            others = BudgetProfile.of(
                {k: v for k, v in others_pool.items() if k != aid}
            )
            probe = Agent(
                id=aid, valuation=by_id[aid].valuation,
                max_budget=by_id[aid].max_budget, reported_budget=b,
            )
            cls = classify(probe, others, params)
            if cls.kind is StrategyKind.PULL_OUT:
                assert b == pytest.approx(0.0, abs=1e-9)
            elif cls.kind is StrategyKind.MAX_OUT:
                assert b == pytest.approx(by_id[aid].max_budget, abs=1e-9)

    def test_revenue_bounded_by_first_best_plus_error(self):
        rng = np.random.default_rng(5)
        for seed in range(3):
            params = MechanismParams(
                gini_cap=0.6, winner_counts=tuple(range(5, 41))
            )
            report = asymptotic_trial(40, params, seed=seed)
            assert report.revenue <= report.first_best + report.max_error + 1e-9

    def test_report_shape(self):
        agents = [
            Agent(id=f"w{j}", valuation=10.0, max_budget=1.0) for j in range(4)
        ]
        params = MechanismParams(gini_cap=0.5, winner_counts=(2, 3, 4))
        report = iterate_equilibrium(agents, params)
        assert report.n == 4
        assert set(report.budgets) == {a.id for a in agents}
        assert (report.pull_out_count + report.max_out_count
                + report.nontrivial_count) == 4
        assert report.max_error_over_budget(agents) >= 0.0


class TestAsymptoticTrial:
    def test_deterministic_for_seed(self):
        params = MechanismParams(gini_cap=0.6, winner_counts=tuple(range(5, 31)))
        r1 = asymptotic_trial(30, params, seed=11)
        r2 = asymptotic_trial(30, params, seed=11)
        assert r1.revenue == r2.revenue
        assert r1.budgets == r2.budgets

    def test_revenue_never_exceeds_value_ceiling(self):
        params = MechanismParams(gini_cap=0.6, winner_counts=tuple(range(5, 31)))
        for seed in range(5):
            report = asymptotic_trial(30, params, seed=seed)
            assert report.revenue <= 1.0 + 1e-9
