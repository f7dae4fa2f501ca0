"""Dataset schema, round-trips, duplicate handling, and observer draws."""

import json
import math

import numpy as np
import pytest

from gini_auction import BudgetProfile, MechanismParams, run_mechanism
from gini_auction.data import (
    DATA_DIR_ENV,
    DatasetFormatError,
    IcoDataset,
    IcoRecord,
    SelectionMeta,
    generate_observers,
    load_dataset,
    make_synthetic_dataset,
    resolve_dataset_path,
    save_dataset,
)


def record(aid="a1", eth=2.0, rate=300.0, price=0.05, ts=1000.0, usd=None):
    return IcoRecord(
        agent_id=aid,
        budget_eth=eth,
        budget_usd=eth * rate if usd is None else usd,
        entering_price_eth=price,
        timestamp=ts,
        rate=rate,
    )


def small_dataset():
    return IcoDataset(
        name="toy",
        records=[record("a1", 2.0), record("a2", 0.5, ts=1001.0)],
        ending_price_eth=0.04,
        selection=SelectionMeta(raised_usd=1e6, dutch_auction=True,
                                transaction_count=2),
    )


class TestRecordValidation:
    def test_valid_record_passes(self):
        record().validate(row=5)

    def test_negative_budget_reports_row(self):
        bad = record(eth=-1.0, usd=-300.0)
        with pytest.raises(DatasetFormatError, match=r"row 7"):
            bad.validate(row=7)

    def test_rate_mismatch_rejected(self):
        # 2 ETH at rate 300 must be ~600 USD; 700 is off by far over 1%.
        bad = record(usd=700.0)
        with pytest.raises(DatasetFormatError, match="disagrees"):
            bad.validate()

    def test_rate_tolerance_allows_rounding(self):
        record(usd=2.0 * 300.0 * 1.005).validate()

    @pytest.mark.parametrize("kw", [{"price": 0.0}, {"rate": -1.0}, {"aid": ""}])
    def test_other_invalid_fields(self, kw):
        with pytest.raises(DatasetFormatError):
            record(**kw).validate()


class TestDataset:
    def test_requires_records_and_price(self):
        with pytest.raises(DatasetFormatError):
            IcoDataset(name="empty", records=[], ending_price_eth=1.0)
        with pytest.raises(DatasetFormatError):
            IcoDataset(name="freebie", records=[record()], ending_price_eth=0.0)

    def test_to_agents_uses_entering_price_as_valuation(self):
        agents = small_dataset().to_agents()
        assert [a.id for a in agents] == ["a1", "a2"]
        assert agents[0].valuation == pytest.approx(0.05)
        assert agents[0].max_budget == pytest.approx(2.0)


class TestRoundTrip:
    @pytest.mark.parametrize("fmt,suffix", [("csv", ".csv"), ("json", ".json")])
    def test_save_load_identity(self, tmp_path, fmt, suffix):
        ds = small_dataset()
        path = tmp_path / f"toy{suffix}"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.name == ds.name
        assert back.ending_price_eth == ds.ending_price_eth
        assert back.selection == ds.selection
        assert back.records == ds.records

    def test_csv_requires_sidecar(self, tmp_path):
        ds = small_dataset()
        path = tmp_path / "toy.csv"
        save_dataset(ds, path)
        (tmp_path / "toy.meta.json").unlink()
        with pytest.raises(DatasetFormatError, match="sidecar"):
            load_dataset(path)

    def test_csv_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("agent,eth\nx,1\n")
        (tmp_path / "bad.meta.json").write_text(
            json.dumps({"name": "bad", "ending_price_eth": 1.0})
        )
        with pytest.raises(DatasetFormatError, match="header"):
            load_dataset(path)

    def test_error_carries_csv_row_number(self, tmp_path):
        ds = small_dataset()
        path = tmp_path / "toy.csv"
        save_dataset(ds, path)
        lines = path.read_text().splitlines()
        lines[2] = lines[2].replace("0.5", "-0.5")  # corrupt second record
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match=r"row 3"):
            load_dataset(path)

    def test_duplicates_merged_on_load(self, tmp_path):
        doc = {
            "meta": {"name": "dup", "ending_price_eth": 0.04},
            "records": [
                {"agent_id": "a1", "budget_eth": 1.0, "budget_usd": 300.0,
                 "entering_price_eth": 0.05, "timestamp": 1.0, "rate": 300.0},
                {"agent_id": "a1", "budget_eth": 2.0, "budget_usd": 600.0,
                 "entering_price_eth": 0.06, "timestamp": 2.0, "rate": 300.0},
            ],
        }
        path = tmp_path / "dup.json"
        path.write_text(json.dumps(doc))
        ds = load_dataset(path)
        assert ds.n == 1
        rec = ds.records[0]
        assert rec.budget_eth == pytest.approx(3.0)
        assert rec.budget_usd == pytest.approx(900.0)
        # First row wins for price, timestamp, and rate.
        assert rec.entering_price_eth == pytest.approx(0.05)
        assert rec.timestamp == pytest.approx(1.0)

    def test_resolve_against_data_dir(self, tmp_path, monkeypatch):
        ds = small_dataset()
        save_dataset(ds, tmp_path / "toy.json")
        monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path))
        assert resolve_dataset_path("toy.json") == tmp_path / "toy.json"
        with pytest.raises(FileNotFoundError):
            resolve_dataset_path("missing.json")


class TestObservers:
    def test_deterministic_and_doubles_population(self):
        ds = make_synthetic_dataset("s", n_agents=40, rng_seed=3)
        obs1 = generate_observers(ds, ds.n, rng_seed=9)
        obs2 = generate_observers(ds, ds.n, rng_seed=9)
        assert len(obs1) == ds.n
        assert [(a.id, a.valuation, a.max_budget) for a in obs1] == [
            (a.id, a.valuation, a.max_budget) for a in obs2
        ]

    def test_valuations_below_ending_price(self):
        ds = make_synthetic_dataset("s", n_agents=40, rng_seed=3)
        obs = generate_observers(ds, 200, rng_seed=1)
        assert all(0.0 <= a.valuation < ds.ending_price_eth for a in obs)

    def test_budgets_resampled_from_empirical(self):
        ds = make_synthetic_dataset("s", n_agents=40, rng_seed=3)
        pool = set(float(b) for b in ds.budgets_eth())
        obs = generate_observers(ds, 100, rng_seed=1)
        assert all(a.max_budget in pool for a in obs)

    def test_zero_count(self):
        ds = make_synthetic_dataset("s", n_agents=10, rng_seed=3)
        assert generate_observers(ds, 0, rng_seed=1) == []


class TestSyntheticDataset:
    def test_ending_price_is_clearing_price(self):
        # The synthetic ending price must be what the mechanism discovers
        # on the drawn budgets with the default winner-count menu.
        n = 50
        ds = make_synthetic_dataset("s", n_agents=n, rng_seed=12, gini_cap=0.6)
        ks = tuple(sorted({max(2, int(math.ceil(f * n)))
                           for f in (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)}))
        params = MechanismParams(gini_cap=0.6, winner_counts=ks)
        profile = BudgetProfile.of(
            {r.agent_id: r.budget_eth for r in ds.records}
        )
        sol = run_mechanism(profile, params)
        assert ds.ending_price_eth == pytest.approx(sol.price, rel=1e-9)

    def test_entering_prices_at_or_above_ending(self):
        ds = make_synthetic_dataset("s", n_agents=80, rng_seed=5)
        assert all(
            r.entering_price_eth >= ds.ending_price_eth * (1 - 1e-12)
            for r in ds.records
        )

    def test_timestamps_sorted_and_usd_consistent(self):
        ds = make_synthetic_dataset("s", n_agents=30, rng_seed=5)
        ts = [r.timestamp for r in ds.records]
        assert ts == sorted(ts)
        for r in ds.records:
            assert r.budget_usd == pytest.approx(r.budget_eth * r.rate, rel=1e-9)
