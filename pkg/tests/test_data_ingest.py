import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stressnet.data_ingest import (
    IngestConfig,
    PriceTable,
    SynthConfig,
    SynthSegment,
    compute_log_returns,
    filter_full_history,
    load_price_table,
    load_sector_map,
    standardize,
    synth_generate,
)
from stressnet.errors import DataError, ValidationError

from conftest import returns_from_values


def write_wide(tmp_path, rows, name="prices.csv"):
    path = tmp_path / name
    path.write_text("\n".join(rows) + "\n")
    return path


class TestLoadPriceTable:
    def test_wide_all_filled(self, tmp_path):
        path = write_wide(
            tmp_path,
            ["date,AAA,BBB", "2020-01-01,10,20", "2020-01-02,11,21", "2020-01-03,12,22"],
        )
        table = load_price_table(path)
        assert table.shape == (3, 2)
        assert table.tickers == ["AAA", "BBB"]
        assert not table.missing.any()
        assert table.prices[2, 1] == 22.0

    def test_blank_cell_marked_missing(self, tmp_path):
        path = write_wide(
            tmp_path, ["date,AAA,BBB", "2020-01-01,10,20", "2020-01-02,,21"]
        )
        table = load_price_table(path)
        assert table.missing[1, 0]
        assert not table.missing[0, 0]

    def test_duplicate_date_errors_with_date(self, tmp_path):
        path = write_wide(
            tmp_path, ["date,AAA", "2020-01-01,10", "2020-01-01,11"]
        )
        with pytest.raises(DataError, match="2020-01-01"):
            load_price_table(path)

    def test_duplicate_ticker_column_rejected(self, tmp_path):
        path = write_wide(
            tmp_path, ["date,AAA,AAA", "2020-01-01,10,11"]
        )
        with pytest.raises(DataError, match="duplicate columns: AAA"):
            load_price_table(path)

    def test_nonpositive_price_reported_with_location(self, tmp_path):
        path = write_wide(
            tmp_path, ["date,AAA,BBB", "2020-01-01,10,20", "2020-01-02,-3,21"]
        )
        with pytest.raises(DataError, match=r"2020-01-02.*AAA"):
            load_price_table(path)

    def test_unsorted_dates_are_sorted(self, tmp_path):
        path = write_wide(
            tmp_path, ["date,AAA", "2020-01-03,12", "2020-01-01,10", "2020-01-02,11"]
        )
        table = load_price_table(path)
        assert [d.day for d in table.dates] == [1, 2, 3]
        assert list(table.prices[:, 0]) == [10.0, 11.0, 12.0]

    def test_long_format(self, tmp_path):
        path = tmp_path / "long.csv"
        path.write_text(
            "date,ticker,price\n"
            "2020-01-01,AAA,10\n2020-01-01,BBB,20\n"
            "2020-01-02,AAA,11\n2020-01-02,BBB,21\n"
        )
        table = load_price_table(path, IngestConfig(format="long"))
        assert table.shape == (2, 2)
        assert table.prices[1, 0] == 11.0

    def test_long_duplicate_cell_errors(self, tmp_path):
        path = tmp_path / "long.csv"
        path.write_text(
            "date,ticker,price\n2020-01-01,AAA,10\n2020-01-01,AAA,11\n"
        )
        with pytest.raises(DataError, match="duplicate cell"):
            load_price_table(path, IngestConfig(format="long"))

    def test_missing_file(self):
        with pytest.raises(DataError, match="not found"):
            load_price_table("/nowhere/prices.csv")


class TestFilterFullHistory:
    def _table(self, missing_cols):
        T, p = 6, 10
        rng = np.random.default_rng(0)
        prices = rng.uniform(50, 150, size=(T, p))
        missing = np.zeros((T, p), dtype=bool)
        for c in missing_cols:
            missing[2, c] = True
        return PriceTable(
            dates=[dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(T)],
            tickers=[f"S{i}" for i in range(p)],
            prices=prices,
            missing=missing,
        )

    def test_keeps_complete_tickers_in_order(self):
        table = self._table(missing_cols=[1, 4, 7])
        out = filter_full_history(table)
        assert out.tickers == [f"S{i}" for i in range(10) if i not in (1, 4, 7)]
        assert not out.missing.any()

    def test_identity_when_complete(self):
        table = self._table(missing_cols=[])
        assert filter_full_history(table) is table

    def test_too_few_survivors(self):
        table = self._table(missing_cols=[0, 1, 2, 3, 4, 5, 6])
        with pytest.raises(DataError, match="at least 4"):
            filter_full_history(table)

    def test_index_scale_universe(self):
        # 350 listed, 231 with complete histories
        rng = np.random.default_rng(1)
        T, p = 8, 350
        prices = rng.uniform(50, 150, size=(T, p))
        missing = np.zeros((T, p), dtype=bool)
        gappy = rng.choice(p, size=p - 231, replace=False)
        for c in gappy:
            missing[rng.integers(T), c] = True
        table = PriceTable(
            dates=[dt.date(2005, 1, 3) + dt.timedelta(days=i) for i in range(T)],
            tickers=[f"S{i:03d}" for i in range(p)],
            prices=prices,
            missing=missing,
        )
        out = filter_full_history(table)
        assert len(out.tickers) == 231


class TestSectorMap:
    def test_counts(self, tmp_path):
        path = tmp_path / "sectors.csv"
        rows = ["ticker,sector"]
        rows += [f"I{i},Industrials" for i in range(47)]
        rows += ["X0,Energy", "X1,Energy"]
        path.write_text("\n".join(rows) + "\n")
        universe = [f"I{i}" for i in range(47)] + ["X0", "X1"]
        smap = load_sector_map(path, universe)
        assert smap.counts["Industrials"] == 47
        assert smap.counts["Energy"] == 2

    def test_na_relabeled_funds(self, tmp_path):
        path = tmp_path / "sectors.csv"
        path.write_text("ticker,sector\nAAA,N/A\nBBB,Utilities\n")
        smap = load_sector_map(path, ["AAA", "BBB"])
        assert smap.labels["AAA"] == "Funds"
        assert smap.counts["Funds"] == 1

    def test_missing_universe_ticker(self, tmp_path):
        path = tmp_path / "sectors.csv"
        path.write_text("ticker,sector\nAAA,Funds\n")
        with pytest.raises(DataError, match="CCC"):
            load_sector_map(path, ["AAA", "CCC"])


class TestLogReturns:
    def _price_table(self, cols):
        arr = np.array(cols, dtype=float).T
        T, p = arr.shape
        return PriceTable(
            dates=[dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(T)],
            tickers=[f"S{i}" for i in range(p)],
            prices=arr,
            missing=np.zeros((T, p), dtype=bool),
        )

    def test_constant_price_zero_returns(self):
        rets = compute_log_returns(self._price_table([[100, 100, 100], [100, 100, 100]]))
        assert np.all(rets.values[:, 0] == 0.0)

    def test_log_of_e(self):
        rets = compute_log_returns(self._price_table([[100, 100 * np.e], [100, 100]]))
        assert rets.values[0, 0] == pytest.approx(1.0, abs=1e-15)
        assert rets.shape == (1, 2)

    def test_two_pass_moment_oracle(self):
        rng = np.random.default_rng(3)
        prices = 100 * np.exp(np.cumsum(rng.normal(0, 0.02, size=(60, 5)), axis=0))
        table = self._price_table(prices.T)
        rets = compute_log_returns(table)
        # independent two-pass mean / stddev
        for j in range(5):
            col = [float(v) for v in rets.values[:, j]]
            mean = sum(col) / len(col)
            var = sum((v - mean) ** 2 for v in col) / (len(col) - 1)
            assert rets.col_means[j] == pytest.approx(mean, abs=1e-14)
            assert rets.col_stds[j] == pytest.approx(var**0.5, abs=1e-14)

    def test_missing_cell_rejected(self):
        table = self._price_table([[100, 101, 102]])
        table.missing[1, 0] = True
        with pytest.raises(DataError, match="missing"):
            compute_log_returns(table)

    def test_round_trip_recovers_prices(self):
        rng = np.random.default_rng(9)
        prices = 100 * np.exp(np.cumsum(rng.normal(0, 0.01, size=(40, 6)), axis=0))
        table = self._price_table(prices.T)
        rets = compute_log_returns(table)
        rebuilt = table.prices[0] * np.exp(np.cumsum(rets.values, axis=0))
        assert np.max(np.abs(rebuilt / table.prices[1:] - 1)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), T=st.integers(3, 40), p=st.integers(1, 8))
def test_round_trip_property(seed, T, p):
    rng = np.random.default_rng(seed)
    prices = 100 * np.exp(np.cumsum(rng.normal(0, 0.05, size=(T, p)), axis=0))
    table = PriceTable(
        dates=[dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(T)],
        tickers=[f"S{i}" for i in range(p)],
        prices=prices,
        missing=np.zeros((T, p), dtype=bool),
    )
    rets = compute_log_returns(table)
    rebuilt = table.prices[0] * np.exp(np.cumsum(rets.values, axis=0))
    assert np.max(np.abs(rebuilt / table.prices[1:] - 1)) < 1e-12


class TestStandardize:
    def test_fixed_point(self):
        rets = returns_from_values(np.array([[-1.0], [0.0], [1.0]]), standardized=False)
        out = standardize(rets)
        assert np.allclose(out.values[:, 0], [-1, 0, 1], atol=1e-12)

    def test_affine(self):
        rets = returns_from_values(np.array([[0.0], [2.0], [4.0]]), standardized=False)
        out = standardize(rets)
        assert np.allclose(out.values[:, 0], [-1, 0, 1], atol=1e-12)
        assert out.col_means[0] == pytest.approx(2.0)
        assert out.col_stds[0] == pytest.approx(2.0)

    def test_constant_column_errors_with_name(self):
        vals = np.column_stack([np.ones(5), np.arange(5.0)])
        rets = returns_from_values(vals, standardized=False)
        with pytest.raises(DataError, match="T0"):
            standardize(rets)

    def test_already_standardized_rejected(self):
        rets = returns_from_values(np.random.default_rng(0).normal(size=(10, 2)))
        with pytest.raises(ValidationError):
            standardize(rets)

    def test_idempotent_on_own_output(self):
        rng = np.random.default_rng(5)
        rets = returns_from_values(rng.normal(size=(50, 4)), standardized=False)
        once = standardize(rets)
        again = standardize(returns_from_values(once.values, standardized=False))
        assert np.max(np.abs(again.values - once.values)) < 1e-10

    def test_moments_after_standardize(self):
        rng = np.random.default_rng(6)
        out = standardize(returns_from_values(rng.normal(3, 7, size=(80, 5)), standardized=False))
        assert np.max(np.abs(out.values.mean(axis=0))) < 1e-10
        assert np.max(np.abs(out.values.std(axis=0, ddof=1) - 1)) < 1e-10


class TestSynth:
    def _two_regime(self):
        return SynthConfig(
            p=8,
            segments=(
                SynthSegment(
                    length=300,
                    mean=0.0,
                    covariance={"kind": "block", "sizes": [4, 4], "rho_within": 0.7,
                                "rho_between": 0.0},
                ),
                SynthSegment(
                    length=300,
                    mean=0.0,
                    covariance={"kind": "block", "sizes": [4, 4], "rho_within": 0.0,
                                "rho_between": 0.0},
                ),
            ),
        )

    def test_seeded_determinism(self):
        cfg = self._two_regime()
        t1 = synth_generate(cfg, seed=7)
        t2 = synth_generate(cfg, seed=7)
        assert np.array_equal(t1.prices, t2.prices)
        assert t1.dates == t2.dates

    def test_segment_correlation_oracle(self):
        cfg = self._two_regime()
        table = synth_generate(cfg, seed=4)
        rets = compute_log_returns(table)
        # within-block mean correlation per segment, computed directly
        def block_corr(vals):
            C = np.corrcoef(vals, rowvar=False)
            return np.mean([C[i, j] for i in range(4) for j in range(4) if i != j])

        seg1 = block_corr(rets.values[:300])
        seg2 = block_corr(rets.values[300:])
        assert abs(seg1 - 0.7) < abs(seg1 - 0.0)
        assert abs(seg2 - 0.0) < abs(seg2 - 0.7)

    def test_minimum_size(self):
        with pytest.raises(ValidationError, match="p >= 4"):
            SynthConfig(p=3, segments=(SynthSegment(2, 0.0, {"kind": "identity"}),))

    def test_non_positive_definite_rejected(self):
        cfg = SynthConfig(
            p=4,
            segments=(
                SynthSegment(
                    10, 0.0,
                    {"kind": "dense", "matrix": (np.eye(4) - 2).tolist()},
                ),
            ),
        )
        with pytest.raises(ValidationError, match="positive definite"):
            synth_generate(cfg, seed=0)

    def test_from_dict_roundtrip(self):
        doc = {
            "p": 6,
            "T": 20,
            "segments": [{"length": 20, "mean": 0.0, "covariance": {"kind": "identity"}}],
        }
        cfg = SynthConfig.from_dict(doc)
        table = synth_generate(cfg, seed=1)
        assert table.shape == (21, 6)

    def test_declared_T_mismatch(self):
        doc = {"p": 6, "T": 19,
               "segments": [{"length": 20, "covariance": {"kind": "identity"}}]}
        with pytest.raises(ValidationError, match="T=19"):
            SynthConfig.from_dict(doc)
