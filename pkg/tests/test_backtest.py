import datetime as dt

import pytest

from defiparity.backtest import (
    BacktestConfig,
    YieldPanel,
    active_universe,
    compare_backtests,
    daily_rate,
    run_backtest,
)
from defiparity.domain import DatedSeries, ProtocolRecord, WeightVector, validate_universe
from defiparity.errors import (
    DateRangeMismatch,
    InvalidApy,
    MissingFx,
    NoActiveProtocols,
    NonPositiveRate,
)
from defiparity.risk import build_risk_matrix, normalize, portfolio_risk_report

START = dt.date(2022, 1, 1)


def day(offset: int) -> dt.date:
    return START + dt.timedelta(days=offset)


def constant_series(apy: float, first: int, last: int) -> DatedSeries:
    return DatedSeries.from_pairs([(day(i), apy) for i in range(first, last + 1)])


class TestDailyRate:
    def test_zero_apy(self):
        assert daily_rate(0.0, "compound_365") == 0.0
        assert daily_rate(0.0, "simple_365") == 0.0

    def test_compound_five_percent(self):
        # reference value computed with mpmath at 50 digits:
        # (1.05)**(1/365) - 1 = 1.3368061711344035e-04
        assert daily_rate(0.05, "compound_365") == pytest.approx(
            1.3368061711344035e-04, rel=1e-14
        )

    def test_simple_identity(self):
        # 0.0365 / 365 = 1e-4 (up to one ulp in binary floating point)
        assert daily_rate(0.0365, "simple_365") == pytest.approx(1e-4, rel=1e-15)

    @pytest.mark.parametrize("apy", [-1.0, -2.5, float("nan"), float("inf")])
    def test_invalid_apy(self, apy):
        with pytest.raises(InvalidApy):
            daily_rate(apy)

    def test_unknown_convention(self):
        with pytest.raises(ValueError):
            daily_rate(0.05, "weekly")


class TestActiveUniverse:
    def setup_method(self):
        self.universe = validate_universe([
            ProtocolRecord("a", 1.0),
            ProtocolRecord("b", 2.0),
        ])

    def test_before_first_observation_excluded(self):
        panel = YieldPanel(series={
            "a": constant_series(0.05, 1, 10),
            "b": constant_series(0.04, 0, 10),
        })
        active = active_universe(panel, self.universe, day(0), max_gap_fill_days=3)
        assert active.ids == ("b",)

    def test_gap_within_window_filled(self):
        pairs = [(day(0), 0.05), (day(1), 0.06), (day(4), 0.07)]
        panel = YieldPanel(series={"a": DatedSeries.from_pairs(pairs)})
        active = active_universe(panel, self.universe, day(3), max_gap_fill_days=3)
        assert active.ids == ("a",)

    def test_gap_beyond_window_excluded(self):
        pairs = [(day(0), 0.05), (day(10), 0.06)]
        panel = YieldPanel(series={
            "a": DatedSeries.from_pairs(pairs),
            "b": constant_series(0.04, 0, 10),
        })
        active = active_universe(panel, self.universe, day(5), max_gap_fill_days=3)
        assert active.ids == ("b",)

    def test_no_active_protocols(self):
        panel = YieldPanel(series={"a": constant_series(0.05, 5, 10)})
        with pytest.raises(NoActiveProtocols):
            active_universe(panel, self.universe, day(0), max_gap_fill_days=3)


class TestPanelValidation:
    def test_apy_floor(self):
        with pytest.raises(InvalidApy):
            YieldPanel(series={"a": constant_series(-1.5, 0, 2)})

    def test_fx_must_be_positive(self):
        fx = DatedSeries.from_pairs([(day(0), 0.0)])
        with pytest.raises(NonPositiveRate):
            YieldPanel(series={}, fx=fx)


class TestConfigValidation:
    def test_start_after_end(self):
        with pytest.raises(ValueError):
            BacktestConfig(day(5), day(0), "ew")

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            BacktestConfig(day(0), day(5), "minvar")

    def test_bad_initial_value(self):
        with pytest.raises(ValueError):
            BacktestConfig(day(0), day(5), "ew", initial_value=0.0)

    def test_negative_gap(self):
        with pytest.raises(ValueError):
            BacktestConfig(day(0), day(5), "ew", max_gap_fill_days=-1)

    def test_bad_convention(self):
        with pytest.raises(ValueError):
            BacktestConfig(day(0), day(5), "ew", apy_convention="monthly")


class TestRunBacktest:
    def test_ten_day_compounding(self):
        # independent reference: (1.0001)^10 computed with mpmath at 50
        # digits is 1.0010004501200210
        universe = validate_universe([ProtocolRecord("a", 1.0)])
        panel = YieldPanel(series={"a": constant_series(0.0365, 0, 9)})
        config = BacktestConfig(day(0), day(9), "ew", apy_convention="simple_365")
        ledger = run_backtest(config, universe, panel)
        assert len(ledger.rows) == 10
        assert ledger.rows[-1].value_stable == pytest.approx(
            1.0010004501200210, rel=1e-12
        )

    def test_equal_scores_erc_matches_ew(self):
        universe = validate_universe([
            ProtocolRecord("a", 3.0), ProtocolRecord("b", 3.0), ProtocolRecord("c", 3.0),
        ])
        panel = YieldPanel(series={
            "a": constant_series(0.03, 0, 29),
            "b": constant_series(0.05, 0, 29),
            "c": constant_series(0.08, 0, 29),
        })
        ew = run_backtest(BacktestConfig(day(0), day(29), "ew"), universe, panel)
        erc = run_backtest(BacktestConfig(day(0), day(29), "erc"), universe, panel)
        assert ew.rows == erc.rows

    def test_identity_fx_overlay(self):
        universe = validate_universe([ProtocolRecord("a", 1.0)])
        panel = YieldPanel(
            series={"a": constant_series(0.05, 0, 9)},
            fx=constant_series(1.0, 0, 9),
        )
        ledger = run_backtest(BacktestConfig(day(0), day(9), "ew"), universe, panel)
        assert all(r.value_usd == r.value_stable for r in ledger.rows)

    def test_fx_changes_usd_only(self):
        universe = validate_universe([ProtocolRecord("a", 1.0)])
        fx = DatedSeries.from_pairs([(day(i), 1.0 - 0.01 * i) for i in range(10)])
        panel = YieldPanel(series={"a": constant_series(0.05, 0, 9)}, fx=fx)
        ledger = run_backtest(BacktestConfig(day(0), day(9), "ew"), universe, panel)
        for i, row in enumerate(ledger.rows):
            assert row.value_usd == row.value_stable * (1.0 - 0.01 * i)

    def test_missing_fx_beyond_window(self):
        universe = validate_universe([ProtocolRecord("a", 1.0)])
        panel = YieldPanel(
            series={"a": constant_series(0.05, 0, 9)},
            fx=constant_series(1.0, 0, 2),
        )
        with pytest.raises(MissingFx) as exc:
            run_backtest(BacktestConfig(day(0), day(9), "ew"), universe, panel)
        assert exc.value.date == day(6)

    def test_deterministic(self):
        universe = validate_universe([
            ProtocolRecord("a", 1.0), ProtocolRecord("b", 4.0),
        ])
        panel = YieldPanel(series={
            "a": constant_series(0.03, 0, 59),
            "b": constant_series(0.07, 0, 59),
        })
        config = BacktestConfig(day(0), day(59), "erc")
        first = run_backtest(config, universe, panel)
        second = run_backtest(config, universe, panel)
        assert first == second

    def test_accrual_replay(self):
        universe = validate_universe([
            ProtocolRecord("a", 1.0), ProtocolRecord("b", 4.0),
        ])
        panel = YieldPanel(series={
            "a": DatedSeries.from_pairs([(day(i), 0.02 + 0.001 * (i % 5)) for i in range(60)]),
            "b": DatedSeries.from_pairs([(day(i), 0.06 + 0.002 * (i % 3)) for i in range(60)]),
        })
        ledger = run_backtest(BacktestConfig(day(0), day(59), "erc"), universe, panel)
        value = ledger.initial_value
        for row in ledger.rows:
            value *= 1.0 + row.daily_return
            assert row.value_stable == pytest.approx(value, rel=1e-12)

    def test_positive_value_with_negative_yields(self):
        universe = validate_universe([ProtocolRecord("a", 1.0)])
        panel = YieldPanel(series={"a": constant_series(-0.9, 0, 29)})
        ledger = run_backtest(BacktestConfig(day(0), day(29), "ew"), universe, panel)
        assert all(r.value_stable > 0 for r in ledger.rows)
        assert ledger.rows[-1].value_stable < 1.0

    def test_single_active_protocol_all_methods_agree(self):
        universe = validate_universe([ProtocolRecord("a", 2.0, tvl=100.0)])
        panel = YieldPanel(series={"a": constant_series(0.05, 0, 9)})
        ledgers = [
            run_backtest(BacktestConfig(day(0), day(9), m), universe, panel)
            for m in ("ew", "tvl", "erc")
        ]
        for ledger in ledgers:
            assert all(r.weights.values == (1.0,) for r in ledger.rows)
        assert ledgers[0].rows == ledgers[1].rows == ledgers[2].rows

    def test_dynamic_universe_changes_weights_on_entry(self):
        universe = validate_universe([
            ProtocolRecord("a", 1.0), ProtocolRecord("b", 2.0), ProtocolRecord("c", 8.0),
        ])
        panel = YieldPanel(series={
            "a": constant_series(0.03, 0, 59),
            "b": constant_series(0.05, 0, 59),
            "c": constant_series(0.09, 30, 59),
        })
        ledger = run_backtest(BacktestConfig(day(0), day(59), "erc"), universe, panel)
        assert ledger.rows[29].active_ids == ("a", "b")
        assert ledger.rows[30].active_ids == ("a", "b", "c")
        risks = ledger.risks
        assert len(set(risks[:30])) == 1
        assert len(set(risks[30:])) == 1
        assert risks[29] != risks[30]

    def test_higher_score_entrant_raises_risk_in_new_frame(self):
        # weighted-mean fact, stated within the new day's normalization:
        # if the entrant's normalized score exceeds the incumbent level,
        # the equal-weight risk level cannot decrease
        universe = validate_universe([
            ProtocolRecord("a", 1.0), ProtocolRecord("b", 1.0), ProtocolRecord("c", 6.0),
        ])
        matrix = normalize(build_risk_matrix(universe))
        incumbents = WeightVector(matrix.universe_ids, (0.5, 0.5, 0.0))
        incumbent_level = portfolio_risk_report(incumbents, matrix)
        entrant_score = float(matrix.entries[2, 2])
        assert entrant_score > incumbent_level
        joined = WeightVector(matrix.universe_ids, (1 / 3, 1 / 3, 1 / 3))
        assert portfolio_risk_report(joined, matrix) >= incumbent_level


class TestCompare:
    def make_ledger(self, method: str, scores=(1.0, 4.0)):
        universe = validate_universe([
            ProtocolRecord("a", scores[0]), ProtocolRecord("b", scores[1]),
        ])
        panel = YieldPanel(series={
            "a": constant_series(0.03, 0, 9),
            "b": constant_series(0.07, 0, 9),
        })
        return run_backtest(BacktestConfig(day(0), day(9), method), universe, panel)

    def test_identical_ledgers_zero_difference(self):
        a = self.make_ledger("ew")
        b = self.make_ledger("erc")
        table = compare_backtests([a, b])
        assert table.dates == a.dates
        # a ledger compared against itself shows a zero column
        self_table = compare_backtests([a])
        assert self_table.value_difference("ew", "ew") == tuple([0.0] * 10)

    def test_equal_scores_ew_vs_erc_zero_difference(self):
        a = self.make_ledger("ew", scores=(2.0, 2.0))
        b = self.make_ledger("erc", scores=(2.0, 2.0))
        table = compare_backtests([a, b])
        assert table.value_difference("ew", "erc") == tuple([0.0] * 10)

    def test_disjoint_ranges_rejected(self):
        a = self.make_ledger("ew")
        universe = validate_universe([ProtocolRecord("a", 1.0)])
        panel = YieldPanel(series={
            "a": DatedSeries.from_pairs([(day(20 + i), 0.03) for i in range(10)]),
        })
        b = run_backtest(BacktestConfig(day(20), day(29), "erc"), universe, panel)
        with pytest.raises(DateRangeMismatch):
            compare_backtests([a, b])
