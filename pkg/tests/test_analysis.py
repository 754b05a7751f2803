import io
import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from isospec.analysis import (
    JoinError,
    PerfRow,
    PerformanceTable,
    RankDeficiencyError,
    correlate_measures,
    join_pairs,
    log_transform,
    ols,
    pearson,
    regress,
    selection_analysis,
    stepwise_regression,
    t_two_sided_p,
)
from isospec.measures import PairScore


def normal_equations(design, y):
    return np.linalg.solve(design.T @ design, design.T @ y)


class TestBasics:
    def test_log_transform(self):
        np.testing.assert_allclose(log_transform([1, math.e]), [0, 1], atol=1e-15)
        with pytest.raises(ValueError, match="for SVG"):
            log_transform([1.0, 0.0], ["ok", "SVG"])
        with pytest.raises(ValueError, match="position 0"):
            log_transform([-1.0])

    def test_pearson_exact(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-15)
        assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)

    def test_pearson_against_scipy(self, rng):
        for _ in range(20):
            x, y = rng.standard_normal((2, 30))
            assert pearson(x, y) == pytest.approx(scipy.stats.pearsonr(x, y).statistic, abs=1e-12)

    def test_pearson_errors(self):
        with pytest.raises(ValueError):
            pearson([1, 2], [1, 2])
        with pytest.raises(ValueError, match="zero-variance"):
            pearson([1, 1, 1], [1, 2, 3])


class TestTPValues:
    @pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 2.5, 40.0])
    def test_df1_cauchy(self, t):
        assert t_two_sided_p(t, 1) == pytest.approx(1 - 2 / math.pi * math.atan(abs(t)), rel=1e-12)

    @pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 2.5, 40.0])
    def test_df2_closed_form(self, t):
        assert t_two_sided_p(t, 2) == pytest.approx(1 - abs(t) / math.sqrt(2 + t * t), rel=1e-12)

    @pytest.mark.parametrize("df, t975", [(5, 2.570581835636314), (10, 2.228138851986273), (30, 2.042272456301238)])
    def test_tabulated_quantiles(self, df, t975):
        assert t_two_sided_p(t975, df) == pytest.approx(0.05, rel=1e-10)

    def test_limits(self):
        assert t_two_sided_p(math.inf, 3) == 0.0
        assert t_two_sided_p(-2.0, 7) == t_two_sided_p(2.0, 7)
        with pytest.raises(ValueError):
            t_two_sided_p(1.0, 0)


class TestOLS:
    def test_matches_normal_equations(self, rng):
        for _ in range(20):
            n, p = rng.integers(10, 60), rng.integers(1, 5)
            x = np.column_stack([np.ones(n), rng.standard_normal((n, p))])
            y = x @ rng.standard_normal(p + 1) + rng.standard_normal(n)
            np.testing.assert_allclose(ols(x, y).beta, normal_equations(x, y), rtol=0, atol=1e-8)

    def test_r_squared_and_p_against_scipy(self, rng):
        x = rng.standard_normal(40)
        y = 2 * x + rng.standard_normal(40)
        rep = ols(np.column_stack([np.ones(40), x]), y, ["x"])
        ref = scipy.stats.linregress(x, y)
        assert rep.r_squared == pytest.approx(ref.rvalue**2, rel=1e-12)
        assert rep.p_values[0] == pytest.approx(ref.pvalue, rel=1e-8)
        assert rep.std_errors[1] == pytest.approx(ref.stderr, rel=1e-10)
        assert rep.r_hat == pytest.approx(abs(ref.rvalue), rel=1e-12)

    def test_rank_deficiency_names_column(self, rng):
        x = rng.standard_normal(20)
        design = np.column_stack([np.ones(20), x, 2 * x])
        with pytest.raises(RankDeficiencyError) as err:
            ols(design, rng.standard_normal(20), ["a", "b"])
        assert err.value.column == "b"

    def test_shape_checks(self, rng):
        with pytest.raises(ValueError):
            ols(np.ones((2, 2)), [1.0, 2.0])
        with pytest.raises(ValueError, match="names"):
            ols(np.column_stack([np.ones(5), np.arange(5)]), np.arange(5.0), ["a", "b"])

    def test_report_dict(self, rng):
        x = rng.standard_normal(10)
        d = ols(np.column_stack([np.ones(10), x]), x + rng.standard_normal(10), ["x"]).to_dict()
        assert set(d) >= {"selected", "beta", "p_values", "r_squared", "r_hat", "n_obs"}


class TestStepwise:
    def test_recovers_signal(self, rng):
        n = 60
        x1 = rng.standard_normal(n)
        cands = {"x1": x1, **{f"z{i}": rng.standard_normal(n) for i in range(5)}}
        rep = stepwise_regression(cands, x1 + 1e-3 * rng.standard_normal(n))
        assert rep.selected == ["x1"]
        assert rep.r_hat >= 0.999

    def test_two_signals_in_strength_order(self, rng):
        n = 80
        a, b = rng.standard_normal((2, n))
        y = 3 * a + b + 0.1 * rng.standard_normal(n)
        rep = stepwise_regression({"b": b, "a": a, "noise": rng.standard_normal(n)}, y)
        assert rep.selected == ["a", "b"]

    def test_perfect_fit_stops(self, rng):
        x = rng.standard_normal(30)
        rep = stepwise_regression({"x": x, "z": rng.standard_normal(30)}, 2 * x + 1)
        assert rep.selected == ["x"]

    def test_nothing_selected(self, rng):
        rep = stepwise_regression({"z": rng.standard_normal(50)}, rng.standard_normal(50), alpha=1e-6)
        assert rep.selected == [] and rep.r_squared == 0.0

    def test_constant_candidate(self, rng):
        with pytest.raises(RankDeficiencyError, match="flat"):
            stepwise_regression({"flat": np.ones(10)}, rng.standard_normal(10))

    def test_argument_checks(self, rng):
        with pytest.raises(ValueError):
            stepwise_regression({"x": [1.0, 2.0]}, [1.0, 2.0])
        with pytest.raises(ValueError, match="alpha"):
            stepwise_regression({"x": rng.standard_normal(5)}, rng.standard_normal(5), alpha=0)
        with pytest.raises(ValueError, match="non-finite"):
            stepwise_regression({"x": [1.0, np.nan, 2.0]}, [1.0, 2.0, 3.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_selected_p_values_below_alpha(self, seed):
        rng = np.random.default_rng(seed)
        n = 40
        cands = {f"c{i}": rng.standard_normal(n) for i in range(4)}
        y = cands["c0"] * rng.random() + rng.standard_normal(n)
        rep = stepwise_regression(cands, y, alpha=0.05)
        assert all(p < 0.05 for p in rep.p_values) or not rep.selected
        assert len(set(rep.selected)) == len(rep.selected)


def perf_fixture():
    """Three languages, scores in both directions, log score = -SVG."""
    svg = {("de", "en"): 0.5, ("en", "fi"): 2.0, ("de", "fi"): 1.0}
    pairs = [PairScore(a, b, "SVG", v) for (a, b), v in svg.items()]
    pairs += [PairScore(a, b, "GH", 1.0 + v * v) for (a, b), v in svg.items()]
    rows = []
    for (a, b), v in svg.items():
        for s, t in ((a, b), (b, a)):
            rows.append(PerfRow(s, t, "bli", math.exp(-v), {"phy": v / 3}))
    return pairs, PerformanceTable(rows)


class TestPerformanceTable:
    def test_csv_round_trip(self):
        _, perf = perf_fixture()
        buf = io.StringIO()
        perf.to_csv(buf)
        back = PerformanceTable.from_csv(io.StringIO(buf.getvalue()))
        assert back.rows == perf.rows
        assert back.distance_columns == ["phy"]

    def test_header_checked(self):
        with pytest.raises(ValueError, match="header"):
            PerformanceTable.from_csv(io.StringIO("target,source,task,score\n"))
        with pytest.raises(ValueError, match="unknown"):
            PerformanceTable.from_csv(io.StringIO("source,target,task,score,wals\n"))

    def test_bad_row_names_line(self):
        with pytest.raises(ValueError, match="line 3"):
            PerformanceTable.from_csv(io.StringIO("source,target,task,score\nen,de,bli,0.5\nen,fi,bli,x\n"))

    def test_duplicates_rejected(self):
        row = PerfRow("en", "de", "bli", 0.5)
        with pytest.raises(ValueError, match="duplicate"):
            PerformanceTable([row, row])

    def test_filter_and_tasks(self):
        perf = PerformanceTable([PerfRow("en", "de", "bli", 0.5), PerfRow("en", "de", "pos", 0.7)])
        assert perf.tasks == ["bli", "pos"]
        assert len(perf.filter("pos")) == 1
        assert len(perf.filter(None)) == 2


class TestJoin:
    def test_direction_insensitive(self):
        pairs, perf = perf_fixture()
        join = join_pairs(pairs, perf)
        assert len(join.rows) == 6 and not join.unmatched
        assert {r.measures["SVG"] for r in join.rows if {r.source, r.target} == {"en", "fi"}} == {2.0}

    def test_self_pairs_and_unknowns(self):
        pairs, _ = perf_fixture()
        perf = PerformanceTable([PerfRow("en", "en", "bli", 1.0), PerfRow("en", "xx", "bli", 1.0)])
        join = join_pairs(pairs, perf)
        assert join.rows == [] and join.unmatched == [("en", "en"), ("en", "xx")]

    def test_empty_join_error_is_diagnostic(self):
        pairs, _ = perf_fixture()
        perf = PerformanceTable([PerfRow(f"s{i}", "t", "bli", 1.0) for i in range(8)])
        with pytest.raises(JoinError) as err:
            correlate_measures(pairs, perf)
        msg = str(err.value)
        assert "0 joined rows" in msg and "s4->t" in msg and "s5->t" not in msg


class TestCorrelate:
    def test_planted_relationships(self):
        pairs, perf = perf_fixture()
        table = correlate_measures(pairs, perf)
        got = table.as_dict()
        assert got["SVG"] == pytest.approx(pearson(np.log([0.5, 0.5, 2, 2, 1, 1]), -np.array([0.5, 0.5, 2, 2, 1, 1])))
        assert set(got) == {"GH", "SVG"}
        assert table.n_joined == 6

    def test_linguistic_distances_are_not_logged(self):
        pairs, perf = perf_fixture()
        got = correlate_measures(pairs, perf, measures=["phy"]).as_dict()
        # log score = -SVG = -3 phy: exactly linear in raw phy
        assert got["phy"] == pytest.approx(-1.0, abs=1e-12)

    def test_nonpositive_score_fails_loudly(self):
        pairs, _ = perf_fixture()
        perf = PerformanceTable([PerfRow("en", "de", "bli", 0.0), PerfRow("en", "fi", "bli", 0.5),
                                 PerfRow("de", "fi", "bli", 0.2)])
        with pytest.raises(ValueError, match="score\\(en,de\\)"):
            correlate_measures(pairs, perf)


class TestRegress:
    def test_selects_planted_column(self, rng):
        langs = [f"l{i}" for i in range(12)]
        pairs, rows = [], []
        for i, a in enumerate(langs):
            for b in langs[i + 1:]:
                v = float(rng.uniform(0.2, 5))
                pairs.append(PairScore(a, b, "SVG", v))
                pairs.append(PairScore(a, b, "GH", float(rng.uniform(0.2, 5))))
                rows.append(PerfRow(a, b, "bli", v ** -0.7 * math.exp(0.01 * rng.standard_normal()),
                                    {"geo": float(rng.random())}))
        rep = regress(pairs, PerformanceTable(rows), ["SVG", "GH", "geo"])
        assert rep.selected == ["SVG"]
        assert rep.beta[1] == pytest.approx(-0.7, abs=0.01)

    def test_missing_columns(self):
        pairs, perf = perf_fixture()
        with pytest.raises(JoinError, match="every candidate"):
            regress(pairs, perf, ["SVG", "typ"])


class TestSelection:
    def fixture(self, rng, n_langs=6):
        langs = [f"l{i}" for i in range(n_langs)]
        pairs, rows = [], []
        for i, a in enumerate(langs):
            for b in langs[i + 1:]:
                v = float(rng.uniform(0.5, 4))
                pairs.append(PairScore(a, b, "SVG", v))
                pairs.append(PairScore(a, b, "ECOND_HM", float(rng.uniform(1, 4))))
                for s, t in ((a, b), (b, a)):
                    rows.append(PerfRow(s, t, "bli", math.exp(-v + 0.05 * rng.standard_normal()),
                                        {"phy": float(rng.random()), "geo": float(rng.random())}))
        return pairs, PerformanceTable(rows)

    def test_source_selection(self, rng):
        pairs, perf = self.fixture(rng)
        rep = selection_analysis(pairs, perf, "source_selection", ["SVG", "ECOND_HM", "phy", "geo"])
        assert set(rep.per_group) == {f"l{i}" for i in range(6)}
        assert all(size == 5 for size in rep.group_sizes.values())
        assert rep.mean_correlation["SVG"] < -0.9
        assert rep.win_pct["SVG"] == pytest.approx(100.0)
        assert sum(rep.win_pct.values()) == pytest.approx(100.0)
        assert rep.multi_regressors == ["SVG", "phy", "geo"]
        assert 0.9 < rep.multi_r_hat <= 1

    def test_target_selection_groups_by_source(self, rng):
        pairs, perf = self.fixture(rng)
        rep = selection_analysis(pairs, perf, "target_selection", ["SVG"])
        assert rep.mode == "target_selection"
        assert len(rep.per_group) == 6
        assert rep.multi_regressors == ["SVG"]

    def test_ties_split(self):
        pairs = [PairScore("a", t, "SVG", v) for t, v in (("b", 1.0), ("c", 2.0), ("d", 3.0))]
        pairs += [PairScore("a", t, "GH", v) for t, v in (("b", 1.0), ("c", 2.0), ("d", 3.0))]
        perf = PerformanceTable([PerfRow(s, "a", "bli", v) for s, v in (("b", 1.0), ("c", 0.5), ("d", 0.2))])
        rep = selection_analysis(pairs, perf, "source_selection", ["SVG", "GH"])
        assert rep.win_pct == {"SVG": 50.0, "GH": 50.0}

    def test_small_groups_skipped(self, rng):
        pairs, perf = self.fixture(rng, 3)
        with pytest.raises(JoinError, match="no usable groups"):
            selection_analysis(pairs, perf, "source_selection", ["SVG"])
        with pytest.raises(ValueError, match="mode"):
            selection_analysis(pairs, perf, "pivot", ["SVG"])
