"""Acceptance tallies, traces, intervals, coverage and the census."""
import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from rotbart.diagnostics import (
    acceptance_rate,
    acceptance_summary,
    delta_logil_trace,
    empirical_coverage,
    predictive_interval,
    tree_census,
    write_census_csv,
    write_intervals_csv,
    write_traces_csv,
)
from rotbart.proposals import ProposalKind, ProposalOutcome


def _outcome(kind, accepted, delta=0.0, iteration=0, tree=0):
    return ProposalOutcome(kind, accepted, delta, 0.0, None, iteration, tree)


class TestAcceptanceRate:
    def test_all_accepted(self):
        outcomes = [_outcome(ProposalKind.BIRTH, True) for _ in range(10)]
        assert acceptance_rate(outcomes) == 1.0

    def test_none_accepted(self):
        outcomes = [_outcome(ProposalKind.ROTATE, False) for _ in range(10)]
        assert acceptance_rate(outcomes) == 0.0

    def test_direct_count(self):
        outcomes = [_outcome(ProposalKind.PERTURB, i < 250, iteration=i)
                    for i in range(1000)]
        assert acceptance_rate(outcomes) == 0.25

    def test_kind_and_window_filters(self):
        outcomes = (
            [_outcome(ProposalKind.BIRTH, True, iteration=i) for i in range(10)]
            + [_outcome(ProposalKind.ROTATE, False, iteration=i)
               for i in range(10, 20)])
        assert acceptance_rate(outcomes, kinds=ProposalKind.BIRTH) == 1.0
        assert acceptance_rate(outcomes, window=(10, None)) == 0.0
        assert acceptance_rate(outcomes, kinds=ProposalKind.DEATH) is None

    def test_summary_rows(self):
        outcomes = ([_outcome(ProposalKind.BIRTH, True)] * 3
                    + [_outcome(ProposalKind.DEATH, False)] * 1)
        rows = acceptance_summary(outcomes)
        assert ("birth", 3, 3, 1.0) in rows
        assert ("death", 1, 0, 0.0) in rows
        assert rows[-1] == ("all", 4, 3, 0.75)


class TestDeltaTrace:
    def test_passthrough_preserves_large_negatives(self):
        deltas = [-500.0, -900.0, -1234.5]
        outcomes = [_outcome(ProposalKind.BIRTH, False, d, iteration=i)
                    for i, d in enumerate(deltas)]
        np.testing.assert_array_equal(delta_logil_trace(outcomes), deltas)

    def test_identity_proposal_gives_zero(self):
        outcomes = [_outcome(ProposalKind.PERTURB, True, 0.0)]
        assert delta_logil_trace(outcomes)[0] == 0.0

    def test_kind_filter_keeps_order(self):
        outcomes = [
            _outcome(ProposalKind.BIRTH, True, 1.0, iteration=0),
            _outcome(ProposalKind.ROTATE, True, 2.0, iteration=1),
            _outcome(ProposalKind.DEATH, True, 3.0, iteration=2),
        ]
        got = delta_logil_trace(outcomes,
                                kinds={ProposalKind.BIRTH, ProposalKind.DEATH})
        np.testing.assert_array_equal(got, [1.0, 3.0])


class TestPredictiveInterval:
    def test_constant_draws_zero_width(self):
        draws = np.full(100, 3.3)
        lower, upper = predictive_interval(draws, 0.9)
        assert lower == upper == 3.3

    def test_standard_normal_ninety_percent(self):
        rng = np.random.default_rng(0)
        draws = rng.standard_normal(200_000)
        lower, upper = predictive_interval(draws, 0.9)
        q = stats.norm.ppf(0.95)
        assert lower == pytest.approx(-q, abs=0.02)
        assert upper == pytest.approx(q, abs=0.02)

    def test_level_one_gives_min_max(self):
        draws = np.arange(50, dtype=float)
        lower, upper = predictive_interval(draws, 1.0)
        assert lower == 0.0 and upper == 49.0

    def test_monotone_in_level(self):
        rng = np.random.default_rng(1)
        draws = rng.standard_normal((500, 3))
        l50, u50 = predictive_interval(draws, 0.5)
        l90, u90 = predictive_interval(draws, 0.9)
        assert np.all(l90 <= l50) and np.all(u90 >= u50)

    def test_needs_twenty_draws(self):
        with pytest.raises(ValueError):
            predictive_interval(np.zeros(19), 0.9)


class TestCoverage:
    def test_extremes(self):
        lower, upper = np.zeros(5), np.ones(5)
        assert empirical_coverage(lower, upper, np.full(5, 0.5)) == 1.0
        assert empirical_coverage(lower, upper, np.full(5, 2.0)) == 0.0

    def test_half_in_half_out(self):
        lower = np.zeros(10)
        upper = np.ones(10)
        truth = np.array([0.5] * 5 + [5.0] * 5)
        assert empirical_coverage(lower, upper, truth) == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            empirical_coverage(np.zeros(3), np.ones(3), np.zeros(4))

    def test_calibration_on_conjugate_toy(self):
        """Exact posterior draws for a conjugate normal-mean problem give
        intervals whose coverage of fresh truths is at least the level."""
        rng = np.random.default_rng(2)
        sigma, tau = 0.3, 1.0  # noise sd, prior sd
        n_problems, n_obs, n_draws = 600, 5, 400
        hits = []
        for _ in range(n_problems):
            theta = rng.normal(0, tau)
            obs = rng.normal(theta, sigma, size=n_obs)
            prec = n_obs / sigma**2 + 1 / tau**2
            mean = obs.sum() / sigma**2 / prec
            draws = rng.normal(mean, 1 / math.sqrt(prec), size=n_draws)
            lower, upper = predictive_interval(draws, 0.9)
            hits.append(lower <= theta <= upper)
        coverage = np.mean(hits)
        se = math.sqrt(0.9 * 0.1 / n_problems)
        assert coverage >= 0.9 - 3 * se


class TestCensus:
    def test_stuck_chain_census_size_one(self):
        draws = [("(0:5:[1.0][2.0])",)] * 50
        census = tree_census(draws)
        assert len(census) == 1
        assert census["(0:5:[][])"] == 50

    def test_hand_built_counts(self):
        draws = [("(0:5:[1.0][2.0])", "[0.0]"),
                 ("(0:5:[9.0][9.0])", "[1.0]"),
                 ("(1:3:[0.0][0.0])", "[2.0]")]
        census = tree_census(draws)
        assert census["(0:5:[][])"] == 2
        assert census["(1:3:[][])"] == 1
        assert census["[]"] == 3

    def test_invariant_to_mu_and_order(self):
        a = tree_census([("(0:5:[1.5][2.5])",), ("(1:3:[0.0][1.0])",)])
        b = tree_census([("(1:3:[7.0][8.0])",), ("(0:5:[0.25][0.75])",)])
        assert a == b


class TestCsvWriters:
    def test_traces_roundtrip(self, tmp_path):
        outcomes = [
            _outcome(ProposalKind.BIRTH, True, 1.25, iteration=3, tree=1),
            _outcome(ProposalKind.ROTATE, False, float("nan"), iteration=4),
        ]
        path = tmp_path / "traces.csv"
        write_traces_csv(path, outcomes)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,tree,kind,accepted,delta_logil"
        assert lines[1] == "3,1,birth,1,1.25"
        assert lines[2].startswith("4,0,rotate,0,nan")

    def test_intervals_csv(self, tmp_path):
        path = tmp_path / "iv.csv"
        write_intervals_csv(path, [0.0, 1.0], [0.5, 1.5], [1.0, 2.0],
                            truth=[0.25, 5.0])
        lines = path.read_text().splitlines()
        assert lines[0] == "x_id,lower,mean,upper,truth"
        assert lines[1] == "0,0.0,0.5,1.0,0.25"

    def test_census_csv_deterministic_order(self, tmp_path):
        census = Counter({"(b)": 2, "(a)": 2, "(c)": 5})
        path = tmp_path / "census.csv"
        write_census_csv(path, census)
        lines = path.read_text().splitlines()
        assert lines == ["canonical,count", "(c),5", "(a),2", "(b),2"]
