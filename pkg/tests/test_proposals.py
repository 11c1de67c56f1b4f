"""Proposal kernels: window arithmetic, preconditioning, reversibility."""
import math

import numpy as np
import pytest

from rotbart.datasets import gen_wu_synthetic, scale_dataset
from rotbart.model import Hyperparams, leaf_suffstats, log_marginal_from_stats
from rotbart.proposals import (
    ProposalKind,
    _window_candidates,
    build_preconditioner,
    propose_birth,
    propose_change_var,
    propose_death,
    propose_perturb,
    propose_rotate,
)
from rotbart.tree import CutpointGrid, RegressionTree, parse, structure_key, \
    valid_cut_interval

import oracles


GRID11 = CutpointGrid.uniform(2, 11)


def figure4_tree():
    return parse("(0:8:(0:1:[0.0](0:5:(0:2:[1.0][2.0])[3.0]))[4.0])")


def _cur_logil(tree, X, targets, sigma2, hyper, grid):
    counts, sums, sumsqs = leaf_suffstats(tree, X, targets, grid)
    return log_marginal_from_stats(counts, sums, sumsqs, sigma2, hyper.sigma_mu)


def _dense_data(rng, n=400, d=2):
    X = rng.uniform(size=(n, d))
    targets = rng.normal(size=n)
    return X, targets


class TestPreconditioner:
    def test_duplicated_columns_keep_unit_offdiagonal(self):
        rng = np.random.default_rng(0)
        col = rng.uniform(size=200)
        X = np.column_stack([col, col])
        pre = build_preconditioner(X, cutoff=0.30)
        assert pre.matrix[0, 1] == pytest.approx(1.0)
        assert pre.matrix[0, 0] == 1.0

    def test_independent_columns_zeroed_by_cutoff(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((10_000, 4))
        pre = build_preconditioner(X, cutoff=0.30)
        off = pre.matrix[~np.eye(4, dtype=bool)]
        assert np.all(off == 0.0)

    def test_cutoff_removes_weak_true_correlation(self):
        rng = np.random.default_rng(2)
        n = 50_000
        a = rng.standard_normal(n)
        b = 0.2 * a + math.sqrt(1 - 0.04) * rng.standard_normal(n)  # cor 0.2
        pre = build_preconditioner(np.column_stack([a, b]), cutoff=0.30)
        assert pre.matrix[0, 1] == 0.0

    def test_constant_column_gets_zero_offdiagonals(self):
        rng = np.random.default_rng(3)
        X = np.column_stack([np.full(100, 0.5), rng.uniform(size=100)])
        pre = build_preconditioner(X)
        assert pre.matrix[0, 1] == 0.0 and pre.matrix[1, 0] == 0.0
        assert pre.matrix[0, 0] == 1.0

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            build_preconditioner(np.ones((1, 3)))


class TestPerturb:
    def test_figure4_support(self):
        """At the constrained node, candidates only come from the open valid
        interval; cutpoints at or beyond its ends are never proposed."""
        tree = figure4_tree()
        hyper = Hyperparams(m=1, min_leaf_n=1, sigma_mu=0.3)
        rng = np.random.default_rng(10)
        X, targets = _dense_data(rng, n=800)
        cur = _cur_logil(tree, X, targets, 0.5, hyper, GRID11)
        node5_id = 5
        seen = set()
        for _ in range(400):
            outcome, cand = propose_perturb(tree, X, targets, 0.5, hyper,
                                            GRID11, rng, 1.0, cur)
            if outcome.candidate is None:
                continue
            cand_tree = parse(outcome.candidate)
            new_cut = cand_tree.node_by_id(node5_id).cut
            if new_cut != 5:  # this proposal perturbed node 5
                seen.add(new_cut)
                assert 2 < new_cut < 8
        assert seen  # node 5 was hit and moved somewhere legal

    def test_symmetric_unclipped_windows_have_unit_hastings(self):
        # a stump's interval is (0, 1) whatever its cutpoint; a central
        # cutpoint with alpha = 0.5 keeps every forward and backward window
        # unclipped, so both count the same number of grid points and the
        # acceptance ratio reduces to the likelihood term alone
        tree = parse("(0:5:[0.0][0.0])")
        hyper = Hyperparams(m=1, min_leaf_n=1, sigma_mu=0.3)
        rng = np.random.default_rng(11)
        X, targets = _dense_data(rng)
        cur = _cur_logil(tree, X, targets, 0.5, hyper, GRID11)
        hit = 0
        for _ in range(50):
            outcome, _ = propose_perturb(tree, X, targets, 0.5, hyper,
                                         GRID11, rng, 0.5, cur)
            if math.isfinite(outcome.log_accept_ratio):
                hit += 1
                assert outcome.log_accept_ratio == pytest.approx(
                    outcome.delta_log_il, abs=1e-12)
        assert hit > 10

    def test_clipped_window_needs_the_hastings_correction(self):
        # moving off-center clips one side of the window; the count ratio
        # then differs from 1 and must appear in the acceptance ratio
        tree = parse("(0:5:[0.0][0.0])")
        hyper = Hyperparams(m=1, min_leaf_n=1, sigma_mu=0.3)
        rng = np.random.default_rng(12)
        X, targets = _dense_data(rng)
        cur = _cur_logil(tree, X, targets, 0.5, hyper, GRID11)
        interval = valid_cut_interval(tree, tree.root, 0, GRID11)
        saw_correction = False
        for _ in range(200):
            outcome, _ = propose_perturb(tree, X, targets, 0.5, hyper,
                                         GRID11, rng, 1.0, cur)
            if not math.isfinite(outcome.log_accept_ratio):
                continue
            new_cut = parse(outcome.candidate).root.cut
            n_fwd = len(_window_candidates(GRID11, 0, 5, interval, 1.0))
            n_bwd = len(_window_candidates(GRID11, 0, new_cut, interval, 1.0))
            want = outcome.delta_log_il + math.log(n_fwd) - math.log(n_bwd)
            assert outcome.log_accept_ratio == pytest.approx(want, abs=1e-12)
            saw_correction |= n_fwd != n_bwd
        assert saw_correction

    def test_window_counts_match_brute_force_scan(self):
        rng = np.random.default_rng(12)
        grid = CutpointGrid.uniform(3, 17)
        for _ in range(1000):
            tree = oracles.random_valid_tree(rng, grid, max_depth=4)
            internals = tree.internal_nodes()
            node = internals[int(rng.integers(len(internals)))]
            alpha = float(rng.uniform(0.1, 1.0))
            interval = valid_cut_interval(tree, node, node.var, grid)
            got = _window_candidates(grid, node.var, node.cut, interval, alpha)
            values = grid.values(node.var)
            c_val = values[node.cut]
            half = alpha * (interval.upper - interval.lower) / 2.0
            lo, hi = max(c_val - half, interval.lower), min(c_val + half, interval.upper)
            want = [j for j, v in enumerate(values)
                    if lo < v < hi and j != node.cut]
            assert got == want

    def test_rejects_when_window_has_no_other_gridpoint(self):
        # 3-point grid: the only interior cutpoint is the current one
        grid = CutpointGrid.uniform(1, 3)
        tree = parse("(0:1:[0.0][0.0])")
        hyper = Hyperparams(m=1, min_leaf_n=1)
        rng = np.random.default_rng(13)
        X = rng.uniform(size=(50, 1))
        targets = rng.normal(size=50)
        cur = _cur_logil(tree, X, targets, 0.5, hyper, grid)
        outcome, cand = propose_perturb(tree, X, targets, 0.5, hyper, grid,
                                        rng, 0.85, cur)
        assert not outcome.accepted and cand is None
        assert math.isnan(outcome.delta_log_il)

    def test_never_alters_tree_shape(self):
        rng = np.random.default_rng(14)
        tree = figure4_tree()
        hyper = Hyperparams(m=1, min_leaf_n=1, sigma_mu=0.3)
        X, targets = _dense_data(rng, n=600)
        cur = _cur_logil(tree, X, targets, 0.5, hyper, GRID11)
        shape = structure_key(tree).replace(":1:", ":v:").count("(")
        for _ in range(100):
            outcome, cand = propose_perturb(tree, X, targets, 0.5, hyper,
                                            GRID11, rng, 0.85, cur)
            if cand is not None:
                assert structure_key(cand).count("(") == shape
                assert [n.var for n in cand.internal_nodes()] == \
                    [n.var for n in tree.internal_nodes()]


class TestChangeVar:
    def _setup(self, matrix, seed=20):
        rng = np.random.default_rng(seed)
        d = matrix.shape[0]
        grid = CutpointGrid.uniform(d, 11)
        tree = parse("(0:5:[0.0][0.0])")
        hyper = Hyperparams(m=1, min_leaf_n=1, sigma_mu=0.3)
        X = rng.uniform(size=(500, d))
        targets = rng.normal(size=500)
        cur = _cur_logil(tree, X, targets, 0.5, hyper, grid)
        from rotbart.proposals import CorrelationPreconditioner
        pre = CorrelationPreconditioner(matrix, 0.30)
        return tree, X, targets, hyper, grid, pre, cur, rng

    def test_uncorrelated_variable_always_stays(self):
        matrix = np.eye(3)
        tree, X, targets, hyper, grid, pre, cur, rng = self._setup(matrix)
        for _ in range(100):
            outcome, cand = propose_change_var(tree, X, targets, 0.5, hyper,
                                               grid, rng, pre, cur)
            assert parse(outcome.candidate).root.var == 0

    def test_perfectly_correlated_pair_moves_half_the_time(self):
        matrix = np.eye(3)
        matrix[0, 1] = matrix[1, 0] = 1.0
        tree, X, targets, hyper, grid, pre, cur, rng = self._setup(matrix)
        moved = 0
        trials = 4000
        for _ in range(trials):
            outcome, _ = propose_change_var(tree, X, targets, 0.5, hyper,
                                            grid, rng, pre, cur)
            moved += parse(outcome.candidate).root.var == 1
        sigma = math.sqrt(0.25 / trials)
        assert abs(moved / trials - 0.5) < 4 * sigma

    def test_wu_preconditioner_never_proposes_x2_from_x1(self):
        data = scale_dataset(gen_wu_synthetic(7))
        pre = build_preconditioner(data.X, cutoff=0.30)
        # analytic mixture correlation of x1, x3 is -0.881
        assert pre.matrix[0, 2] > 0.8   # x1 and x3 strongly confounded
        assert pre.matrix[0, 1] == 0.0  # x1 and x2 below the cutoff
        grid = CutpointGrid.uniform(3, 11)
        tree = parse("(0:5:[0.0][0.0])")
        hyper = Hyperparams(m=1, min_leaf_n=1, sigma_mu=0.3)
        rng = np.random.default_rng(21)
        cur = _cur_logil(tree, data.X, data.y, 0.5, hyper, grid)
        proposed_vars = set()
        for _ in range(500):
            outcome, _ = propose_change_var(tree, data.X, data.y, 0.5, hyper,
                                            grid, rng, pre, cur)
            proposed_vars.add(parse(outcome.candidate).root.var)
        assert 1 not in proposed_vars
        assert proposed_vars == {0, 2}

    def test_never_alters_tree_shape(self):
        matrix = np.ones((2, 2))
        tree = figure4_tree()
        rng = np.random.default_rng(22)
        hyper = Hyperparams(m=1, min_leaf_n=1, sigma_mu=0.3)
        X, targets = _dense_data(rng, n=600)
        cur = _cur_logil(tree, X, targets, 0.5, hyper, GRID11)
        from rotbart.proposals import CorrelationPreconditioner
        pre = CorrelationPreconditioner(matrix, 0.3)
        n_nodes = len(tree.nodes())
        for _ in range(200):
            outcome, cand = propose_change_var(tree, X, targets, 0.5, hyper,
                                               GRID11, rng, pre, cur)
            if cand is not None:
                assert len(cand.nodes()) == n_nodes


class TestBirthDeath:
    def test_death_after_birth_is_the_exact_inverse(self):
        """From a single leaf, an accepted birth followed by the death at the
        same node has acceptance log-ratios that cancel exactly."""
        rng = np.random.default_rng(30)
        hyper = Hyperparams(m=1, min_leaf_n=5, sigma_mu=0.3)
        X, targets = _dense_data(rng, n=300)
        tree = RegressionTree.single_leaf()
        cur = _cur_logil(tree, X, targets, 0.5, hyper, GRID11)
        cand = None
        while cand is None:
            outcome, cand = propose_birth(tree, X, targets, 0.5, hyper,
                                          GRID11, rng, cur)
        stump = cand
        stump_logil = _cur_logil(stump, X, targets, 0.5, hyper, GRID11)
        death_outcome, death_cand = propose_death(stump, X, targets, 0.5,
                                                  hyper, GRID11, rng,
                                                  stump_logil)
        assert structure_key(parse(death_outcome.candidate)) == \
            structure_key(tree)
        assert death_outcome.log_accept_ratio == \
            pytest.approx(-outcome.log_accept_ratio, abs=1e-10)

    def test_death_impossible_on_single_leaf(self):
        rng = np.random.default_rng(31)
        hyper = Hyperparams(m=1)
        X, targets = _dense_data(rng, n=100)
        tree = RegressionTree.single_leaf()
        outcome, cand = propose_death(tree, X, targets, 0.5, hyper, GRID11,
                                      rng, 0.0)
        assert not outcome.accepted and cand is None
        assert math.isnan(outcome.delta_log_il)

    def test_birth_violating_min_leaf_auto_rejects(self):
        rng = np.random.default_rng(32)
        hyper = Hyperparams(m=1, min_leaf_n=5)
        # all data in the right half: any split near 0 leaves an empty leaf
        X = np.column_stack([rng.uniform(0.6, 1.0, 200),
                             rng.uniform(size=200)])
        targets = rng.normal(size=200)
        tree = RegressionTree.single_leaf()
        cur = _cur_logil(tree, X, targets, 0.5, hyper, GRID11)
        rejected_structurally = 0
        for _ in range(200):
            outcome, cand = propose_birth(tree, X, targets, 0.5, hyper,
                                          GRID11, rng, cur)
            if math.isnan(outcome.delta_log_il):
                rejected_structurally += 1
                assert not outcome.accepted
        assert rejected_structurally > 50  # cuts below 0.6 on x0, plus 0/1

    def test_accepted_candidates_satisfy_min_leaf(self):
        rng = np.random.default_rng(33)
        hyper = Hyperparams(m=1, min_leaf_n=5, sigma_mu=0.3)
        X, targets = _dense_data(rng, n=300)
        tree = RegressionTree.single_leaf()
        cur = _cur_logil(tree, X, targets, 0.5, hyper, GRID11)
        for _ in range(300):
            outcome, cand = propose_birth(tree, X, targets, 0.5, hyper,
                                          GRID11, rng, cur)
            if cand is not None:
                counts, _, _ = leaf_suffstats(cand, X, targets, GRID11)
                assert counts.min() >= 5
                tree = cand
                cur = _cur_logil(tree, X, targets, 0.5, hyper, GRID11)


class TestRotateKernel:
    def test_stump_has_no_rotatable_node(self):
        rng = np.random.default_rng(40)
        hyper = Hyperparams(m=1)
        X, targets = _dense_data(rng, n=100)
        tree = parse("(0:5:[0.0][0.0])")
        outcome, cand = propose_rotate(tree, X, targets, 0.5, hyper, GRID11, rng)
        assert not outcome.accepted and cand is None

    def test_accepted_rotation_keeps_the_leaf_count_constraint(self):
        # starting from states that satisfy the constraint (as chain states
        # always do), accepted candidates satisfy it too
        rng = np.random.default_rng(41)
        grid = CutpointGrid.uniform(3, 9)
        hyper = Hyperparams(m=1, min_leaf_n=1, sigma_mu=0.3)
        accepted = 0
        while accepted < 40:
            tree = oracles.random_valid_tree(rng, grid, max_depth=4)
            if tree.n_internal() < 2:
                continue
            X = rng.uniform(size=(500, 3))
            targets = rng.normal(size=500)
            counts, _, _ = leaf_suffstats(tree, X, targets, grid)
            if counts.min() < hyper.min_leaf_n:
                continue
            outcome, cand = propose_rotate(tree, X, targets, 0.5, hyper, grid, rng)
            if cand is None:
                continue
            accepted += 1
            counts, _, _ = leaf_suffstats(cand, X, targets, grid)
            assert counts.min() >= hyper.min_leaf_n

    def test_outcome_components_are_reproducible(self):
        rng = np.random.default_rng(42)
        grid = CutpointGrid.uniform(2, 9)
        hyper = Hyperparams(m=1, min_leaf_n=1, sigma_mu=0.25)
        found = 0
        while found < 30:
            tree = oracles.random_valid_tree(rng, grid, max_depth=3)
            if tree.n_internal() < 2:
                continue
            X = rng.uniform(size=(400, 2))
            targets = rng.normal(size=400)
            outcome, cand = propose_rotate(tree, X, targets, 0.5, hyper, grid, rng)
            if outcome.candidate is None or math.isnan(outcome.delta_log_il):
                continue
            found += 1
            # the recorded likelihood delta is recomputable from the stored
            # before/after structures (leaf values don't matter)
            after = parse(outcome.candidate)
            c0, s0, q0 = leaf_suffstats(tree, X, targets, grid)
            c1, s1, q1 = leaf_suffstats(after, X, targets, grid)
            want = (log_marginal_from_stats(c1, s1, q1, 0.5, hyper.sigma_mu)
                    - log_marginal_from_stats(c0, s0, q0, 0.5, hyper.sigma_mu))
            assert outcome.delta_log_il == pytest.approx(want, abs=1e-10)
