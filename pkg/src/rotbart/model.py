"""Sum-of-trees model: priors, integrated likelihood and Gibbs draws.

The response is modeled as a sum of m regression trees plus Gaussian noise.
Leaf parameters get conjugate mean-zero normal priors, so each tree's
marginal (integrated) likelihood is available in closed form per leaf; the
error variance gets a scaled-inverse-chi-square prior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .tree import CutpointGrid, RegressionTree, evaluate_many, leaf_indices

__all__ = [
    "Hyperparams",
    "SumOfTreesState",
    "LeafConstraintError",
    "log_tree_prior",
    "log_split_rule_prior",
    "leaf_suffstats",
    "log_marginal_from_stats",
    "log_integrated_likelihood",
    "draw_leaf_mus",
    "draw_sigma2",
    "residual_targets",
]


class LeafConstraintError(ValueError):
    """A terminal node holds fewer observations than the model requires."""


@dataclass(frozen=True)
class Hyperparams:
    """Model hyperparameters (on the scaled-response scale)."""

    m: int = 200
    split_alpha: float = 0.95
    split_beta: float = 2.0
    sigma_mu: float = 0.125
    nu: float = 3.0
    lambd: float = 0.1
    min_leaf_n: int = 5
    perturb_integrated: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m >= 1 required")
        if not 0.0 < self.split_alpha < 1.0:
            raise ValueError("split_alpha must lie in (0, 1)")
        if self.split_beta < 0.0:
            raise ValueError("split_beta must be >= 0")
        if self.sigma_mu <= 0.0 or self.nu <= 0.0 or self.lambd <= 0.0:
            raise ValueError("sigma_mu, nu and lambd must be positive")
        if self.min_leaf_n < 1:
            raise ValueError("min_leaf_n >= 1 required")

    @classmethod
    def defaults(cls, m: int, y_scaled=None, k: float = 2.0, **overrides) -> "Hyperparams":
        """Standard settings: sigma_mu = 0.5/(k sqrt(m)) on the [-0.5, 0.5]
        response scale, and lambd chosen so the variance prior puts 90% of
        its mass below a naive variance estimate of the scaled response."""
        params = dict(m=m, sigma_mu=0.5 / (k * math.sqrt(m)))
        nu = float(overrides.get("nu", cls.nu))
        if y_scaled is not None and "lambd" not in overrides:
            sig2_hat = float(np.var(np.asarray(y_scaled)))
            if sig2_hat > 0:
                params["lambd"] = sig2_hat * stats.chi2.ppf(0.1, nu) / nu
        params.update(overrides)
        return cls(**params)

    def with_(self, **changes) -> "Hyperparams":
        return replace(self, **changes)


@dataclass
class SumOfTreesState:
    """Full MCMC state: the m trees and the error variance."""

    trees: list
    sigma2: float

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    @classmethod
    def initial(cls, hyper: Hyperparams, sigma2: float) -> "SumOfTreesState":
        return cls([RegressionTree.single_leaf() for _ in range(hyper.m)], sigma2)

    def predict(self, X: np.ndarray, grid: CutpointGrid) -> np.ndarray:
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += evaluate_many(tree, X, grid)
        return total


def _split_prob(depth: int, hyper: Hyperparams) -> float:
    return hyper.split_alpha * (1.0 + depth) ** (-hyper.split_beta)


def log_tree_prior(tree: RegressionTree, hyper: Hyperparams) -> float:
    """Log prior of the tree *shape* under the depth-penalizing prior:
    internal nodes contribute log p_split(depth), leaves log(1 - p_split)."""
    total = 0.0
    stack = [(tree.root, 0)]
    while stack:
        node, depth = stack.pop()
        p = _split_prob(depth, hyper)
        if node.is_leaf:
            total += math.log1p(-p)
        else:
            total += math.log(p)
            stack.append((node.left, depth + 1))
            stack.append((node.right, depth + 1))
    return total


def log_split_rule_prior(tree: RegressionTree, grid: CutpointGrid) -> float:
    """Log prior of the split rules: each internal node draws its variable
    uniformly and then a cutpoint uniformly from that variable's grid."""
    total = 0.0
    for node in tree.internal_nodes():
        total -= math.log(grid.n_vars) + math.log(grid.counts[node.var])
    return total


def leaf_suffstats(tree, X: np.ndarray, targets: np.ndarray,
                   grid: CutpointGrid):
    """Per-leaf (count, sum, sum of squares) of the targets, pre-order leaf
    order.  Accepts a tree or a bare subtree root node."""
    root = tree.root if isinstance(tree, RegressionTree) else tree
    n_leaves = sum(1 for n in root if n.is_leaf)
    idx = leaf_indices(root, X, grid)
    counts = np.bincount(idx, minlength=n_leaves)
    sums = np.bincount(idx, weights=targets, minlength=n_leaves)
    sumsqs = np.bincount(idx, weights=targets * targets, minlength=n_leaves)
    return counts, sums, sumsqs


def log_marginal_from_stats(counts, sums, sumsqs, sigma2: float, sigma_mu: float) -> float:
    """Sum over leaves of the closed-form log marginal of the leaf targets,
    with the leaf mean integrated out under its Normal(0, sigma_mu^2) prior."""
    counts = np.asarray(counts, dtype=float)
    sums = np.asarray(sums, dtype=float)
    sumsqs = np.asarray(sumsqs, dtype=float)
    n_total = counts.sum()
    precision = counts / sigma2 + 1.0 / sigma_mu**2
    out = -0.5 * n_total * math.log(2.0 * math.pi * sigma2)
    out -= 0.5 * float(np.sum(np.log(sigma_mu**2 * precision)))
    out -= 0.5 * float(np.sum(sumsqs)) / sigma2
    out += 0.5 * float(np.sum(sums**2 / (sigma2**2 * precision)))
    return out


def log_integrated_likelihood(tree: RegressionTree, X: np.ndarray,
                              targets: np.ndarray, sigma2: float,
                              hyper: Hyperparams, grid: CutpointGrid) -> float:
    """Tree-level log integrated likelihood of the residual targets.

    Raises :class:`LeafConstraintError` when any leaf holds fewer than
    ``hyper.min_leaf_n`` observations; proposal kernels treat that as an
    automatic rejection.
    """
    counts, sums, sumsqs = leaf_suffstats(tree, X, targets, grid)
    if counts.min() < hyper.min_leaf_n:
        raise LeafConstraintError(
            f"leaf with {int(counts.min())} < {hyper.min_leaf_n} observations")
    return log_marginal_from_stats(counts, sums, sumsqs, sigma2, hyper.sigma_mu)


def draw_leaf_mus(tree: RegressionTree, X: np.ndarray, targets: np.ndarray,
                  sigma2: float, hyper: Hyperparams, grid: CutpointGrid,
                  rng: np.random.Generator) -> RegressionTree:
    """Gibbs update of every leaf parameter from its conjugate normal
    posterior given the leaf's targets.  Mutates ``tree`` and returns it."""
    counts, sums, _ = leaf_suffstats(tree, X, targets, grid)
    precision = counts / sigma2 + 1.0 / hyper.sigma_mu**2
    means = (sums / sigma2) / precision
    draws = means + rng.standard_normal(len(means)) / np.sqrt(precision)
    for leaf, mu in zip(tree.leaves(), draws):
        leaf.mu = float(mu)
    return tree


def draw_sigma2(residuals: np.ndarray, hyper: Hyperparams,
                rng: np.random.Generator) -> float:
    """Draw the error variance from its scaled-inverse-chi-square posterior."""
    n = len(residuals)
    shape = hyper.nu + n
    scale = (hyper.nu * hyper.lambd + float(np.sum(residuals**2))) / shape
    return float(shape * scale / rng.chisquare(shape))


def residual_targets(y_scaled: np.ndarray, state: SumOfTreesState, j: int,
                     X: np.ndarray, grid: CutpointGrid) -> np.ndarray:
    """Backfitting targets for tree ``j``: the response minus the fit of
    every other tree, computed from scratch."""
    if not 0 <= j < len(state.trees):
        raise IndexError(f"tree index {j} out of range")
    targets = np.array(y_scaled, dtype=float, copy=True)
    for k, tree in enumerate(state.trees):
        if k != j:
            targets -= evaluate_many(tree, X, grid)
    return targets
