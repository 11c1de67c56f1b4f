"""MCMC driver: per-iteration sweep over the ensemble with mixture-weighted
proposal selection, then conjugate draws of leaf values and the error
variance."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import ScaledData
from .model import Hyperparams, SumOfTreesState, draw_sigma2, leaf_suffstats, \
    log_marginal_from_stats
from .proposals import ProposalKind, build_preconditioner, propose_birth, \
    propose_change_var, propose_death, propose_perturb, propose_rotate
from .tree import CutpointGrid, RegressionTree, evaluate_many, serialize, \
    structure_key

__all__ = ["RunConfig", "ChainResult", "run_chain", "run_replicated",
           "DEFAULT_WEIGHTS"]

DEFAULT_WEIGHTS = {
    "birth_death": 0.5,
    "perturb": 0.2,
    "change_var": 0.1,
    "rotate": 0.2,
}
_KIND_ORDER = ("birth_death", "perturb", "change_var", "rotate")


@dataclass
class RunConfig:
    """Everything needed to reproduce a chain bit-exactly."""

    iterations_burnin: int
    iterations_keep: int
    hyper: Hyperparams
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    seed: int = 0
    thinning: int = 1
    n_cutpoints: int = 100
    alpha_scale: float = 0.85
    precond_cutoff: float = 0.30
    update_sigma2: bool = True
    check_consistency: bool = False  # verify fit caches against recomputation

    def __post_init__(self):
        if self.iterations_burnin < 0 or self.iterations_keep < 0:
            raise ValueError("iteration counts must be nonnegative")
        if self.thinning < 1:
            raise ValueError("thinning >= 1 required")
        if self.n_cutpoints < 2:
            raise ValueError("n_cutpoints >= 2 required")
        unknown = set(self.weights) - set(_KIND_ORDER)
        if unknown:
            raise ValueError(f"unknown proposal weights: {sorted(unknown)}")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("proposal weights must be nonnegative")

    def weight_vector(self) -> np.ndarray:
        w = np.array([self.weights.get(k, 0.0) for k in _KIND_ORDER])
        total = w.sum()
        return w / total if total > 0 else w


@dataclass
class ChainResult:
    """Kept posterior draws plus the full proposal-outcome stream."""

    predictions: np.ndarray          # (n_draws, n_points), raw response scale
    sigma2_draws: np.ndarray         # raw response scale
    tree_serializations: list        # per draw: tuple of full canonical forms
    tree_structures: list            # per draw: tuple of rules-only forms
    outcomes: list
    kept_iterations: list
    burnin: int
    thinning: int
    config: RunConfig

    @property
    def n_draws(self) -> int:
        return len(self.kept_iterations)


def run_chain(config: RunConfig, data: ScaledData, pred_points=None,
              progress: bool = False) -> ChainResult:
    """Run one chain.  All randomness flows from ``config.seed``; rerunning
    with the same configuration and data reproduces the result bit-exactly.

    ``pred_points`` are raw-unit covariate rows; per-draw sum-of-trees
    predictions at them are returned on the raw response scale.
    """
    rng = np.random.default_rng(config.seed)
    hyper = config.hyper
    grid = CutpointGrid.uniform(data.d, config.n_cutpoints)
    X, y = data.X, data.y
    n, m = data.n, hyper.m

    sigma2_init = float(np.var(y))
    state = SumOfTreesState.initial(hyper, max(sigma2_init, 1e-6))
    precond = build_preconditioner(X, config.precond_cutoff)
    alpha = np.broadcast_to(config.alpha_scale, (data.d,)).astype(float)

    pred_X = data.scale_points(np.asarray(pred_points, dtype=float)) \
        if pred_points is not None else None

    weights = config.weight_vector()
    structural = weights.sum() > 0

    fits = np.zeros((m, n))
    total_fit = np.zeros(n)

    outcomes = []
    kept_iterations = []
    predictions = []
    sigma2_draws = []
    tree_serializations = []
    tree_structures = []

    total_iters = config.iterations_burnin + config.iterations_keep
    for it in range(total_iters):
        for j in range(m):
            targets = y - total_fit + fits[j]
            tree = state.trees[j]
            if structural:
                counts, sums, sumsqs = leaf_suffstats(tree, X, targets, grid)
                cur_logil = log_marginal_from_stats(
                    counts, sums, sumsqs, state.sigma2, hyper.sigma_mu)
                kind = _KIND_ORDER[int(rng.choice(len(weights), p=weights))]
                outcome, candidate = _dispatch(
                    kind, tree, X, targets, state.sigma2, hyper, grid, rng,
                    cur_logil, alpha, precond)
                outcome.iteration = it
                outcome.tree_index = j
                outcomes.append(outcome)
                if outcome.accepted:
                    state.trees[j] = candidate
                    tree = candidate
            _draw_mus(tree, X, targets, state.sigma2, hyper, grid, rng)
            new_fit = evaluate_many(tree, X, grid)
            total_fit += new_fit - fits[j]
            fits[j] = new_fit
        if config.check_consistency:
            direct = np.zeros(n)
            for t in state.trees:
                direct += evaluate_many(t, X, grid)
            if not np.allclose(total_fit, direct, rtol=0.0, atol=1e-10):
                raise AssertionError(
                    f"fit cache diverged from recomputation at iteration {it}")
        if config.update_sigma2:
            state.sigma2 = draw_sigma2(y - total_fit, hyper, rng)
        if it >= config.iterations_burnin and \
                (it - config.iterations_burnin) % config.thinning == 0:
            kept_iterations.append(it)
            sigma2_draws.append(data.inverse_sigma2(state.sigma2))
            tree_serializations.append(
                tuple(serialize(t) for t in state.trees))
            tree_structures.append(
                tuple(sys.intern(structure_key(t)) for t in state.trees))
            if pred_X is not None:
                acc = np.zeros(pred_X.shape[0])
                for t in state.trees:
                    acc += evaluate_many(t, pred_X, grid)
                predictions.append(data.inverse_y(acc))
        if progress and (it + 1) % 500 == 0:
            print(f"iteration {it + 1}/{total_iters}", file=sys.stderr)

    preds = np.array(predictions) if predictions else \
        np.zeros((len(kept_iterations), 0))
    return ChainResult(preds, np.array(sigma2_draws), tree_serializations,
                       tree_structures, outcomes, kept_iterations,
                       config.iterations_burnin, config.thinning, config)


def _draw_mus(tree, X, targets, sigma2, hyper, grid, rng):
    counts, sums, _ = leaf_suffstats(tree, X, targets, grid)
    precision = counts / sigma2 + 1.0 / hyper.sigma_mu**2
    means = (sums / sigma2) / precision
    draws = means + rng.standard_normal(len(means)) / np.sqrt(precision)
    for leaf, mu in zip((n for n in tree.root if n.is_leaf), draws):
        leaf.mu = float(mu)


def _dispatch(kind, tree, X, targets, sigma2, hyper, grid, rng, cur_logil,
              alpha, precond):
    if kind == "birth_death":
        from .proposals import _bd_select_probs
        p_b, _ = _bd_select_probs(tree, grid)
        birth = p_b == 1.0 or (p_b > 0.0 and bool(rng.uniform() < p_b))
        if birth:
            return propose_birth(tree, X, targets, sigma2, hyper, grid, rng,
                                 cur_logil)
        return propose_death(tree, X, targets, sigma2, hyper, grid, rng,
                             cur_logil)
    if kind == "perturb":
        return propose_perturb(tree, X, targets, sigma2, hyper, grid, rng,
                               alpha, cur_logil)
    if kind == "change_var":
        return propose_change_var(tree, X, targets, sigma2, hyper, grid, rng,
                                  precond, cur_logil)
    if kind == "rotate":
        return propose_rotate(tree, X, targets, sigma2, hyper, grid, rng)
    raise ValueError(f"unknown proposal kind {kind!r}")


def run_replicated(config: RunConfig, data: ScaledData, k: int,
                   pred_points=None) -> list:
    """k independent chains.  Chain 0 uses the configured seed (so k = 1
    reproduces :func:`run_chain`); later chains get derived seeds."""
    if k < 1:
        raise ValueError("k >= 1 required")
    results = []
    for i in range(k):
        if i == 0:
            cfg = config
        else:
            child = np.random.SeedSequence(config.seed, spawn_key=(i,))
            cfg = replace(config, seed=int(child.generate_state(1)[0]))
        results.append(run_chain(cfg, data, pred_points))
    return results
