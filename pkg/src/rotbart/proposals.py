"""Metropolis-Hastings proposal kernels for single trees in the ensemble.

Five kernels: birth, death, perturb (cutpoint re-draw inside the valid
window), change-of-variable preconditioned by covariate correlations, and
tree rotation.  Each returns a :class:`ProposalOutcome` plus the candidate
tree when one was accepted; the caller installs it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import rotation
from .model import Hyperparams, leaf_suffstats, log_marginal_from_stats, \
    log_split_rule_prior, log_tree_prior, _split_prob
from .tree import CutpointGrid, Node, RegressionTree, structure_key, \
    valid_cut_interval

__all__ = [
    "ProposalKind",
    "ProposalOutcome",
    "CorrelationPreconditioner",
    "build_preconditioner",
    "propose_birth",
    "propose_death",
    "propose_perturb",
    "propose_change_var",
    "propose_rotate",
]


class ProposalKind(enum.Enum):
    BIRTH = "birth"
    DEATH = "death"
    PERTURB = "perturb"
    CHANGE_VAR = "change_var"
    ROTATE = "rotate"


@dataclass
class ProposalOutcome:
    """Record of one attempted proposal.

    ``delta_log_il`` is the change in log integrated likelihood of the
    candidate; it is NaN when no admissible candidate could be formed (the
    move was structurally impossible or violated the leaf-count constraint).
    """

    kind: ProposalKind
    accepted: bool
    delta_log_il: float
    log_accept_ratio: float
    candidate: str | None = None
    iteration: int = -1
    tree_index: int = -1


@dataclass(frozen=True)
class CorrelationPreconditioner:
    """Absolute pairwise covariate correlations with small entries zeroed."""

    matrix: np.ndarray
    cutoff: float


def build_preconditioner(X: np.ndarray, cutoff: float = 0.30) -> CorrelationPreconditioner:
    """Full-sample |correlation| matrix; entries <= cutoff become 0 and the
    diagonal is pinned to 1.  Zero-variance columns get zero off-diagonals."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("need at least two observations")
    d = X.shape[1]
    if d == 1:
        return CorrelationPreconditioner(np.ones((1, 1)), cutoff)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(X, rowvar=False)
    corr = np.abs(np.nan_to_num(corr, nan=0.0))
    corr[corr <= cutoff] = 0.0
    np.fill_diagonal(corr, 1.0)
    return CorrelationPreconditioner(corr, cutoff)


def _no_candidate(kind: ProposalKind) -> ProposalOutcome:
    return ProposalOutcome(kind, False, float("nan"), float("-inf"))


def _mh_accept(kind, delta, log_ratio, candidate, rng):
    accepted = math.log(rng.uniform()) <= log_ratio if math.isfinite(log_ratio) \
        else log_ratio > 0
    return ProposalOutcome(kind, accepted, delta, log_ratio,
                           structure_key(candidate))


def _candidate_logil(tree, X, targets, sigma2, hyper, grid):
    """(counts ok?, log integrated likelihood) of a candidate tree."""
    counts, sums, sumsqs = leaf_suffstats(tree, X, targets, grid)
    if counts.min() < hyper.min_leaf_n:
        return False, float("nan")
    return True, log_marginal_from_stats(counts, sums, sumsqs, sigma2, hyper.sigma_mu)


def _available_birth_vars(tree, leaf, grid):
    """Variables with at least one cutpoint that keeps both children of a
    split at ``leaf`` logically reachable, with their candidate counts."""
    out = []
    for var in range(grid.n_vars):
        interval = valid_cut_interval(tree, leaf, var, grid)
        if not interval.is_empty:
            out.append((var, interval))
    return out


def birth_feasible(tree, grid) -> bool:
    return any(_available_birth_vars(tree, leaf, grid)
               for leaf in tree.leaves())


def _bd_select_probs(tree: RegressionTree, grid):
    """(p_birth, p_death) for the 50/50 birth-death coin with the standard
    infeasibility fallback (birth when no prunable split exists, death when
    no leaf can be split)."""
    has_nog = any(not n.is_leaf and n.left.is_leaf and n.right.is_leaf
                  for n in tree.root)
    can_birth = birth_feasible(tree, grid)
    if not has_nog:
        return (1.0, 0.0)
    if not can_birth:
        return (0.0, 1.0)
    return (0.5, 0.5)


def _nog_nodes(tree: RegressionTree):
    return [n for n in tree.root
            if not n.is_leaf and n.left.is_leaf and n.right.is_leaf]


def propose_birth(tree, X, targets, sigma2, hyper, grid, rng, cur_logil):
    """Split a uniformly chosen leaf, drawing the variable uniformly among
    those with admissible cutpoints there and the cutpoint uniformly among
    that variable's admissible values."""
    leaves = tree.leaves()
    leaf = leaves[int(rng.integers(len(leaves)))]
    avail = _available_birth_vars(tree, leaf, grid)
    if not avail:  # the chosen leaf's region is fully resolved
        return _no_candidate(ProposalKind.BIRTH), None
    var, interval = avail[int(rng.integers(len(avail)))]
    cuts = list(interval.interior_indices())
    cut = cuts[int(rng.integers(len(cuts)))]

    candidate = tree.clone()
    cand_leaf = candidate.node_by_id(tree.heap_id(leaf))
    cand_leaf.var, cand_leaf.cut = var, cut
    cand_leaf.set_left(Node(mu=leaf.mu))
    cand_leaf.set_right(Node(mu=leaf.mu))

    ok, cand_logil = _candidate_logil(candidate, X, targets, sigma2, hyper, grid)
    if not ok:
        return _no_candidate(ProposalKind.BIRTH), None
    delta = cand_logil - cur_logil

    depth = tree.depth(leaf)
    p_here = _split_prob(depth, hyper)
    p_child = _split_prob(depth + 1, hyper)
    log_prior = (math.log(p_here) + 2.0 * math.log1p(-p_child) - math.log1p(-p_here)
                 - math.log(grid.n_vars) - math.log(grid.counts[var]))
    p_b, _ = _bd_select_probs(tree, grid)
    _, p_d_rev = _bd_select_probs(candidate, grid)
    log_fwd = (math.log(p_b) - math.log(len(leaves))
               - math.log(len(avail)) - math.log(len(cuts)))
    log_rev = math.log(p_d_rev) - math.log(len(_nog_nodes(candidate)))

    outcome = _mh_accept(ProposalKind.BIRTH, delta,
                         delta + log_prior + log_rev - log_fwd, candidate, rng)
    return outcome, candidate if outcome.accepted else None


def propose_death(tree, X, targets, sigma2, hyper, grid, rng, cur_logil):
    """Collapse a uniformly chosen terminal split back into a leaf."""
    nogs = _nog_nodes(tree)
    if not nogs:
        return _no_candidate(ProposalKind.DEATH), None
    node = nogs[int(rng.integers(len(nogs)))]

    candidate = tree.clone()
    cand_node = candidate.node_by_id(tree.heap_id(node))
    var, cut = cand_node.var, cand_node.cut
    cand_node.var = cand_node.cut = None
    cand_node.mu = cand_node.left.mu
    cand_node.left = cand_node.right = None

    ok, cand_logil = _candidate_logil(candidate, X, targets, sigma2, hyper, grid)
    if not ok:  # merged leaf inherits both children's rows; cannot shrink
        return _no_candidate(ProposalKind.DEATH), None
    delta = cand_logil - cur_logil

    depth = tree.depth(node)
    p_here = _split_prob(depth, hyper)
    p_child = _split_prob(depth + 1, hyper)
    log_prior = -(math.log(p_here) + 2.0 * math.log1p(-p_child)
                  - math.log1p(-p_here)
                  - math.log(grid.n_vars) - math.log(grid.counts[var]))
    _, p_d = _bd_select_probs(tree, grid)
    p_b_rev, _ = _bd_select_probs(candidate, grid)
    # probability the reverse birth recreates exactly the removed rule
    merged_leaf = cand_node
    avail_rev = _available_birth_vars(candidate, merged_leaf, grid)
    n_cuts_rev = 0
    for v, interval in avail_rev:
        if v == var:
            n_cuts_rev = len(list(interval.interior_indices()))
    log_fwd = math.log(p_d) - math.log(len(nogs))
    log_rev = (math.log(p_b_rev) - math.log(len(candidate.leaves()))
               - math.log(len(avail_rev)) - math.log(n_cuts_rev))

    outcome = _mh_accept(ProposalKind.DEATH, delta,
                         delta + log_prior + log_rev - log_fwd, candidate, rng)
    return outcome, candidate if outcome.accepted else None


def _window_candidates(grid, var, cut, interval, alpha):
    """Grid indices strictly inside the alpha-scaled window around the
    current cutpoint, the current index excluded."""
    values = grid.values(var)
    c_val = values[cut]
    half = alpha * (interval.upper - interval.lower) / 2.0
    lo = max(c_val - half, interval.lower)
    hi = min(c_val + half, interval.upper)
    start = int(np.searchsorted(values, lo, side="right"))
    stop = int(np.searchsorted(values, hi, side="left"))
    return [j for j in range(start, stop) if j != cut]


def propose_perturb(tree, X, targets, sigma2, hyper, grid, rng, alpha_scale,
                    cur_logil):
    """Re-draw one internal node's cutpoint inside the scaled valid window."""
    internals = tree.internal_nodes()
    if not internals:
        return _no_candidate(ProposalKind.PERTURB), None
    node = internals[int(rng.integers(len(internals)))]
    var = node.var
    alpha = float(np.broadcast_to(alpha_scale, (grid.n_vars,))[var])

    interval = valid_cut_interval(tree, node, var, grid)
    forward = _window_candidates(grid, var, node.cut, interval, alpha)
    if not forward:
        return _no_candidate(ProposalKind.PERTURB), None
    new_cut = forward[int(rng.integers(len(forward)))]

    candidate = tree.clone()
    candidate.node_by_id(tree.heap_id(node)).cut = new_cut

    ok, cand_logil = _candidate_logil(candidate, X, targets, sigma2, hyper, grid)
    if not ok:
        return _no_candidate(ProposalKind.PERTURB), None
    delta = cand_logil - cur_logil

    backward = _window_candidates(grid, var, new_cut, interval, alpha)
    log_hastings = math.log(len(forward)) - math.log(len(backward))

    if hyper.perturb_integrated:
        log_ratio = delta + log_hastings
    else:
        log_ratio = _plain_delta(tree, candidate, X, targets, sigma2, grid) \
            + log_hastings
    outcome = _mh_accept(ProposalKind.PERTURB, delta, log_ratio, candidate, rng)
    return outcome, candidate if outcome.accepted else None


def _plain_delta(tree, candidate, X, targets, sigma2, grid):
    """Likelihood-ratio alternative for fixed-dimension moves: leaf values
    are held fixed instead of integrated out."""
    from .tree import evaluate_many
    r_cur = targets - evaluate_many(tree, X, grid)
    r_new = targets - evaluate_many(candidate, X, grid)
    return -0.5 * float(np.sum(r_new**2) - np.sum(r_cur**2)) / sigma2


def propose_change_var(tree, X, targets, sigma2, hyper, grid, rng, precond,
                       cur_logil):
    """Re-draw one internal node's split variable with probability
    proportional to its correlation with the current variable (zero unless
    the new variable has cutpoints available), then a cutpoint uniformly
    from the new variable's valid interval."""
    internals = tree.internal_nodes()
    if not internals:
        return _no_candidate(ProposalKind.CHANGE_VAR), None
    node = internals[int(rng.integers(len(internals)))]
    v_old = node.var

    intervals = [valid_cut_interval(tree, node, v, grid)
                 for v in range(grid.n_vars)]
    avail = np.array([0.0 if iv.is_empty else 1.0 for iv in intervals])
    weights = precond.matrix[v_old] * avail
    total = weights.sum()
    if total <= 0:
        return _no_candidate(ProposalKind.CHANGE_VAR), None
    v_new = int(rng.choice(grid.n_vars, p=weights / total))

    fwd_cuts = list(intervals[v_new].interior_indices())
    new_cut = fwd_cuts[int(rng.integers(len(fwd_cuts)))]

    candidate = tree.clone()
    cand_node = candidate.node_by_id(tree.heap_id(node))
    cand_node.var, cand_node.cut = v_new, new_cut

    ok, cand_logil = _candidate_logil(candidate, X, targets, sigma2, hyper, grid)
    if not ok:
        return _no_candidate(ProposalKind.CHANGE_VAR), None
    delta = cand_logil - cur_logil

    rev_weights = precond.matrix[v_new] * avail
    rev_cuts = list(intervals[v_old].interior_indices())
    log_fwd = math.log(weights[v_new] / total) - math.log(len(fwd_cuts))
    log_rev = (math.log(rev_weights[v_old] / rev_weights.sum())
               - math.log(len(rev_cuts)))
    log_prior = math.log(grid.counts[v_old]) - math.log(grid.counts[v_new])

    log_ratio = delta + log_prior + log_rev - log_fwd
    outcome = _mh_accept(ProposalKind.CHANGE_VAR, delta, log_ratio, candidate, rng)
    return outcome, candidate if outcome.accepted else None


def _path_rows(tree, node, X, grid):
    """Boolean mask of the rows whose route passes through ``node``."""
    mask = np.ones(X.shape[0], dtype=bool)
    cur = node
    while cur.parent is not None:
        par = cur.parent
        go_left = X[:, par.var] < grid.value(par.var, par.cut)
        mask &= go_left if cur is par.left else ~go_left
        cur = par
    return mask


def _subtree_logil(root: Node, X, targets, sigma2, hyper, grid, min_check=True):
    counts, sums, sumsqs = leaf_suffstats(root, X, targets, grid)
    if min_check and (len(counts) == 0 or counts.min() < hyper.min_leaf_n):
        return None
    return log_marginal_from_stats(counts, sums, sumsqs, sigma2, hyper.sigma_mu)


def propose_rotate(tree, X, targets, sigma2, hyper, grid, rng):
    """Rotate at a uniformly chosen internal non-root node.

    The likelihood part of the ratio is evaluated only over the terminal
    nodes below the rotation node's parent; the rest of the tree is
    untouched by the move and cancels.
    """
    rotatable = [n for n in tree.root if not n.is_leaf and n.parent is not None]
    if not rotatable:
        return _no_candidate(ProposalKind.ROTATE), None
    node = rotatable[int(rng.integers(len(rotatable)))]

    prop = rotation.propose_rotation(tree, node, rng)
    if prop is None:
        return _no_candidate(ProposalKind.ROTATE), None
    candidate = prop.tree

    rows = _path_rows(tree, node.parent, X, grid)
    X_sub, t_sub = X[rows], targets[rows]
    cur_sub = node.parent
    cand_sub = _follow_path(candidate, tree, node.parent)

    logil_cur = _subtree_logil(cur_sub, X_sub, t_sub, sigma2, hyper, grid,
                               min_check=False)
    logil_cand = _subtree_logil(cand_sub, X_sub, t_sub, sigma2, hyper, grid)
    if logil_cand is None:
        return _no_candidate(ProposalKind.ROTATE), None
    delta = logil_cand - logil_cur

    log_prior = (log_tree_prior(candidate, hyper) + log_split_rule_prior(candidate, grid)
                 - log_tree_prior(tree, hyper) - log_split_rule_prior(tree, grid))
    log_ratio = (delta + log_prior
                 + math.log(prop.p_r_inverse) + math.log(prop.p_s1) + math.log(prop.p_s2)
                 - math.log(prop.p_r_forward) - math.log(prop.p_m1) - math.log(prop.p_m2))
    outcome = _mh_accept(ProposalKind.ROTATE, delta, log_ratio, candidate, rng)
    return outcome, candidate if outcome.accepted else None


def _follow_path(candidate: RegressionTree, tree: RegressionTree, node: Node) -> Node:
    """The node in ``candidate`` at the tree-position of ``node`` in ``tree``."""
    path = []
    cur = node
    while cur.parent is not None:
        path.append(cur is cur.parent.left)
        cur = cur.parent
    out = candidate.root
    for from_left in reversed(path):
        out = out.left if from_left else out.right
    return out
