"""Sum-of-trees regression with rotation-augmented MCMC sampling."""

from .datasets import Dataset, ScaledData, gen_friedman, gen_wu_synthetic, \
    load_csv, scale_dataset, write_csv
from .diagnostics import acceptance_rate, delta_logil_trace, \
    empirical_coverage, predictive_interval, tree_census
from .model import Hyperparams, LeafConstraintError, SumOfTreesState, \
    draw_leaf_mus, draw_sigma2, log_integrated_likelihood, log_tree_prior, \
    residual_targets
from .proposals import CorrelationPreconditioner, ProposalKind, \
    ProposalOutcome, build_preconditioner
from .rotation import RotationProposal, cut_left, cut_right, \
    enumerate_merges, merge_random, propose_rotation, rotate_setup_left, \
    rotate_setup_right, rotate_with_cuts
from .sampler import ChainResult, RunConfig, run_chain, run_replicated
from .tree import CutInterval, CutpointGrid, Node, RegressionTree, \
    TreeFormatError, ancestral_cutpoints, clone_subtree, evaluate, \
    evaluate_many, left_subtree_cutpoints, parse, partition_counts, \
    replace_subtree, right_subtree_cutpoints, serialize, structure_key, \
    traverse, valid_cut_interval

__version__ = "0.1.0"
