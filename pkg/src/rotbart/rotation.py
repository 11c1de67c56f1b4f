"""Tree rotation: setup, cutting, merge enumeration and proposal assembly.

A rotation at an internal non-root node swaps rules with its parent,
duplicates the sibling subtree on both sides of the swapped rule, cuts each
copy so that it is consistent with the constraint now above it, and then
optionally re-merges child pairs.  Cutting is deterministic; merging picks
one reconstruction at random among all trees whose cuts reproduce the pair,
and the number of reconstructions enters the proposal probability.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import Node, RegressionTree, structure_key

__all__ = [
    "RotationProposal",
    "rotate_setup_right",
    "rotate_setup_left",
    "rotate_with_cuts",
    "cut_left",
    "cut_right",
    "enumerate_merges",
    "merge_random",
    "propose_rotation",
]


def cut_left(node: Node, var: int, cut: int) -> Node:
    """Impose ``x[var] < value(cut)`` on an owned subtree.

    Any node splitting on ``var`` with cutpoint index >= ``cut`` is deleted
    and replaced by its left child.  Returns the (possibly new) subtree root;
    the input nodes are reused, so the caller must own them.
    """
    while not node.is_leaf and node.var == var and node.cut >= cut:
        node = node.left
    if not node.is_leaf:
        node.set_left(cut_left(node.left, var, cut))
        node.set_right(cut_left(node.right, var, cut))
    return node


def cut_right(node: Node, var: int, cut: int) -> Node:
    """Impose ``x[var] >= value(cut)``: deletes splits on ``var`` with
    cutpoint index <= ``cut``, promoting the right child."""
    while not node.is_leaf and node.var == var and node.cut <= cut:
        node = node.right
    if not node.is_leaf:
        node.set_left(cut_right(node.left, var, cut))
        node.set_right(cut_right(node.right, var, cut))
    return node


def _locate(tree: RegressionTree, node: Node):
    """Path (as left/right booleans, root first) of ``node`` within ``tree``."""
    path = []
    cur = node
    while cur.parent is not None:
        path.append(cur is cur.parent.left)
        cur = cur.parent
    if cur is not tree.root:
        raise ValueError("node does not belong to this tree")
    return list(reversed(path))


def _follow(root: Node, path):
    node = root
    for from_left in path:
        node = node.left if from_left else node.right
    return node


def _setup(tree: RegressionTree, node: Node, right_rotation: bool) -> tuple:
    """Clone the tree and perform the rotation re-arrangement at ``node``.

    Returns (new_tree, rotation_node, new_node).  No cutting is done.
    """
    if node.is_leaf:
        raise ValueError("cannot rotate at a terminal node")
    if node.parent is None:
        raise ValueError("cannot rotate at the root")
    if right_rotation and node is not node.parent.left:
        raise ValueError("right rotation requires a left child")
    if not right_rotation and node is not node.parent.right:
        raise ValueError("left rotation requires a right child")

    path = _locate(tree, node)
    work = tree.clone()
    wnode = _follow(work.root, path)
    parent = wnode.parent

    v_node, c_node = wnode.var, wnode.cut
    parent_rule = (parent.var, parent.cut)
    # swap rules between the rotation node and its parent
    wnode.var, wnode.cut = parent_rule
    parent.var, parent.cut = v_node, c_node

    if right_rotation:
        sibling = parent.right  # the subtree that gets duplicated
        new_node = Node(parent_rule[0], parent_rule[1],
                        left=wnode.right, right=sibling.clone())
        parent.set_right(new_node)
        wnode.set_right(sibling)
    else:
        sibling = parent.left
        new_node = Node(parent_rule[0], parent_rule[1],
                        left=sibling.clone(), right=wnode.left)
        parent.set_left(new_node)
        wnode.set_left(sibling)
    return work, wnode, new_node


def rotate_setup_right(tree: RegressionTree, node: Node) -> RegressionTree:
    """Initial re-arrangement of a right rotation (no cuts, no merges)."""
    work, _, _ = _setup(tree, node, right_rotation=True)
    return work


def rotate_setup_left(tree: RegressionTree, node: Node) -> RegressionTree:
    """Mirror of :func:`rotate_setup_right` for a right child."""
    work, _, _ = _setup(tree, node, right_rotation=False)
    return work


def _setup_and_cut(tree: RegressionTree, node: Node):
    """Rotation setup followed by both cuts; returns the working context.

    The two duplicated subtrees are cut along the rule that, post swap, sits
    at the rotation node's parent (the node's original rule): left-wise on
    the copy that now lives on the ``< cut`` side, right-wise on the other.
    """
    right_rotation = node is node.parent.left
    work, wnode, new_node = _setup(tree, node, right_rotation)
    parent = wnode.parent
    v, c = parent.var, parent.cut  # the node's original rule, post swap
    if right_rotation:
        wnode.set_right(cut_left(wnode.right, v, c))
        new_node.set_right(cut_right(new_node.right, v, c))
        half_pair = (wnode.right, new_node.right)
        kept_pair = (wnode.left, new_node.left)
    else:
        new_node.set_left(cut_left(new_node.left, v, c))
        wnode.set_left(cut_right(wnode.left, v, c))
        half_pair = (new_node.left, wnode.left)
        kept_pair = (new_node.right, wnode.right)
    return work, wnode, new_node, half_pair, kept_pair, right_rotation


def rotate_with_cuts(tree: RegressionTree, node: Node) -> RegressionTree:
    """The deterministic part of a rotation: setup plus both cuts.

    With leaf parameters carried through the duplication and the cuts, the
    returned tree predicts identically to the input tree at every point.
    """
    work, _, _, _, _, _ = _setup_and_cut(tree, node)
    return work


def _preimage(left: Node, right: Node, var: int, cut: int) -> list:
    """All internally-rooted trees whose left/right cuts along (var, cut)
    reproduce ``left`` and ``right``.  The trivial reconstruction (a new
    (var, cut) split over the two pieces) comes first."""
    out = []
    seen = set()

    def add(node):
        key = _node_key(node)
        if key not in seen:
            seen.add(key)
            out.append(node)

    add(Node(var, cut, left=left.clone(), right=right.clone()))
    if (not left.is_leaf and not right.is_leaf
            and left.rule == right.rule and left.var != var):
        for a in _preimage_or_leaf(left.left, right.left, var, cut):
            for b in _preimage_or_leaf(left.right, right.right, var, cut):
                add(Node(left.var, left.cut, left=a.clone(), right=b.clone()))
    if not right.is_leaf and right.var == var:
        for a in _preimage_or_leaf(left, right.left, var, cut):
            add(Node(var, right.cut, left=a.clone(), right=right.right.clone()))
    if not left.is_leaf and left.var == var:
        for b in _preimage_or_leaf(left.right, right, var, cut):
            add(Node(var, left.cut, left=left.left.clone(), right=b.clone()))
    return out


def _preimage_or_leaf(left: Node, right: Node, var: int, cut: int) -> list:
    """Inner recursion: like :func:`_preimage` but a bare leaf is also a
    valid reconstruction when both pieces are leaves (cutting a leaf is the
    identity)."""
    out = _preimage(left, right, var, cut)
    if left.is_leaf and right.is_leaf:
        out.append(Node(mu=left.mu))
    return out


def _node_key(node: Node) -> str:
    if node.is_leaf:
        return "[]"
    return f"({node.var}:{node.cut}:{_node_key(node.left)}{_node_key(node.right)})"


def enumerate_merges(left, right, var: int, cut: int):
    """All merge reconstructions of ``(left, right)`` along (var, cut).

    Parameters are subtree roots (``Node``) or ``RegressionTree``s that must
    be fixpoints of the corresponding cut.  Returns ``(trees, n)`` where the
    list always starts with the trivial merge and ``n`` counts the
    non-trivial members.
    """
    lroot = left.root if isinstance(left, RegressionTree) else left
    rroot = right.root if isinstance(right, RegressionTree) else right
    members = _preimage(lroot, rroot, var, cut)
    return [RegressionTree(m) for m in members], len(members) - 1


def merge_random(left, right, var: int, cut: int, rng: np.random.Generator):
    """Draw one non-trivial merge uniformly; ``(None, 0)`` if none exists."""
    trees, n = enumerate_merges(left, right, var, cut)
    if n == 0:
        return None, 0
    pick = int(rng.integers(n))
    return trees[1 + pick], n


@dataclass
class RotationProposal:
    """A rotated candidate tree plus the bookkeeping terms of its MH ratio.

    ``p_m1``/``p_m2`` are the probabilities of the forward merge decisions
    actually taken; ``p_s1``/``p_s2`` the probabilities that the inverse
    rotation re-merges the split pieces back into the current tree.
    ``two_ways`` flags candidates that can be un-rotated from two nodes.
    """

    tree: RegressionTree
    p_r_forward: float
    p_r_inverse: float
    p_m1: float
    p_m2: float
    p_s1: float
    p_s2: float
    two_ways: bool


def _inverse_merge_prob(a: Node, b: Node, var: int, cut: int) -> float:
    """Probability that the inverse rotation's merge step at pair (a, b)
    reproduces the current arrangement."""
    if a.is_leaf and b.is_leaf:
        return 0.5
    _, n = enumerate_merges(a, b, var, cut)
    if n >= 1:
        return 1.0 / (n + 1)
    return 1.0


def _forward_merge(side_node: Node, rng: np.random.Generator):
    """Attempt the forward merge of ``side_node``'s children along its own
    rule.  Returns (replacement or None, p_m, nontrivial) where
    ``replacement`` is the merged subtree when one was chosen."""
    a, b = side_node.left, side_node.right
    if a.is_leaf and b.is_leaf:
        u = rng.uniform()
        if u > 0.5:
            return Node(mu=a.mu), 0.5, True
        return None, 0.5, False
    trees, n = enumerate_merges(a, b, side_node.var, side_node.cut)
    if n == 0:
        return None, 1.0, False
    p_m = 1.0 / (n + 1)
    u = rng.uniform()
    if u > p_m:
        pick = int(rng.integers(n))
        return trees[1 + pick].root, p_m, True
    return None, p_m, False


def propose_rotation(tree: RegressionTree, node: Node, rng: np.random.Generator):
    """Build a full rotation proposal at ``node``; ``None`` when rejected.

    Follows the generating procedure for a right rotation (mirrored for a
    right child): setup, both cuts, inverse-merge counting, forward merge
    attempts on the new-node side then the rotation-node side, and the
    final admissibility and two-ways checks.  A proposal where both forward
    merges are non-trivial removes the rule needed to invert the rotation
    and is returned as a rejection (None).
    """
    if node.is_leaf or node.parent is None:
        return None
    rot_rule = node.rule
    sibling = node.parent.right if node is node.parent.left else node.parent.left
    forward_twin = (not sibling.is_leaf) and sibling.rule == rot_rule
    n_int_current = tree.n_internal()

    work, wnode, new_node, half_pair, kept_pair, _ = _setup_and_cut(tree, node)
    parent = wnode.parent
    v_i, c_i = parent.var, parent.cut  # rule the copies were cut along

    # inverse counts: could the backward rotation re-merge the pieces?
    p_s1 = _inverse_merge_prob(half_pair[0], half_pair[1], v_i, c_i)
    p_s2 = _inverse_merge_prob(kept_pair[0], kept_pair[1], v_i, c_i)

    # forward merges: new-node side first, then the rotation node's side
    nontrivial = []
    for side in (new_node, wnode):
        replacement, p_m, was_nontrivial = _forward_merge(side, rng)
        nontrivial.append(was_nontrivial)
        if replacement is not None:
            if side is parent.left:
                parent.set_left(replacement)
            else:
                parent.set_right(replacement)
        if side is new_node:
            p_m1 = p_m
        else:
            p_m2 = p_m
    if nontrivial[0] and nontrivial[1]:
        return None  # the rule needed to invert the rotation is gone

    lchild, rchild = parent.left, parent.right
    two_ways = (not lchild.is_leaf and not rchild.is_leaf
                and lchild.rule == rchild.rule)

    n_int_candidate = work.n_internal()
    p_r_forward = (2.0 if forward_twin else 1.0) / (n_int_current - 1)
    p_r_inverse = (2.0 if two_ways else 1.0) / (n_int_candidate - 1)
    return RotationProposal(work, p_r_forward, p_r_inverse,
                            p_m1, p_m2, p_s1, p_s2, two_ways)
