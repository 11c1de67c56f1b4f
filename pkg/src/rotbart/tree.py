"""Binary regression trees over a discrete cutpoint lattice.

Split rules are of the form ``x[var] < cutpoint`` where cutpoints live on a
per-variable grid {0, 1/(n_v-1), ..., 1}.  Nodes store the grid *index* of
their cutpoint so that all structural algebra (cutting, merging, equality)
is exact integer arithmetic; the grid maps indices to values when data is
routed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CutpointGrid",
    "Node",
    "RegressionTree",
    "CutInterval",
    "traverse",
    "evaluate",
    "evaluate_many",
    "leaf_indices",
    "ancestral_cutpoints",
    "left_subtree_cutpoints",
    "right_subtree_cutpoints",
    "valid_cut_interval",
    "partition_counts",
    "clone_subtree",
    "replace_subtree",
    "serialize",
    "structure_key",
    "parse",
    "TreeFormatError",
]


class CutpointGrid:
    """Per-variable cutpoint lattices {j/(n_v-1) : j = 0..n_v-1} on [0, 1]."""

    __slots__ = ("counts", "_values")

    def __init__(self, counts):
        counts = tuple(int(c) for c in counts)
        if not counts:
            raise ValueError("grid needs at least one variable")
        for c in counts:
            if c < 2:
                raise ValueError(f"each variable needs n_v >= 2, got {c}")
        self.counts = counts
        self._values = tuple(np.arange(c) / (c - 1) for c in counts)

    @classmethod
    def uniform(cls, n_vars: int, n_cutpoints: int = 100) -> "CutpointGrid":
        return cls([n_cutpoints] * n_vars)

    @property
    def n_vars(self) -> int:
        return len(self.counts)

    def value(self, var: int, index: int) -> float:
        return float(self._values[var][index])

    def values(self, var: int) -> np.ndarray:
        """All grid values for ``var`` (read-only view)."""
        return self._values[var]

    def __eq__(self, other):
        return isinstance(other, CutpointGrid) and self.counts == other.counts

    def __repr__(self):
        return f"CutpointGrid(counts={self.counts})"


class Node:
    """Tree node: internal nodes carry a split rule, leaves carry mu."""

    __slots__ = ("var", "cut", "mu", "left", "right", "parent")

    def __init__(self, var=None, cut=None, mu=0.0, left=None, right=None):
        if (var is None) != (cut is None):
            raise ValueError("var and cut must be set together")
        if (left is None) != (right is None):
            raise ValueError("a node has either two children or none")
        if var is not None and left is None:
            raise ValueError("internal node needs two children")
        if var is None and left is not None:
            raise ValueError("leaf cannot have children")
        self.var = var
        self.cut = cut
        self.mu = float(mu)
        self.left = left
        self.right = right
        self.parent = None
        if left is not None:
            left.parent = self
            right.parent = self

    @property
    def is_leaf(self) -> bool:
        return self.var is None

    @property
    def rule(self):
        return (self.var, self.cut)

    def clone(self) -> "Node":
        if self.is_leaf:
            return Node(mu=self.mu)
        return Node(self.var, self.cut, left=self.left.clone(), right=self.right.clone())

    def set_left(self, child: "Node"):
        self.left = child
        child.parent = self

    def set_right(self, child: "Node"):
        self.right = child
        child.parent = self

    def __iter__(self):
        """Pre-order iteration over the subtree."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)


class RegressionTree:
    """A binary regression tree; a thin handle around the root node.

    Node identity for reporting uses implicit heap numbering: the root is 1
    and the children of node i are 2i and 2i+1.
    """

    __slots__ = ("root",)

    def __init__(self, root: Node):
        root.parent = None
        self.root = root

    @classmethod
    def single_leaf(cls, mu: float = 0.0) -> "RegressionTree":
        return cls(Node(mu=mu))

    def clone(self) -> "RegressionTree":
        return RegressionTree(self.root.clone())

    def nodes(self):
        return list(self.root)

    def internal_nodes(self):
        return [n for n in self.root if not n.is_leaf]

    def leaves(self):
        return [n for n in self.root if n.is_leaf]

    def n_internal(self) -> int:
        return sum(1 for n in self.root if not n.is_leaf)

    def heap_id(self, node: Node) -> int:
        """Heap index of ``node`` (root = 1, children of i are 2i, 2i+1)."""
        bits = []
        cur = node
        while cur.parent is not None:
            bits.append(0 if cur is cur.parent.left else 1)
            cur = cur.parent
        if cur is not self.root:
            raise ValueError("node does not belong to this tree")
        ident = 1
        for b in reversed(bits):
            ident = 2 * ident + b
        return ident

    def node_by_id(self, ident: int) -> Node:
        if ident < 1:
            raise ValueError("heap ids start at 1")
        path = bin(ident)[3:]  # strip '0b1'
        node = self.root
        for b in path:
            if node.is_leaf:
                raise ValueError(f"no node with heap id {ident}")
            node = node.left if b == "0" else node.right
        return node

    def depth(self, node: Node) -> int:
        d = 0
        while node.parent is not None:
            node = node.parent
            d += 1
        return d

    def max_depth(self) -> int:
        return max(self.depth(leaf) for leaf in self.leaves())

    def __eq__(self, other):
        return isinstance(other, RegressionTree) and serialize(self) == serialize(other)

    def __repr__(self):
        return f"RegressionTree({serialize(self)})"


def traverse(tree: RegressionTree, x, grid: CutpointGrid) -> int:
    """Route point ``x`` to a terminal node and return its heap id."""
    node = tree.root
    ident = 1
    while not node.is_leaf:
        if x[node.var] < grid.value(node.var, node.cut):
            node = node.left
            ident = 2 * ident
        else:
            node = node.right
            ident = 2 * ident + 1
    return ident


def evaluate(tree: RegressionTree, x, grid: CutpointGrid) -> float:
    """The tree's prediction at ``x``: the mu of the leaf that x maps to."""
    node = tree.root
    while not node.is_leaf:
        if x[node.var] < grid.value(node.var, node.cut):
            node = node.left
        else:
            node = node.right
    return node.mu


def _root_of(tree) -> Node:
    return tree.root if isinstance(tree, RegressionTree) else tree


def leaf_indices(tree, X: np.ndarray, grid: CutpointGrid) -> np.ndarray:
    """Leaf ordinal (pre-order position among leaves) for every row of X.

    Accepts a tree or a bare subtree root node.
    """
    root = _root_of(tree)
    n = X.shape[0]
    out = np.zeros(n, dtype=np.int64)
    counter = [0]

    def descend(node, rows):
        if node.is_leaf:
            out[rows] = counter[0]
            counter[0] += 1
            return
        go_left = X[rows, node.var] < grid.value(node.var, node.cut)
        descend(node.left, rows[go_left])
        descend(node.right, rows[~go_left])

    descend(root, np.arange(n))
    return out


def evaluate_many(tree, X: np.ndarray, grid: CutpointGrid) -> np.ndarray:
    root = _root_of(tree)
    mus = np.array([n.mu for n in root if n.is_leaf])
    return mus[leaf_indices(root, X, grid)]


def _ancestry(node: Node):
    """Yield (ancestor, came_from_left) pairs walking from node to the root."""
    cur = node
    while cur.parent is not None:
        yield cur.parent, cur is cur.parent.left
        cur = cur.parent


def _ancestral_cut_indices(node: Node, var: int):
    return {anc.cut for anc, _ in _ancestry(node) if anc.var == var}


def _subtree_cut_indices(root: Node, var: int):
    return {n.cut for n in root if not n.is_leaf and n.var == var}


def ancestral_cutpoints(tree: RegressionTree, node: Node, var: int, grid: CutpointGrid):
    """Cutpoint values on ``var`` among the strict ancestors of ``node``."""
    return {grid.value(var, i) for i in _ancestral_cut_indices(node, var)}


def left_subtree_cutpoints(tree: RegressionTree, node: Node, var: int, grid: CutpointGrid):
    """Cutpoint values on ``var`` within node's left subtree (node excluded)."""
    if node.is_leaf:
        raise ValueError("node must be internal")
    return {grid.value(var, i) for i in _subtree_cut_indices(node.left, var)}


def right_subtree_cutpoints(tree: RegressionTree, node: Node, var: int, grid: CutpointGrid):
    """Cutpoint values on ``var`` within node's right subtree (node excluded)."""
    if node.is_leaf:
        raise ValueError("node must be internal")
    return {grid.value(var, i) for i in _subtree_cut_indices(node.right, var)}


@dataclass(frozen=True)
class CutInterval:
    """Open interval of admissible cutpoints, in grid-index and value form.

    The admissible grid indices are ``lo_index + 1 .. hi_index - 1``; the
    interval is empty when no index lies strictly inside.
    """

    lo_index: int
    hi_index: int
    lower: float
    upper: float

    @property
    def is_empty(self) -> bool:
        return self.hi_index - self.lo_index < 2

    def interior_indices(self) -> range:
        return range(self.lo_index + 1, self.hi_index)

    def contains_index(self, index: int) -> bool:
        return self.lo_index < index < self.hi_index


def valid_cut_interval(tree: RegressionTree, node: Node, var: int, grid: CutpointGrid) -> CutInterval:
    """The open interval of cutpoints for ``var`` at ``node`` that keep every
    terminal node of the tree logically reachable.

    The bound on each side comes from the tightest constraint among (a)
    ancestors splitting on ``var``, taken branch-direction aware (an ancestor
    where the path went right bounds from below, one where it went left
    bounds from above), and (b) the node's own subtrees (left subtree
    cutpoints bound from below, right subtree from above).

    For a terminal node the subtree part is vacuous and the result is the
    interval of rules a birth could place there.
    """
    lo = 0
    hi = grid.counts[var] - 1
    for anc, from_left in _ancestry(node):
        if anc.var != var:
            continue
        if from_left:
            hi = min(hi, anc.cut)
        else:
            lo = max(lo, anc.cut)
    if not node.is_leaf:
        left_cuts = _subtree_cut_indices(node.left, var)
        if left_cuts:
            lo = max(lo, max(left_cuts))
        right_cuts = _subtree_cut_indices(node.right, var)
        if right_cuts:
            hi = min(hi, min(right_cuts))
    if hi < lo:  # only reachable on trees that already violate reachability
        hi = lo
    return CutInterval(lo, hi, grid.value(var, lo), grid.value(var, hi))


def partition_counts(tree: RegressionTree, X: np.ndarray, grid: CutpointGrid) -> dict:
    """Observation count per terminal node, keyed by heap id."""
    leaves = tree.leaves()
    idx = leaf_indices(tree, X, grid)
    counts = np.bincount(idx, minlength=len(leaves))
    return {tree.heap_id(leaf): int(c) for leaf, c in zip(leaves, counts)}


def clone_subtree(tree: RegressionTree, node: Node) -> RegressionTree:
    """Deep copy of the subtree rooted at ``node``, as a standalone tree."""
    return RegressionTree(node.clone())


def replace_subtree(tree: RegressionTree, node: Node, sub: RegressionTree) -> RegressionTree:
    """A new tree equal to ``tree`` with the subtree at ``node`` replaced by
    a copy of ``sub``.  The input trees are left untouched."""
    path = []
    cur = node
    while cur.parent is not None:
        path.append(cur is cur.parent.left)
        cur = cur.parent
    if cur is not tree.root:
        raise ValueError("node does not belong to this tree")
    new_tree = tree.clone()
    target = new_tree.root
    trail = list(reversed(path))
    if not trail:
        return RegressionTree(sub.root.clone())
    for from_left in trail[:-1]:
        target = target.left if from_left else target.right
    replacement = sub.root.clone()
    if trail[-1]:
        target.set_left(replacement)
    else:
        target.set_right(replacement)
    return new_tree


class TreeFormatError(ValueError):
    """Raised when a serialized tree cannot be parsed."""


def _serialize_node(node: Node, with_mu: bool) -> str:
    if node.is_leaf:
        return f"[{node.mu!r}]" if with_mu else "[]"
    return (f"({node.var}:{node.cut}:"
            f"{_serialize_node(node.left, with_mu)}"
            f"{_serialize_node(node.right, with_mu)})")


def serialize(tree) -> str:
    """Canonical pre-order text form; cutpoints printed as grid indices."""
    return _serialize_node(_root_of(tree), with_mu=True)


def structure_key(tree) -> str:
    """Canonical form with leaf parameters stripped (rules only)."""
    return _serialize_node(_root_of(tree), with_mu=False)


def _parse_node(text: str, pos: int):
    if pos >= len(text):
        raise TreeFormatError(f"unexpected end of input at position {pos}")
    ch = text[pos]
    if ch == "[":
        end = text.find("]", pos)
        if end < 0:
            raise TreeFormatError(f"unterminated leaf at position {pos}")
        body = text[pos + 1:end]
        if body:
            try:
                mu = float(body)
            except ValueError:
                raise TreeFormatError(f"bad leaf value {body!r} at position {pos}") from None
        else:
            mu = 0.0
        return Node(mu=mu), end + 1
    if ch == "(":
        sep1 = text.find(":", pos)
        sep2 = text.find(":", sep1 + 1) if sep1 >= 0 else -1
        if sep1 < 0 or sep2 < 0:
            raise TreeFormatError(f"malformed internal node at position {pos}")
        try:
            var = int(text[pos + 1:sep1])
            cut = int(text[sep1 + 1:sep2])
        except ValueError:
            raise TreeFormatError(f"bad rule at position {pos}") from None
        if var < 0 or cut < 0:
            raise TreeFormatError(f"negative rule fields at position {pos}")
        left, nxt = _parse_node(text, sep2 + 1)
        right, nxt = _parse_node(text, nxt)
        if nxt >= len(text) or text[nxt] != ")":
            raise TreeFormatError(f"missing ')' at position {nxt}")
        return Node(var, cut, left=left, right=right), nxt + 1
    raise TreeFormatError(f"unexpected character {ch!r} at position {pos}")


def parse(text: str) -> RegressionTree:
    """Parse the canonical serialization back into a tree."""
    node, pos = _parse_node(text.strip(), 0)
    if pos != len(text.strip()):
        raise TreeFormatError(f"trailing input at position {pos}")
    return RegressionTree(node)
