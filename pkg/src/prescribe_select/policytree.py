"""Policy trees: axis-aligned trees over covariates whose leaves name a
candidate-policy index, trained to minimize total assigned cost on a cost
table plus a per-split complexity penalty.

Training is greedy top-down construction followed by randomized local-search
passes (split replacement, subtree collapse, leaf reassignment) that only
ever accept improving moves.  Randomness drives the visit order and the
tie-break among equal-cost moves, so repetitions with distinct seeds can
land in different local optima while each run stays deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TreeHyperparams:
    max_depth: int = 3
    min_leaf: int = 10
    complexity_penalty: float = 0.0  # cost units per split

    def __post_init__(self):
        if self.max_depth < 0 or self.min_leaf < 1 or self.complexity_penalty < 0:
            raise ValueError("invalid tree hyperparameters")


@dataclass
class PolicyTree:
    """Fitted tree in flat-array form; node 0 is the root.

    ``feature[v] == -1`` marks a leaf with policy ``leaf_policy[v]``.
    Routing sends x left iff x[feature] < threshold.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_policy: np.ndarray
    n_policies: int
    seed: int = 0
    objective_value: float = float("nan")

    @property
    def n_splits(self) -> int:
        return int((self.feature >= 0).sum())

    def select_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        nodes = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[nodes]
            active = feat >= 0
            if not active.any():
                return self.leaf_policy[nodes]
            r = rows[active]
            goleft = X[r, feat[active]] < self.threshold[nodes[active]]
            nodes[active] = np.where(goleft, self.left[nodes[active]], self.right[nodes[active]])

    def select(self, x) -> int:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] <= int(self.feature.max(initial=-1)):
            raise ValueError("covariate vector does not match the tree's feature dimension")
        return int(self.select_many(x[None, :])[0])


class _Node:
    __slots__ = ("idx", "depth", "feature", "threshold", "left", "right", "policy", "alive")

    def __init__(self, idx, depth):
        self.idx = idx
        self.depth = depth
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.policy = 0
        self.alive = True

    @property
    def is_leaf(self):
        return self.left is None


def _leaf_cost(C, idx):
    sums = C[idx].sum(axis=0)
    m = int(np.argmin(sums))  # lowest index on ties
    return float(sums[m]), m


def _choose_tied(cands, rng):
    """Pick among exactly-tied candidates; consume randomness only on real ties."""
    if len(cands) == 1:
        return cands[0]
    return cands[int(rng.integers(len(cands)))]


def _best_split(X, C, idx, min_leaf, rng):
    """Best (feature, threshold) one-step split of the rows in idx.

    Children are scored as leaves (min single-policy cost); exact cost ties
    across candidate splits are broken by the seeded generator.  Returns
    (children_cost, feature, threshold) or None.
    """
    best_cost = np.inf
    ties = []
    for f in range(X.shape[1]):
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        pref = np.cumsum(C[idx[order]], axis=0)
        total = pref[-1]
        n = len(idx)
        pos = np.arange(n - 1)
        valid = (xs_sorted[:-1] < xs_sorted[1:]) & (pos + 1 >= min_leaf) & (n - pos - 1 >= min_leaf)
        if not valid.any():
            continue
        left_best = pref[:-1].min(axis=1)
        right_best = (total[None, :] - pref[:-1]).min(axis=1)
        cost = np.where(valid, left_best + right_best, np.inf)
        fbest = cost.min()
        if fbest < best_cost:
            best_cost = fbest
            ties = [(f, p) for p in np.nonzero(cost == fbest)[0]]
        elif fbest == best_cost and np.isfinite(fbest):
            ties.extend((f, p) for p in np.nonzero(cost == fbest)[0])
    if not np.isfinite(best_cost):
        return None
    f, p = _choose_tied(ties, rng)
    xs = np.sort(X[idx, f], kind="stable")
    thr = 0.5 * (xs[p] + xs[p + 1])
    return float(best_cost), f, thr


def _gain_tol(cost: float) -> float:
    """Improvements below this are floating-point noise, not structure."""
    return 1e-9 * (1.0 + abs(cost))


def _grow(X, C, idx, depth, hp, rng):
    """Greedy top-down construction; splits only on cost reduction > penalty."""
    node = _Node(idx, depth)
    cost, policy = _leaf_cost(C, idx)
    node.policy = policy
    if depth >= hp.max_depth or len(idx) < 2 * hp.min_leaf:
        return node
    found = _best_split(X, C, idx, hp.min_leaf, rng)
    if found is None:
        return node
    child_cost, f, thr = found
    if cost - child_cost <= hp.complexity_penalty + _gain_tol(cost):
        return node
    node.feature = f
    node.threshold = thr
    go_left = X[idx, f] < thr
    node.left = _grow(X, C, idx[go_left], depth + 1, hp, rng)
    node.right = _grow(X, C, idx[~go_left], depth + 1, hp, rng)
    return node


def _collect(node, out):
    out.append(node)
    if not node.is_leaf:
        _collect(node.left, out)
        _collect(node.right, out)
    return out


def _subtree_cost(node, C, lam):
    """Regularized cost of a subtree: leaf costs plus penalty per split."""
    if node.is_leaf:
        return float(C[node.idx, node.policy].sum())
    return lam + _subtree_cost(node.left, C, lam) + _subtree_cost(node.right, C, lam)


def _kill(node):
    node.alive = False
    if not node.is_leaf:
        _kill(node.left)
        _kill(node.right)


def _local_search(root, X, C, hp, rng):
    """Random-order improvement passes until no move helps.

    Moves: collapse a subtree to its best leaf, rebuild a node's split (and
    subtree) greedily, and reassign a leaf's policy.  Only strictly
    improving moves are accepted, so the regularized objective decreases
    monotonically.
    """
    lam = hp.complexity_penalty
    while True:
        improved = False
        nodes = _collect(root, [])
        for i in rng.permutation(len(nodes)):
            node = nodes[i]
            if not node.alive:
                continue
            current = _subtree_cost(node, C, lam)
            leaf_cost, leaf_policy = _leaf_cost(C, node.idx)
            if not node.is_leaf and leaf_cost < current - _gain_tol(current):
                # collapse to a leaf
                _kill(node.left)
                _kill(node.right)
                node.left = node.right = None
                node.feature = -1
                node.policy = leaf_policy
                improved = True
                continue
            if node.is_leaf and node.policy != leaf_policy:
                node.policy = leaf_policy
                improved = True
            # split replacement: rebuild this subtree greedily from scratch
            rebuilt = _grow(X, C, node.idx, node.depth, hp, rng)
            if _subtree_cost(rebuilt, C, lam) < min(current, leaf_cost) - _gain_tol(current):
                if not node.is_leaf:
                    _kill(node.left)
                    _kill(node.right)
                node.feature = rebuilt.feature
                node.threshold = rebuilt.threshold
                node.left = rebuilt.left
                node.right = rebuilt.right
                node.policy = rebuilt.policy
                improved = True
        if not improved:
            return


def fit_tree(X, C, hp: TreeHyperparams | None = None, seed: int = 0) -> PolicyTree:
    """Fit a policy tree minimizing sum_i C[i, T(x_i)] + penalty * splits.

    Deterministic given (X, C, hyperparameters, seed).
    """
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    hp = hp or TreeHyperparams()
    if X.ndim != 2 or C.ndim != 2 or len(X) != len(C):
        raise ValueError("X and C must be 2-d with matching row counts")
    if len(X) < hp.min_leaf:
        raise ValueError("fewer rows than min_leaf")
    rng = np.random.default_rng(seed)
    root = _grow(X, C, np.arange(len(X)), 0, hp, rng)
    _local_search(root, X, C, hp, rng)

    feature, threshold, left, right, leaf_policy = [], [], [], [], []

    def freeze(node):
        vid = len(feature)
        feature.append(node.feature)
        threshold.append(node.threshold if node.feature >= 0 else np.nan)
        left.append(-1)
        right.append(-1)
        leaf_policy.append(node.policy if node.is_leaf else -1)
        if not node.is_leaf:
            left[vid] = freeze(node.left)
            right[vid] = freeze(node.right)
        return vid

    freeze(root)
    tree = PolicyTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        leaf_policy=np.array(leaf_policy, dtype=np.int64),
        n_policies=C.shape[1],
        seed=seed,
    )
    assigned = tree.select_many(X)
    tree.objective_value = float(C[np.arange(len(X)), assigned].sum()) + hp.complexity_penalty * tree.n_splits
    return tree


def tree_select(tree: PolicyTree, x) -> int:
    return tree.select(x)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def tree_to_text(tree: PolicyTree) -> str:
    """Line-oriented format: header comments, then one node per line.

    ``node <id> split <feature> <threshold> <left> <right>`` or
    ``node <id> leaf <policy_index>``.  All ids and indices are 0-based.
    """
    lines = [
        "# policy-tree v1 (0-based node ids and policy indices)",
        f"# seed {tree.seed} objective {tree.objective_value!r} policies {tree.n_policies}",
    ]
    for v in range(len(tree.feature)):
        if tree.feature[v] >= 0:
            lines.append(
                f"node {v} split {tree.feature[v]} {float(tree.threshold[v])!r} "
                f"{tree.left[v]} {tree.right[v]}"
            )
        else:
            lines.append(f"node {v} leaf {tree.leaf_policy[v]}")
    return "\n".join(lines) + "\n"


def tree_from_text(text: str) -> PolicyTree:
    feature, threshold, left, right, leaf_policy = {}, {}, {}, {}, {}
    seed, objective, n_policies = 0, float("nan"), 0
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "seed":
                seed = int(parts[1])
                objective = float(parts[3])
                n_policies = int(parts[5])
            continue
        parts = line.split()
        vid = int(parts[1])
        if parts[2] == "split":
            feature[vid] = int(parts[3])
            threshold[vid] = float(parts[4])
            left[vid] = int(parts[5])
            right[vid] = int(parts[6])
            leaf_policy[vid] = -1
        else:
            feature[vid] = -1
            threshold[vid] = np.nan
            left[vid] = right[vid] = -1
            leaf_policy[vid] = int(parts[3])
    n = len(feature)
    return PolicyTree(
        feature=np.array([feature[v] for v in range(n)], dtype=np.int64),
        threshold=np.array([threshold[v] for v in range(n)]),
        left=np.array([left[v] for v in range(n)], dtype=np.int64),
        right=np.array([right[v] for v in range(n)], dtype=np.int64),
        leaf_policy=np.array([leaf_policy[v] for v in range(n)], dtype=np.int64),
        n_policies=n_policies,
        seed=seed,
        objective_value=objective,
    )


def tree_to_dot(tree: PolicyTree, policy_names, feature_names=None) -> str:
    """DOT digraph: internal nodes ``feature < threshold``, leaves policy names."""
    lines = ["digraph policy_tree {", "  node [shape=box];"]
    for v in range(len(tree.feature)):
        if tree.feature[v] >= 0:
            fname = (
                feature_names[tree.feature[v]] if feature_names is not None else f"x{tree.feature[v]}"
            )
            lines.append(f'  n{v} [label="{fname} < {tree.threshold[v]:g}"];')
            lines.append(f"  n{v} -> n{tree.left[v]} [label=\"yes\"];")
            lines.append(f"  n{v} -> n{tree.right[v]} [label=\"no\"];")
        else:
            lines.append(f'  n{v} [label="{policy_names[tree.leaf_policy[v]]}", shape=ellipse];')
    lines.append("}")
    return "\n".join(lines) + "\n"
