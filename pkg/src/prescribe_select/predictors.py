"""From-scratch kNN and random-forest predictors.

Both models serve two roles: point prediction (conditional-mean estimates)
and scenario weighting (a normalized weight per training row, approximating
the conditional outcome distribution at a query point).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import derive_seed


@dataclass
class WeightVector:
    """Sparse nonnegative weights over training indices, summing to one."""

    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.indices) == 0:
            raise ValueError("weight support must be nonempty")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        total = self.weights.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total!r}")

    @property
    def support(self) -> np.ndarray:
        return self.indices

    def to_dense(self, n: int) -> np.ndarray:
        dense = np.zeros(n)
        dense[self.indices] = self.weights
        return dense


# ---------------------------------------------------------------------------
# k-nearest neighbors
# ---------------------------------------------------------------------------

@dataclass
class KnnModel:
    """Training rows standardized per feature, plus outcome references."""

    X_std: np.ndarray
    Y: np.ndarray
    k: int
    mean: np.ndarray
    scale: np.ndarray

    @property
    def n_train(self) -> int:
        return len(self.X_std)


def knn_fit(X, Y, k: int) -> KnnModel:
    """Standardize features on the training rows and store outcomes.

    Constant features get scale 1 so they contribute nothing to distances.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if k < 1 or k > len(X):
        raise ValueError(f"k must be in [1, {len(X)}], got {k}")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    return KnnModel(X_std=(X - mean) / scale, Y=Y, k=k, mean=mean, scale=scale)


def knn_neighbors(model: KnnModel, x) -> np.ndarray:
    """Indices of the k nearest training rows under standardized Euclidean
    distance; ties at the k-th distance resolve to the lowest index."""
    xs = (np.asarray(x, dtype=float) - model.mean) / model.scale
    d2 = ((model.X_std - xs) ** 2).sum(axis=1)
    order = np.argsort(d2, kind="stable")
    return order[: model.k]


def knn_weights(model: KnnModel, x) -> WeightVector:
    nbrs = np.sort(knn_neighbors(model, x))
    return WeightVector(indices=nbrs, weights=np.full(model.k, 1.0 / model.k))


def knn_point_predict(model: KnnModel, x) -> np.ndarray:
    nbrs = knn_neighbors(model, x)
    return model.Y[nbrs].mean(axis=0)


# ---------------------------------------------------------------------------
# Random forest (CART regression trees on bootstrap samples)
# ---------------------------------------------------------------------------

@dataclass
class RfParams:
    n_trees: int = 5
    min_leaf: int = 5
    max_depth: int | None = None
    features_per_split: int | None = None  # default: ceil(d_x / 3)


@dataclass
class RegressionTree:
    """Axis-aligned tree stored as flat arrays; node 0 is the root.

    ``leaf_members[v]`` holds the unique training-row indices whose bootstrap
    occurrences fell in leaf v; leaf means are computed over that index set so
    predictions and scenario weights stay mutually consistent.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_members: list
    leaf_mean: list

    def route_many(self, X: np.ndarray) -> np.ndarray:
        nodes = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[nodes]
            active = feat >= 0
            if not active.any():
                return nodes
            r = rows[active]
            f = feat[active]
            goleft = X[r, f] < self.threshold[nodes[active]]
            nodes[active] = np.where(goleft, self.left[nodes[active]], self.right[nodes[active]])

    def route(self, x) -> int:
        return int(self.route_many(np.asarray(x, dtype=float)[None, :])[0])


@dataclass
class ForestModel:
    trees: list
    n_train: int
    d_y: int
    params: RfParams


def _best_split(xcol, ys, ys2, min_leaf):
    """Best split position on one feature by summed child SSE.

    Returns (sse, threshold) or None when no valid position exists.
    xcol must be sorted ascending, ys/ys2 sorted accordingly.
    """
    n = len(xcol)
    csum = np.cumsum(ys, axis=0)
    csum2 = np.cumsum(ys2, axis=0)
    tot = csum[-1]
    tot2 = csum2[-1]
    p = np.arange(n - 1)
    nl = p + 1.0
    nr = n - nl
    valid = (xcol[:-1] < xcol[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    sse_l = (csum2[:-1] - csum[:-1] ** 2 / nl[:, None]).sum(axis=1)
    sse_r = ((tot2 - csum2[:-1]) - (tot - csum[:-1]) ** 2 / nr[:, None]).sum(axis=1)
    total = np.where(valid, sse_l + sse_r, np.inf)
    best = int(np.argmin(total))
    if not np.isfinite(total[best]):
        return None
    thr = 0.5 * (xcol[best] + xcol[best + 1])
    return float(total[best]), thr


def _grow_tree(X, Y, boot, params, rng):
    Xb = X[boot]
    Yb = Y[boot]
    d_x = X.shape[1]
    mtry = params.features_per_split or int(np.ceil(d_x / 3))
    mtry = min(mtry, d_x)

    feature, threshold, left, right = [], [], [], []
    leaf_members, leaf_mean = [], []

    def new_node():
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        leaf_members.append(None)
        leaf_mean.append(None)
        return len(feature) - 1

    def make_leaf(node, pos):
        members = np.unique(boot[pos])
        leaf_members[node] = members
        leaf_mean[node] = Y[members].mean(axis=0)

    root = new_node()
    stack = [(root, np.arange(len(boot)), 0)]
    while stack:
        node, pos, depth = stack.pop()
        n = len(pos)
        ys = Yb[pos]
        if (params.max_depth is not None and depth >= params.max_depth) or n < 2 * params.min_leaf:
            make_leaf(node, pos)
            continue
        mu = ys.mean(axis=0)
        parent_sse = float(((ys - mu) ** 2).sum())
        feats = np.sort(rng.choice(d_x, size=mtry, replace=False))
        ys2 = ys**2
        best = None
        for f in feats:
            order = np.argsort(Xb[pos, f], kind="stable")
            found = _best_split(Xb[pos[order], f], ys[order], ys2[order], params.min_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], int(f), found[1])
        if best is None or best[0] >= parent_sse - 1e-10 * (1.0 + abs(parent_sse)):
            make_leaf(node, pos)
            continue
        _, f, thr = best
        go_left = Xb[pos, f] < thr
        lnode, rnode = new_node(), new_node()
        feature[node] = f
        threshold[node] = thr
        left[node] = lnode
        right[node] = rnode
        # push right first so the left child is grown first (deterministic
        # rng consumption order)
        stack.append((rnode, pos[~go_left], depth + 1))
        stack.append((lnode, pos[go_left], depth + 1))

    return RegressionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        leaf_members=leaf_members,
        leaf_mean=leaf_mean,
    )


def rf_fit(X, Y, params: RfParams, seed: int, bootstrap_indices=None) -> ForestModel:
    """Grow ``params.n_trees`` CART regression trees on bootstrap samples.

    Deterministic given seed.  ``bootstrap_indices`` overrides the bootstrap
    draws (one index array per tree); tests use it to pin resampling.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = len(X)
    if n < 1:
        raise ValueError("training set is empty")
    trees = []
    for b in range(params.n_trees):
        rng = np.random.default_rng(derive_seed(seed, "rf-tree", b))
        if bootstrap_indices is not None:
            boot = np.asarray(bootstrap_indices[b], dtype=np.int64)
        else:
            boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X, Y, boot, params, rng))
    return ForestModel(trees=trees, n_train=n, d_y=Y.shape[1], params=params)


def rf_point_predict(model: ForestModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    acc = np.zeros(model.d_y)
    for tree in model.trees:
        acc += tree.leaf_mean[tree.route(x)]
    return acc / len(model.trees)


def rf_weights(model: ForestModel, x) -> WeightVector:
    """w_i = (1/B) * sum_b 1[i in leaf_b(x)] / |leaf_b(x)|."""
    x = np.asarray(x, dtype=float)
    dense = np.zeros(model.n_train)
    B = len(model.trees)
    for tree in model.trees:
        members = tree.leaf_members[tree.route(x)]
        dense[members] += 1.0 / (B * len(members))
    idx = np.nonzero(dense)[0]
    return WeightVector(indices=idx, weights=dense[idx])


# ---------------------------------------------------------------------------
# Flat-array state (for pickling to workers and on-disk ensembles)
# ---------------------------------------------------------------------------

def forest_to_state(model: ForestModel) -> dict:
    state = {
        "n_trees": len(model.trees),
        "n_train": model.n_train,
        "d_y": model.d_y,
        "min_leaf": model.params.min_leaf,
    }
    for b, tree in enumerate(model.trees):
        n_nodes = len(tree.feature)
        members = [tree.leaf_members[v] if tree.leaf_members[v] is not None else np.zeros(0, np.int64)
                   for v in range(n_nodes)]
        means = [tree.leaf_mean[v] if tree.leaf_mean[v] is not None else np.full(model.d_y, np.nan)
                 for v in range(n_nodes)]
        state[f"t{b}_feature"] = tree.feature
        state[f"t{b}_threshold"] = tree.threshold
        state[f"t{b}_left"] = tree.left
        state[f"t{b}_right"] = tree.right
        state[f"t{b}_member_len"] = np.array([len(m) for m in members], dtype=np.int64)
        state[f"t{b}_members"] = np.concatenate(members) if members else np.zeros(0, np.int64)
        state[f"t{b}_leaf_mean"] = np.vstack(means)
    return state


def forest_from_state(state: dict) -> ForestModel:
    trees = []
    d_y = int(state["d_y"])
    for b in range(int(state["n_trees"])):
        lens = state[f"t{b}_member_len"]
        flat = state[f"t{b}_members"]
        offsets = np.concatenate([[0], np.cumsum(lens)])
        members, means = [], []
        mean_arr = state[f"t{b}_leaf_mean"]
        feature = state[f"t{b}_feature"]
        for v in range(len(lens)):
            if feature[v] >= 0:
                members.append(None)
                means.append(None)
            else:
                members.append(flat[offsets[v] : offsets[v + 1]])
                means.append(mean_arr[v])
        trees.append(
            RegressionTree(
                feature=feature,
                threshold=state[f"t{b}_threshold"],
                left=state[f"t{b}_left"],
                right=state[f"t{b}_right"],
                leaf_members=members,
                leaf_mean=means,
            )
        )
    params = RfParams(n_trees=int(state["n_trees"]), min_leaf=int(state["min_leaf"]))
    return ForestModel(trees=trees, n_train=int(state["n_train"]), d_y=d_y, params=params)


def knn_to_state(model: KnnModel) -> dict:
    return {
        "k": model.k,
        "X_std": model.X_std,
        "Y": model.Y,
        "mean": model.mean,
        "scale": model.scale,
    }


def knn_from_state(state: dict) -> KnnModel:
    return KnnModel(
        X_std=state["X_std"], Y=state["Y"], k=int(state["k"]),
        mean=state["mean"], scale=state["scale"],
    )
