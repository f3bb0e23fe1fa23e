"""End-to-end training and inference for the prescribe-then-select
meta-policy.

Training builds, for each cross-validation fold, a cost table of every
candidate policy's realized out-of-sample cost on the held-out rows (policies
fitted strictly on the fold complement), then fits several policy trees per
fold with distinct seeds.  All candidate policies are finally refit on the
full training set.  Inference routes a covariate vector through every tree,
takes the majority-vote policy index (ties broken uniformly at random from a
per-row seed), and applies the chosen refit policy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CostTable, Dataset, INDEX_BASE, SeedSpec, build_cost_table, make_folds
from .policies import (
    FittedPolicy,
    PolicyKind,
    PredictorParams,
    fit_library,
    policy_from_state,
    policy_to_state,
)
from .policytree import PolicyTree, TreeHyperparams, fit_tree, tree_from_text, tree_to_text


@dataclass
class PsEnsemble:
    """Trained selector ensemble plus the refit candidate policies."""

    trees: list  # K*R PolicyTree in (fold-major, repetition-minor) order
    refit_policies: list
    kinds: tuple[PolicyKind, ...]
    n_folds: int
    n_repeats: int
    master_seed: int
    fold_index_sets: tuple[np.ndarray, ...] = ()
    fold_trained_on: tuple[np.ndarray, ...] = ()
    cost_tables: list | None = None

    def __post_init__(self):
        if len(self.trees) != self.n_folds * self.n_repeats:
            raise ValueError("tree count must equal folds x repetitions")
        if len(self.refit_policies) != len(self.kinds):
            raise ValueError("one refit policy per library entry")
        for tree in self.trees:
            if tree.leaf_policy.max(initial=0) >= len(self.kinds):
                raise ValueError("tree references a policy index outside the library")

    @property
    def n_policies(self) -> int:
        return len(self.kinds)


def train_ps(train: Dataset, problem, kinds, n_folds: int, n_repeats: int,
             tree_hp: TreeHyperparams | None = None,
             predictor_params: PredictorParams | None = None,
             seed: int = 0, keep_cost_tables: bool = False,
             tune_penalty: bool = False) -> PsEnsemble:
    """Full training pass: fold-wise cost tables, per-fold tree fits with
    distinct seeds, and a final refit of every policy on all rows."""
    if n_folds < 2 or n_repeats < 1:
        raise ValueError("need at least 2 folds and 1 repetition")
    kinds = tuple(PolicyKind(k) for k in kinds)
    hp = tree_hp or TreeHyperparams()
    params = predictor_params or PredictorParams()
    seeds = SeedSpec(seed)

    folds = make_folds(train.n_rows, n_folds, seeds.generator("folds"))
    trees: list[PolicyTree] = []
    tables: list[CostTable] = []
    trained_on: list[np.ndarray] = []
    for k in range(n_folds):
        table, fold_trees, fit_rows = _fold_work(
            train, problem, kinds, folds, k, n_repeats, hp, params, seeds,
            tune_penalty=tune_penalty)
        tables.append(table)
        trees.extend(fold_trees)
        trained_on.append(fit_rows)
    refit = fit_library(kinds, train, problem, params, seeds.derive("fit", -1))
    return PsEnsemble(
        trees=trees,
        refit_policies=refit,
        kinds=kinds,
        n_folds=n_folds,
        n_repeats=n_repeats,
        master_seed=seed,
        fold_index_sets=tuple(np.asarray(f) for f in folds.folds),
        fold_trained_on=tuple(trained_on),
        cost_tables=tables if keep_cost_tables else None,
    )


def _fold_work(train, problem, kinds, folds, k, n_repeats, hp, params, seeds,
               tune_penalty: bool = False):
    """Fit fold-k policies on the complement, build its cost table, and fit
    the fold's policy trees.  Also used directly by the parallel runner."""
    comp = folds.complement(k)
    held = folds.fold(k)
    fold_policies = fit_library(kinds, train.subset(comp), problem, params, seeds.derive("fit", k))
    held_ds = train.subset(held)
    table = build_cost_table(k, held_ds, fold_policies, problem)
    fitter = fit_tree_tuned if tune_penalty else fit_tree
    fold_trees = [
        fitter(held_ds.X, table.costs, hp, seed=seeds.derive("tree", k, r))
        for r in range(n_repeats)
    ]
    fit_rows = np.unique(np.concatenate([p.trained_on for p in fold_policies]))
    return table, fold_trees, fit_rows


def fit_tree_tuned(X, C, hp: TreeHyperparams, seed: int) -> PolicyTree:
    """Fit with the split penalty tuned on a held-back validation slice.

    Candidate penalties are {0, 0.1*s, s} where s is the mean per-row cost
    spread; the winner (ties to the smallest penalty) refits on all rows.
    """
    rng = np.random.default_rng(seed)
    n = len(X)
    n_val = max(1, n // 5)
    perm = rng.permutation(n)
    val, fit = perm[:n_val], perm[n_val:]
    spread = float((C.max(axis=1) - C.min(axis=1)).mean())
    best = (np.inf, 0.0)
    for lam in (0.0, 0.1 * spread, spread):
        cand_hp = TreeHyperparams(hp.max_depth, hp.min_leaf, lam)
        if len(fit) < cand_hp.min_leaf:
            continue
        tree = fit_tree(X[fit], C[fit], cand_hp, seed=seed)
        assigned = tree.select_many(X[val])
        score = float(C[val, assigned].sum())
        if score < best[0] - 1e-12:
            best = (score, lam)
    final_hp = TreeHyperparams(hp.max_depth, hp.min_leaf, best[1])
    return fit_tree(X, C, final_hp, seed=seed)


def ps_votes(ens: PsEnsemble, X) -> np.ndarray:
    """Per-tree selected policy indices for each row: shape (n, K*R)."""
    X = np.asarray(X, dtype=float)
    return np.column_stack([tree.select_many(X) for tree in ens.trees])


def _mode_with_ties(votes: np.ndarray, n_policies: int, rng: np.random.Generator) -> int:
    counts = np.bincount(votes, minlength=n_policies)
    top = counts.max()
    tied = np.nonzero(counts == top)[0]
    if len(tied) == 1:
        return int(tied[0])
    return int(tied[rng.integers(len(tied))])


def ps_select(ens: PsEnsemble, x, seed) -> int:
    """Majority-vote policy index for one covariate vector.

    ``seed`` (int or Generator) drives the uniform tie-break only.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    votes = ps_votes(ens, np.asarray(x, dtype=float)[None, :])[0]
    return _mode_with_ties(votes, ens.n_policies, rng)


def ps_select_many(ens: PsEnsemble, X, row_ids=None, vote_seed_spec: SeedSpec | None = None) -> np.ndarray:
    """Vectorized majority vote; tie-break seeds derive from (master seed,
    "vote", row id) so results do not depend on evaluation order."""
    X = np.asarray(X, dtype=float)
    spec = vote_seed_spec or SeedSpec(ens.master_seed)
    if row_ids is None:
        row_ids = np.arange(len(X))
    votes = ps_votes(ens, X)
    out = np.empty(len(X), dtype=np.int64)
    for i in range(len(X)):
        rng = spec.generator("vote", int(row_ids[i]))
        out[i] = _mode_with_ties(votes[i], ens.n_policies, rng)
    return out


def ps_prescribe(ens: PsEnsemble, x, seed) -> np.ndarray:
    """Majority-vote selection followed by the chosen refit policy."""
    m = ps_select(ens, x, seed)
    return ens.refit_policies[m].prescribe(np.asarray(x, dtype=float))


class MetaPolicy:
    """Adapter giving the ensemble the same evaluation surface as a single
    fitted policy: feasible prescriptions for a batch of covariate rows."""

    name = "PS"
    wants_row_ids = True

    def __init__(self, ens: PsEnsemble):
        self.ens = ens

    def prescribe_many(self, X, row_ids=None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        chosen = ps_select_many(self.ens, X, row_ids=row_ids)
        d_z = self.ens.refit_policies[0].problem.d_z
        out = np.empty((len(X), d_z))
        for m in np.unique(chosen):
            rows = np.nonzero(chosen == m)[0]
            out[rows] = self.ens.refit_policies[m].prescribe_many(X[rows])
        return out

    def selection_counts(self, X, row_ids=None) -> np.ndarray:
        chosen = ps_select_many(self.ens, X, row_ids=row_ids)
        return np.bincount(chosen, minlength=self.ens.n_policies)


# ---------------------------------------------------------------------------
# On-disk ensemble layout: meta.json, trees/k{K}_r{R}.tree, policies/<kind>.npz
# ---------------------------------------------------------------------------

def save_ensemble(ens: PsEnsemble, path) -> None:
    root = Path(path)
    (root / "trees").mkdir(parents=True, exist_ok=True)
    (root / "policies").mkdir(parents=True, exist_ok=True)
    meta = {
        "index_base": INDEX_BASE,
        "n_folds": ens.n_folds,
        "n_repeats": ens.n_repeats,
        "master_seed": ens.master_seed,
        "library_order": [k.value for k in ens.kinds],
        "fold_index_sets": [f.tolist() for f in ens.fold_index_sets],
        "fold_trained_on": [f.tolist() for f in ens.fold_trained_on],
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    for k in range(ens.n_folds):
        for r in range(ens.n_repeats):
            tree = ens.trees[k * ens.n_repeats + r]
            (root / "trees" / f"k{k}_r{r}.tree").write_text(tree_to_text(tree))
    for kind, policy in zip(ens.kinds, ens.refit_policies):
        state = policy_to_state(policy)
        arrays = {key: np.asarray(val) for key, val in state.items() if isinstance(val, np.ndarray)}
        scalars = {key: val for key, val in state.items() if not isinstance(val, np.ndarray)}
        arrays["scalars_json"] = np.frombuffer(json.dumps(scalars).encode(), dtype=np.uint8)
        np.savez(root / "policies" / f"{kind.value}.npz", **arrays)


def load_ensemble(path, problem) -> PsEnsemble:
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text())
    kinds = tuple(PolicyKind.from_name(name) for name in meta["library_order"])
    trees = []
    for k in range(meta["n_folds"]):
        for r in range(meta["n_repeats"]):
            trees.append(tree_from_text((root / "trees" / f"k{k}_r{r}.tree").read_text()))
    policies = []
    for kind in kinds:
        with np.load(root / "policies" / f"{kind.value}.npz") as data:
            state = {key: data[key] for key in data.files if key != "scalars_json"}
            state.update(json.loads(bytes(data["scalars_json"]).decode()))
        policies.append(policy_from_state(state, problem))
    return PsEnsemble(
        trees=trees,
        refit_policies=policies,
        kinds=kinds,
        n_folds=int(meta["n_folds"]),
        n_repeats=int(meta["n_repeats"]),
        master_seed=int(meta["master_seed"]),
        fold_index_sets=tuple(np.array(f, dtype=np.int64) for f in meta["fold_index_sets"]),
        fold_trained_on=tuple(np.array(f, dtype=np.int64) for f in meta["fold_trained_on"]),
    )
