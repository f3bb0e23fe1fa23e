"""The candidate-policy library: SAA, point-prediction, and
predictive-prescriptive policies over any scenario problem.

Each policy is a fit/prescribe pair.  SAA solves the unweighted empirical
problem once and caches its decision; point-prediction (PPt) policies solve
the deterministic problem at a predicted conditional mean; predictive-
prescriptive (PP) policies solve the weighted empirical problem with
model-derived scenario weights.  PPt and PP variants of one model family
share the same fitted predictor.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import Dataset, derive_seed
from .predictors import (
    ForestModel,
    KnnModel,
    RfParams,
    forest_from_state,
    forest_to_state,
    knn_fit,
    knn_from_state,
    knn_point_predict,
    knn_to_state,
    knn_weights,
    rf_fit,
    rf_point_predict,
    rf_weights,
)


class PolicyKind(str, Enum):
    SAA = "SAA"
    PPT_RF = "PPt-RF"
    PP_RF = "PP-RF"
    PPT_KNN = "PPt-kNN"
    PP_KNN = "PP-kNN"

    @classmethod
    def from_name(cls, name: str) -> "PolicyKind":
        for kind in cls:
            if kind.value == name or kind.name == name:
                return kind
        raise ValueError(f"unknown policy kind {name!r}")


#: Canonical library order; policy indices in trees and serialized artifacts
#: refer to positions in this order (0-based).
LIBRARY_ORDER = (
    PolicyKind.SAA,
    PolicyKind.PPT_RF,
    PolicyKind.PP_RF,
    PolicyKind.PPT_KNN,
    PolicyKind.PP_KNN,
)


@dataclass
class PredictorParams:
    knn_k: int = 5
    rf_trees: int = 5
    rf_min_leaf: int = 5
    rf_max_depth: int | None = None
    rf_features_per_split: int | None = None

    def rf_params(self) -> RfParams:
        return RfParams(
            n_trees=self.rf_trees,
            min_leaf=self.rf_min_leaf,
            max_depth=self.rf_max_depth,
            features_per_split=self.rf_features_per_split,
        )


class FittedPolicy:
    """Base for fitted policies: a pure map from covariates to a feasible
    decision.  ``trained_on`` records the original row ids the fit saw."""

    kind: PolicyKind

    def __init__(self, kind: PolicyKind, problem, trained_on: np.ndarray):
        self.kind = kind
        self.problem = problem
        self.trained_on = np.asarray(trained_on, dtype=np.int64)

    @property
    def name(self) -> str:
        return self.kind.value

    def prescribe(self, x) -> np.ndarray:
        raise NotImplementedError

    def prescribe_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.stack([self.prescribe(X[i]) for i in range(len(X))])


class SaaPolicy(FittedPolicy):
    """Covariate-free policy: the cached solution of the unweighted
    empirical problem over all training scenarios."""

    def __init__(self, problem, decision, trained_on):
        super().__init__(PolicyKind.SAA, problem, trained_on)
        self.decision = np.asarray(decision, dtype=float)

    def prescribe(self, x) -> np.ndarray:
        return self.decision

    def prescribe_many(self, X) -> np.ndarray:
        return np.tile(self.decision, (len(X), 1))


class PointPredictionPolicy(FittedPolicy):
    """Solve the deterministic problem at the predicted conditional mean
    (a single-scenario weighted solve, so one optimizer code path)."""

    def __init__(self, kind, problem, predictors, trained_on):
        super().__init__(kind, problem, trained_on)
        self.predictors = predictors

    def predict_mean(self, x) -> np.ndarray:
        if isinstance(self.predictors, KnnModel):
            return knn_point_predict(self.predictors, x)
        if isinstance(self.predictors, ForestModel):
            return rf_point_predict(self.predictors, x)
        # one single-output forest per outcome dimension
        return np.array([rf_point_predict(m, x)[0] for m in self.predictors])

    def prescribe(self, x) -> np.ndarray:
        y_hat = self.predict_mean(x)
        return self.problem.solve_weighted(y_hat[None, :], np.array([1.0]))


class WeightedScenarioPolicy(FittedPolicy):
    """Weighted empirical solve with model-derived scenario weights."""

    def __init__(self, kind, problem, predictors, train_Y, trained_on):
        super().__init__(kind, problem, trained_on)
        self.predictors = predictors
        self.train_Y = np.asarray(train_Y, dtype=float)

    def prescribe(self, x) -> np.ndarray:
        if self.problem.predictor_layout == "per_output":
            values, weights = [], []
            if isinstance(self.predictors, KnnModel):
                # neighborhoods depend on covariates only, so every output
                # shares one weight vector
                w = knn_weights(self.predictors, x)
                for j in range(self.train_Y.shape[1]):
                    values.append(self.train_Y[w.indices, j])
                    weights.append(w.weights)
            else:
                for j, model in enumerate(self.predictors):
                    w = rf_weights(model, x)
                    values.append(self.train_Y[w.indices, j])
                    weights.append(w.weights)
            return self.problem.solve_weighted_per_output(values, weights)
        if isinstance(self.predictors, KnnModel):
            w = knn_weights(self.predictors, x)
        else:
            w = rf_weights(self.predictors, x)
        return self.problem.solve_weighted(self.train_Y[w.indices], w.weights)


def _fit_predictor_family(family: str, train: Dataset, problem, params: PredictorParams, seed: int):
    """Fit the shared predictor for a model family ('rf' or 'knn')."""
    if family == "knn":
        return knn_fit(train.X, train.Y, params.knn_k)
    if problem.predictor_layout == "per_output":
        # one independent forest per outcome dimension
        return [
            rf_fit(train.X, train.Y[:, [j]], params.rf_params(), derive_seed(seed, "rf", j))
            for j in range(train.d_y)
        ]
    return rf_fit(train.X, train.Y, params.rf_params(), derive_seed(seed, "rf"))


def fit_library(kinds, train: Dataset, problem, params: PredictorParams, seed: int):
    """Fit all requested policies, sharing one predictor fit per model family.

    Returns policies in the order of ``kinds``.
    """
    kinds = [PolicyKind(k) if not isinstance(k, PolicyKind) else k for k in kinds]
    if train.n_rows < 1:
        raise ValueError("training set is empty")
    trained_on = train.source_indices.copy()
    shared: dict[str, object] = {}
    if any(k in (PolicyKind.PPT_RF, PolicyKind.PP_RF) for k in kinds):
        shared["rf"] = _fit_predictor_family("rf", train, problem, params, seed)
    if any(k in (PolicyKind.PPT_KNN, PolicyKind.PP_KNN) for k in kinds):
        k_eff = min(params.knn_k, train.n_rows)
        shared["knn"] = knn_fit(train.X, train.Y, k_eff)

    policies = []
    for kind in kinds:
        if kind == PolicyKind.SAA:
            n = train.n_rows
            decision = problem.solve_weighted(train.Y, np.full(n, 1.0 / n))
            policies.append(SaaPolicy(problem, decision, trained_on))
        elif kind == PolicyKind.PPT_RF:
            policies.append(PointPredictionPolicy(kind, problem, shared["rf"], trained_on))
        elif kind == PolicyKind.PP_RF:
            policies.append(WeightedScenarioPolicy(kind, problem, shared["rf"], train.Y, trained_on))
        elif kind == PolicyKind.PPT_KNN:
            policies.append(PointPredictionPolicy(kind, problem, shared["knn"], trained_on))
        elif kind == PolicyKind.PP_KNN:
            policies.append(WeightedScenarioPolicy(kind, problem, shared["knn"], train.Y, trained_on))
        else:
            raise ValueError(f"unknown policy kind {kind}")
    return policies


def fit_policy(kind, train: Dataset, problem, params: PredictorParams, seed: int) -> FittedPolicy:
    """Fit a single policy (library order not required)."""
    return fit_library([kind], train, problem, params, seed)[0]


# ---------------------------------------------------------------------------
# Flat state (for worker handoff and on-disk ensembles)
# ---------------------------------------------------------------------------

def _predictors_to_state(predictors) -> dict:
    if isinstance(predictors, KnnModel):
        return {"family": "knn", **knn_to_state(predictors)}
    if isinstance(predictors, ForestModel):
        return {"family": "rf", **forest_to_state(predictors)}
    state = {"family": "rf-per-output", "n_outputs": len(predictors)}
    for j, model in enumerate(predictors):
        sub = forest_to_state(model)
        state.update({f"o{j}_{key}": val for key, val in sub.items()})
    return state


def _predictors_from_state(state: dict):
    family = state["family"]
    if family == "knn":
        return knn_from_state(state)
    if family == "rf":
        return forest_from_state(state)
    models = []
    for j in range(int(state["n_outputs"])):
        prefix = f"o{j}_"
        sub = {key[len(prefix):]: val for key, val in state.items() if key.startswith(prefix)}
        models.append(forest_from_state(sub))
    return models


def policy_to_state(policy: FittedPolicy) -> dict:
    state = {"kind": policy.kind.value, "trained_on": policy.trained_on}
    if isinstance(policy, SaaPolicy):
        state["decision"] = policy.decision
        return state
    state.update(_predictors_to_state(policy.predictors))
    if isinstance(policy, WeightedScenarioPolicy):
        state["train_Y"] = policy.train_Y
    return state


def policy_from_state(state: dict, problem) -> FittedPolicy:
    kind = PolicyKind.from_name(str(state["kind"]))
    trained_on = state["trained_on"]
    if kind == PolicyKind.SAA:
        return SaaPolicy(problem, state["decision"], trained_on)
    predictors = _predictors_from_state(state)
    if kind in (PolicyKind.PPT_RF, PolicyKind.PPT_KNN):
        return PointPredictionPolicy(kind, problem, predictors, trained_on)
    return WeightedScenarioPolicy(kind, problem, predictors, state["train_Y"], trained_on)
