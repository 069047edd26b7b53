"""Bayesian model averaging over per-kernel GP predictions.

Weights are arrays whose first axis runs over kernels. The likelihood
weights are shared by all targets and tasks; the uncertainty and combined
weights are computed separately for every target and task.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .gpr.model import MultitaskGPRegressor, Prediction

VARIANCE_FLOOR = 1e-12


class FusionWarning(UserWarning):
    pass


def ml_weights(lmls) -> np.ndarray:
    """Posterior kernel probabilities under equal priors (softmax of the log-MLs)."""
    lmls = np.asarray(lmls, dtype=float)
    if lmls.ndim != 1 or lmls.size == 0:
        raise ValueError("expected a non-empty vector of log marginal likelihoods")
    if not np.all(np.isfinite(lmls)):
        raise ValueError("log marginal likelihoods must be finite")
    return np.exp(lmls - logsumexp(lmls))


def unc_weights(variances) -> np.ndarray:
    """Inverse-variance weights, normalised over the first (kernel) axis."""
    var = np.asarray(variances, dtype=float)
    if np.any(~np.isfinite(var)) or np.any(var < 0):
        raise ValueError("variances must be finite and non-negative")
    floored = np.maximum(var, VARIANCE_FLOOR)
    if np.any(np.all(var <= VARIANCE_FLOOR, axis=0)):
        warnings.warn("all kernel variances at the floor; uncertainty weights are uniform",
                      FusionWarning, stacklevel=2)
    inv = 1.0 / floored
    return inv / inv.sum(axis=0, keepdims=True)


def combine_weights(w_ml, w_unc) -> np.ndarray:
    """Renormalised product of likelihood and uncertainty weights.

    ``w_ml`` of shape (K,) broadcasts against ``w_unc`` of shape (K, ...).
    """
    w_ml = np.asarray(w_ml, dtype=float)
    w_unc = np.asarray(w_unc, dtype=float)
    w_ml = w_ml.reshape(w_ml.shape + (1,) * (w_unc.ndim - w_ml.ndim))
    prod = w_ml * w_unc
    total = prod.sum(axis=0, keepdims=True)
    dead = total <= 0
    if np.any(dead):
        warnings.warn("all weight products are zero; falling back to uniform weights",
                      FusionWarning, stacklevel=2)
        prod = np.where(dead, 1.0, prod)
        total = prod.sum(axis=0, keepdims=True)
    return prod / total


@dataclass(frozen=True)
class FusionWeights:
    kernels: tuple
    w_ml: np.ndarray        # (K,)
    w_unc: np.ndarray       # (K, n, T)
    w_combined: np.ndarray  # (K, n, T)


@dataclass(frozen=True)
class FusedPrediction:
    kernels: tuple
    predictions: tuple      # one Prediction per kernel
    weights: FusionWeights
    mean: np.ndarray        # (n, T)
    variance: np.ndarray    # (n, T)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def compute_weights(kernels: Sequence[str], lmls, predictions: Sequence[Prediction]) -> FusionWeights:
    if len(kernels) != len(predictions) or len(kernels) != len(lmls):
        raise ValueError("kernel labels, log-MLs and predictions must align")
    w_ml = ml_weights(lmls)
    w_unc = unc_weights(np.stack([p.variance for p in predictions]))
    return FusionWeights(tuple(kernels), w_ml, w_unc, combine_weights(w_ml, w_unc))


def fuse(predictions: Sequence[Prediction], weights: FusionWeights,
         full_variance: bool = False) -> FusedPrediction:
    """Weighted mean and variance of the per-kernel predictions.

    With ``full_variance`` the spread of the kernel means about the fused
    mean is added to the weighted variance.
    """
    if len(predictions) != len(weights.kernels):
        raise ValueError(f"{len(predictions)} predictions for {len(weights.kernels)} kernels")
    means = np.stack([p.mean for p in predictions])
    varis = np.stack([p.variance for p in predictions])
    w = weights.w_combined
    if w.shape != means.shape:
        raise ValueError(f"weight shape {w.shape} does not match predictions {means.shape}")
    mean = np.sum(w * means, axis=0)
    var = np.sum(w * varis, axis=0)
    if full_variance:
        var = var + np.sum(w * (means - mean) ** 2, axis=0)
    return FusedPrediction(weights.kernels, tuple(predictions), weights, mean, var)


def fuse_models(models: dict, X, full_variance: bool = False) -> FusedPrediction:
    """Predict with every fitted model in ``models`` (label -> model) and fuse."""
    labels = list(models)
    preds = [models[k].predict_distribution(X) for k in labels]
    lmls = [models[k].log_marginal_likelihood_value_ for k in labels]
    return fuse(preds, compute_weights(labels, lmls, preds), full_variance)


class BMARegressor(RegressorMixin, BaseEstimator):
    """Trains one :class:`MultitaskGPRegressor` per kernel and fuses their predictions.

    Extra keyword arguments in ``gp_params`` are forwarded to every member.
    """

    def __init__(self, kernels=("rbf", "cos", "comp"), input_std="ss", output_std="fs",
                 learning_rate=0.1, max_iter=5000, full_variance=False, random_state=0,
                 gp_params=None):
        self.kernels = kernels
        self.input_std = input_std
        self.output_std = output_std
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.full_variance = full_variance
        self.random_state = random_state
        self.gp_params = gp_params

    def fit(self, X, Y):
        self.models_ = {}
        for k in self.kernels:
            m = MultitaskGPRegressor(kernel=k, input_std=self.input_std, output_std=self.output_std,
                                     learning_rate=self.learning_rate, max_iter=self.max_iter,
                                     random_state=self.random_state, **(self.gp_params or {}))
            self.models_[k] = m.fit(X, Y)
        return self

    def predict_fused(self, X) -> FusedPrediction:
        check_is_fitted(self, "models_")
        return fuse_models(self.models_, X, self.full_variance)

    def predict(self, X, return_var=False):
        f = self.predict_fused(X)
        return (f.mean, f.variance) if return_var else f.mean


def fusion_report(fp: FusedPrediction, lmls, target_ids=None) -> dict:
    """JSON-ready summary of weights and per-kernel and fused predictions."""
    n = fp.mean.shape[0]
    ids = list(target_ids) if target_ids is not None else [str(i + 1) for i in range(n)]
    targets = []
    for i in range(n):
        targets.append({
            "id": ids[i],
            "fused": {"mean": fp.mean[i].tolist(), "variance": fp.variance[i].tolist()},
            "kernels": {
                k: {"mean": p.mean[i].tolist(), "variance": p.variance[i].tolist(),
                    "w_unc": fp.weights.w_unc[j, i].tolist(),
                    "weight": fp.weights.w_combined[j, i].tolist()}
                for j, (k, p) in enumerate(zip(fp.kernels, fp.predictions))
            },
        })
    return {
        "kernels": list(fp.kernels),
        "log_marginal_likelihood": dict(zip(fp.kernels, map(float, lmls))),
        "w_ml": dict(zip(fp.kernels, fp.weights.w_ml.tolist())),
        "targets": targets,
    }
