"""Sample and feature standardisation of TDOA inputs and coordinate outputs."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

MODES = ("ss", "fs", "none")


class ZeroRowWarning(UserWarning):
    """A zero TDOA row (singularity point) was passed through sample standardisation."""


class Standardizer(TransformerMixin, BaseEstimator):
    """Row- or column-wise standardisation.

    Parameters
    ----------
    mode : {'ss', 'fs', 'none'}
        ``'ss'`` scales every row to unit Euclidean norm (stateless);
        ``'fs'`` shifts and scales every column to zero mean and unit
        population standard deviation; ``'none'`` is the identity.

    Attributes
    ----------
    mean_, scale_ : ndarray of shape (n_features,)
        Column statistics, set by :meth:`fit` in ``'fs'`` mode only.
    """

    def __init__(self, mode="ss"):
        self.mode = mode

    def _mode(self):
        mode = str(self.mode).lower()
        if mode not in MODES:
            raise ValueError(f"unknown standardisation mode {self.mode!r}; expected one of {MODES}")
        return mode

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        mode = self._mode()
        self.n_features_in_ = X.shape[1]
        if mode == "fs":
            if X.shape[0] < 2:
                raise ValueError("feature standardisation needs at least 2 samples")
            mean = X.mean(axis=0)
            std = X.std(axis=0)
            bad = np.flatnonzero(std <= 1e-12 * np.maximum(1.0, np.abs(mean)))
            if bad.size:
                raise ValueError(f"column {int(bad[0])} has zero variance")
            self.mean_, self.scale_ = mean, std
        self.fitted_ = True
        return self

    def _check_fitted(self):
        if not getattr(self, "fitted_", False):
            raise NotFittedError("Standardizer is not fitted yet; call fit first")

    def transform(self, X):
        self._check_fitted()
        X = check_array(X, dtype=float)
        mode = self._mode()
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if mode == "ss":
            norms = np.linalg.norm(X, axis=1, keepdims=True)
            zero = norms[:, 0] == 0
            if np.any(zero):
                warnings.warn(
                    f"{int(zero.sum())} zero row(s) left as zero vectors by sample standardisation",
                    ZeroRowWarning, stacklevel=2,
                )
            return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)
        if mode == "fs":
            return (X - self.mean_) / self.scale_
        return X.copy()

    def inverse_transform(self, X):
        """Undo ``'fs'`` or ``'none'``; row norms lost by ``'ss'`` cannot be recovered."""
        self._check_fitted()
        X = check_array(X, dtype=float)
        mode = self._mode()
        if mode == "fs":
            return X * self.scale_ + self.mean_
        if mode == "ss":
            raise ValueError("sample standardisation is not invertible")
        return X.copy()

    def inverse_transform_outputs(self, Y_std, V_std):
        """Map standardised predictive means and variances back to output units."""
        self._check_fitted()
        Y_std = check_array(Y_std, dtype=float)
        V_std = check_array(V_std, dtype=float)
        mode = self._mode()
        if mode == "fs":
            return Y_std * self.scale_ + self.mean_, V_std * self.scale_ ** 2
        if mode == "none":
            return Y_std.copy(), V_std.copy()
        raise ValueError("outputs can only be standardised with 'fs' or 'none'")

    def get_state(self) -> dict:
        state = {"mode": self._mode()}
        if getattr(self, "fitted_", False):
            state["n_features"] = int(self.n_features_in_)
            if state["mode"] == "fs":
                state["mean"] = self.mean_.tolist()
                state["scale"] = self.scale_.tolist()
        return state

    @classmethod
    def from_state(cls, state: dict) -> "Standardizer":
        s = cls(state["mode"])
        if "n_features" in state:
            s.n_features_in_ = state["n_features"]
            if state["mode"] == "fs":
                s.mean_ = np.asarray(state["mean"], dtype=float)
                s.scale_ = np.asarray(state["scale"], dtype=float)
            s.fitted_ = True
        return s
