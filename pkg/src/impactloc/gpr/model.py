"""Exact multitask GP regression trained by Adam ascent on the log marginal likelihood."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..preprocess import Standardizer
from .kernels import (
    KernelSpec,
    TaskCovariance,
    input_kernel,
    input_kernel_diag,
    input_kernel_grads,
    normalize_kind,
)

logger = logging.getLogger(__name__)

JITTER_START = 1e-8
JITTER_MAX = 1e-4
# A predictive variance below -NEG_VAR_TOL means the solve broke down.
NEG_VAR_TOL = 1e-8


class GPTrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Prediction:
    """Per-task predictive means and variances, arrays of shape (n, T)."""

    mean: np.ndarray
    variance: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def jittered_cholesky(K: np.ndarray):
    """Lower Cholesky factor of ``K + jitter * I`` with an escalating jitter ladder."""
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError(f"kernel matrix not positive definite even with jitter {JITTER_MAX:g}")


class ParamLayout:
    """Packs the trainable hyperparameters into one flat vector."""

    def __init__(self, kind, n_tasks, rank, train_cos_scale=True, train_noise=True):
        self.kind = normalize_kind(kind)
        self.n_tasks = n_tasks
        self.rank = rank
        self.names = []
        if self.kind in ("rbf", "comp"):
            self.names.append("log_lengthscale_rbf")
        if self.kind in ("cos", "comp") and train_cos_scale:
            self.names.append("log_scale_cos")
        if train_noise:
            self.names.append("log_noise_variance")
        self.names += [f"B[{i},{j}]" for i in range(n_tasks) for j in range(rank)]
        self.names += [f"log_v[{i}]" for i in range(n_tasks)]

    @property
    def size(self):
        return len(self.names)

    def pack(self, spec: KernelSpec, tasks: TaskCovariance) -> np.ndarray:
        head = [getattr(spec, n) for n in self.names if not n.startswith(("B[", "log_v["))]
        return np.concatenate([head, tasks.B.ravel(), tasks.log_v])

    def unpack(self, theta, base: KernelSpec):
        theta = np.asarray(theta, dtype=float)
        vals = {}
        i = 0
        for n in self.names:
            if n.startswith(("B[", "log_v[")):
                break
            vals[n] = float(theta[i])
            i += 1
        nb = self.n_tasks * self.rank
        B = theta[i:i + nb].reshape(self.n_tasks, self.rank)
        log_v = theta[i + nb:i + nb + self.n_tasks]
        spec = KernelSpec(
            base.kind,
            vals.get("log_lengthscale_rbf", base.log_lengthscale_rbf),
            vals.get("log_scale_cos", base.log_scale_cos),
            vals.get("log_noise_variance", base.log_noise_variance),
        )
        return spec, TaskCovariance(B.copy(), log_v.copy())


def noise_variance(spec: KernelSpec, noise_floor: float) -> float:
    return float(np.exp(spec.log_noise_variance)) + noise_floor


def lml_and_grad(spec: KernelSpec, tasks: TaskCovariance, X, Y, noise_floor: float = 0.0,
                 layout: ParamLayout | None = None, compute_grad: bool = True):
    """Log marginal likelihood of vec(Y) and its gradient in ``layout`` order.

    Returns ``(lml, grad, L, alpha, jitter)``; ``grad`` is None when not
    requested.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n, T = Y.shape
    Kx = input_kernel(spec, X)
    Kt = tasks.matrix
    sn2 = noise_variance(spec, noise_floor)
    K = np.kron(Kx, Kt)
    K[np.diag_indices_from(K)] += sn2
    L, jitter = jittered_cholesky(K)
    y = Y.ravel()
    alpha = cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * y.size * np.log(2 * np.pi)
    if not compute_grad:
        return lml, None, L, alpha, jitter

    Kinv = cho_solve((L, True), np.eye(y.size))
    W = 0.5 * (np.outer(alpha, alpha) - Kinv)
    W4 = W.reshape(n, T, n, T)
    Gx = np.einsum("itjs,ts->ij", W4, Kt)
    Gt = np.einsum("itjs,ij->ts", W4, Kx)
    dKx = input_kernel_grads(spec, X, Kx)
    parts = {name: float(np.sum(Gx * d)) for name, d in dKx.items()}
    parts["log_noise_variance"] = float(np.trace(W)) * float(np.exp(spec.log_noise_variance))
    layout = layout or ParamLayout(spec.kind, T, tasks.B.shape[1])
    head = [parts[nm] for nm in layout.names if not nm.startswith(("B[", "log_v["))]
    gB = (Gt + Gt.T) @ tasks.B
    glv = np.diag(Gt) * np.exp(tasks.log_v)
    grad = np.concatenate([head, gB.ravel(), glv])
    return lml, grad, L, alpha, jitter


class MultitaskGPRegressor(RegressorMixin, BaseEstimator):
    """Multitask GP over TDOA inputs with a shared input kernel and task covariance.

    Parameters
    ----------
    kernel : {'rbf', 'cos', 'comp'}
        Input kernel. ``'comp'`` is the product of the other two.
    input_std : {'ss', 'fs', 'none'}
        Input standardisation applied before any kernel evaluation.
    output_std : {'fs', 'none'}
        Output standardisation; predictions are mapped back to output units.
    learning_rate : float
        Adam step size.
    max_iter : int
        Number of Adam steps. There is no early stopping.
    noise_variance : float or None
        ``None`` trains the observation noise; a number fixes it (in
        standardised output units) and removes it from the optimiser.
    noise_floor : float
        Constant added to a trained noise variance.
    train_cos_scale : bool
        If False the cosine scale stays at 1.
    task_rank : int or None
        Rank of the task-covariance factor; defaults to the number of tasks.
    random_state : int
        Recorded for reproducibility. Initialisation is deterministic.

    Attributes
    ----------
    kernel_ : KernelSpec
    tasks_ : TaskCovariance
    L_, alpha_ : ndarray
        Cholesky factor of the joint training covariance and its solve with vec(Y).
    log_marginal_likelihood_value_ : float
    lml_history_ : ndarray
        LML at every Adam step.
    """

    def __init__(self, kernel="comp", input_std="ss", output_std="fs", learning_rate=0.1,
                 max_iter=5000, noise_variance=None, noise_floor=1e-6, train_cos_scale=True,
                 task_rank=None, random_state=0):
        self.kernel = kernel
        self.input_std = input_std
        self.output_std = output_std
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.noise_variance = noise_variance
        self.noise_floor = noise_floor
        self.train_cos_scale = train_cos_scale
        self.task_rank = task_rank
        self.random_state = random_state

    def _effective_floor(self):
        return 0.0 if self.noise_variance is not None else float(self.noise_floor)

    def initial_hyperparameters(self, Xs, Ys):
        """Median-heuristic lengthscale, unit cosine scale, 1 % noise, identity task factor."""
        kind = normalize_kind(self.kernel)
        d = np.sqrt(np.maximum(0.0, ((Xs[:, None, :] - Xs[None, :, :]) ** 2).sum(-1)))
        iu = np.triu_indices(len(Xs), 1)
        med = float(np.median(d[iu])) if iu[0].size else 1.0
        if not med > 0:
            med = 1.0
        if self.noise_variance is not None:
            log_noise = float(np.log(max(self.noise_variance, 1e-300)))
        else:
            var = float(np.mean(Ys.var(axis=0))) or 1.0
            log_noise = float(np.log(max(1e-2 * var - self.noise_floor, 1e-12)))
        spec = KernelSpec(kind, float(np.log(med)), 0.0, log_noise)
        T = Ys.shape[1]
        tasks = TaskCovariance.identity(T, self.task_rank)
        return spec, tasks

    def fit(self, X, Y):
        X = check_array(X, dtype=float)
        Y = check_array(Y, dtype=float, ensure_2d=False)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y have different numbers of samples")
        if X.shape[0] < 2:
            raise ValueError("need at least 2 training samples")
        if str(self.output_std).lower() == "ss":
            raise ValueError("outputs can only be standardised with 'fs' or 'none'")

        self.input_scaler_ = Standardizer(self.input_std).fit(X)
        self.output_scaler_ = Standardizer(self.output_std).fit(Y)
        Xs = self.input_scaler_.transform(X)
        Ys = self.output_scaler_.transform(Y)
        self.n_features_in_ = X.shape[1]
        self.n_tasks_ = Y.shape[1]

        spec0, tasks0 = self.initial_hyperparameters(Xs, Ys)
        layout = ParamLayout(spec0.kind, self.n_tasks_, tasks0.B.shape[1],
                             train_cos_scale=self.train_cos_scale,
                             train_noise=self.noise_variance is None)
        floor = self._effective_floor()
        theta = layout.pack(spec0, tasks0)

        b1, b2, eps, lr = 0.9, 0.999, 1e-8, float(self.learning_rate)
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        history = np.empty(int(self.max_iter) + 1)
        best_lml, best_theta = -np.inf, theta.copy()
        for it in range(int(self.max_iter) + 1):
            spec, tasks = layout.unpack(theta, spec0)
            try:
                lml, g, *_ = lml_and_grad(spec, tasks, Xs, Ys, floor, layout)
            except np.linalg.LinAlgError as exc:
                raise GPTrainingError(f"{spec0.kind}: Cholesky failed at iteration {it}: {exc}") from exc
            if not np.isfinite(lml) or not np.all(np.isfinite(g)):
                raise GPTrainingError(f"{spec0.kind}: non-finite log marginal likelihood at iteration {it}")
            history[it] = lml
            if lml > best_lml:
                best_lml, best_theta = lml, theta.copy()
            if it == self.max_iter:
                break
            # ascent step
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** (it + 1))
            vhat = v / (1 - b2 ** (it + 1))
            theta = theta + lr * mhat / (np.sqrt(vhat) + eps)

        self.lml_history_ = history
        self.initial_log_marginal_likelihood_ = float(history[0])
        self._set_state(*layout.unpack(best_theta, spec0), Xs, Ys)
        logger.info("%s: LML %.3f -> %.3f", spec0.kind, history[0], self.log_marginal_likelihood_value_)
        return self

    def _set_state(self, spec, tasks, Xs, Ys):
        self.kernel_ = spec
        self.tasks_ = tasks
        self.X_train_ = Xs
        self.Y_train_ = Ys
        lml, _, L, alpha, jitter = lml_and_grad(spec, tasks, Xs, Ys, self._effective_floor(),
                                                compute_grad=False)
        self.L_ = L
        self.alpha_ = alpha
        self.jitter_ = jitter
        self.log_marginal_likelihood_value_ = float(lml)

    @property
    def noise_variance_(self) -> float:
        check_is_fitted(self, "kernel_")
        return noise_variance(self.kernel_, self._effective_floor())

    def log_marginal_likelihood(self, theta=None, eval_gradient=False):
        """LML at ``theta`` (layout order, see :meth:`param_names`), defaulting to the fitted value."""
        check_is_fitted(self, "kernel_")
        if theta is None and not eval_gradient:
            return self.log_marginal_likelihood_value_
        layout = self._layout()
        if theta is None:
            theta = layout.pack(self.kernel_, self.tasks_)
        spec, tasks = layout.unpack(theta, self.kernel_)
        lml, g, *_ = lml_and_grad(spec, tasks, self.X_train_, self.Y_train_,
                                  self._effective_floor(), layout, compute_grad=eval_gradient)
        return (lml, g) if eval_gradient else lml

    def _layout(self):
        return ParamLayout(self.kernel_.kind, self.n_tasks_, self.tasks_.B.shape[1],
                           self.train_cos_scale, self.noise_variance is None)

    def param_names(self):
        return list(self._layout().names)

    def predict_distribution(self, X) -> Prediction:
        """Latent posterior mean and variance per task, in output units."""
        check_is_fitted(self, "kernel_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        Xs = self.input_scaler_.transform(X)
        n, T = X.shape[0], self.n_tasks_
        Kt = self.tasks_.matrix
        Ks = np.kron(input_kernel(self.kernel_, Xs, self.X_train_), Kt)  # (n*T, N*T)
        mean = (Ks @ self.alpha_).reshape(n, T)
        V = cho_solve((self.L_, True), Ks.T)
        reduction = np.einsum("ij,ji->i", Ks, V).reshape(n, T)
        prior = np.outer(input_kernel_diag(self.kernel_, Xs), np.diag(Kt))
        var = prior - reduction
        if np.any(var < -NEG_VAR_TOL):
            raise FloatingPointError(f"negative predictive variance {var.min():.3e}; numerical breakdown")
        var = np.maximum(var, 0.0)
        mean, var = self.output_scaler_.inverse_transform_outputs(mean, var)
        return Prediction(mean, var)

    def prior_variance(self, X) -> np.ndarray:
        check_is_fitted(self, "kernel_")
        Xs = self.input_scaler_.transform(check_array(X, dtype=float))
        prior = np.outer(input_kernel_diag(self.kernel_, Xs), np.diag(self.tasks_.matrix))
        _, prior = self.output_scaler_.inverse_transform_outputs(np.zeros_like(prior), prior)
        return prior

    def predict(self, X, return_var=False):
        p = self.predict_distribution(X)
        return (p.mean, p.variance) if return_var else p.mean


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()


def save_model(model: MultitaskGPRegressor, path) -> None:
    """Write hyperparameters to ``path`` (JSON) and training matrices to a sibling CSV."""
    check_is_fitted(model, "kernel_")
    path = Path(path)
    csv_path = path.with_suffix(".train.csv")
    k = model.kernel_
    doc = {
        "format": "impactloc-gpr/1",
        "params": model.get_params(),
        "kernel": {"kind": k.kind, "log_lengthscale_rbf": k.log_lengthscale_rbf,
                   "log_scale_cos": k.log_scale_cos, "log_noise_variance": k.log_noise_variance},
        "tasks": {"B": model.tasks_.B.tolist(), "log_v": model.tasks_.log_v.tolist()},
        "input_standardizer": model.input_scaler_.get_state(),
        "output_standardizer": model.output_scaler_.get_state(),
        "n_features": model.n_features_in_,
        "n_tasks": model.n_tasks_,
        "log_marginal_likelihood": model.log_marginal_likelihood_value_,
        "initial_log_marginal_likelihood": model.initial_log_marginal_likelihood_,
        "train_csv": csv_path.name,
        "train_digest": _digest(model.X_train_, model.Y_train_),
        "metadata": getattr(model, "metadata_", None),
    }
    np.savetxt(csv_path, np.c_[model.X_train_, model.Y_train_], delimiter=",", fmt="%.17g",
               header=",".join([f"x{i + 1}" for i in range(model.n_features_in_)]
                               + [f"y{j + 1}" for j in range(model.n_tasks_)]), comments="")
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")


def load_model(path) -> MultitaskGPRegressor:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    data = np.loadtxt(path.parent / doc["train_csv"], delimiter=",", skiprows=1, ndmin=2)
    M = doc["n_features"]
    Xs, Ys = data[:, :M], data[:, M:]
    if _digest(Xs, Ys) != doc["train_digest"]:
        raise ValueError(f"training data digest mismatch for {path}")
    model = MultitaskGPRegressor(**doc["params"])
    model.input_scaler_ = Standardizer.from_state(doc["input_standardizer"])
    model.output_scaler_ = Standardizer.from_state(doc["output_standardizer"])
    model.n_features_in_ = M
    model.n_tasks_ = doc["n_tasks"]
    model.initial_log_marginal_likelihood_ = doc.get("initial_log_marginal_likelihood")
    spec = KernelSpec(**doc["kernel"])
    tasks = TaskCovariance(np.asarray(doc["tasks"]["B"]), np.asarray(doc["tasks"]["log_v"]))
    model._set_state(spec, tasks, Xs, Ys)
    if doc.get("metadata") is not None:
        model.metadata_ = doc["metadata"]
    return model
