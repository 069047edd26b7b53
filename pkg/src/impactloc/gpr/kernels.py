"""Input kernels (RBF, cosine, composite) and the multitask joint kernel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

KERNEL_KINDS = ("rbf", "cos", "comp")


def normalize_kind(kind: str) -> str:
    k = str(kind).lower()
    if k not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel {kind!r}; expected one of {KERNEL_KINDS}")
    return k


@dataclass(frozen=True)
class KernelSpec:
    """Kernel kind and its log-space hyperparameters.

    ``log_lengthscale_rbf`` is used by RBF and COMP, ``log_scale_cos`` by COS
    and COMP; the unused one is carried but ignored.
    """

    kind: str = "comp"
    log_lengthscale_rbf: float = 0.0
    log_scale_cos: float = 0.0
    log_noise_variance: float = float(np.log(1e-2))

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))

    @property
    def uses_rbf(self) -> bool:
        return self.kind in ("rbf", "comp")

    @property
    def uses_cos(self) -> bool:
        return self.kind in ("cos", "comp")

    @property
    def lengthscale_rbf(self) -> float:
        return float(np.exp(self.log_lengthscale_rbf))

    @property
    def scale_cos(self) -> float:
        return float(np.exp(self.log_scale_cos))


@dataclass(frozen=True)
class TaskCovariance:
    """Low-rank-plus-diagonal task covariance ``B B^T + diag(exp(log_v))``."""

    B: np.ndarray = field(default_factory=lambda: np.eye(2))
    log_v: np.ndarray = field(default_factory=lambda: np.log(np.full(2, 1e-2)))

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        log_v = np.asarray(self.log_v, dtype=float).ravel()
        if B.shape[0] != log_v.size or B.shape[1] > B.shape[0]:
            raise ValueError("B must be T x r with r <= T and log_v of length T")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "log_v", log_v)

    @classmethod
    def identity(cls, n_tasks: int = 2, rank: int | None = None, diag: float = 1e-2):
        rank = n_tasks if rank is None else rank
        return cls(np.eye(n_tasks, rank), np.log(np.full(n_tasks, diag)))

    @property
    def n_tasks(self) -> int:
        return self.B.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.B @ self.B.T + np.diag(np.exp(self.log_v))


def cosine_matrix(X, X2) -> np.ndarray:
    """Pairwise cosine similarity; rows with zero norm are dissimilar to everything."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    n1 = np.linalg.norm(X, axis=1)
    n2 = np.linalg.norm(X2, axis=1)
    denom = np.outer(n1, n2)
    return np.divide(X @ X2.T, denom, out=np.zeros_like(denom), where=denom > 0)


def input_kernel(spec: KernelSpec, X, X2=None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = X if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != X2.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {X2.shape[1]}")
    K = np.ones((X.shape[0], X2.shape[0]))
    if spec.uses_rbf:
        K *= np.exp(-0.5 * cdist(X, X2, "sqeuclidean") / spec.lengthscale_rbf ** 2)
    if spec.uses_cos:
        K *= spec.scale_cos ** 2 * cosine_matrix(X, X2)
    return K


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.size} vs {x2.size}")
    return float(input_kernel(spec, x[None], x2[None])[0, 0])


def input_kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    """``k(x, x)`` for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = np.ones(X.shape[0])
    if spec.uses_cos:
        d = spec.scale_cos ** 2 * (np.linalg.norm(X, axis=1) > 0)
    return d.astype(float)


def input_kernel_grads(spec: KernelSpec, X, K=None) -> dict:
    """Derivatives of ``K(X, X)`` with respect to each log-hyperparameter."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if K is None:
        K = input_kernel(spec, X)
    grads = {}
    if spec.uses_rbf:
        grads["log_lengthscale_rbf"] = K * cdist(X, X, "sqeuclidean") / spec.lengthscale_rbf ** 2
    if spec.uses_cos:
        grads["log_scale_cos"] = 2.0 * K
    return grads


def build_joint_kernel(spec: KernelSpec, tasks: TaskCovariance, X, X2=None) -> np.ndarray:
    """Joint (N*T) x (N'*T) covariance, sample-major: index ``n * T + t``."""
    return np.kron(input_kernel(spec, X, X2), tasks.matrix)
