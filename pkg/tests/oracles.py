"""Independent reference computations shared by the test modules."""

import numpy as np

from impactloc.core import DEFAULT_SENSORS
from impactloc.preprocess import Standardizer


def central_difference(f, theta, h=1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def dense_lml(K, y):
    """Gaussian log density of ``y`` under N(0, K) via slogdet and solve."""
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    return -0.5 * y @ np.linalg.solve(K, y) - 0.5 * logdet - 0.5 * y.size * np.log(2 * np.pi)


def straight_line_tdoa(points, speed=400.0, sensors=DEFAULT_SENSORS):
    """Isotropic TDOA rows by brute-force distances, one row per point."""
    s = np.asarray(sensors, dtype=float)
    p = np.atleast_2d(np.asarray(points, dtype=float))
    t = np.sqrt(((p[:, None, :] - s[None, :, :]) ** 2).sum(-1)) / speed
    return t - t.min(axis=1, keepdims=True)


def tdoa_problem(n, rng):
    """Standardised (SS inputs, FS outputs) TDOA regression problem with ``n`` samples."""
    Y = np.c_[rng.uniform(70, 220, n), rng.uniform(50, 150, n)]
    X = straight_line_tdoa(Y)
    Xs = Standardizer("ss").fit(X).transform(X)
    Ys = Standardizer("fs").fit(Y).transform(Y)
    return Xs, Ys


def random_theta(layout, rng):
    """Hyperparameter vector in ``layout`` order over a broad but well-conditioned range."""
    vals = []
    for name in layout.names:
        if name == "log_lengthscale_rbf":
            vals.append(rng.uniform(-2.0, 0.5))
        elif name == "log_scale_cos":
            vals.append(rng.uniform(-1.0, 1.0))
        elif name == "log_noise_variance":
            vals.append(rng.uniform(-5.0, -1.0))
        elif name.startswith("B["):
            vals.append(rng.normal(0.0, 1.0))
        else:
            vals.append(rng.uniform(-4.0, 0.0))
    return np.array(vals)
