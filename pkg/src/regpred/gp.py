"""Exact Gaussian-process regression with unit-variance stationary kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidArgumentError, NotPositiveDefiniteError

KERNEL_KINDS = ("se", "matern32", "matern52")
MAX_JITTER = 1e-2


@dataclass(frozen=True)
class Kernel:
    kind: str = "matern52"
    length_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise InvalidArgumentError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}")
        if not self.length_scale > 0:
            raise InvalidArgumentError("length_scale must be positive")

    def of_distance(self, r):
        """Kernel value as a function of Euclidean distance ``r``."""
        r = np.asarray(r, dtype=float) / self.length_scale
        if self.kind == "se":
            return np.exp(-0.5 * r * r)
        if self.kind == "matern32":
            u = np.sqrt(3.0) * r
            return (1.0 + u) * np.exp(-u)
        u = np.sqrt(5.0) * r
        return (1.0 + u + u * u / 3.0) * np.exp(-u)

    def matrix(self, xa, xb):
        return self.of_distance(_distances(xa, xb))


def _distances(xa, xb):
    xa = np.atleast_2d(xa)
    xb = np.atleast_2d(xb)
    diff = xa[:, None, :] - xb[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def kernel_eval(kernel: Kernel, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise InvalidArgumentError("inputs must have the same dimension")
    return float(kernel.of_distance(np.linalg.norm(x - x2)))


@dataclass(frozen=True)
class GpModel:
    x: np.ndarray
    y: np.ndarray  # standardized outputs
    kernel: Kernel
    jitter: float
    noise: float
    factor: np.ndarray  # lower Cholesky factor of K + (jitter + noise) I
    alpha: np.ndarray
    y_mean: float
    y_scale: float

    @property
    def n_dims(self) -> int:
        return self.x.shape[1]


def gp_fit(x, y, kernel: Kernel | None = None, jitter: float = 1e-8, noise: float = 0.0) -> GpModel:
    """Condition a zero-mean GP on standardized outputs.

    ``noise`` is an observation-noise variance on the standardized scale.
    If the covariance cannot be factorized, ``jitter`` is raised tenfold
    until it reaches ``MAX_JITTER``.
    """
    kernel = kernel or Kernel()
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] < 1 or x.shape[0] != y.shape[0]:
        raise InvalidArgumentError("need matching, non-empty x and y")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidArgumentError("GP training data must be finite")
    if jitter < 0 or noise < 0:
        raise InvalidArgumentError("jitter and noise must be >= 0")
    y_mean = float(np.mean(y))
    y_scale = float(np.std(y))
    if not y_scale > 0:
        y_scale = 1.0
    ys = (y - y_mean) / y_scale
    k = kernel.matrix(x, x)
    eye = np.eye(x.shape[0])
    while True:
        try:
            factor = scipy.linalg.cholesky(k + (jitter + noise) * eye, lower=True)
            break
        except np.linalg.LinAlgError:
            if jitter >= MAX_JITTER:
                raise NotPositiveDefiniteError("GP covariance not positive definite") from None
            jitter = min(MAX_JITTER, max(jitter * 10.0, 1e-12))
    alpha = scipy.linalg.cho_solve((factor, True), ys)
    return GpModel(x, ys, kernel, jitter, noise, factor, alpha, y_mean, y_scale)


def gp_posterior(model: GpModel, xq):
    """Posterior mean and variance of the latent function.

    ``xq`` may be one point ``(m,)`` (scalars returned) or a batch ``(q, m)``.
    """
    xq = np.asarray(xq, dtype=float)
    single = xq.ndim == 1
    xq = np.atleast_2d(xq)
    if xq.shape[1] != model.n_dims:
        raise InvalidArgumentError(f"query dim {xq.shape[1]} != model dim {model.n_dims}")
    ks = model.kernel.matrix(xq, model.x)
    mu = model.y_mean + model.y_scale * (ks @ model.alpha)
    v = scipy.linalg.solve_triangular(model.factor, ks.T, lower=True)
    var = 1.0 - np.sum(v * v, axis=0)
    var = np.clip(var, 0.0, None) * model.y_scale ** 2
    if single:
        return float(mu[0]), float(var[0])
    return mu, var
