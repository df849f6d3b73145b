"""Generalized Ornstein-Uhlenbeck processes: simulation and offline calibration.

A d-dimensional process evolves in discrete steps as::

    Y_t = Y_{t-1} + A @ Y_{t-1} + N + Sigma @ dW_t,   dW_t ~ N(0, I_d)

Wiener, Brownian-with-drift and scalar mean-reverting processes are parameter
special cases (see :func:`named_params`). Trajectories are plain arrays of shape
``(T + 1, d)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DataValidationError,
    InvalidArgumentError,
    NotPositiveDefiniteError,
    NumericOverflowError,
    RankDeficiencyError,
)
from .rng import substream


@dataclass(frozen=True)
class GouParams:
    """Coefficients of a d-dimensional generalized OU process."""

    a_matrix: np.ndarray
    n_vector: np.ndarray
    sigma_matrix: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        n = np.atleast_1d(np.asarray(self.n_vector, dtype=float))
        s = np.atleast_2d(np.asarray(self.sigma_matrix, dtype=float))
        d = n.shape[0]
        if n.ndim != 1 or a.shape != (d, d) or s.shape != (d, d):
            raise InvalidArgumentError(
                f"inconsistent shapes: A{a.shape}, N{n.shape}, Sigma{s.shape}"
            )
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(n)) and np.all(np.isfinite(s))):
            raise InvalidArgumentError("GOU parameters must be finite")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "n_vector", n)
        object.__setattr__(self, "sigma_matrix", s)

    @property
    def dim(self) -> int:
        return self.n_vector.shape[0]


@dataclass(frozen=True)
class OlsFit:
    params: GouParams
    residual_cov: np.ndarray
    beta: np.ndarray
    clipped: bool = False  # residual_cov needed eigenvalue clipping before factorizing


def _draw_noise(noise, seed, steps, d):
    if (noise is None) == (seed is None):
        raise InvalidArgumentError("pass exactly one of noise= or seed=")
    if noise is None:
        return substream(seed, 0).standard_normal((steps, d))
    w = np.asarray(noise, dtype=float)
    if w.ndim == 1 and d == 1:
        w = w[:, None]
    if w.shape != (steps, d):
        raise InvalidArgumentError(f"noise must have shape ({steps}, {d}), got {w.shape}")
    return w


def simulate_gou(params: GouParams, y0, steps: int, noise=None, seed=None) -> np.ndarray:
    """Simulate ``steps`` increments of a generalized OU process.

    Parameters
    ----------
    params : GouParams
    y0 : array_like, shape (d,)
        Initial value.
    steps : int
        Number of increments; the result has ``steps + 1`` rows.
    noise : array_like, shape (steps, d), optional
        Explicit standard-normal increments ``dW_1..dW_steps``.
    seed : int, optional
        Draw the increments from the seeded stream instead.

    Returns
    -------
    ndarray, shape (steps + 1, d)
    """
    d = params.dim
    y = np.atleast_1d(np.asarray(y0, dtype=float))
    if y.shape != (d,):
        raise InvalidArgumentError(f"y0 must have length {d}, got shape {y.shape}")
    if int(steps) != steps or steps < 1:
        raise InvalidArgumentError("steps must be a positive integer")
    w = _draw_noise(noise, seed, steps, d)
    a, n, s = params.a_matrix, params.n_vector, params.sigma_matrix
    shocks = w @ s.T
    out = np.empty((steps + 1, d))
    out[0] = y
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, steps + 1):
            y = y + (a @ y + n + shocks[t - 1])
            if not np.all(np.isfinite(y)):
                raise NumericOverflowError("trajectory became non-finite", step=t)
            out[t] = y
    return out


def named_params(kind: str, *, mu=0.0, sigma=1.0, alpha=0.0, level=0.0) -> GouParams:
    """Embed a scalar Wiener / Brownian / mean-reverting process as GOU params."""
    if kind == "wiener":
        return GouParams([[0.0]], [0.0], [[1.0]])
    if sigma < 0:
        raise InvalidArgumentError(f"sigma must be >= 0, got {sigma}")
    if kind == "brownian":
        return GouParams([[0.0]], [mu], [[sigma]])
    if kind == "ou":
        return GouParams([[-alpha]], [alpha * level], [[sigma]])
    raise InvalidArgumentError(f"unknown process kind {kind!r}")


def simulate_named(kind: str, y0: float, steps: int, seed=None, noise=None, **kw) -> np.ndarray:
    """Simulate a scalar ``wiener``, ``brownian`` (mu, sigma) or ``ou``
    (alpha, level, sigma) process. Returns shape ``(steps + 1, 1)``."""
    return simulate_gou(named_params(kind, **kw), [y0], steps, noise=noise, seed=seed)


def cholesky(k) -> np.ndarray:
    """Lower-triangular ``M`` with ``M @ M.T == k`` for symmetric PSD ``k``.

    Zero pivots are allowed (semi-definite input); the corresponding column
    of ``M`` is zero.
    """
    k = np.atleast_2d(np.asarray(k, dtype=float))
    d = k.shape[0]
    if k.shape != (d, d):
        raise InvalidArgumentError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(k))) if k.size else 1.0)
    if np.max(np.abs(k - k.T), initial=0.0) > 1e-10 * scale:
        raise InvalidArgumentError("matrix is not symmetric")
    neg_tol = 1e-10 * scale
    zero_tol = 1e-14 * scale
    m = np.zeros_like(k)
    for j in range(d):
        s = k[j, j] - m[j, :j] @ m[j, :j]
        if s < -neg_tol:
            raise NotPositiveDefiniteError("matrix is not positive semi-definite", pivot=j)
        if s <= zero_tol:
            resid = k[j + 1:, j] - m[j + 1:, :j] @ m[j, :j]
            if resid.size and np.max(np.abs(resid)) > np.sqrt(neg_tol * scale):
                raise NotPositiveDefiniteError("matrix is not positive semi-definite", pivot=j)
            continue
        m[j, j] = np.sqrt(s)
        m[j + 1:, j] = (k[j + 1:, j] - m[j + 1:, :j] @ m[j, :j]) / m[j, j]
    return m


def ols_fit(traj) -> OlsFit:
    """Offline least-squares calibration of (A, N, Sigma) from one trajectory."""
    y_all = np.asarray(traj, dtype=float)
    if y_all.ndim == 1:
        y_all = y_all[:, None]
    n_obs, d = y_all.shape
    T = n_obs - 1
    if T < d + 2:
        raise RankDeficiencyError(f"need at least {d + 2} increments for d={d}, got {T}")
    x = np.hstack([np.ones((T, 1)), y_all[:-1]])
    y = np.diff(y_all, axis=0)
    gram = x.T @ x
    cross = x.T @ y
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("normal-equation matrix is singular") from exc
    if np.linalg.cond(gram) > 1e14:
        raise RankDeficiencyError("normal-equation matrix is numerically singular")
    beta = scipy.linalg.cho_solve(factor, cross).T  # d x (d+1): [N ; A]
    n_vec = beta[:, 0].copy()
    a_mat = beta[:, 1:].copy()

    resid = y - x @ beta.T
    resid = resid - resid.mean(axis=0)
    cov = resid.T @ resid / T
    cov = 0.5 * (cov + cov.T)
    clipped = False
    try:
        sigma = cholesky(cov)
    except NotPositiveDefiniteError:
        w, v = np.linalg.eigh(cov)
        cov_clip = (v * np.clip(w, 0.0, None)) @ v.T
        sigma = cholesky(0.5 * (cov_clip + cov_clip.T))
        clipped = True
    return OlsFit(GouParams(a_mat, n_vec, sigma), cov, beta, clipped)


def write_trajectory_csv(path, traj) -> None:
    values = np.asarray(traj, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"y{i + 1}" for i in range(values.shape[1])])
        for t, row in enumerate(values):
            writer.writerow([t] + [repr(float(v)) for v in row])


def read_trajectory_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "t" or len(header) < 2:
            raise DataValidationError("expected header t,y1..yd", line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataValidationError(f"expected {len(header)} fields", line=lineno)
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataValidationError(str(exc), line=lineno) from None
    if not rows:
        raise DataValidationError("trajectory is empty")
    out = np.array(rows)
    if not np.all(np.isfinite(out)):
        raise DataValidationError("trajectory contains non-finite values")
    return out
