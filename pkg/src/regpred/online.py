"""Online gradient-descent regression of generalized OU coefficients.

One :func:`regcell_step` consumes an input pair ``(z_prev, z_curr)`` and moves
the coefficient estimates ``(A, N, Sigma)`` one gradient step against the
instantaneous losses::

    L(A, N)   = eps' eps,                 eps = (z_curr - z_prev) - (A z_prev + N)
    L(Sigma)  = || Sigma Sigma' - C ||_F^2

where ``C`` is an exponential-moving-average estimate of the error covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidArgumentError


def param_length(d: int) -> int:
    """Length of the flattened ``[A, N, Sigma]`` vector for input dim ``d``."""
    return 2 * d * d + d


def dim_from_length(length: int) -> int:
    d = int(round((-1 + math.sqrt(1 + 8 * length)) / 4))
    if d < 1 or param_length(d) != length:
        raise InvalidArgumentError(f"{length} is not of the form 2d^2+d")
    return d


def flatten_params(a, n, sigma) -> np.ndarray:
    """Row-major A, then N, then row-major Sigma."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = np.atleast_1d(np.asarray(n, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = n.shape[0]
    if a.shape != (d, d) or sigma.shape != (d, d):
        raise InvalidArgumentError(f"inconsistent shapes A{a.shape}, N{n.shape}, Sigma{sigma.shape}")
    return np.concatenate([a.ravel(), n, sigma.ravel()])


def unflatten_params(z, d: int | None = None):
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise InvalidArgumentError("z must be a vector")
    if d is None:
        d = dim_from_length(z.shape[0])
    elif z.shape[0] != param_length(d):
        raise InvalidArgumentError(f"expected length {param_length(d)} for d={d}, got {z.shape[0]}")
    dd = d * d
    return (
        z[:dd].reshape(d, d).copy(),
        z[dd:dd + d].copy(),
        z[dd + d:].reshape(d, d).copy(),
    )


@dataclass(frozen=True)
class LayerHyper:
    """Hyperparameters of one regression layer.

    ``z0`` is the flattened initial ``[A0, N0, Sigma0]``. The rates are
    validated as non-negative here (zero rates freeze the layer); search
    bounds keep them strictly positive during tuning.
    """

    eta_a: float
    eta_n: float
    eta_sigma: float
    phi: float
    rho: float
    z0: np.ndarray = field(repr=False)

    def __post_init__(self):
        z0 = np.asarray(self.z0, dtype=float).ravel()
        object.__setattr__(self, "z0", z0)
        dim_from_length(z0.shape[0])
        for name in ("eta_a", "eta_n", "eta_sigma", "phi", "rho"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)
        if self.phi > 1 or self.rho > 1:
            raise InvalidArgumentError("phi and rho must be <= 1")
        if not np.all(np.isfinite(z0)):
            raise InvalidArgumentError("z0 must be finite")

    @property
    def dim(self) -> int:
        return dim_from_length(self.z0.shape[0])

    @property
    def rates(self) -> np.ndarray:
        return np.array([self.eta_a, self.eta_n, self.eta_sigma, self.phi, self.rho])

    @classmethod
    def from_vector(cls, rates, z0):
        eta_a, eta_n, eta_sigma, phi, rho = (float(r) for r in rates)
        return cls(eta_a, eta_n, eta_sigma, phi, rho, z0)


@dataclass(frozen=True)
class LayerState:
    a: np.ndarray
    n: np.ndarray
    sigma: np.ndarray
    err_mean: np.ndarray
    err_cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.n.shape[0]

    @property
    def z(self) -> np.ndarray:
        return flatten_params(self.a, self.n, self.sigma)

    @classmethod
    def initial(cls, hyper: LayerHyper) -> "LayerState":
        """State at t=0: coefficients from ``z0``, zero error statistics."""
        d = hyper.dim
        a, n, sigma = unflatten_params(hyper.z0, d)
        return cls(a, n, sigma, np.zeros(d), np.zeros((d, d)))


def prediction_error(a, n, z_prev, z_curr):
    return (z_curr - z_prev) - (a @ z_prev + n)


def an_loss(a, n, z_prev, z_curr) -> float:
    eps = prediction_error(a, n, z_prev, z_curr)
    return float(eps @ eps)


def an_gradients(a, n, z_prev, z_curr):
    """Gradients of :func:`an_loss` with respect to A and N."""
    eps = prediction_error(a, n, z_prev, z_curr)
    return -2.0 * np.outer(eps, z_prev), -2.0 * eps


def sigma_loss(sigma, cov) -> float:
    r = sigma @ sigma.T - cov
    return float(np.sum(r * r))


def sigma_gradient(sigma, cov):
    """Gradient of :func:`sigma_loss`; ``cov`` must be symmetric."""
    return 4.0 * (sigma @ sigma.T - cov) @ sigma


def regcell_step(state: LayerState, hyper: LayerHyper, z_prev, z_curr):
    """Advance one layer by one time step.

    Returns ``(new_state, z_out)`` where ``z_out`` is the flattened updated
    coefficients. Raises :class:`DivergenceError` naming the first
    non-finite component.
    """
    z_prev = np.asarray(z_prev, dtype=float)
    z_curr = np.asarray(z_curr, dtype=float)
    d = state.dim
    if z_prev.shape != (d,) or z_curr.shape != (d,):
        raise InvalidArgumentError(f"inputs must have length {d}")
    with np.errstate(over="ignore", invalid="ignore"):
        eps = (z_curr - z_prev) - (state.a @ z_prev + state.n)
        # gradient w.r.t. A uses the previous input, matching the derived gradient
        a = state.a + 2.0 * hyper.eta_a * np.outer(eps, z_prev)
        if not np.all(np.isfinite(a)):
            raise DivergenceError("a")
        n = state.n + 2.0 * hyper.eta_n * eps
        if not np.all(np.isfinite(n)):
            raise DivergenceError("n")
        err_mean = hyper.phi * eps + (1.0 - hyper.phi) * state.err_mean
        if not np.all(np.isfinite(err_mean)):
            raise DivergenceError("err_mean")
        c = eps - err_mean
        err_cov = hyper.rho * np.outer(c, c) + (1.0 - hyper.rho) * state.err_cov
        if not np.all(np.isfinite(err_cov)):
            raise DivergenceError("err_cov")
        s = state.sigma
        sigma = s - 4.0 * hyper.eta_sigma * (s @ s.T - err_cov) @ s
        if not np.all(np.isfinite(sigma)):
            raise DivergenceError("sigma")
    new = LayerState(a, n, sigma, err_mean, err_cov)
    return new, new.z


def regress_series(series, hyper: LayerHyper):
    """Run :func:`regcell_step` over a whole series.

    Parameters
    ----------
    series : array_like, shape (T + 1, d) or (T + 1,) when d == 1
    hyper : LayerHyper

    Returns
    -------
    zs : ndarray, shape (T, 2d^2 + d)
        Coefficient vectors ``Z_1..Z_T``.
    state : LayerState
        Terminal state.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] < 2:
        raise InvalidArgumentError("series needs at least two points")
    if y.shape[1] != hyper.dim:
        raise InvalidArgumentError(f"series dim {y.shape[1]} does not match hyper dim {hyper.dim}")
    state = LayerState.initial(hyper)
    T = y.shape[0] - 1
    zs = np.empty((T, param_length(hyper.dim)))
    for t in range(1, T + 1):
        try:
            state, zs[t - 1] = regcell_step(state, hyper, y[t - 1], y[t])
        except DivergenceError as exc:
            raise exc.located(step=t) from None
    return zs, state
