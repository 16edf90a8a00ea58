"""Gaussian mixture densities, sampling and the x <-> eta map.

Two parameterizations are supported:

* full covariance: component ``i`` has precision ``ubar_i.T @ ubar_i`` where
  ``ubar_i = exp_diag(factors_raw[i])`` (see :mod:`fullmdn.linalg`);
* diagonal covariance: precision ``diag(exp(2 * log_inv_scales[i]))``.

Densities are normalized by default, i.e. they include the
``-(N/2) log(2 pi)`` term. Pass ``normalized=False`` for the bare
``-0.5 * ||ubar (x - mu)||^2 + sum(diag(u))`` form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from fullmdn import linalg
from fullmdn.errors import InvalidParamsError, ShapeError

LOG_2PI = float(np.log(2.0 * np.pi))

#: Weights must sum to one within this tolerance; they are then renormalized.
SIMPLEX_TOL = 1e-9


def _check_simplex(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 1:
        raise InvalidParamsError("weights must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidParamsError("weights must be finite and non-negative")
    total = float(np.sum(w))
    if total == 0.0:
        raise InvalidParamsError("all mixture weights are zero")
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise InvalidParamsError(f"weights sum to {total!r}, not 1")
    return w / total


def _finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise InvalidParamsError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class MixtureParams:
    """A full-covariance Gaussian mixture.

    Attributes
    ----------
    weights : ndarray, shape (K,)
    means : ndarray, shape (K, N)
    factors_raw : ndarray, shape (K, N(N+1)/2)
        Unconstrained packed upper-triangular factors.
    log_weights : ndarray, shape (K,), optional
        Exact log weights (e.g. from a log-softmax). Derived from ``weights``
        when omitted.
    """

    weights: np.ndarray
    means: np.ndarray
    factors_raw: np.ndarray
    log_weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        w = _check_simplex(self.weights)
        means = np.asarray(self.means, dtype=np.float64)
        raw = np.asarray(self.factors_raw, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] != w.size:
            raise ShapeError(f"means must have shape (K={w.size}, N), got {means.shape}")
        n = means.shape[1]
        if raw.shape != (w.size, linalg.packed_size(n)):
            raise ShapeError(
                f"factors_raw must have shape ({w.size}, {linalg.packed_size(n)}), got {raw.shape}"
            )
        _finite("means", means)
        _finite("factors_raw", raw)
        if self.log_weights is None:
            with np.errstate(divide="ignore"):
                logw = np.log(w)
        else:
            logw = np.asarray(self.log_weights, dtype=np.float64)
            if logw.shape != w.shape:
                raise ShapeError("log_weights must match weights")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "factors_raw", raw)
        object.__setattr__(self, "log_weights", logw)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def N(self) -> int:
        return self.means.shape[1]

    def factor(self, i: int) -> np.ndarray:
        """Constrained Cholesky factor of component ``i``."""
        return linalg._exp_diag(self.factors_raw[i], self.N)

    def covariance(self, i: int) -> np.ndarray:
        return linalg.covariance_from_factor(self.factor(i))


@dataclass(frozen=True)
class DiagParams:
    """A diagonal-covariance Gaussian mixture; precision is ``diag(exp(2 sigma))``."""

    weights: np.ndarray
    means: np.ndarray
    log_inv_scales: np.ndarray
    log_weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        w = _check_simplex(self.weights)
        means = np.asarray(self.means, dtype=np.float64)
        sig = np.asarray(self.log_inv_scales, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] != w.size:
            raise ShapeError(f"means must have shape (K={w.size}, N), got {means.shape}")
        if sig.shape != means.shape:
            raise ShapeError(f"log_inv_scales must have shape {means.shape}, got {sig.shape}")
        _finite("means", means)
        _finite("log_inv_scales", sig)
        if self.log_weights is None:
            with np.errstate(divide="ignore"):
                logw = np.log(w)
        else:
            logw = np.asarray(self.log_weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "log_inv_scales", sig)
        object.__setattr__(self, "log_weights", logw)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def N(self) -> int:
        return self.means.shape[1]

    def embed(self) -> MixtureParams:
        """The same mixture as full-covariance parameters (zero off-diagonals)."""
        raw = np.zeros((self.K, linalg.packed_size(self.N)))
        raw[:, linalg.diag_indices(self.N)] = self.log_inv_scales
        return MixtureParams(self.weights, self.means, raw, log_weights=self.log_weights)


Params = Union[MixtureParams, DiagParams]


@dataclass(frozen=True)
class MixtureBatch:
    """Per-condition full-covariance mixtures for a batch of B conditions.

    Shapes: ``log_weights`` (B, K), ``means`` (B, K, N), ``factors_raw`` (B, K, P).
    """

    log_weights: np.ndarray
    means: np.ndarray
    factors_raw: np.ndarray

    def __len__(self) -> int:
        return self.log_weights.shape[0]

    def __getitem__(self, b: int) -> MixtureParams:
        return MixtureParams(
            np.exp(self.log_weights[b]), self.means[b], self.factors_raw[b],
            log_weights=self.log_weights[b],
        )


@dataclass(frozen=True)
class DiagBatch:
    """Per-condition diagonal mixtures; ``log_inv_scales`` has shape (B, K, N)."""

    log_weights: np.ndarray
    means: np.ndarray
    log_inv_scales: np.ndarray

    def __len__(self) -> int:
        return self.log_weights.shape[0]

    def __getitem__(self, b: int) -> DiagParams:
        return DiagParams(
            np.exp(self.log_weights[b]), self.means[b], self.log_inv_scales[b],
            log_weights=self.log_weights[b],
        )


# -- densities ------------------------------------------------------------------


def _full_log_density(x, mean, u, n, normalized):
    z = linalg._tri_matvec(linalg._exp_diag(u, n), x - mean, n)
    out = linalg._log_det_half(u, n) - 0.5 * np.sum(z * z, axis=-1)
    return out - 0.5 * n * LOG_2PI if normalized else out


def _diag_log_density(x, mean, sigma, normalized):
    n = mean.shape[-1]
    s = np.clip(sigma, -linalg.LOG_DIAG_BOUND, linalg.LOG_DIAG_BOUND)
    z = (x - mean) * np.exp(s)
    out = np.sum(s, axis=-1) - 0.5 * np.sum(z * z, axis=-1)
    return out - 0.5 * n * LOG_2PI if normalized else out


def _as_point(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1 or x.shape[-1] != n:
        raise ShapeError(f"x must have trailing length {n}, got shape {x.shape}")
    return x


def component_log_density_full(x, mean, u, normalized: bool = True):
    """Log density of ``N(x | mean, (ubar.T ubar)^{-1})`` with ``ubar = exp_diag(u)``.

    ``x`` may carry leading axes; the result then has those axes.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if mean.ndim != 1:
        raise ShapeError("mean must be a vector")
    n = mean.size
    u, _ = linalg._as_packed(u, n)
    out = _full_log_density(_as_point(x, n), mean, u, n, normalized)
    return float(out) if np.ndim(out) == 0 else out


def component_log_density_diag(x, mean, log_inv_scales, normalized: bool = True):
    """Log density of a diagonal Gaussian with inverse scales ``exp(log_inv_scales)``."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.asarray(log_inv_scales, dtype=np.float64)
    if mean.ndim != 1 or sigma.shape != mean.shape:
        raise ShapeError("mean and log_inv_scales must be vectors of equal length")
    out = _diag_log_density(_as_point(x, mean.size), mean, sigma, normalized)
    return float(out) if np.ndim(out) == 0 else out


def component_log_densities(x, params: Params, normalized: bool = True) -> np.ndarray:
    """Log density of every component at ``x``; shape ``x.shape[:-1] + (K,)``."""
    x = _as_point(x, params.N)[..., None, :]
    if isinstance(params, MixtureParams):
        return _full_log_density(x, params.means, params.factors_raw, params.N, normalized)
    return _diag_log_density(x, params.means, params.log_inv_scales, normalized)


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """``log(sum(exp(a)))`` along ``axis``, shifting by the maximum first.

    Entries equal to ``-inf`` contribute nothing; an all ``-inf`` slice gives ``-inf``.
    """
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def mixture_log_density(x, params: Params, normalized: bool = True):
    """``log sum_i w_i p_i(x)`` evaluated stably in log space.

    ``x`` has shape (N,) or (..., N); the result is a float or has shape (...).
    """
    if not np.any(params.weights > 0):
        raise InvalidParamsError("all mixture weights are zero")
    terms = params.log_weights + component_log_densities(x, params, normalized)
    out = logsumexp(terms, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def batch_component_log_densities(x, batch: MixtureBatch | DiagBatch, normalized: bool = True):
    """Per-component log densities for paired ``x`` (B, N) and a batch of mixtures -> (B, K)."""
    x = np.asarray(x, dtype=np.float64)[:, None, :]
    if isinstance(batch, MixtureBatch):
        n = batch.means.shape[-1]
        return _full_log_density(x, batch.means, batch.factors_raw, n, normalized)
    return _diag_log_density(x, batch.means, batch.log_inv_scales, normalized)


# -- sampling -------------------------------------------------------------------


def _components_from_uniform(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(weights)
    ok = (u[:, None] <= cdf) & (weights > 0)
    idx = np.argmax(ok, axis=1)
    # u beyond a cdf that rounds below 1
    idx[~ok.any(axis=1)] = np.nonzero(weights > 0)[0][-1]
    return idx.astype(np.intp)


def component_from_uniform(weights, u: float) -> int:
    """Inverse-CDF component choice for a uniform draw ``u`` in [0, 1).

    Returns the lowest index ``i`` with ``u <= cumsum(weights)[i]`` among
    components of positive weight, so a draw on a boundary selects the lower
    index.
    """
    w = np.asarray(weights, dtype=np.float64)
    return int(_components_from_uniform(w, np.array([u], dtype=np.float64))[0])


def sample_component_index(weights, rng: np.random.Generator) -> int:
    """Draw a component index with probability proportional to its weight (one uniform draw)."""
    return component_from_uniform(weights, rng.random())


def _check_index(i: int, k: int) -> int:
    i = int(i)
    if not 0 <= i < k:
        raise IndexError(f"component index {i} out of range for K={k}")
    return i


def _indices_and_eta(params, rng, count, forced_index, eta):
    if forced_index is None:
        idx = _components_from_uniform(params.weights, rng.random(count))
    else:
        idx = np.full(count, _check_index(forced_index, params.K), dtype=np.intp)
    if eta is None:
        eta = rng.standard_normal((count, params.N))
    else:
        eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), (count, params.N)).copy()
    return idx, eta


def sample_full_batch(params: MixtureParams, rng, count: int, forced_index=None, eta=None):
    """Draw ``count`` samples; returns ``(x, indices, eta)`` with shapes (count, N), (count,), (count, N).

    Random draws happen in this order: ``count`` uniforms for the component
    indices (skipped when ``forced_index`` is given), then the ``(count, N)``
    standard normals (skipped when ``eta`` is given).
    """
    idx, eta = _indices_and_eta(params, rng, count, forced_index, eta)
    factors = linalg._exp_diag(params.factors_raw, params.N)
    linalg._check_positive_diag(factors, params.N)
    x = params.means[idx] + linalg._solve_upper(factors[idx], eta, params.N)
    return x, idx, eta


def sample_diag_batch(params: DiagParams, rng, count: int, forced_index=None, eta=None):
    """Diagonal counterpart of :func:`sample_full_batch`: ``x = mu_i + eta / exp(sigma_i)``."""
    idx, eta = _indices_and_eta(params, rng, count, forced_index, eta)
    s = np.clip(params.log_inv_scales[idx], -linalg.LOG_DIAG_BOUND, linalg.LOG_DIAG_BOUND)
    x = params.means[idx] + eta / np.exp(s)
    return x, idx, eta


def sample_full(params: MixtureParams, rng, forced_index=None, eta=None):
    """Draw one sample ``x = mu_i + ubar_i^{-1} eta``; returns ``(x, i, eta)``."""
    x, idx, eta = sample_full_batch(params, rng, 1, forced_index, eta)
    return x[0], int(idx[0]), eta[0]


def sample_diag(params: DiagParams, rng, forced_index=None, eta=None):
    """Draw one sample ``x = mu_i + eta / exp(sigma_i)``; returns ``(x, i, eta)``."""
    x, idx, eta = sample_diag_batch(params, rng, 1, forced_index, eta)
    return x[0], int(idx[0]), eta[0]


def sample(params: Params, rng, count: int, forced_index=None):
    if isinstance(params, MixtureParams):
        return sample_full_batch(params, rng, count, forced_index)
    return sample_diag_batch(params, rng, count, forced_index)


# -- invertible block -------------------------------------------------------------


def x_to_latent(x, params: MixtureParams, i: int) -> np.ndarray:
    """Latent code ``eta = ubar_i (x - mu_i)`` of ``x`` under component ``i``."""
    i = _check_index(i, params.K)
    x = _as_point(x, params.N)
    return linalg._tri_matvec(params.factor(i), x - params.means[i], params.N)


def latent_to_x(eta, params: MixtureParams, i: int) -> np.ndarray:
    """Inverse of :func:`x_to_latent`: ``x = mu_i + ubar_i^{-1} eta``."""
    i = _check_index(i, params.K)
    eta = _as_point(eta, params.N)
    return params.means[i] + linalg.solve_upper(params.factor(i), eta)


def stack_params(items: Sequence[Params]) -> MixtureBatch | DiagBatch:
    """Stack per-condition parameters (all of one kind and shape) into a batch."""
    if not items:
        raise ShapeError("cannot stack an empty parameter list")
    logw = np.stack([p.log_weights for p in items])
    means = np.stack([p.means for p in items])
    if all(isinstance(p, MixtureParams) for p in items):
        return MixtureBatch(logw, means, np.stack([p.factors_raw for p in items]))
    if all(isinstance(p, DiagParams) for p in items):
        return DiagBatch(logw, means, np.stack([p.log_inv_scales for p in items]))
    raise ShapeError("cannot mix full and diagonal parameters in one batch")
