"""Negative log-likelihood objectives for Gaussian mixtures.

Every objective is a function of the per-component terms

    c_i(x) = log w_i + log p_i(x)

* ``EXACT_NLL``:        ``-log sum_i exp(c_i)``
* ``PAPER_SURROGATE``:  ``-sum_i c_i`` (logarithm moved inside the unweighted sum)
* ``WEIGHTED_JENSEN``:  ``-sum_i w_i c_i``

``WEIGHTED_JENSEN`` upper-bounds the exact NLL for all parameters.
``PAPER_SURROGATE`` does so only when every ``c_i <= 0`` (with unnormalized
``p_i``); it is kept as written for comparison. All three coincide for K = 1.

This module evaluates losses with plain numpy. Gradients for training are
taken on a :class:`fullmdn.tape.GradientTape` by :mod:`fullmdn.autonet`,
which builds the same expressions from tape primitives.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fullmdn import gmm
from fullmdn.errors import InvalidParamsError, ShapeError


class LossKind(enum.Enum):
    EXACT_NLL = "exact"
    PAPER_SURROGATE = "paper"
    WEIGHTED_JENSEN = "jensen"

    @classmethod
    def parse(cls, value: "str | LossKind") -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown loss kind {value!r}; expected one of: {choices}") from None


@dataclass(frozen=True)
class LossValue:
    total: float
    per_sample: np.ndarray


def reduce_terms(terms: np.ndarray, log_weights: np.ndarray, kind: LossKind) -> np.ndarray:
    """Collapse per-component terms ``(..., K)`` into per-sample losses ``(...)``."""
    if kind is LossKind.EXACT_NLL:
        return -gmm.logsumexp(terms, axis=-1)
    if np.any(np.isneginf(log_weights)):
        raise InvalidParamsError(f"{kind.value} loss needs strictly positive weights (log 0 is undefined)")
    if kind is LossKind.PAPER_SURROGATE:
        return -np.sum(terms, axis=-1)
    if kind is LossKind.WEIGHTED_JENSEN:
        return -np.sum(np.exp(log_weights) * terms, axis=-1)
    raise ValueError(f"unsupported loss kind {kind!r}")


def _terms(x, params: gmm.Params, normalized: bool) -> np.ndarray:
    return params.log_weights + gmm.component_log_densities(x, params, normalized)


def _check_full(params) -> None:
    if not isinstance(params, gmm.MixtureParams):
        raise TypeError("expected MixtureParams")


def _check_diag(params) -> None:
    if not isinstance(params, gmm.DiagParams):
        raise TypeError("expected DiagParams")


def exact_nll_full(x, params: gmm.MixtureParams, normalized: bool = True) -> float:
    _check_full(params)
    return float(reduce_terms(_terms(x, params, normalized), params.log_weights, LossKind.EXACT_NLL))


def surrogate_bound_full(x, params: gmm.MixtureParams, normalized: bool = True) -> float:
    """``-sum_i (log w_i + sum_j diag(U_i)_j - 0.5 ||ubar_i (x - mu_i)||^2)``.

    When ``normalized`` is set, the ``-(N/2) log(2 pi)`` constant enters every
    component term, so the result matches :func:`exact_nll_full` at K = 1.
    """
    _check_full(params)
    terms = _terms(x, params, normalized)
    return float(reduce_terms(terms, params.log_weights, LossKind.PAPER_SURROGATE))


def weighted_jensen_full(x, params: gmm.MixtureParams, normalized: bool = True) -> float:
    """``-sum_i w_i (log w_i + log p_i(x))``, an upper bound on the exact NLL."""
    _check_full(params)
    terms = _terms(x, params, normalized)
    return float(reduce_terms(terms, params.log_weights, LossKind.WEIGHTED_JENSEN))


def exact_nll_diag(x, params: gmm.DiagParams, normalized: bool = True) -> float:
    _check_diag(params)
    return float(reduce_terms(_terms(x, params, normalized), params.log_weights, LossKind.EXACT_NLL))


def surrogate_bound_diag(x, params: gmm.DiagParams, normalized: bool = True) -> float:
    _check_diag(params)
    terms = _terms(x, params, normalized)
    return float(reduce_terms(terms, params.log_weights, LossKind.PAPER_SURROGATE))


def weighted_jensen_diag(x, params: gmm.DiagParams, normalized: bool = True) -> float:
    _check_diag(params)
    terms = _terms(x, params, normalized)
    return float(reduce_terms(terms, params.log_weights, LossKind.WEIGHTED_JENSEN))


def sample_loss(x, params: gmm.Params, kind: LossKind | str, normalized: bool = True) -> float:
    """Loss of one target under one mixture, for either parameterization."""
    kind = LossKind.parse(kind)
    return float(reduce_terms(_terms(x, params, normalized), params.log_weights, kind))


def batch_loss(
    batch_x,
    batch_params: gmm.MixtureBatch | gmm.DiagBatch | Sequence[gmm.Params],
    kind: LossKind | str,
    normalized: bool = True,
) -> LossValue:
    """Per-sample losses for paired targets and mixtures, and their mean.

    ``batch_params`` is either a stacked batch or a sequence of per-sample
    parameters (stacked internally). The mean is over samples, so loss scale
    does not depend on batch size.
    """
    kind = LossKind.parse(kind)
    x = np.asarray(batch_x, dtype=np.float64)
    if not isinstance(batch_params, (gmm.MixtureBatch, gmm.DiagBatch)):
        batch_params = gmm.stack_params(list(batch_params))
    if x.ndim != 2 or x.shape[0] != len(batch_params) or x.shape[0] < 1:
        raise ShapeError(
            f"batch_x must have shape (B, N) with B = {len(batch_params)} >= 1, got {x.shape}"
        )
    if x.shape[1] != batch_params.means.shape[-1]:
        raise ShapeError(f"targets have N={x.shape[1]}, mixtures have N={batch_params.means.shape[-1]}")
    terms = batch_params.log_weights + gmm.batch_component_log_densities(x, batch_params, normalized)
    per_sample = reduce_terms(terms, batch_params.log_weights, kind)
    return LossValue(total=float(np.mean(per_sample)), per_sample=per_sample)
