"""Mixture density networks with full covariance components.

Each mixture component is parameterized by the upper Cholesky factor of its
precision matrix, so densities need no matrix inverse or determinant and
sampling needs a single triangular solve.
"""

from fullmdn.errors import (
    DatasetParseError,
    DivergenceError,
    InvalidInputError,
    InvalidParamsError,
    NumericError,
    ShapeError,
    SingularFactorError,
    TapeError,
)
from fullmdn.gmm import DiagBatch, DiagParams, MixtureBatch, MixtureParams
from fullmdn.loss import LossKind, LossValue

__version__ = "0.1.0"

__all__ = [
    "DatasetParseError",
    "DiagBatch",
    "DiagParams",
    "DivergenceError",
    "InvalidInputError",
    "InvalidParamsError",
    "LossKind",
    "LossValue",
    "MixtureBatch",
    "MixtureParams",
    "NumericError",
    "ShapeError",
    "SingularFactorError",
    "TapeError",
]
