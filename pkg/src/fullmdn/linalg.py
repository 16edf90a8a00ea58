"""Packed upper-triangular primitives for precision Cholesky factors.

A raw factor ``u`` of dimension N is stored as the N(N+1)/2 entries of an
upper-triangular matrix, row-major over the upper triangle with the diagonal
included::

    N = 3:  [u00, u01, u02, u11, u12, u22]

The constrained factor ``ubar`` has the same layout with every diagonal entry
replaced by ``exp`` of the (clamped) raw entry, so that ``ubar.T @ ubar`` is a
valid precision matrix.

All kernels broadcast over leading axes: a factor of shape ``(..., P)`` pairs
with vectors of shape ``(..., N)``. Public functions validate their inputs;
the underscore-prefixed kernels do not and are used on hot paths.
"""

from functools import lru_cache

import numpy as np

from fullmdn.errors import InvalidInputError, ShapeError, SingularFactorError

#: Raw diagonal entries are clamped to this range before exponentiation.
LOG_DIAG_BOUND = 30.0

#: Constrained diagonal entries below this are treated as singular.
SINGULAR_THRESHOLD = 1e-300


def packed_size(n: int) -> int:
    return n * (n + 1) // 2


def packed_dim(p: int) -> int:
    """Infer N from a packed length N(N+1)/2."""
    n = int(round((np.sqrt(8 * p + 1) - 1) / 2))
    if n < 1 or packed_size(n) != p:
        raise ShapeError(f"packed length {p} is not N(N+1)/2 for any positive N")
    return n


def packed_index(n: int, row: int, col: int) -> int:
    """Position of entry (row, col), row <= col, in the packed layout."""
    if not 0 <= row <= col < n:
        raise IndexError(f"({row}, {col}) is not in the upper triangle of a {n}x{n} matrix")
    return row * n - row * (row - 1) // 2 + (col - row)


@lru_cache(maxsize=None)
def diag_indices(n: int) -> np.ndarray:
    idx = np.array([packed_index(n, j, j) for j in range(n)], dtype=np.intp)
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def triu_rows_cols(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of every packed entry (same order as ``np.triu_indices``)."""
    rows, cols = np.triu_indices(n)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


@lru_cache(maxsize=None)
def _row_slices(n: int) -> tuple[tuple[int, int], ...]:
    return tuple((packed_index(n, j, j), packed_index(n, j, n - 1) + 1) for j in range(n))


@lru_cache(maxsize=None)
def _column_above_diag(n: int) -> tuple[np.ndarray, ...]:
    # packed positions of (0, j), (1, j), ..., (j-1, j)
    return tuple(
        np.array([packed_index(n, k, j) for k in range(j)], dtype=np.intp) for j in range(n)
    )


# -- validation ---------------------------------------------------------------


def _as_packed(u, n: int | None = None) -> tuple[np.ndarray, int]:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim < 1:
        raise ShapeError("packed factor must have at least one axis")
    p = u.shape[-1]
    dim = packed_dim(p)
    if n is not None and dim != n:
        raise ShapeError(f"packed factor has dimension {dim}, expected {n}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("packed factor contains non-finite entries")
    return u, dim


def _as_vector(v, n: int, what: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim < 1 or v.shape[-1] != n:
        raise ShapeError(f"{what} has trailing length {v.shape[-1] if v.ndim else 0}, expected {n}")
    return v


def _check_positive_diag(c: np.ndarray, n: int) -> None:
    d = c[..., diag_indices(n)]
    if not np.all(d >= SINGULAR_THRESHOLD):
        raise SingularFactorError(
            f"factor diagonal entry {np.min(d)!r} is below {SINGULAR_THRESHOLD}"
        )


# -- kernels ------------------------------------------------------------------


def _exp_diag(u: np.ndarray, n: int) -> np.ndarray:
    out = np.array(u, dtype=np.float64, copy=True)
    d = diag_indices(n)
    out[..., d] = np.exp(np.clip(u[..., d], -LOG_DIAG_BOUND, LOG_DIAG_BOUND))
    return out


def _log_det_half(u: np.ndarray, n: int) -> np.ndarray:
    return np.sum(np.clip(u[..., diag_indices(n)], -LOG_DIAG_BOUND, LOG_DIAG_BOUND), axis=-1)


def _tri_matvec(c: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    shape = np.broadcast_shapes(c.shape[:-1], v.shape[:-1]) + (n,)
    out = np.empty(shape)
    for j, (lo, hi) in enumerate(_row_slices(n)):
        out[..., j] = np.sum(c[..., lo:hi] * v[..., j:], axis=-1)
    return out


def _tri_rmatvec(c: np.ndarray, g: np.ndarray, n: int) -> np.ndarray:
    """Compute ``ubar.T @ g``."""
    shape = np.broadcast_shapes(c.shape[:-1], g.shape[:-1]) + (n,)
    out = np.zeros(shape)
    for j, (lo, hi) in enumerate(_row_slices(n)):
        out[..., j:] += c[..., lo:hi] * g[..., j : j + 1]
    return out


def _solve_lower_transposed(c: np.ndarray, rhs: np.ndarray, n: int) -> np.ndarray:
    shape = np.broadcast_shapes(c.shape[:-1], rhs.shape[:-1]) + (n,)
    v = np.empty(shape)
    diag = diag_indices(n)
    above = _column_above_diag(n)
    for j in range(n):
        acc = rhs[..., j]
        if j:
            acc = acc - np.sum(c[..., above[j]] * v[..., :j], axis=-1)
        v[..., j] = acc / c[..., diag[j]]
    return v


def _solve_upper(c: np.ndarray, rhs: np.ndarray, n: int) -> np.ndarray:
    shape = np.broadcast_shapes(c.shape[:-1], rhs.shape[:-1]) + (n,)
    v = np.empty(shape)
    slices = _row_slices(n)
    for j in range(n - 1, -1, -1):
        lo, hi = slices[j]
        acc = rhs[..., j]
        if j < n - 1:
            acc = acc - np.sum(c[..., lo + 1 : hi] * v[..., j + 1 :], axis=-1)
        v[..., j] = acc / c[..., lo]
    return v


# -- public operations --------------------------------------------------------


def exp_diag(u) -> np.ndarray:
    """Map a raw triangular factor to a Cholesky factor with positive diagonal.

    Off-diagonal entries are copied; each diagonal entry becomes
    ``exp(clip(u_jj, -30, 30))``.
    """
    u, n = _as_packed(u)
    return _exp_diag(u, n)


def log_det_half_precision(u) -> float | np.ndarray:
    """``log |ubar.T @ ubar| ** 0.5`` for a raw factor, i.e. its diagonal sum.

    Uses the clamped diagonal so it always agrees with :func:`exp_diag`; inside
    the clamp range this is exactly the sum of the raw diagonal entries.
    """
    u, n = _as_packed(u)
    out = _log_det_half(u, n)
    return float(out) if out.ndim == 0 else out


def tri_matvec(c, v) -> np.ndarray:
    """Upper-triangular matrix-vector product ``ubar @ v``."""
    c, n = _as_packed(c)
    return _tri_matvec(c, _as_vector(v, n), n)


def solve_lower_transposed(c, rhs) -> np.ndarray:
    """Solve ``ubar.T @ v = rhs`` by forward substitution.

    The result is ``ubar^{-T} @ rhs``. Note that ``ubar^{-T}`` is a square
    root of ``(ubar @ ubar.T)^{-1}``, not of the covariance; sampling uses
    :func:`solve_upper`.

    Raises
    ------
    SingularFactorError
        If a diagonal entry of ``c`` is below ``1e-300``.
    """
    c, n = _as_packed(c)
    rhs = _as_vector(rhs, n, "right-hand side")
    _check_positive_diag(c, n)
    return _solve_lower_transposed(c, rhs, n)


def solve_upper(c, rhs) -> np.ndarray:
    """Solve ``ubar @ v = rhs`` by back substitution (last row first).

    The result is ``ubar^{-1} @ rhs``. Since the covariance is
    ``ubar^{-1} @ ubar^{-T}``, this is the map that turns standard normal
    noise into a sample offset and inverts ``eta = ubar @ (x - mu)``.

    Raises
    ------
    SingularFactorError
        If a diagonal entry of ``c`` is below ``1e-300``.
    """
    c, n = _as_packed(c)
    rhs = _as_vector(rhs, n, "right-hand side")
    _check_positive_diag(c, n)
    return _solve_upper(c, rhs, n)


def covariance_from_factor(c) -> np.ndarray:
    """Dense covariance ``(ubar.T @ ubar)^{-1}`` of a single Cholesky factor."""
    c, n = _as_packed(c)
    if c.ndim != 1:
        raise ShapeError("covariance_from_factor takes a single factor")
    _check_positive_diag(c, n)
    # row j is ubar^{-T} e_j, so rows @ rows.T = ubar^{-1} ubar^{-T}
    rows = _solve_lower_transposed(c, np.eye(n), n)
    return rows @ rows.T


def to_dense(u) -> np.ndarray:
    """Expand packed upper-triangular storage into a dense ``(..., N, N)`` array."""
    u, n = _as_packed(u)
    rows, cols = triu_rows_cols(n)
    dense = np.zeros(u.shape[:-1] + (n, n))
    dense[..., rows, cols] = u
    return dense


def from_dense(a) -> np.ndarray:
    """Pack the upper triangle of a ``(..., N, N)`` array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError("expected square matrices")
    rows, cols = triu_rows_cols(a.shape[-1])
    return a[..., rows, cols].copy()
