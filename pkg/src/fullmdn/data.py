"""Synthetic conditional datasets and their CSV format.

File layout::

    # mdn-dataset v1 N=<n> M=<m>
    y_1,...,y_M,x_1,...,x_N
    ...

Values are written with 17 significant digits, which round-trips every
finite double exactly (including ``-0.0`` and subnormals). A path of ``-``
means stdin/stdout.
"""

from __future__ import annotations

import io
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from fullmdn import gmm
from fullmdn import rng as rng_streams
from fullmdn.errors import DatasetParseError, ShapeError

HEADER_RE = re.compile(r"^# mdn-dataset v1 N=(\d+) M=(\d+)\s*$")


@dataclass(frozen=True)
class ConditionedBatch:
    """Paired targets ``x`` (B, N) and conditions ``y`` (B, M)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ShapeError(f"x and y must be 2-D with equal row counts, got {x.shape} and {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def N(self) -> int:
        return self.x.shape[1]

    @property
    def M(self) -> int:
        return self.y.shape[1]

    def split(self, fraction: float) -> tuple["ConditionedBatch", "ConditionedBatch"]:
        """Split off the trailing ``fraction`` of rows as a second batch."""
        n_tail = int(round(len(self) * fraction))
        cut = len(self) - n_tail
        return ConditionedBatch(self.x[:cut], self.y[:cut]), ConditionedBatch(self.x[cut:], self.y[cut:])


# -- generators ------------------------------------------------------------------------


def rotation(angle) -> np.ndarray:
    """2-D rotation matrices, shape ``angle.shape + (2, 2)``."""
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def rotating_gaussian_covariance(y, aspect: float = 0.01) -> np.ndarray:
    """Conditional covariance ``R(y) diag(1, aspect) R(y)^T``."""
    r = rotation(np.asarray(y, dtype=np.float64))
    return r @ np.diag([1.0, aspect]) @ np.swapaxes(r, -1, -2)


def rotating_gaussian_log_density(x, y, aspect: float = 0.01) -> np.ndarray:
    """Exact conditional log density of :func:`gen_rotating_gaussian` for rows of ``x`` (B, 2), ``y`` (B,)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    # rotate back into the principal frame: x = R(y) diag(1, sqrt(aspect)) z
    c, s = np.cos(y), np.sin(y)
    p1 = c * x[:, 0] + s * x[:, 1]
    p2 = -s * x[:, 0] + c * x[:, 1]
    quad = p1 * p1 + p2 * p2 / aspect
    return -0.5 * quad - 0.5 * math.log(aspect) - gmm.LOG_2PI


def gen_rotating_gaussian(b: int, seed: int, aspect: float = 0.01, y=None) -> ConditionedBatch:
    """``y ~ U[0, pi)``, ``x | y ~ N(0, R(y) diag(1, aspect) R(y)^T)``.

    Pass ``y`` (scalar or length-``b`` array) to fix the conditions instead of
    drawing them.
    """
    if not 0.0 < aspect <= 1.0:
        raise ValueError(f"aspect must lie in (0, 1], got {aspect}")
    gen = rng_streams.stream(seed, "data")
    if y is None:
        y = gen.uniform(0.0, math.pi, size=b)
    else:
        y = np.broadcast_to(np.asarray(y, dtype=np.float64), (b,)).copy()
    z = gen.standard_normal((b, 2)) * np.array([1.0, math.sqrt(aspect)])
    x = np.einsum("bij,bj->bi", rotation(y), z)
    return ConditionedBatch(x, y[:, None])


def mixture_ring_centers(y, modes: int = 4, radius: float = 2.0) -> np.ndarray:
    """Mode centers for each condition: shape ``y.shape + (modes, 2)``."""
    y = np.asarray(y, dtype=np.float64)
    angles = y[..., None] + 2.0 * math.pi * np.arange(modes) / modes
    return radius * np.stack([np.cos(angles), np.sin(angles)], -1)


def gen_mixture_ring(
    b: int, seed: int, modes: int = 4, radius: float = 2.0, noise: float = 0.1
) -> ConditionedBatch:
    """``modes`` equally weighted isotropic Gaussians on a circle rotated by ``y ~ U[0, 2 pi)``."""
    if modes < 2:
        raise ValueError("mixture_ring needs at least 2 modes")
    if radius <= 0 or noise < 0:
        raise ValueError("radius must be positive and noise non-negative")
    gen = rng_streams.stream(seed, "data")
    y = gen.uniform(0.0, 2.0 * math.pi, size=b)
    k = gen.integers(0, modes, size=b)
    centers = mixture_ring_centers(y, modes, radius)[np.arange(b), k]
    x = centers + noise * gen.standard_normal((b, 2))
    return ConditionedBatch(x, y[:, None])


def gen_two_moons_conditional(b: int, seed: int, noise: float = 0.1) -> ConditionedBatch:
    """Two interleaved half circles; ``y`` in {0, 1} picks the moon.

    Moon 0 is the upper half of the unit circle around (0, 0); moon 1 the
    lower half of the unit circle around (1, 0.5).
    """
    if noise < 0:
        raise ValueError("noise must be non-negative")
    gen = rng_streams.stream(seed, "data")
    label = gen.integers(0, 2, size=b)
    t = gen.uniform(0.0, math.pi, size=b)
    x = np.where(
        label[:, None] == 0,
        np.stack([np.cos(t), np.sin(t)], -1),
        np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], -1),
    )
    x = x + noise * gen.standard_normal((b, 2))
    return ConditionedBatch(x, label[:, None].astype(np.float64))


GENERATORS: dict[str, Callable[..., ConditionedBatch]] = {
    "rotating_gaussian": gen_rotating_gaussian,
    "two_moons_conditional": gen_two_moons_conditional,
    "mixture_ring": gen_mixture_ring,
}


@dataclass(frozen=True)
class DatasetSpec:
    generator: str
    count: int
    seed: int = 0
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(
                f"unknown generator {self.generator!r}; valid generators: {', '.join(sorted(GENERATORS))}"
            )
        if self.count < 1:
            raise ValueError("sample count must be >= 1")


def generate(spec: DatasetSpec) -> ConditionedBatch:
    return GENERATORS[spec.generator](spec.count, spec.seed, **spec.params)


# -- file format -------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_dataset(batch: ConditionedBatch) -> str:
    buf = io.StringIO()
    buf.write(f"# mdn-dataset v1 N={batch.N} M={batch.M}\n")
    for yrow, xrow in zip(batch.y, batch.x):
        buf.write(",".join(_fmt(v) for v in (*yrow, *xrow)) + "\n")
    return buf.getvalue()


def loads_dataset(text: str) -> ConditionedBatch:
    lines = text.splitlines()
    if not lines:
        raise DatasetParseError("empty dataset file", 1)
    m = HEADER_RE.match(lines[0])
    if m is None:
        raise DatasetParseError("expected header '# mdn-dataset v1 N=<n> M=<m>'", 1)
    n, mdim = int(m.group(1)), int(m.group(2))
    if n < 1 or mdim < 1:
        raise DatasetParseError("N and M must be positive", 1)
    width = n + mdim
    rows = []
    for num, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise DatasetParseError(f"row has {len(cells)} columns, header declares {width} (M={mdim} + N={n})", num)
        try:
            values = [float(c) for c in cells]
        except ValueError:
            raise DatasetParseError(f"non-numeric cell in row {line!r}", num) from None
        if not all(math.isfinite(v) for v in values):
            raise DatasetParseError("non-finite cell", num)
        rows.append(values)
    table = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return ConditionedBatch(table[:, mdim:], table[:, :mdim])


def save_dataset(batch: ConditionedBatch, path) -> None:
    text = dumps_dataset(batch)
    if str(path) == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text)


def load_dataset(path) -> ConditionedBatch:
    text = sys.stdin.read() if str(path) == "-" else Path(path).read_text()
    return loads_dataset(text)
