"""Feed-forward network mapping a condition ``y`` to Gaussian mixture parameters.

The output head of width ``D`` is split, in order, into

* ``K`` weight logits (log-softmax gives ``log w``),
* ``K * N`` means,
* ``K * N(N+1)/2`` packed raw triangular factors (full mode) or
  ``K * N`` log inverse scales (diagonal mode).

Forward passes run on :mod:`fullmdn.tape` primitives. Without a tape they
only compute values; with one they also record everything needed for exact
reverse-mode gradients of a loss with respect to all weights.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from fullmdn import gmm, linalg
from fullmdn import rng as rng_streams
from fullmdn import tape as T
from fullmdn.errors import DatasetParseError, NumericError, ShapeError
from fullmdn.loss import LossKind, LossValue

ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu}
MODES = ("full", "diagonal")

CHECKPOINT_MAGIC = "# mdn-checkpoint v1"


@dataclass(frozen=True)
class MdnConfig:
    K: int
    N: int
    M: int
    hidden: tuple[int, ...] = (128, 128)
    activation: str = "tanh"
    covariance_mode: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.K < 1 or self.N < 1 or self.M < 1:
            raise ValueError(f"K, N, M must be >= 1 (got K={self.K}, N={self.N}, M={self.M})")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden must be a non-empty list of positive widths")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {sorted(ACTIVATIONS)}")
        if self.covariance_mode not in MODES:
            raise ValueError(f"unknown covariance mode {self.covariance_mode!r}; expected one of {MODES}")

    @property
    def factor_width(self) -> int:
        """Per-component width of the covariance block of the head."""
        return linalg.packed_size(self.N) if self.covariance_mode == "full" else self.N

    @property
    def head_dim(self) -> int:
        return self.K + self.K * self.N + self.K * self.factor_width

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.M, *self.hidden, self.head_dim)


@dataclass
class NetworkParams:
    """Weights ``W[l]`` of shape (fan_in, fan_out) and biases ``b[l]`` per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = field(default=None, compare=False)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def names(self) -> list[str]:
        out = []
        for layer in range(len(self.weights)):
            out += [f"layer{layer}.W", f"layer{layer}.b"]
        return out

    @classmethod
    def from_arrays(cls, arrays, seed=None) -> "NetworkParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2], seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, theta) -> "NetworkParams":
        theta = np.asarray(theta, dtype=np.float64)
        out, pos = [], 0
        for a in self.arrays():
            out.append(theta[pos : pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != theta.size:
            raise ShapeError(f"flat vector has {theta.size} entries, expected {pos}")
        return NetworkParams.from_arrays(out, self.seed)

    def copy(self) -> "NetworkParams":
        return NetworkParams.from_arrays([a.copy() for a in self.arrays()], self.seed)

    def check(self, cfg: MdnConfig) -> None:
        sizes = cfg.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError(f"expected {len(sizes) - 1} layers, got {len(self.weights)}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ShapeError(
                    f"layer {l}: expected W {(sizes[l], sizes[l + 1])} and b {(sizes[l + 1],)}, "
                    f"got {w.shape} and {b.shape}"
                )


def init(cfg: MdnConfig, seed: int) -> NetworkParams:
    """Initial weights.

    Hidden layers use He scaling ``sqrt(2 / fan_in)`` with zero biases. In the
    output head the mean rows get N(0, 0.1^2) weights while the logit and
    covariance rows are zero, so every component starts with equal weight
    and identity precision.
    """
    gen = rng_streams.stream(seed, "init")
    sizes = cfg.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-2], sizes[1:-1]):
        weights.append(gen.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    head = np.zeros((sizes[-2], cfg.head_dim))
    lo, hi = cfg.K, cfg.K + cfg.K * cfg.N
    head[:, lo:hi] = 0.1 * gen.standard_normal((sizes[-2], hi - lo))
    weights.append(head)
    biases.append(np.zeros(cfg.head_dim))
    return NetworkParams(weights, biases, seed)


# -- forward ---------------------------------------------------------------------


def _check_finite(v: T.Var, layer: int) -> None:
    if not np.all(np.isfinite(v.value)):
        raise NumericError(f"non-finite activations in layer {layer}")


def head_graph(y: T.Var, layers: list[tuple[T.Var, T.Var]], cfg: MdnConfig):
    """Run the network on a batch ``y`` (B, M); returns ``(log_w, means, raw)`` vars."""
    act = ACTIVATIONS[cfg.activation]
    h = y
    for l, (w, b) in enumerate(layers[:-1]):
        h = act(h @ w + b)
        _check_finite(h, l)
    w, b = layers[-1]
    out = h @ w + b
    _check_finite(out, len(layers) - 1)
    k, n = cfg.K, cfg.N
    batch = y.shape[0]
    log_w = T.log_softmax(out[:, :k], axis=-1)
    means = T.reshape(out[:, k : k + k * n], (batch, k, n))
    raw = T.reshape(out[:, k + k * n :], (batch, k, cfg.factor_width))
    return log_w, means, raw


def _as_conditions(y, cfg: MdnConfig) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != cfg.M:
        raise ShapeError(f"conditions must have shape (B, {cfg.M}), got {y.shape}")
    return y


def forward_batch(y, params: NetworkParams, cfg: MdnConfig) -> gmm.MixtureBatch | gmm.DiagBatch:
    """Mixture parameters for each row of ``y`` (B, M), without recording gradients."""
    params.check(cfg)
    y = _as_conditions(y, cfg)
    layers = [(T.Var(w), T.Var(b)) for w, b in zip(params.weights, params.biases)]
    log_w, means, raw = head_graph(T.Var(y), layers, cfg)
    if cfg.covariance_mode == "full":
        return gmm.MixtureBatch(log_w.value, means.value, raw.value)
    return gmm.DiagBatch(log_w.value, means.value, raw.value)


def forward(y, params: NetworkParams, cfg: MdnConfig) -> gmm.Params:
    """Mixture parameters for a single condition vector ``y`` (M,)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (cfg.M,):
        raise ShapeError(f"condition must have shape ({cfg.M},), got {y.shape}")
    return forward_batch(y[None, :], params, cfg)[0]


# -- losses on the tape -----------------------------------------------------------------


def component_terms_graph(log_w, means, raw, x, mode: str, normalized: bool = True) -> T.Var:
    """``log w_i + log p_i(x)`` for every component: (B, K)."""
    n = means.shape[-1]
    diff = T.Var(np.asarray(x, dtype=np.float64)[:, None, :]) - means
    if mode == "full":
        z = T.tri_matvec(T.exp_diag(raw, n), diff, n)
        log_det = T.sum(T.clip(T.take(raw, linalg.diag_indices(n)), -linalg.LOG_DIAG_BOUND, linalg.LOG_DIAG_BOUND), axis=-1)
    else:
        s = T.clip(raw, -linalg.LOG_DIAG_BOUND, linalg.LOG_DIAG_BOUND)
        z = diff * T.exp(s)
        log_det = T.sum(s, axis=-1)
    log_p = log_det - 0.5 * T.sum(T.square(z), axis=-1)
    if normalized:
        log_p = log_p - 0.5 * n * gmm.LOG_2PI
    return log_w + log_p


def per_sample_loss_graph(terms: T.Var, log_w: T.Var, kind: LossKind) -> T.Var:
    if kind is LossKind.EXACT_NLL:
        return -T.logsumexp(terms, axis=-1)
    if kind is LossKind.PAPER_SURROGATE:
        return -T.sum(terms, axis=-1)
    if kind is LossKind.WEIGHTED_JENSEN:
        return -T.sum(T.exp(log_w) * terms, axis=-1)
    raise ValueError(f"unsupported loss kind {kind!r}")


def head_loss_and_grad(logits, means, raw, x, mode: str, kind, normalized: bool = True):
    """Mean loss and its gradient w.r.t. the head outputs (logits, means, raw factors)."""
    kind = LossKind.parse(kind)
    tape = T.GradientTape()
    leaves = [tape.variable(a) for a in (logits, means, raw)]
    log_w = T.log_softmax(leaves[0], axis=-1)
    terms = component_terms_graph(log_w, leaves[1], leaves[2], x, mode, normalized)
    total = T.mean(per_sample_loss_graph(terms, log_w, kind))
    return float(total.value), tape.gradient(total, leaves)


def loss_and_grad(
    params: NetworkParams, cfg: MdnConfig, x, y, kind, normalized: bool = True
) -> tuple[LossValue, NetworkParams]:
    """Mean loss over the batch ``(x, y)`` and its gradient w.r.t. every weight."""
    kind = LossKind.parse(kind)
    params.check(cfg)
    y = _as_conditions(y, cfg)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (y.shape[0], cfg.N):
        raise ShapeError(f"targets must have shape ({y.shape[0]}, {cfg.N}), got {x.shape}")
    tape = T.GradientTape()
    leaves = [tape.variable(a) for a in params.arrays()]
    layers = list(zip(leaves[0::2], leaves[1::2]))
    log_w, means, raw = head_graph(T.Var(y), layers, cfg)
    terms = component_terms_graph(log_w, means, raw, x, cfg.covariance_mode, normalized)
    per_sample = per_sample_loss_graph(terms, log_w, kind)
    total = T.mean(per_sample)
    grads = tape.gradient(total, leaves)
    value = LossValue(total=float(total.value), per_sample=per_sample.value)
    return value, NetworkParams.from_arrays(grads, params.seed)


# -- checkpoints -----------------------------------------------------------------------


def _format_values(a: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in a.ravel())


def dumps_checkpoint(params: NetworkParams, cfg: MdnConfig) -> str:
    buf = io.StringIO()
    buf.write(CHECKPOINT_MAGIC + "\n")
    buf.write(f"K={cfg.K}\nN={cfg.N}\nM={cfg.M}\n")
    buf.write(f"hidden={','.join(str(h) for h in cfg.hidden)}\n")
    buf.write(f"activation={cfg.activation}\ncovariance_mode={cfg.covariance_mode}\n")
    buf.write(f"seed={'' if params.seed is None else params.seed}\n")
    buf.write(f"layers={len(params.weights)}\n")
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        buf.write(f"W {l} {w.shape[0]} {w.shape[1]}\n{_format_values(w)}\n")
        buf.write(f"b {l} {b.shape[0]}\n{_format_values(b)}\n")
    return buf.getvalue()


def save_checkpoint(path, params: NetworkParams, cfg: MdnConfig) -> None:
    Path(path).write_text(dumps_checkpoint(params, cfg))


def _lines(text: str) -> Iterator[tuple[int, str]]:
    for num, line in enumerate(text.splitlines(), start=1):
        yield num, line


def loads_checkpoint(text: str) -> tuple[NetworkParams, MdnConfig]:
    lines = _lines(text)

    def nxt(what: str) -> tuple[int, str]:
        try:
            return next(lines)
        except StopIteration:
            raise DatasetParseError(f"unexpected end of checkpoint, expected {what}") from None

    num, line = nxt("header")
    if line.strip() != CHECKPOINT_MAGIC:
        raise DatasetParseError(f"not a checkpoint (expected {CHECKPOINT_MAGIC!r})", num)
    header = {}
    for key in ("K", "N", "M", "hidden", "activation", "covariance_mode", "seed", "layers"):
        num, line = nxt(key)
        name, sep, value = line.partition("=")
        if not sep or name != key:
            raise DatasetParseError(f"expected '{key}=...'", num)
        header[key] = (num, value)
    try:
        cfg = MdnConfig(
            K=int(header["K"][1]), N=int(header["N"][1]), M=int(header["M"][1]),
            hidden=tuple(int(h) for h in header["hidden"][1].split(",")),
            activation=header["activation"][1], covariance_mode=header["covariance_mode"][1],
        )
        seed = int(header["seed"][1]) if header["seed"][1] else None
        n_layers = int(header["layers"][1])
    except ValueError as exc:
        raise DatasetParseError(f"bad checkpoint header: {exc}") from None

    def read_array(tag: str, layer: int, ndim: int) -> np.ndarray:
        num, line = nxt(f"{tag} {layer}")
        parts = line.split()
        if len(parts) != 2 + ndim or parts[0] != tag or parts[1] != str(layer):
            raise DatasetParseError(f"expected '{tag} {layer}' with {ndim} dims", num)
        shape = tuple(int(p) for p in parts[2:])
        num, line = nxt(f"{tag} {layer} values")
        try:
            values = np.array([float(v) for v in line.split()], dtype=np.float64)
        except ValueError:
            raise DatasetParseError("non-numeric value", num) from None
        if values.size != math.prod(shape):
            raise DatasetParseError(f"expected {math.prod(shape)} values, got {values.size}", num)
        return values.reshape(shape)

    weights, biases = [], []
    for l in range(n_layers):
        weights.append(read_array("W", l, 2))
        biases.append(read_array("b", l, 1))
    params = NetworkParams(weights, biases, seed)
    try:
        params.check(cfg)
    except ShapeError as exc:
        raise DatasetParseError(f"checkpoint shapes do not match its header: {exc}") from None
    return params, cfg


def load_checkpoint(path) -> tuple[NetworkParams, MdnConfig]:
    return loads_checkpoint(Path(path).read_text())
