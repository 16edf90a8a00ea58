"""Mini-batch maximum-likelihood training with a bound-then-exact schedule.

The first ``ceil(warmup_fraction * epochs)`` epochs minimize ``warmup_loss``
(an upper bound on the NLL, more forgiving while the predicted parameters are
still erratic); the remaining epochs minimize ``main_loss``. Validation always
reports the exact NLL.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from fullmdn import autonet, loss
from fullmdn import rng as rng_streams
from fullmdn.data import ConditionedBatch
from fullmdn.errors import DivergenceError, NumericError
from fullmdn.loss import LossKind


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls(0, [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params, grads, state: AdamState, hyper: AdamHyper, names=None):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    ``params`` and ``grads`` are parallel lists of arrays. Inputs are not
    modified.
    """
    names = names or [f"block{i}" for i in range(len(params))]
    for name, g in zip(names, grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {name}")
    t = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    m = [b1 * mi + (1.0 - b1) * g for mi, g in zip(state.m, grads)]
    v = [b2 * vi + (1.0 - b2) * g * g for vi, g in zip(state.v, grads)]
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new = [
        p - hyper.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + hyper.eps)
        for p, mi, vi in zip(params, m, v)
    ]
    return new, AdamState(t, m, v)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    warmup_fraction: float = 0.2
    warmup_loss: LossKind = LossKind.WEIGHTED_JENSEN
    main_loss: LossKind = LossKind.EXACT_NLL
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 10.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "warmup_loss", LossKind.parse(self.warmup_loss))
        object.__setattr__(self, "main_loss", LossKind.parse(self.main_loss))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1]")

    @property
    def warmup_epochs(self) -> int:
        return math.ceil(self.warmup_fraction * self.epochs)

    @property
    def adam(self) -> AdamHyper:
        return AdamHyper(self.learning_rate, self.beta1, self.beta2, self.eps)

    def loss_for_epoch(self, epoch: int) -> LossKind:
        return self.warmup_loss if epoch < self.warmup_epochs else self.main_loss


@dataclass
class TrainReport:
    train_loss: list[float]
    val_nll: list[float]  # empty when no validation split was given
    loss_kind: list[str]
    epoch_seconds: list[float]
    params: autonet.NetworkParams
    initial_params: autonet.NetworkParams
    seeds: dict[str, Any]
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_json(self) -> str:
        """Deterministic JSON document; wall-clock timings are left out so reruns match byte for byte."""
        doc = {
            "config": self.config,
            "epochs": self.epochs,
            "loss_kind": self.loss_kind,
            "seed": self.seeds["root"],
            "seeds": self.seeds,
            "train_loss": self.train_loss,
            "val_nll": self.val_nll,
        }
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def evaluate_nll(params: autonet.NetworkParams, cfg: autonet.MdnConfig, data: ConditionedBatch) -> float:
    """Mean exact (normalized) NLL of ``data`` under the network."""
    batch = autonet.forward_batch(data.y, params, cfg)
    return loss.batch_loss(data.x, batch, LossKind.EXACT_NLL).total


def _config_dict(cfg: TrainConfig, mdn_cfg: autonet.MdnConfig) -> dict[str, Any]:
    def plain(obj):
        out = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            out[f.name] = v.value if isinstance(v, LossKind) else list(v) if isinstance(v, tuple) else v
        return out

    return {"mdn": plain(mdn_cfg), "train": plain(cfg)}


def train(
    cfg: TrainConfig,
    mdn_cfg: autonet.MdnConfig,
    dataset: ConditionedBatch,
    val: ConditionedBatch | None = None,
    init_params: autonet.NetworkParams | None = None,
    log=None,
) -> TrainReport:
    """Fit the network to ``dataset``; returns the loss history and final weights.

    ``log``, if given, is called with one human-readable line per epoch.

    Raises
    ------
    DivergenceError
        If a training batch produces a non-finite loss.
    """
    if len(dataset) < 1:
        raise ValueError("training set is empty")
    if dataset.x.shape[1] != mdn_cfg.N or dataset.y.shape[1] != mdn_cfg.M:
        raise ValueError(
            f"dataset has N={dataset.x.shape[1]}, M={dataset.y.shape[1]}; "
            f"model expects N={mdn_cfg.N}, M={mdn_cfg.M}"
        )
    params = init_params.copy() if init_params is not None else autonet.init(mdn_cfg, cfg.seed)
    initial = params.copy()
    shuffle_rng = rng_streams.stream(cfg.seed, "shuffle")
    names = params.names()
    sizes = [a.size for a in params.arrays()]
    offsets = np.cumsum([0] + sizes)
    theta = params.flat()
    state = AdamState.zeros_like([theta])
    hyper = cfg.adam
    has_val = val is not None and len(val) > 0

    train_hist, val_hist, kinds, seconds = [], [], [], []
    b = len(dataset)
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        kind = cfg.loss_for_epoch(epoch)
        order = shuffle_rng.permutation(b)
        running = 0.0
        for batch_no, lo in enumerate(range(0, b, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            current = params.with_flat(theta)
            value, grads = autonet.loss_and_grad(current, mdn_cfg, dataset.x[idx], dataset.y[idx], kind)
            if not math.isfinite(value.total):
                raise DivergenceError(epoch, batch_no, value.total)
            running += value.total * idx.size
            g = grads.flat()
            if not np.all(np.isfinite(g)):
                bad = int(np.nonzero(~np.isfinite(g))[0][0])
                block = names[int(np.searchsorted(offsets, bad, side="right")) - 1]
                raise NumericError(f"non-finite gradient in parameter block {block} (epoch {epoch}, batch {batch_no})")
            (g,), _ = clip_global_norm([g], cfg.clip_norm)
            (theta,), state = adam_step([theta], [g], state, hyper)
        params = params.with_flat(theta)
        train_hist.append(running / b)
        kinds.append(kind.value)
        if has_val:
            val_hist.append(evaluate_nll(params, mdn_cfg, val))
        seconds.append(time.perf_counter() - start)
        if log is not None:
            line = f"epoch {epoch + 1}/{cfg.epochs} {kind.value} loss={train_hist[-1]:.6f}"
            log(line + (f" val_nll={val_hist[-1]:.6f}" if has_val else ""))

    return TrainReport(
        train_loss=train_hist,
        val_nll=val_hist,
        loss_kind=kinds,
        epoch_seconds=seconds,
        params=params,
        initial_params=initial,
        seeds={"root": cfg.seed, "init": [cfg.seed, rng_streams.STREAMS["init"]],
               "shuffle": [cfg.seed, rng_streams.STREAMS["shuffle"]]},
        config=_config_dict(cfg, mdn_cfg),
    )
