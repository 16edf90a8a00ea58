"""Command-line interface: ``fullmdn {generate,train,sample,density,eval}``.

stdout carries machine-readable results only; progress and diagnostics go
to stderr. Exit codes: 0 success, 2 usage or parse error, 3 numeric
divergence.

Every subcommand accepts ``--config FILE`` with ``key=value`` lines named
after the long flags (``batch-size=64`` or ``batch_size=64``); flags given on
the command line win over the file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from fullmdn import autonet, data, gmm, loss
from fullmdn import rng as rng_streams
from fullmdn import train as training
from fullmdn.errors import DatasetParseError, DivergenceError, NumericError, ShapeError
from fullmdn.loss import LossKind

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_config_file(path) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for num, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetParseError(f"expected key=value, got {line!r}", num)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


# -- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fullmdn", description="Full-covariance mixture density networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset CSV")
    g.add_argument("--gen", help=f"generator: {', '.join(sorted(data.GENERATORS))}")
    g.add_argument("--n", type=int, default=10000, help="number of samples")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-", help="output path (default: stdout)")
    g.add_argument("--aspect", type=float, help="rotating_gaussian: minor/major variance ratio")
    g.add_argument("--modes", type=int, help="mixture_ring: number of modes")
    g.add_argument("--radius", type=float, help="mixture_ring: circle radius")
    g.add_argument("--noise", type=float, help="mixture_ring / two_moons_conditional: noise std")

    t = sub.add_parser("train", help="train an MDN on a dataset CSV")
    t.add_argument("--data", help="training dataset CSV")
    t.add_argument("--val", help="validation dataset CSV (default: split off --val-fraction)")
    t.add_argument("--val-fraction", type=float, default=0.2)
    t.add_argument("--k", type=int, default=1, help="mixture components")
    t.add_argument("--mode", choices=autonet.MODES, default="full")
    t.add_argument("--hidden", type=_ints, default=[128, 128], help="hidden widths, e.g. 128,128")
    t.add_argument("--activation", choices=sorted(autonet.ACTIVATIONS), default="tanh")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--warmup-fraction", type=float, default=0.2)
    kinds = [k.value for k in LossKind]
    t.add_argument("--warmup-loss", choices=kinds, default=LossKind.WEIGHTED_JENSEN.value)
    t.add_argument("--main-loss", choices=kinds, default=LossKind.EXACT_NLL.value)
    t.add_argument("--beta1", type=float, default=0.9)
    t.add_argument("--beta2", type=float, default=0.999)
    t.add_argument("--eps", type=float, default=1e-8)
    t.add_argument("--clip-norm", type=float, default=10.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--checkpoint", default="mdn.ckpt")
    t.add_argument("--report", default="report.json")
    t.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")

    s = sub.add_parser("sample", help="draw samples from a trained model")
    s.add_argument("--checkpoint")
    s.add_argument("--y", type=_floats, help="condition, comma-separated (length M)")
    s.add_argument("--count", type=int, default=1000)
    s.add_argument("--component", type=int, help="force this component index")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="-")

    d = sub.add_parser("density", help="export log densities on a 2-D grid")
    d.add_argument("--checkpoint")
    d.add_argument("--y", type=_floats)
    d.add_argument("--xmin", type=float, default=-6.0)
    d.add_argument("--xmax", type=float, default=6.0)
    d.add_argument("--ymin", type=float, default=-6.0)
    d.add_argument("--ymax", type=float, default=6.0)
    d.add_argument("--step", type=float, default=0.05)
    d.add_argument("--out", default="-")

    e = sub.add_parser("eval", help="mean exact NLL of a dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--data")

    for p in (g, t, s, d, e):
        p.add_argument("--config", help="key=value file with defaults for the flags above")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            values = read_config_file(args.config)
        except (OSError, DatasetParseError) as exc:
            parser.error(f"config file: {exc}")
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known - {"config"})
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def _require(args, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s) {', '.join(missing)}")


def _write(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text)


# -- commands ----------------------------------------------------------------------------------


def cmd_generate(args) -> int:
    _require(args, "gen")
    if args.gen not in data.GENERATORS:
        raise UsageError(f"unknown generator {args.gen!r}; valid generators: {', '.join(sorted(data.GENERATORS))}")
    accepted = {
        "rotating_gaussian": ("aspect",),
        "mixture_ring": ("modes", "radius", "noise"),
        "two_moons_conditional": ("noise",),
    }[args.gen]
    params = {k: getattr(args, k) for k in accepted if getattr(args, k) is not None}
    batch = data.generate(data.DatasetSpec(args.gen, args.n, args.seed, params))
    data.save_dataset(batch, args.out)
    _err(f"B={len(batch)} N={batch.N} M={batch.M} seed={args.seed}")
    return EXIT_OK


def cmd_train(args) -> int:
    _require(args, "data")
    dataset = data.load_dataset(args.data)
    if args.val is not None:
        train_set, val_set = dataset, data.load_dataset(args.val)
    else:
        train_set, val_set = dataset.split(args.val_fraction)
    if len(train_set) < 1:
        raise UsageError("training split is empty")
    mdn_cfg = autonet.MdnConfig(
        K=args.k, N=dataset.N, M=dataset.M, hidden=tuple(args.hidden),
        activation=args.activation, covariance_mode=args.mode,
    )
    cfg = training.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        warmup_fraction=args.warmup_fraction, warmup_loss=args.warmup_loss, main_loss=args.main_loss,
        beta1=args.beta1, beta2=args.beta2, eps=args.eps, clip_norm=args.clip_norm, seed=args.seed,
    )
    report = training.train(cfg, mdn_cfg, train_set, val_set, log=None if args.quiet else _err)
    autonet.save_checkpoint(args.checkpoint, report.params, mdn_cfg)
    Path(args.report).write_text(report.to_json())
    final = report.val_nll[-1] if report.val_nll else float("nan")
    print(f"val_nll={final!r}")
    return EXIT_OK


def _condition(args, cfg: autonet.MdnConfig) -> np.ndarray:
    y = np.asarray(args.y, dtype=np.float64)
    if y.shape != (cfg.M,):
        raise UsageError(f"--y must have {cfg.M} value(s), got {y.size}")
    return y


def cmd_sample(args) -> int:
    _require(args, "checkpoint", "y")
    params, cfg = autonet.load_checkpoint(args.checkpoint)
    y = _condition(args, cfg)
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    if args.component is not None and not 0 <= args.component < cfg.K:
        raise UsageError(f"--component {args.component} out of range for K={cfg.K}")
    mixture = autonet.forward(y, params, cfg)
    gen = rng_streams.stream(args.seed, "sample")
    x, idx, eta = gmm.sample(mixture, gen, args.count, args.component)
    header = [f"y{j + 1}" for j in range(cfg.M)] + [f"x{j + 1}" for j in range(cfg.N)]
    header += ["component"] + [f"eta{j + 1}" for j in range(cfg.N)]
    lines = [",".join(header)]
    ytext = [data._fmt(v) for v in y]
    for xi, i, ei in zip(x, idx, eta):
        lines.append(",".join(ytext + [data._fmt(v) for v in xi] + [str(int(i))] + [data._fmt(v) for v in ei]))
    _write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def density_grid(mixture: gmm.Params, xlo, xhi, ylo, yhi, step):
    """Log densities on an inclusive grid; returns ``(xs, ys, logp, mass)``."""
    nx = int(round((xhi - xlo) / step)) + 1
    ny = int(round((yhi - ylo) / step)) + 1
    xs = xlo + step * np.arange(nx)
    ys = ylo + step * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], -1)
    logp = gmm.mixture_log_density(pts, mixture)
    mass = float(np.sum(np.exp(logp)) * step * step)
    return pts[:, 0], pts[:, 1], logp, mass


def cmd_density(args) -> int:
    _require(args, "checkpoint", "y")
    params, cfg = autonet.load_checkpoint(args.checkpoint)
    if cfg.N != 2:
        raise UsageError(f"density export needs a 2-D target (N=2); this model has N={cfg.N}")
    if args.step <= 0 or args.xmax <= args.xmin or args.ymax <= args.ymin:
        raise UsageError("grid needs step > 0 and max > min on both axes")
    mixture = autonet.forward(_condition(args, cfg), params, cfg)
    x1, x2, logp, mass = density_grid(mixture, args.xmin, args.xmax, args.ymin, args.ymax, args.step)
    lines = ["x1,x2,log_density"]
    lines += [f"{data._fmt(a)},{data._fmt(b)},{data._fmt(c)}" for a, b, c in zip(x1, x2, logp)]
    _write(args.out, "\n".join(lines) + "\n")
    _err(f"grid mass={mass!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "checkpoint", "data")
    params, cfg = autonet.load_checkpoint(args.checkpoint)
    dataset = data.load_dataset(args.data)
    if dataset.N != cfg.N or dataset.M != cfg.M:
        raise UsageError(f"data has N={dataset.N}, M={dataset.M}; model expects N={cfg.N}, M={cfg.M}")
    if len(dataset) == 0:
        raise UsageError("dataset is empty")
    print(f"nll={training.evaluate_nll(params, cfg, dataset)!r}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "sample": cmd_sample,
    "density": cmd_density,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (DivergenceError, NumericError) as exc:
        _err(f"error: {exc}")
        return EXIT_DIVERGED
    except (UsageError, DatasetParseError, ShapeError, ValueError, OSError, IndexError) as exc:
        _err(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
