"""Command line entry points: ``train``, ``sample``, ``eval`` and ``diagnose``.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric failure.
``DIFFPRIOR_OUT`` sets the default output root.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .checkpoint import checkpoint_load, checkpoint_save
from .config import load_config
from .data import export_csv, resolve_dataset
from .diffusion import ddpm_elbo, ddpm_elbo_terms
from .errors import DiffPriorError, NonFiniteLossError, NumericDomainError, ShapeError
from .metrics import generate, heldout_elbo, mmd_rbf
from .training import (
    LatentModel,
    config_from_checkpoint,
    model_from_checkpoint,
    train,
    validation_rng,
    write_metrics_csv,
)
from .vae import encode, reparameterize

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METRICS = ("elbo", "mmd")
OUT_ENV = "DIFFPRIOR_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_out() -> str:
    return os.environ.get(OUT_ENV, ".")


def _load_dataset_for(ckpt, spec: Optional[str]):
    cfg = config_from_checkpoint(ckpt)
    return resolve_dataset(
        spec or cfg.dataset, cfg.n_data, cfg.seed, cfg.binarize_threshold, cfg.val_fraction, cfg.test_fraction
    )


def _denormalize(ckpt, x: np.ndarray) -> np.ndarray:
    shift = ckpt.tensors.get("data.shift")
    scale = ckpt.tensors.get("data.scale")
    if shift is None or scale is None:
        return x
    return x * scale + shift


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    cfg = cfg.replace(output_dir=str(out))
    print(f"{'epoch':>5} {'split':>5} {'total':>12} {'recon':>12} {'entropy':>12} {'prior':>12}")

    def show(epoch, tr, va):
        for split, row in (("train", tr), ("val", va)):
            print(
                f"{epoch:>5} {split:>5} {row['total']:>12.5f} {row['reconstruction']:>12.5f} "
                f"{row['entropy']:>12.5f} {row['prior_term']:>12.5f}",
                flush=True,
            )

    result = train(cfg, on_epoch=show)
    checkpoint_save(result.best, out / "best.vdpc")
    checkpoint_save(result.final, out / "final.vdpc")
    write_metrics_csv(result.metrics, out / "metrics.csv")
    print(f"best epoch {result.best.epoch}; wrote best.vdpc, final.vdpc, metrics.csv to {out}")
    return EXIT_OK


def tile_ppm(images: np.ndarray, rows: int, cols: int, side: int) -> bytes:
    """Grayscale tiles in [0, 1] laid out on a grid with 1-pixel white
    separators, encoded as binary PPM (P6)."""
    height = rows * side + (rows - 1)
    width = cols * side + (cols - 1)
    canvas = np.full((height, width), 255, dtype=np.uint8)
    pix = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    for k in range(rows * cols):
        r, c = divmod(k, cols)
        y, x = r * (side + 1), c * (side + 1)
        canvas[y : y + side, x : x + side] = pix[k].reshape(side, side)
    rgb = np.repeat(canvas[:, :, None], 3, axis=2)
    return f"P6\n{width} {height}\n255\n".encode("ascii") + rgb.tobytes()


def cmd_sample(args) -> int:
    ckpt = checkpoint_load(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    if args.n < 1:
        raise ShapeError("--n must be >= 1")
    d = model.vae.data_dim
    if args.format == "ppm":
        side = math.isqrt(d)
        if side * side != d:
            raise ShapeError(f"data width {d} is not a square pixel count; use --format csv", (d,))
        rows, cols = args.grid or (1, args.n)
        if rows * cols > args.n:
            raise ShapeError(f"grid {rows}x{cols} needs at least {rows * cols} samples, got --n {args.n}")
        if not args.out:
            raise ShapeError("--format ppm needs --out")
    x = generate(model, args.n, args.seed, draw_pixels=args.draw_pixels)
    x = _denormalize(ckpt, x)
    if args.format == "csv":
        if args.out:
            export_csv(x, args.out)
        else:
            w = csv.writer(sys.stdout)
            w.writerow([f"x{i}" for i in range(d)])
            for row in x:
                w.writerow([repr(float(v)) for v in row])
    else:
        Path(args.out).write_bytes(tile_ppm(x, rows, cols, side))
    return EXIT_OK


def _append_eval(out_dir: Path, row: List[str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "eval.csv"
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["checkpoint", "dataset", "split", "metric", "value", "stderr"])
        w.writerow(row)


def cmd_eval(args) -> int:
    ckpt = checkpoint_load(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    cfg = config_from_checkpoint(ckpt)
    dataset = _load_dataset_for(ckpt, args.dataset)
    if dataset.dim != model.vae.data_dim:
        raise ShapeError(f"dataset width {dataset.dim} does not match model width {model.vae.data_dim}")
    x = dataset.split(args.split)
    if args.metric == "elbo":
        seed = validation_rng(cfg.seed) if args.seed is None else args.seed
        report = heldout_elbo(model, x, args.n_mc, seed)
    else:
        seed = 0 if args.seed is None else args.seed
        samples = generate(model, args.n, seed, draw_pixels=args.draw_pixels)
        report = mmd_rbf(samples, x, seed=seed)
    print(report.line())
    _append_eval(
        Path(args.out or _default_out()),
        [args.checkpoint, dataset.name, args.split, report.name, repr(report.value), repr(report.stderr)],
    )
    return EXIT_OK


def diagnose_terms(model: LatentModel, x: np.ndarray, n_mc: int = 1, seed: int = 0) -> Dict[str, object]:
    """Averaged per-step KL terms of the diffusion bound on encoded data, with
    the same bound recomputed in one piece from identical noise."""
    prior = model.prior
    T = prior.schedule.T
    kl = np.zeros(max(T - 1, 0))
    endpoint = recon = bound = 0.0
    for k in range(n_mc):
        rng = np.random.default_rng([seed, k])
        with ad.no_grad():
            post = encode(model.vae, x)
            z0 = reparameterize(post, rng.standard_normal(post.mu.shape)).data
        state = rng.bit_generator.state
        terms = ddpm_elbo_terms(prior, z0, rng)
        rng.bit_generator.state = state
        bound += ddpm_elbo(prior, z0, rng).mean() / n_mc
        kl += terms["kl"].mean(axis=1) / n_mc
        endpoint += terms["endpoint"].mean() / n_mc
        recon += terms["reconstruction"].mean() / n_mc
    return {"kl": kl, "endpoint": float(endpoint), "reconstruction": float(recon), "ddpm_elbo": float(bound)}


def cmd_diagnose(args) -> int:
    ckpt = checkpoint_load(args.checkpoint)
    model = model_from_checkpoint(ckpt, expect_prior="diffusion")
    dataset = _load_dataset_for(ckpt, None)
    x = dataset.split(args.split)
    rep = diagnose_terms(model, x, args.n_mc, args.seed)
    T = model.prior.schedule.T
    print("term,t,value")
    print(f"endpoint_kl,{T},{rep['endpoint']!r}")
    for t in range(T, 1, -1):
        print(f"kl,{t},{float(rep['kl'][t - 2])!r}")
    print(f"reconstruction,1,{rep['reconstruction']!r}")
    total = rep["endpoint"] + rep["kl"].sum() + rep["reconstruction"]
    print(f"sum_of_terms,,{float(total)!r}")
    print(f"negative_ddpm_elbo,,{-rep['ddpm_elbo']!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diffprior", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a key=value config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help=f"output directory (default: config output_dir or ${OUT_ENV})")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a trained model")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("csv", "ppm"), default="csv")
    s.add_argument("--grid", type=int, nargs=2, metavar=("ROWS", "COLS"))
    s.add_argument("--draw-pixels", action="store_true", help="sample the likelihood instead of decoding means")
    s.add_argument("--out", help="output file (csv defaults to stdout)")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="held-out bound or MMD against data")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", help="toy kind or idx:<path> (default: the run's dataset)")
    e.add_argument("--metric", choices=METRICS, required=True)
    e.add_argument("--n", type=int, default=2000, help="model samples for mmd")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--n-mc", type=int, default=1)
    e.add_argument("--seed", type=int)
    e.add_argument("--draw-pixels", action="store_true", help="mmd on likelihood draws instead of decoder means")
    e.add_argument("--out", help=f"directory receiving eval.csv (default ${OUT_ENV} or .)")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", help="per-step KL decomposition of the diffusion bound")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--n-mc", type=int, default=1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--split", choices=("train", "val", "test"), default="val")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NonFiniteLossError, NumericDomainError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DiffPriorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
