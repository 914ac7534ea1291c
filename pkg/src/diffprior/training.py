"""Joint VAE + latent-prior objective, the epoch loop and model persistence."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import Checkpoint, checkpoint_load
from .config import TrainConfig, from_kv
from .data import Dataset, resolve_dataset
from .diffusion import DiffusionPrior, ddpm_simple_loss, endpoint_kl, make_diffusion_prior, make_schedule
from .errors import CheckpointError, DatasetError, NonFiniteLossError, PriorMismatchError, ShapeError
from .flow import flow_log_prob, make_flow_prior
from .nn import AdamState, adam_step, global_norm_clip
from .priors import GaussianPrior, PriorModel, prior_kind
from .vae import (
    VaeModel,
    decode,
    encode,
    gaussian_log_density,
    kl_diag_gaussian_to_standard,
    log_likelihood,
    make_vae,
    reparameterize,
)

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "split", "total", "reconstruction", "entropy", "prior_term")


@dataclass
class LatentModel:
    vae: VaeModel
    prior: PriorModel

    @property
    def prior_kind(self) -> str:
        return prior_kind(self.prior)

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.vae.named_parameters() + self.prior.named_parameters())


def build_model(cfg: TrainConfig, data_dim: int) -> LatentModel:
    vae = make_vae(
        data_dim,
        cfg.latent_dim,
        cfg.encoder_hidden,
        cfg.decoder_hidden,
        cfg.likelihood,
        cfg.decoder_variance,
        cfg.activation,
        seed=cfg.seed,
        decoder_logvar_init=cfg.decoder_logvar_init,
    )
    h = cfg.latent_dim
    if cfg.prior == "gaussian":
        prior = GaussianPrior(h)
    elif cfg.prior == "flow":
        prior = make_flow_prior(h, (cfg.flow_hidden,), cfg.activation, seed=cfg.seed + 17)
    else:
        sched = make_schedule("linear", cfg.T, cfg.beta_min, cfg.beta_max)
        prior = make_diffusion_prior(h, sched, cfg.denoiser_hidden, cfg.embed_dim, cfg.activation, seed=cfg.seed + 17)
    return LatentModel(vae, prior)


@dataclass
class LossBreakdown:
    """Batch means. ``total`` keeps the graph; the parts are plain floats."""

    total: Tensor
    reconstruction: float
    entropy: float
    prior_term: float
    prior: str

    def recombined(self) -> float:
        if self.prior == "gaussian":
            return -self.reconstruction + self.prior_term
        return -self.reconstruction - self.entropy + self.prior_term

    def as_row(self) -> Dict[str, float]:
        return {
            "total": self.total.item(),
            "reconstruction": self.reconstruction,
            "entropy": self.entropy,
            "prior_term": self.prior_term,
        }


def joint_loss(model: LatentModel, x, rng: np.random.Generator, t=None, endpoint: bool = False) -> LossBreakdown:
    """Minimization objective for one batch.

    Gaussian prior: ``-E[log p(x|z)] + KL(q || N(0, I))`` with the closed-form
    KL. Flow prior: ``-E[log p(x|z)] + E[log q(z|x)] - E[log p_flow(z)]``.
    Diffusion prior: ``-E[log p(x|z)] + E[log q(z|x)] + L_simple(z)`` with one
    uniformly drawn step for the batch (or per row when ``t`` is an array).
    ``endpoint=True`` adds ``KL[q(z_T|z0) || N(0, I)]`` to the prior term.

    Noise is drawn from ``rng`` in a fixed order: encoder noise, then the
    diffusion step, then the diffusion noise.
    """
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError("joint_loss needs a non-empty [batch, d] input", x.shape)
    vae = model.vae
    post = encode(vae, x)
    eps = rng.standard_normal(post.mu.shape)
    z0 = reparameterize(post, eps)
    recon = ad.mean(log_likelihood(decode(vae, z0), x))
    log_q = ad.mean(gaussian_log_density(z0, post.mu, post.logvar))
    kind = model.prior_kind
    if kind == "gaussian":
        prior_term = ad.mean(kl_diag_gaussian_to_standard(post))
        total = prior_term - recon
    elif kind == "flow":
        prior_term = -ad.mean(flow_log_prob(model.prior, z0))
        total = prior_term + log_q - recon
    else:
        prior: DiffusionPrior = model.prior
        if t is None:
            t = int(rng.integers(1, prior.schedule.T + 1))
        elif isinstance(t, str) and t == "per_element":
            t = rng.integers(1, prior.schedule.T + 1, size=x.shape[0])
        noise = rng.standard_normal(post.mu.shape)
        prior_term = ddpm_simple_loss(prior, z0, t, noise)
        if endpoint:
            prior_term = prior_term + ad.mean(endpoint_kl(prior.schedule, z0))
        total = prior_term + log_q - recon
    out = LossBreakdown(total, recon.item(), -log_q.item(), prior_term.item(), kind)
    if not np.isfinite(total.item()):
        raise NonFiniteLossError(f"non-finite loss: {out.as_row()}", breakdown=out.as_row())
    return out


def validation_rng(seed: int) -> np.random.Generator:
    """Noise source used for every validation pass, so epochs are compared on
    common random numbers."""
    return np.random.default_rng([seed, 1])


def evaluate(
    model: LatentModel, x: np.ndarray, rng: np.random.Generator, per_element_t: bool = False, endpoint: bool = False
) -> LossBreakdown:
    with ad.no_grad():
        return joint_loss(model, x, rng, t="per_element" if per_element_t else None, endpoint=endpoint)


# -- persistence ---------------------------------------------------------------


def make_checkpoint(
    cfg: TrainConfig,
    model: LatentModel,
    adam: Optional[AdamState],
    dataset: Optional[Dataset],
    epoch: int,
    val_history: List[float],
) -> Checkpoint:
    config = cfg.to_kv()
    config["state.data_dim"] = str(model.vae.data_dim)
    tensors = {name: p.data.copy() for name, p in model.parameters().items()}
    if adam is not None:
        config["state.adam_step"] = str(adam.step)
        for name in model.parameters():
            if name in adam.m:
                tensors[f"adam.m.{name}"] = adam.m[name].copy()
                tensors[f"adam.v.{name}"] = adam.v[name].copy()
    if dataset is not None:
        tensors["data.shift"] = np.asarray(dataset.shift, dtype=np.float64).copy()
        tensors["data.scale"] = np.asarray(dataset.scale, dtype=np.float64).copy()
        if dataset.image_shape is not None:
            config["state.image_shape"] = ",".join(str(s) for s in dataset.image_shape)
    return Checkpoint(config, tensors, epoch, list(val_history))


def config_from_checkpoint(ckpt: Checkpoint) -> TrainConfig:
    return from_kv({k: v for k, v in ckpt.config.items() if not k.startswith("state.")})


def model_from_checkpoint(ckpt: Checkpoint, expect_prior: Optional[str] = None) -> LatentModel:
    cfg = config_from_checkpoint(ckpt)
    if expect_prior is not None and cfg.prior != expect_prior:
        raise PriorMismatchError(f"checkpoint holds a {cfg.prior}-prior model, expected {expect_prior}")
    try:
        data_dim = int(ckpt.config["state.data_dim"])
    except KeyError:
        raise CheckpointError("checkpoint lacks state.data_dim") from None
    model = build_model(cfg, data_dim)
    for name, p in model.parameters().items():
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        arr = ckpt.tensors[name]
        if arr.shape != p.shape:
            raise CheckpointError(f"tensor {name!r} has shape {arr.shape}, model expects {p.shape}")
        p.data[...] = arr
    return model


def adam_from_checkpoint(ckpt: Checkpoint, model: LatentModel, lr: float) -> AdamState:
    state = AdamState(lr=lr, step=int(ckpt.config.get("state.adam_step", "0")))
    for name in model.parameters():
        if f"adam.m.{name}" in ckpt.tensors:
            state.m[name] = ckpt.tensors[f"adam.m.{name}"].copy()
            state.v[name] = ckpt.tensors[f"adam.v.{name}"].copy()
    return state


def load_model(path, expect_prior: Optional[str] = None) -> LatentModel:
    return model_from_checkpoint(checkpoint_load(path), expect_prior)


# -- training loop -------------------------------------------------------------


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    metrics: List[Dict[str, object]] = field(default_factory=list)
    model: Optional[LatentModel] = None
    dataset: Optional[Dataset] = None


def _weighted_mean(rows, weights) -> Dict[str, float]:
    w = np.asarray(weights, dtype=np.float64)
    keys = rows[0].keys()
    return {k: float(np.dot([r[k] for r in rows], w) / w.sum()) for k in keys}


def train(
    cfg: TrainConfig,
    dataset: Optional[Dataset] = None,
    on_epoch: Optional[Callable[[int, Dict[str, float], Dict[str, float]], None]] = None,
) -> TrainResult:
    """Shuffled minibatch Adam on the joint objective, keeping the checkpoint
    with the lowest validation objective. Fully determined by ``cfg.seed``."""
    if dataset is None:
        dataset = resolve_dataset(
            cfg.dataset, cfg.n_data, cfg.seed, cfg.binarize_threshold, cfg.val_fraction, cfg.test_fraction
        )
    x_train = dataset.split("train")
    x_val = dataset.split("val")
    if len(x_train) == 0:
        raise DatasetError("training split is empty")
    if len(x_val) == 0:
        x_val = x_train
    model = build_model(cfg, dataset.dim)
    params = model.parameters()
    names = {id(p): n for n, p in params.items()}
    adam = AdamState(lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    t_mode = "per_element" if cfg.per_element_t else None

    metrics: List[Dict[str, object]] = []
    history: List[float] = []
    best: Optional[Checkpoint] = None
    best_score = math.inf
    n = len(x_train)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        rows, sizes = [], []
        for start in range(0, n, cfg.batch_size):
            xb = x_train[order[start : start + cfg.batch_size]]
            loss = joint_loss(model, xb, rng, t=t_mode, endpoint=cfg.endpoint_kl_in_loss)
            grads = {names[id(p)]: g for p, g in ad.backward(loss.total).items() if id(p) in names}
            if cfg.grad_clip > 0:
                global_norm_clip(grads, cfg.grad_clip)
            adam_step(adam, params, grads)
            rows.append(loss.as_row())
            sizes.append(len(xb))
        train_row = _weighted_mean(rows, sizes)
        val_row = evaluate(model, x_val, validation_rng(cfg.seed), cfg.per_element_t, cfg.endpoint_kl_in_loss).as_row()
        history.append(val_row["total"])
        metrics.append({"epoch": epoch, "split": "train", **train_row})
        metrics.append({"epoch": epoch, "split": "val", **val_row})
        if on_epoch is not None:
            on_epoch(epoch, train_row, val_row)
        if val_row["total"] < best_score:
            best_score = val_row["total"]
            best = make_checkpoint(cfg, model, adam, dataset, epoch, history)
        logger.debug("epoch %d train %.5f val %.5f", epoch, train_row["total"], val_row["total"])
    final = make_checkpoint(cfg, model, adam, dataset, cfg.epochs, history)
    if best is None:
        best = final
    return TrainResult(best, final, metrics, model, dataset)


def fit_diffusion_prior(
    prior: DiffusionPrior,
    data: np.ndarray,
    epochs: int = 100,
    batch_size: int = 128,
    learning_rate: float = 5e-4,
    seed: int = 0,
    per_element_t: bool = True,
    grad_clip: float = 100.0,
    lr_decay: bool = True,
) -> List[float]:
    """Fit a diffusion prior alone to fixed samples ``data`` [n, h] by
    minimizing the simplified loss, optionally decaying the learning rate
    linearly to zero. Returns the mean loss of each epoch."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != prior.latent_dim or len(data) == 0:
        raise ShapeError(f"data {data.shape} does not match latent width {prior.latent_dim}", data.shape)
    params = dict(prior.named_parameters())
    names = {id(p): n for n, p in params.items()}
    adam = AdamState(lr=learning_rate)
    rng = np.random.default_rng(seed)
    T = prior.schedule.T
    n_steps = epochs * -(-len(data) // batch_size)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), batch_size):
            if lr_decay:
                adam.lr = learning_rate * (1.0 - adam.step / n_steps)
            zb = data[order[start : start + batch_size]]
            t = rng.integers(1, T + 1, size=len(zb)) if per_element_t else int(rng.integers(1, T + 1))
            loss = ddpm_simple_loss(prior, zb, t, rng.standard_normal(zb.shape))
            grads = {names[id(p)]: g for p, g in ad.backward(loss).items() if id(p) in names}
            if grad_clip > 0:
                global_norm_clip(grads, grad_clip)
            adam_step(adam, params, grads)
            total += loss.item() * len(zb)
        history.append(total / len(data))
    return history


def write_metrics_csv(rows: List[Dict[str, object]], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r["epoch"], r["split"]] + [repr(float(r[k])) for k in METRIC_FIELDS[2:]])
