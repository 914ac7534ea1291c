"""Gaussian encoder, Gaussian/Bernoulli decoder and the per-sample ELBO terms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DatasetError, ShapeError
from .nn import MlpParams, mlp_forward, mlp_init

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianPosterior:
    mu: Tensor
    logvar: Tensor


@dataclass
class LikelihoodParams:
    kind: str
    mu: Optional[Tensor] = None
    logvar: Optional[Tensor] = None
    logits: Optional[Tensor] = None


@dataclass
class VaeModel:
    encoder: MlpParams
    decoder: MlpParams
    latent_dim: int
    data_dim: int
    likelihood: str = "gaussian"
    # "shared": one learned log-variance per data dimension; "full": decoder head
    decoder_variance: str = "shared"
    decoder_logvar: Optional[Tensor] = None

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = self.encoder.named_parameters("encoder") + self.decoder.named_parameters("decoder")
        if self.decoder_logvar is not None:
            out.append(("decoder.logvar", self.decoder_logvar))
        return out


def make_vae(
    data_dim: int,
    latent_dim: int,
    encoder_hidden: Sequence[int] = (64, 64),
    decoder_hidden: Sequence[int] = (64, 64),
    likelihood: str = "gaussian",
    decoder_variance: str = "shared",
    activation: str = "relu",
    seed: int = 0,
    decoder_logvar_init: float = 0.0,
) -> VaeModel:
    if likelihood not in ("gaussian", "bernoulli"):
        raise ValueError(f"unknown likelihood {likelihood!r}")
    if decoder_variance not in ("shared", "full"):
        raise ValueError(f"unknown decoder variance mode {decoder_variance!r}")
    enc = mlp_init([data_dim, *encoder_hidden, 2 * latent_dim], activation, seed, name="encoder")
    dec_out = 2 * data_dim if (likelihood == "gaussian" and decoder_variance == "full") else data_dim
    dec = mlp_init([latent_dim, *decoder_hidden, dec_out], activation, seed + 1, name="decoder")
    logvar = None
    if likelihood == "gaussian" and decoder_variance == "shared":
        logvar = Tensor(np.full(data_dim, float(decoder_logvar_init)), requires_grad=True, name="decoder.logvar")
    return VaeModel(enc, dec, latent_dim, data_dim, likelihood, decoder_variance, logvar)


def encode(model: VaeModel, x: Tensor) -> GaussianPosterior:
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != model.data_dim:
        raise ShapeError(f"encoder input {x.shape} does not have width {model.data_dim}", x.shape)
    h = model.latent_dim
    out = mlp_forward(model.encoder, x)
    mu = ad.take(out, slice(0, h))
    logvar = ad.clip(ad.take(out, slice(h, 2 * h)), LOGVAR_MIN, LOGVAR_MAX)
    return GaussianPosterior(mu, logvar)


def decode(model: VaeModel, z: Tensor) -> LikelihoodParams:
    z = ad.as_tensor(z)
    if z.ndim != 2 or z.shape[1] != model.latent_dim:
        raise ShapeError(f"decoder input {z.shape} does not have width {model.latent_dim}", z.shape)
    out = mlp_forward(model.decoder, z)
    if model.likelihood == "bernoulli":
        return LikelihoodParams("bernoulli", logits=out)
    d = model.data_dim
    if model.decoder_variance == "full":
        mu = ad.take(out, slice(0, d))
        logvar = ad.take(out, slice(d, 2 * d))
    else:
        mu = out
        logvar = ad.broadcast_rows(model.decoder_logvar, z.shape[0])
    return LikelihoodParams("gaussian", mu=mu, logvar=ad.clip(logvar, LOGVAR_MIN, LOGVAR_MAX))


def reparameterize(post: GaussianPosterior, noise) -> Tensor:
    noise = ad.as_tensor(noise)
    if noise.shape != post.mu.shape:
        raise ShapeError(f"noise {noise.shape} does not match posterior {post.mu.shape}", noise.shape, post.mu.shape)
    return post.mu + ad.exp(post.logvar * 0.5) * noise


def gaussian_log_density(z, mu, logvar) -> Tensor:
    """Row-wise log N(z; mu, diag(exp(logvar)))."""
    z, mu, logvar = ad.as_tensor(z), ad.as_tensor(mu), ad.as_tensor(logvar)
    if not (z.shape == mu.shape == logvar.shape) or z.ndim != 2:
        raise ShapeError(f"gaussian_log_density: shapes {z.shape}, {mu.shape}, {logvar.shape}", z.shape, mu.shape)
    quad = ad.square(z - mu) * ad.exp(-logvar)
    return ad.sum((quad + logvar + LOG_2PI) * -0.5, axis=1)


def log_likelihood(params: LikelihoodParams, x) -> Tensor:
    x = ad.as_tensor(x)
    if params.kind == "gaussian":
        return gaussian_log_density(x, params.mu, params.logvar)
    if params.kind == "bernoulli":
        if x.shape != params.logits.shape:
            raise ShapeError(f"bernoulli: data {x.shape} vs logits {params.logits.shape}", x.shape)
        if not np.all((x.data == 0.0) | (x.data == 1.0)):
            raise DatasetError("bernoulli likelihood needs binary data in {0, 1}")
        # x*l - log(1 + e^l)
        return ad.sum(x * params.logits - ad.softplus(params.logits), axis=1)
    raise ValueError(f"unknown likelihood {params.kind!r}")


def kl_diag_gaussian_to_standard(post: GaussianPosterior) -> Tensor:
    terms = ad.square(post.mu) + ad.exp(post.logvar) - 1.0 - post.logvar
    return ad.sum(terms, axis=1) * 0.5


def likelihood_mean(params: LikelihoodParams) -> np.ndarray:
    if params.kind == "bernoulli":
        return ad.sigmoid_array(params.logits.data)
    return params.mu.data


def likelihood_sample(params: LikelihoodParams, rng: np.random.Generator) -> np.ndarray:
    if params.kind == "bernoulli":
        p = ad.sigmoid_array(params.logits.data)
        return (rng.random(p.shape) < p).astype(np.float64)
    mu = params.mu.data
    return mu + np.exp(0.5 * params.logvar.data) * rng.standard_normal(mu.shape)
