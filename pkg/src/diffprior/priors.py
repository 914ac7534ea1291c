"""Uniform sample/bound contract over the three latent prior families."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import DiffusionPrior, ancestral_sample, ddpm_elbo
from .flow import FlowPrior, flow_log_prob, flow_sample

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianPrior:
    latent_dim: int

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return []


PriorModel = Union[GaussianPrior, FlowPrior, DiffusionPrior]


def prior_kind(prior: PriorModel) -> str:
    if isinstance(prior, GaussianPrior):
        return "gaussian"
    if isinstance(prior, FlowPrior):
        return "flow"
    if isinstance(prior, DiffusionPrior):
        return "diffusion"
    raise TypeError(f"not a prior model: {type(prior).__name__}")


def prior_sample(prior: PriorModel, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError("need n >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    with ad.no_grad():
        if isinstance(prior, GaussianPrior):
            return rng.standard_normal((n, prior.latent_dim))
        if isinstance(prior, FlowPrior):
            return flow_sample(prior, n, rng)
        return ancestral_sample(prior, n, rng)


def prior_log_bound(prior: PriorModel, z0: np.ndarray, seed) -> np.ndarray:
    """Row-wise ``log p(z0)`` for the Gaussian and flow priors, and a
    one-trajectory lower bound on it for the diffusion prior."""
    z0 = np.asarray(z0, dtype=np.float64)
    with ad.no_grad():
        if isinstance(prior, GaussianPrior):
            return -0.5 * np.sum(z0**2, axis=1) - 0.5 * prior.latent_dim * LOG_2PI
        if isinstance(prior, FlowPrior):
            return flow_log_prob(prior, Tensor(z0)).data
        return ddpm_elbo(prior, z0, seed)
