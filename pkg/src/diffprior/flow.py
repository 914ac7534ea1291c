"""Three-step masked autoregressive affine flow used as a learned latent prior.

Density evaluation maps a latent ``z`` to base noise ``u`` in one parallel
pass per step; sampling inverts each step one coordinate at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .nn import MlpParams, mlp_forward, mlp_init

FLOW_STEPS = 3
LOG_SCALE_MIN, LOG_SCALE_MAX = -5.0, 5.0
LOG_2PI = float(np.log(2.0 * np.pi))


def made_masks(latent_dim: int, hidden: Sequence[int]) -> List[np.ndarray]:
    """Connectivity masks such that output ``i`` (and ``h + i``) sees only
    inputs ``0..i-1``.

    Inputs carry degrees ``1..h``; hidden unit ``k`` has degree ``k mod h`` and
    may read any unit of degree at most its own.
    """
    h = latent_dim
    in_deg = np.arange(1, h + 1)
    degrees = [in_deg]
    masks = []
    for width in hidden:
        deg = np.arange(width) % h
        masks.append((deg[:, None] >= degrees[-1][None, :]).astype(np.float64))
        degrees.append(deg)
    out_deg = np.concatenate([in_deg, in_deg])
    masks.append((out_deg[:, None] > degrees[-1][None, :]).astype(np.float64))
    return masks


@dataclass
class AffineFlowStep:
    conditioner: MlpParams
    permutation: np.ndarray

    @property
    def inverse_permutation(self) -> np.ndarray:
        return np.argsort(self.permutation)


@dataclass
class FlowPrior:
    steps: List[AffineFlowStep]
    latent_dim: int

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = []
        for k, step in enumerate(self.steps):
            out += step.conditioner.named_parameters(f"flow.{k}")
        return out


def make_flow_prior(
    latent_dim: int,
    hidden: Sequence[int] = (64,),
    activation: str = "relu",
    seed: int = 0,
    identity_init: bool = True,
) -> FlowPrior:
    """``identity_init`` zeroes the conditioner output layers so the flow starts
    as the standard normal."""
    h = latent_dim
    hidden = list(hidden)
    steps = []
    for k in range(FLOW_STEPS):
        net = mlp_init([h, *hidden, 2 * h], activation, seed + 101 * k, name=f"flow.{k}")
        net.masks = made_masks(h, hidden)
        if identity_init:
            net.zero_output_layer()
        perm = np.arange(h) if k == 0 else np.arange(h)[::-1].copy()
        steps.append(AffineFlowStep(net, perm))
    return FlowPrior(steps, h)


def _shift_log_scale(step: AffineFlowStep, y: Tensor, h: int) -> Tuple[Tensor, Tensor]:
    out = mlp_forward(step.conditioner, y)
    shift = ad.take(out, slice(0, h))
    log_scale = ad.clip(ad.take(out, slice(h, 2 * h)), LOG_SCALE_MIN, LOG_SCALE_MAX)
    return shift, log_scale


def flow_forward(prior: FlowPrior, z) -> Tuple[Tensor, Tensor]:
    """Map ``z`` to base noise ``u``; returns ``(u, log|det du/dz|)`` per row."""
    z = ad.as_tensor(z)
    h = prior.latent_dim
    if z.ndim != 2 or z.shape[1] != h:
        raise ShapeError(f"flow input {z.shape} does not have width {h}", z.shape)
    x = z
    logdet = None
    for step in prior.steps:
        y = ad.take(x, step.permutation)
        shift, log_scale = _shift_log_scale(step, y, h)
        x = (y - shift) * ad.exp(-log_scale)
        step_ld = -ad.sum(log_scale, axis=1)
        logdet = step_ld if logdet is None else logdet + step_ld
    return x, logdet


def flow_log_prob(prior: FlowPrior, z) -> Tensor:
    u, logdet = flow_forward(prior, z)
    base = ad.sum(ad.square(u), axis=1) * -0.5 - 0.5 * prior.latent_dim * LOG_2PI
    return base + logdet


def flow_inverse(prior: FlowPrior, u: np.ndarray) -> np.ndarray:
    """Invert :func:`flow_forward`, one coordinate at a time per step."""
    h = prior.latent_dim
    x = np.array(u, dtype=np.float64)
    for step in reversed(prior.steps):
        y = np.zeros_like(x)
        for i in range(h):
            shift, log_scale = _shift_log_scale(step, Tensor(y), h)
            y[:, i] = x[:, i] * np.exp(log_scale.data[:, i]) + shift.data[:, i]
        x = y[:, step.inverse_permutation]
    return x


def flow_sample(prior: FlowPrior, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError("flow_sample needs n >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.standard_normal((n, prior.latent_dim))
    return flow_inverse(prior, u)
