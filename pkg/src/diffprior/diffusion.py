"""Denoising diffusion over latent vectors.

Timesteps are 1-based throughout (``t`` in ``1..T``); arrays on the schedule
are stored 0-based, so quantities for step ``t`` live at index ``t - 1``.

The reverse transition ``p(z_{t-1} | z_t)`` is Gaussian with a learned mean
(the denoiser output) and fixed variance ``sigma_sq[t-1]``. For ``t >= 2``
that variance equals the forward posterior variance; ``t = 1`` would then be
degenerate, so its variance is ``beta_1``. Ancestral sampling still returns
the mean at the last step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, TimestepError
from .nn import MlpParams, mlp_forward, mlp_init

LOG_2PI = float(np.log(2.0 * np.pi))

TimeArg = Union[int, np.ndarray]


@dataclass(frozen=True)
class VarianceSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    alpha_bar_prev: np.ndarray
    beta_tilde: np.ndarray
    sigma_sq: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_t(self, t) -> np.ndarray:
        arr = np.asarray(t)
        if arr.size == 0 or np.any(arr < 1) or np.any(arr > self.T) or np.any(arr != np.round(arr)):
            raise TimestepError(f"timestep {t!r} outside 1..{self.T}", t)
        return arr.astype(np.intp)


def schedule_from_betas(betas: Sequence[float]) -> VarianceSchedule:
    beta = np.asarray(betas, dtype=np.float64)
    if beta.ndim != 1 or beta.size < 1:
        raise ConfigError("schedule needs at least one beta")
    if np.any(beta <= 0.0) or np.any(beta >= 1.0):
        raise ConfigError(f"betas must lie in (0, 1), got {beta}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    sigma_sq = beta_tilde.copy()
    sigma_sq[0] = beta[0]
    for a in (beta, alpha, alpha_bar, alpha_bar_prev, beta_tilde, sigma_sq):
        a.setflags(write=False)
    return VarianceSchedule(beta, alpha, alpha_bar, alpha_bar_prev, beta_tilde, sigma_sq)


def make_schedule(kind: str = "linear", T: int = 50, beta_min: float = 1e-3, beta_max: float = 0.2) -> VarianceSchedule:
    if kind != "linear":
        raise ConfigError(f"unknown schedule kind {kind!r}", key="schedule")
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}", key="T")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})", key="beta_min")
    return schedule_from_betas(np.linspace(beta_min, beta_max, int(T)))


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of the integer timestep, shape [len(t), dim]."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


@dataclass
class DenoiserNet:
    net: MlpParams
    embed_dim: int = 16


@dataclass
class DiffusionPrior:
    schedule: VarianceSchedule
    denoiser: DenoiserNet
    latent_dim: int

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return self.denoiser.net.named_parameters("denoiser")


def make_diffusion_prior(
    latent_dim: int,
    schedule: VarianceSchedule,
    hidden: Sequence[int] = (64, 64),
    embed_dim: int = 16,
    activation: str = "relu",
    seed: int = 0,
) -> DiffusionPrior:
    net = mlp_init([latent_dim + embed_dim, *hidden, latent_dim], activation, seed, name="denoiser")
    return DiffusionPrior(schedule, DenoiserNet(net, embed_dim), latent_dim)


def _coef(values: np.ndarray, t: np.ndarray, shape: tuple) -> np.ndarray:
    # per-step scalar (or per-row column) broadcast over a [batch, h] block
    return np.broadcast_to(np.reshape(values[t - 1], (-1, 1)), shape)


def denoise(prior: DiffusionPrior, zt, t: TimeArg) -> Tensor:
    """The learned reverse-transition mean for ``z_t`` at step(s) ``t``."""
    zt = ad.as_tensor(zt)
    if zt.ndim != 2 or zt.shape[1] != prior.latent_dim:
        raise ShapeError(f"denoiser input {zt.shape} does not have width {prior.latent_dim}", zt.shape)
    n = zt.shape[0]
    t_rows = np.broadcast_to(prior.schedule.check_t(t), (n,))
    emb = Tensor(time_embedding(t_rows, prior.denoiser.embed_dim))
    return mlp_forward(prior.denoiser.net, ad.concat([zt, emb], axis=1))


def forward_marginal_sample(schedule: VarianceSchedule, z0, t: TimeArg, noise) -> Tensor:
    """``z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) noise``."""
    z0, noise = ad.as_tensor(z0), ad.as_tensor(noise)
    if z0.shape != noise.shape:
        raise ShapeError(f"z0 {z0.shape} and noise {noise.shape} differ", z0.shape, noise.shape)
    t = schedule.check_t(t)
    if z0.ndim == 2:
        a = _coef(np.sqrt(schedule.alpha_bar), t, z0.shape)
        b = _coef(np.sqrt(1.0 - schedule.alpha_bar), t, z0.shape)
    else:
        a = np.sqrt(schedule.alpha_bar[t - 1])
        b = np.sqrt(1.0 - schedule.alpha_bar[t - 1])
    return z0 * Tensor(a) + noise * Tensor(b)


def posterior_coefficients(schedule: VarianceSchedule, t: TimeArg) -> Tuple[np.ndarray, np.ndarray]:
    """Weights ``(c0, ct)`` with ``mu_tilde = c0 * z0 + ct * z_t``."""
    t = schedule.check_t(t)
    abar, abar_prev = schedule.alpha_bar[t - 1], schedule.alpha_bar_prev[t - 1]
    beta, alpha = schedule.beta[t - 1], schedule.alpha[t - 1]
    c0 = np.sqrt(abar_prev) * beta / (1.0 - abar)
    ct = np.sqrt(alpha) * (1.0 - abar_prev) / (1.0 - abar)
    # at t = 1 the ratio is 1 analytically; pin it so the mean is z0 exactly
    c0 = np.where(t == 1, 1.0, c0)
    return c0, ct


def posterior_mean_var(schedule: VarianceSchedule, z0, zt, t: TimeArg):
    """Mean and variance of ``q(z_{t-1} | z_t, z0)``. At ``t = 1`` the mean is
    ``z0`` and the variance 0."""
    z0, zt = ad.as_tensor(z0), ad.as_tensor(zt)
    if z0.shape != zt.shape:
        raise ShapeError(f"z0 {z0.shape} and zt {zt.shape} differ", z0.shape, zt.shape)
    t = schedule.check_t(t)
    c0, ct = posterior_coefficients(schedule, t)
    if z0.ndim == 2:
        c0 = np.broadcast_to(np.reshape(c0, (-1, 1)), z0.shape)
        ct = np.broadcast_to(np.reshape(ct, (-1, 1)), z0.shape)
    mean = z0 * Tensor(c0) + zt * Tensor(ct)
    return mean, schedule.beta_tilde[t - 1]


def ddpm_simple_loss(prior: DiffusionPrior, z0, t: TimeArg, noise) -> Tensor:
    """Batch mean of ``|mu_phi(z_t, t) - mu_tilde(z0, z_t)|^2 / (2 sigma_t^2)``.

    Differentiable in the denoiser weights and in ``z0``. ``t`` is a single
    step for the whole batch or one step per row.
    """
    z0 = ad.as_tensor(z0)
    if z0.ndim != 2 or z0.shape[1] != prior.latent_dim:
        raise ShapeError(f"z0 {z0.shape} does not have width {prior.latent_dim}", z0.shape)
    sched = prior.schedule
    t = sched.check_t(t)
    zt = forward_marginal_sample(sched, z0, t, noise)
    target, _ = posterior_mean_var(sched, z0, zt, t)
    pred = denoise(prior, zt, t)
    inv = Tensor(_coef(0.5 / sched.sigma_sq, t, z0.shape))
    return ad.mean(ad.sum(ad.square(pred - target) * inv, axis=1))


def endpoint_kl(schedule: VarianceSchedule, z0) -> Tensor:
    """Row-wise ``KL[q(z_T | z0) || N(0, I)]``, differentiable in ``z0``."""
    z0 = ad.as_tensor(z0)
    abar = float(schedule.alpha_bar[-1])
    const = 0.5 * z0.shape[1] * (-abar - np.log(1.0 - abar))
    return ad.sum(ad.square(z0), axis=1) * (0.5 * abar) + const


def _forward_trajectory(sched: VarianceSchedule, z0: np.ndarray, rng: np.random.Generator) -> List[np.ndarray]:
    """``[z0, z1, ..., zT]`` from chained single-step kernels."""
    xi = rng.standard_normal((sched.T,) + z0.shape)
    traj = [z0]
    for t in range(1, sched.T + 1):
        traj.append(np.sqrt(sched.alpha[t - 1]) * traj[-1] + np.sqrt(sched.beta[t - 1]) * xi[t - 1])
    return traj


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _gauss_kl(m1, v1, m2, v2) -> np.ndarray:
    """Row-wise KL[N(m1, v1 I) || N(m2, v2 I)] for scalar variances."""
    h = m1.shape[1]
    return 0.5 * (h * (np.log(v2 / v1) + v1 / v2 - 1.0) + np.sum((m1 - m2) ** 2, axis=1) / v2)


def ddpm_elbo_terms(prior: DiffusionPrior, z0, seed) -> Dict[str, np.ndarray]:
    """Per-row pieces of the negative bound from one forward trajectory.

    Keys: ``endpoint`` (KL of the fully noised marginal against N(0, I)),
    ``kl`` (array [T-1, batch] for t = 2..T), ``reconstruction`` (the
    negative log density of z0 under the t = 1 transition).
    """
    z0 = np.asarray(ad.as_tensor(z0).data, dtype=np.float64)
    sched = prior.schedule
    T, h = sched.T, prior.latent_dim
    traj = _forward_trajectory(sched, z0, _rng(seed))
    abar_T = sched.alpha_bar[-1]
    endpoint = 0.5 * np.sum(abar_T * z0**2 + (1.0 - abar_T) - 1.0 - np.log(1.0 - abar_T), axis=1)
    kls = np.zeros((max(T - 1, 0), z0.shape[0]))
    for t in range(2, T + 1):
        c0, ct = posterior_coefficients(sched, t)
        mu_tilde = c0 * z0 + ct * traj[t]
        mu = denoise(prior, traj[t], t).data
        kls[t - 2] = _gauss_kl(mu_tilde, sched.beta_tilde[t - 1], mu, sched.sigma_sq[t - 1])
    mu1 = denoise(prior, traj[1], 1).data
    s1 = sched.sigma_sq[0]
    recon = 0.5 * (np.sum((z0 - mu1) ** 2, axis=1) / s1 + h * (np.log(s1) + LOG_2PI))
    return {"endpoint": endpoint, "kl": kls, "reconstruction": recon}


def ddpm_elbo(prior: DiffusionPrior, z0, seed) -> np.ndarray:
    """Single-sample estimate of the lower bound on ``log p(z0)``, per row
    (larger is better), assembled from closed-form Gaussian KL terms."""
    terms = ddpm_elbo_terms(prior, z0, seed)
    return -(terms["endpoint"] + terms["kl"].sum(axis=0) + terms["reconstruction"])


def _log_normal(x, mean, var) -> np.ndarray:
    h = x.shape[1]
    return -0.5 * (np.sum((x - mean) ** 2, axis=1) / var + h * (np.log(var) + LOG_2PI))


def ddpm_elbo_logratio(prior: DiffusionPrior, z0, seed) -> np.ndarray:
    """Same bound estimated directly as ``log p(z_{0:T}) - log q(z_{1:T} | z0)``
    on one forward trajectory."""
    z0 = np.asarray(ad.as_tensor(z0).data, dtype=np.float64)
    sched = prior.schedule
    traj = _forward_trajectory(sched, z0, _rng(seed))
    total = _log_normal(traj[-1], 0.0, 1.0)
    for t in range(1, sched.T + 1):
        mu = denoise(prior, traj[t], t).data
        total = total + _log_normal(traj[t - 1], mu, sched.sigma_sq[t - 1])
        total = total - _log_normal(traj[t], np.sqrt(sched.alpha[t - 1]) * traj[t - 1], sched.beta[t - 1])
    return total


def ancestral_sample(prior: DiffusionPrior, n: int, seed) -> np.ndarray:
    """Run the reverse chain from ``z_T ~ N(0, I)``; the final step adds no noise."""
    if n < 1:
        raise ValueError("ancestral_sample needs n >= 1")
    rng = _rng(seed)
    sched = prior.schedule
    z = rng.standard_normal((n, prior.latent_dim))
    for t in range(sched.T, 0, -1):
        mean = denoise(prior, z, t).data
        if t > 1:
            z = mean + np.sqrt(sched.sigma_sq[t - 1]) * rng.standard_normal(mean.shape)
        else:
            z = mean
    return z
