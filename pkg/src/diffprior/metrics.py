"""Sample-quality and likelihood-bound metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import _kernels
from . import autodiff as ad
from .errors import DatasetError, ShapeError
from .priors import GaussianPrior, prior_log_bound, prior_sample
from .training import LatentModel
from .vae import (
    decode,
    encode,
    gaussian_log_density,
    kl_diag_gaussian_to_standard,
    likelihood_mean,
    likelihood_sample,
    log_likelihood,
    reparameterize,
)


@dataclass
class MetricReport:
    name: str
    value: float
    stderr: float = 0.0
    counts: Dict[str, int] = field(default_factory=dict)

    def line(self) -> str:
        return f"{self.name},{self.value!r},{self.stderr!r}"


def _as_samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"expected a non-empty [n, d] sample array, got {x.shape}", x.shape)
    return np.ascontiguousarray(x)


def median_bandwidth(pooled: np.ndarray) -> float:
    d = _kernels.pairwise_distances(pooled)
    d = d[d > 0.0]
    return float(np.median(d)) if d.size else 1.0


def _check_pair(a, b):
    a, b = _as_samples(a), _as_samples(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"sample dimensions differ: {a.shape[1]} vs {b.shape[1]}", a.shape, b.shape)
    return a, b


def mmd_rbf(a, b, bandwidth: Optional[float] = None, n_boot: int = 100, seed: int = 0) -> MetricReport:
    """Biased (V-statistic) MMD^2 with an RBF kernel, plus a bootstrap
    standard error. The bandwidth defaults to the pooled median distance."""
    a, b = _check_pair(a, b)
    pooled = np.concatenate([a, b])
    bw = median_bandwidth(pooled) if bandwidth is None else float(bandwidth)
    gamma = 1.0 / (2.0 * bw * bw)
    value = _kernels.rbf_mean(a, a, gamma) + _kernels.rbf_mean(b, b, gamma) - 2.0 * _kernels.rbf_mean(a, b, gamma)
    stderr = 0.0
    if n_boot > 1:
        K = _kernels.rbf_gram(pooled, gamma)
        rng = np.random.default_rng(seed)
        na, nb = len(a), len(b)
        boots = np.empty(n_boot)
        for i in range(n_boot):
            w = np.concatenate(
                [np.bincount(rng.integers(0, na, na), minlength=na) / na, -np.bincount(rng.integers(0, nb, nb), minlength=nb) / nb]
            )
            boots[i] = _kernels.weighted_quadratic(K, w)
        stderr = float(boots.std(ddof=1))
    return MetricReport("mmd", float(value), stderr, {"n_a": len(a), "n_b": len(b)})


def mmd_permutation_null(a, b, n_perm: int = 200, seed: int = 0, bandwidth: Optional[float] = None) -> np.ndarray:
    """MMD^2 values after randomly reassigning the pooled points to the two
    groups; the reference distribution under equal laws."""
    a, b = _check_pair(a, b)
    pooled = np.concatenate([a, b])
    bw = median_bandwidth(pooled) if bandwidth is None else float(bandwidth)
    K = _kernels.rbf_gram(pooled, 1.0 / (2.0 * bw * bw))
    na, nb = len(a), len(b)
    base = np.concatenate([np.full(na, 1.0 / na), np.full(nb, -1.0 / nb)])
    rng = np.random.default_rng(seed)
    return np.array([_kernels.weighted_quadratic(K, base[rng.permutation(na + nb)]) for _ in range(n_perm)])


def heldout_elbo(model: LatentModel, x, n_mc: int = 1, seed=0) -> MetricReport:
    """Mean per-datum lower bound on ``log p(x)``.

    Gaussian prior: ``E[log p(x|z)] - KL`` with the KL in closed form. Flow
    prior: ``E[log p(x|z) - log q(z|x) + log p_flow(z)]``. Diffusion prior: the
    same with ``log p(z)`` replaced by the full diffusion bound.

    With ``n_mc >= 2`` the standard error is the Monte-Carlo error of the mean
    given the data; with one sample it falls back to the spread across data.
    """
    x = _as_samples(require_split(x))
    if x.shape[1] != model.vae.data_dim:
        raise ShapeError(f"data width {x.shape[1]} does not match model width {model.vae.data_dim}", x.shape)
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(x)
    vals = np.empty((n_mc, n))
    with ad.no_grad():
        post = encode(model.vae, x)
        kl = kl_diag_gaussian_to_standard(post).data if isinstance(model.prior, GaussianPrior) else None
        for k in range(n_mc):
            eps = rng.standard_normal(post.mu.shape)
            z0 = reparameterize(post, eps)
            recon = log_likelihood(decode(model.vae, z0), x).data
            if kl is not None:
                vals[k] = recon - kl
            else:
                log_q = gaussian_log_density(z0, post.mu, post.logvar).data
                vals[k] = recon - log_q + prior_log_bound(model.prior, z0.data, rng)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("held-out bound is not finite")
    per_datum = vals.mean(axis=0)
    if n_mc >= 2:
        stderr = float(np.sqrt(np.sum(vals.var(axis=0, ddof=1) / n_mc)) / n)
    else:
        stderr = float(per_datum.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MetricReport("elbo", float(per_datum.mean()), stderr, {"n": n, "n_mc": n_mc})


def generate(model: LatentModel, n: int, seed, draw_pixels: bool = False) -> np.ndarray:
    """Draw ``z0`` from the prior and decode it (means, or likelihood draws)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z0 = prior_sample(model.prior, n, rng)
    with ad.no_grad():
        lik = decode(model.vae, z0)
    return likelihood_sample(lik, rng) if draw_pixels else likelihood_mean(lik)


def require_split(x) -> np.ndarray:
    x = np.asarray(x)
    if x.size == 0:
        raise DatasetError("evaluation split is empty")
    return x
