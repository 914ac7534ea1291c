"""MLP building blocks and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

ACTIVATIONS = ("relu", "tanh", "softplus", "linear")


def _activate(kind: str, x: Tensor) -> Tensor:
    if kind == "linear":
        return x
    if kind == "relu":
        return ad.relu(x)
    if kind == "tanh":
        return ad.tanh(x)
    if kind == "softplus":
        return ad.softplus(x)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class MlpParams:
    layers: List[Tuple[Tensor, Tensor]]
    activation: str = "relu"
    output_activation: str = "linear"
    # optional per-layer connectivity masks, same shape as the weights
    masks: Optional[List[np.ndarray]] = None

    @property
    def sizes(self) -> List[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    @property
    def in_features(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_features(self) -> int:
        return self.layers[-1][0].shape[0]

    def named_parameters(self, prefix: str) -> List[Tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(self.layers):
            out.append((f"{prefix}.{i}.weight", w))
            out.append((f"{prefix}.{i}.bias", b))
        return out

    def zero_output_layer(self) -> None:
        w, b = self.layers[-1]
        w.data[...] = 0.0
        b.data[...] = 0.0


def mlp_init(
    layer_sizes: Sequence[int],
    activation: str = "relu",
    seed: int = 0,
    output_activation: str = "linear",
    name: str = "mlp",
) -> MlpParams:
    """Xavier-uniform weights, zero biases; deterministic per seed."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ShapeError(f"mlp_init needs at least 2 layer sizes, got {sizes}")
    if any(s <= 0 for s in sizes):
        raise ShapeError(f"layer sizes must be positive, got {sizes}")
    if activation not in ACTIVATIONS or output_activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation in ({activation!r}, {output_activation!r})")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / (n_in + n_out))
        w = Tensor(rng.uniform(-bound, bound, size=(n_out, n_in)), requires_grad=True, name=f"{name}.{i}.weight")
        b = Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.{i}.bias")
        layers.append((w, b))
    return MlpParams(layers, activation, output_activation)


def mlp_forward(params: MlpParams, x: Tensor) -> Tensor:
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.in_features:
        raise ShapeError(
            f"mlp input has shape {x.shape}, expected [batch, {params.in_features}]", x.shape
        )
    n = len(params.layers)
    h = x
    for i, (w, b) in enumerate(params.layers):
        mask = params.masks[i] if params.masks is not None else None
        h = ad.linear(h, w, b, mask)
        h = _activate(params.activation if i < n - 1 else params.output_activation, h)
    return h


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
) -> Tuple[Mapping[str, Tensor], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``grads`` is keyed like ``params``; names missing from it are skipped and
    keep their moments untouched.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params[name].shape:
            raise ShapeError(
                f"gradient for {name} has shape {np.shape(g)}, parameter has {params[name].shape}",
                np.shape(g),
                params[name].shape,
            )
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def global_norm_clip(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(np.sum([np.sum(g * g) for g in grads.values()])))
    if max_norm > 0 and total > max_norm:
        s = max_norm / total
        for k in grads:
            grads[k] = grads[k] * s
    return total
