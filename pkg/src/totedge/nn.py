"""Dense networks with tape-based reverse-mode gradients and an Adam optimizer.

Everything runs in float64 so finite-difference checks stay meaningful.
Inputs may be a single vector ``(in,)`` or a batch ``(batch, in)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, TrainingError, UsageError

ACTIVATIONS = ("mish", "relu", "tanh", "identity")
CHECKPOINT_VERSION = 1


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _activate(name, z):
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z * np.tanh(_softplus(z))


def _activation_grad(name, z):
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    t = np.tanh(_softplus(z))
    return t + z * (1.0 - t * t) * _sigmoid(z)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


class DenseNet:
    """Stack of affine layers, each followed by its activation."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ConfigError("a network needs at least one layer")
        for idx, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {layer.activation!r}", key=f"layers[{idx}]")
            if layer.bias.shape != (layer.out_dim,):
                raise ConfigError("bias does not match weight rows", key=f"layers[{idx}]")
            if idx and layer.in_dim != layers[idx - 1].out_dim:
                raise ConfigError(
                    f"layer input dim {layer.in_dim} != previous output dim {layers[idx - 1].out_dim}",
                    key=f"layers[{idx}]",
                )
        self.layers = layers

    @classmethod
    def build(cls, sizes, rng, hidden_activation="mish", output_activation="identity"):
        """Uniform fan-in initialisation, U(-1/sqrt(in), 1/sqrt(in)) for weights and biases."""
        if len(sizes) < 2:
            raise ConfigError("sizes must list at least input and output dims")
        layers = []
        for idx, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            b = rng.uniform(-bound, bound, size=n_out)
            act = output_activation if idx == len(sizes) - 2 else hidden_activation
            layers.append(Layer(w, b, act))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def num_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def set_params(self, values) -> None:
        for dst, src in zip(self.params(), values, strict=True):
            dst[...] = src

    def clone(self) -> DenseNet:
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def zero_(self) -> DenseNet:
        for p in self.params():
            p[...] = 0.0
        return self

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())

    def __call__(self, x):
        return forward(self, x)[0]


@dataclass
class Tape:
    weights: list[np.ndarray]
    activations: list[str]
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    single: bool = False
    consumed: bool = False


def forward(net: DenseNet, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise ConfigError(f"input has shape {x.shape}, network expects {net.in_dim} features")
    tape = Tape([l.weight for l in net.layers], [l.activation for l in net.layers], single=single)
    for layer in net.layers:
        tape.inputs.append(h)
        z = h @ layer.weight.T + layer.bias
        tape.pre.append(z)
        h = _activate(layer.activation, z)
    return (h[0] if single else h), tape


def backward(tape: Tape, output_adjoint):
    """Gradients of ``sum(output_adjoint * output)``.

    Returns ``(grads, input_adjoint)`` where ``grads`` lines up with
    ``DenseNet.params()``.  A tape can be consumed once.
    """
    if tape.consumed:
        raise UsageError("tape already consumed by a previous backward pass")
    tape.consumed = True
    g = np.asarray(output_adjoint, dtype=np.float64)
    if tape.single:
        g = g[None, :]
    if g.shape != tape.pre[-1].shape:
        raise ConfigError(f"adjoint shape {g.shape} does not match output {tape.pre[-1].shape}")
    grads = [None] * (2 * len(tape.weights))
    for idx in range(len(tape.weights) - 1, -1, -1):
        g = g * _activation_grad(tape.activations[idx], tape.pre[idx])
        grads[2 * idx] = g.T @ tape.inputs[idx]
        grads[2 * idx + 1] = g.sum(axis=0)
        g = g @ tape.weights[idx]
    return grads, (g[0] if tape.single else g)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_net(cls, net: DenseNet, lr=3e-4, **kw) -> AdamState:
        return cls([np.zeros_like(p) for p in net.params()], [np.zeros_like(p) for p in net.params()], lr=lr, **kw)


def adam_step(net: DenseNet, grads, state: AdamState) -> None:
    """Bias-corrected Adam update, applied in place to ``net`` and ``state``."""
    params = net.params()
    if len(grads) != len(params):
        raise ConfigError("gradient list does not match parameter list")
    for idx, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape}", key=f"layer {idx // 2}")
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in layer {idx // 2}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def soft_update(source: DenseNet, target: DenseNet, tau: float) -> None:
    """target <- tau * source + (1 - tau) * target, parameterwise."""
    if not 0.0 < tau <= 1.0:
        raise ConfigError(f"tau must lie in (0, 1], got {tau}")
    for t, s in zip(target.params(), source.params()):
        t *= 1.0 - tau
        t += tau * s


def sinusoidal_embed(k, dim: int = 16):
    """Interleaved sin/cos of ``k`` at frequencies 10000^(-2i/dim).

    ``k`` may be a scalar or an array; the embedding axis is appended last.
    """
    if dim <= 0 or dim % 2:
        raise ConfigError(f"embedding dim must be a positive even number, got {dim}")
    k = np.asarray(k, dtype=np.float64)
    if (k < 0).any():
        raise ConfigError("step index must be non-negative")
    freqs = 10000.0 ** (-np.arange(dim // 2) * 2.0 / dim)
    angles = k[..., None] * freqs
    out = np.empty(angles.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def save_checkpoint(path, nets: dict[str, DenseNet], meta: dict | None = None) -> None:
    """Write named networks (dims, activations, row-major parameters) to one ``.npz`` file."""
    arrays = {"version": np.array(CHECKPOINT_VERSION), "meta": np.array(json.dumps(meta or {}, sort_keys=True))}
    arrays["names"] = np.array(sorted(nets))
    for name, net in nets.items():
        arrays[f"{name}/activations"] = np.array([l.activation for l in net.layers])
        for idx, layer in enumerate(net.layers):
            arrays[f"{name}/w{idx}"] = layer.weight
            arrays[f"{name}/b{idx}"] = layer.bias
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        nets = {}
        for name in data["names"].tolist():
            acts = data[f"{name}/activations"].tolist()
            nets[name] = DenseNet(
                [Layer(data[f"{name}/w{i}"].copy(), data[f"{name}/b{i}"].copy(), a) for i, a in enumerate(acts)]
            )
        meta = json.loads(str(data["meta"]))
    return nets, meta
