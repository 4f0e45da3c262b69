"""Denoising-diffusion actor: beta schedule, reverse sampler and softmax policy head.

The reverse chain starts from ``x_K ~ N(0, I)`` and applies K denoising
steps conditioned on the encoded state.  All noise draws are recorded, so a
chain can be replayed exactly and differentiated end to end with respect to
the denoiser parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .nn import DenseNet, Tape, backward, forward, sinusoidal_embed

TIME_DIM = 16


@dataclass(frozen=True)
class DiffusionSchedule:
    K: int
    beta_min: float
    beta_max: float
    betas: np.ndarray  # index k-1 holds beta_k
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, k: int) -> float:
        return 1.0 if k == 0 else float(self.alpha_bars[k - 1])

    def posterior_variance(self, k: int) -> float:
        # alpha_bar_0 = 1, so the last denoising step adds no noise
        return (1.0 - self.alpha_bar(k - 1)) / (1.0 - self.alpha_bar(k)) * float(self.betas[k - 1])

    def zero_denoiser_std(self) -> float:
        """Std of x_0 when the denoiser outputs zero: variance propagated through the chain."""
        var = 1.0
        for k in range(self.K, 0, -1):
            var = var / float(self.alphas[k - 1]) + self.posterior_variance(k)
        return math.sqrt(var)

    def coefficients(self, k: int) -> tuple[float, float, float]:
        """``(1/sqrt(alpha_k), (1-alpha_k)/sqrt(1-alpha_bar_k), sqrt(beta_tilde_k))``."""
        a = float(self.alphas[k - 1])
        return 1.0 / math.sqrt(a), (1.0 - a) / math.sqrt(1.0 - self.alpha_bar(k)), math.sqrt(self.posterior_variance(k))


def beta_schedule(K: int = 5, beta_min: float = 0.1, beta_max: float = 10.0) -> DiffusionSchedule:
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}", key="K")
    if not 0 < beta_min < beta_max:
        raise ConfigError(f"need 0 < beta_min < beta_max, got {beta_min}, {beta_max}", key="beta_min")
    k = np.arange(1, K + 1, dtype=np.float64)
    betas = 1.0 - np.exp(-beta_min / K - (2 * k - 1) / (2 * K * K) * (beta_max - beta_min))
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if not ((betas > 0) & (betas < 1)).all() or not (np.diff(betas) > 0).all():
        raise ConfigError("degenerate beta schedule")
    return DiffusionSchedule(K, beta_min, beta_max, betas, alphas, alpha_bars)


def forward_marginal(x0, k: int, z, schedule: DiffusionSchedule):
    ab = schedule.alpha_bar(k)
    return math.sqrt(ab) * np.asarray(x0) + math.sqrt(1.0 - ab) * np.asarray(z)


def forward_step(x_prev, k: int, z, schedule: DiffusionSchedule):
    b = float(schedule.betas[k - 1])
    return math.sqrt(1.0 - b) * np.asarray(x_prev) + math.sqrt(b) * np.asarray(z)


def denoiser_input(x_k, k: int, state):
    x_k = np.asarray(x_k, dtype=np.float64)
    state = np.asarray(state, dtype=np.float64)
    emb = sinusoidal_embed(k, TIME_DIM)
    if x_k.ndim == 2:
        emb = np.broadcast_to(emb, (x_k.shape[0], TIME_DIM))
    return np.concatenate([x_k, emb, state], axis=-1)


def build_denoiser(action_dim, state_dim, rng, hidden=400, activation="mish") -> DenseNet:
    return DenseNet.build([action_dim + TIME_DIM + state_dim, hidden, hidden, action_dim], rng, activation)


def reverse_step(denoiser: DenseNet, x_k, k: int, state, schedule: DiffusionSchedule, noise, clip=None):
    """One denoising transition ``x_k -> x_{k-1}``; returns the new sample and a step record.

    With ``clip`` set, the implied clean sample is clamped to ``[-clip, clip]``
    before forming the posterior mean; while the clamp is inactive this is the
    same update as the noise-prediction form.
    """
    x_k = np.asarray(x_k, dtype=np.float64)
    c1, c2, sigma = schedule.coefficients(k)
    eps, tape = forward(denoiser, denoiser_input(x_k, k, state))
    if clip is None:
        return c1 * (x_k - c2 * eps) + sigma * np.asarray(noise), StepRecord(tape, None)
    ab, ab_prev = schedule.alpha_bar(k), schedule.alpha_bar(k - 1)
    beta = float(schedule.betas[k - 1])
    x0_hat = (x_k - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
    inside = np.abs(x0_hat) <= clip
    x0_hat = np.clip(x0_hat, -clip, clip)
    coef_x0 = math.sqrt(ab_prev) * beta / (1.0 - ab)
    coef_xk = math.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab)
    return coef_x0 * x0_hat + coef_xk * x_k + sigma * np.asarray(noise), StepRecord(tape, inside)


@dataclass
class StepRecord:
    tape: Tape
    inside: np.ndarray | None  # clamp mask, None when unclipped


@dataclass
class ChainNoise:
    x_K: np.ndarray
    z: np.ndarray  # (K, ...) -- z[k-1] is used by the step leaving x_k

    @classmethod
    def draw(cls, rng: np.random.Generator, shape, K: int) -> ChainNoise:
        return cls(rng.standard_normal(shape), rng.standard_normal((K, *shape)))


@dataclass
class ChainTrace:
    noise: ChainNoise
    steps: dict[int, StepRecord]
    action_dim: int
    clip: float | None = None


def sample_action_logits(denoiser, state, schedule, rng=None, noise: ChainNoise | None = None, clip=None):
    """Run the K-step reverse chain; returns ``(x_0, trace)``.

    ``state`` is one encoded state or a batch.  Pass ``noise`` to replay a
    previous draw exactly, otherwise it is drawn from ``rng``.
    """
    state = np.asarray(state, dtype=np.float64)
    action_dim = denoiser.out_dim
    shape = (action_dim,) if state.ndim == 1 else (state.shape[0], action_dim)
    if noise is None:
        noise = ChainNoise.draw(rng, shape, schedule.K)
    x = noise.x_K
    steps = {}
    for k in range(schedule.K, 0, -1):
        x, steps[k] = reverse_step(denoiser, x, k, state, schedule, noise.z[k - 1], clip)
    return x, ChainTrace(noise, steps, action_dim, clip)


def chain_backward(trace: ChainTrace, schedule: DiffusionSchedule, dx0):
    """Parameter gradients of ``sum(dx0 * x_0)`` through every reverse step."""
    g = np.asarray(dx0, dtype=np.float64)
    total = None
    for k in range(1, schedule.K + 1):
        rec = trace.steps[k]
        if trace.clip is None:
            c1, c2, _ = schedule.coefficients(k)
            d_eps, d_xk = -c1 * c2 * g, c1 * g
        else:
            ab, ab_prev = schedule.alpha_bar(k), schedule.alpha_bar(k - 1)
            beta = float(schedule.betas[k - 1])
            g_hat = math.sqrt(ab_prev) * beta / (1.0 - ab) * g * rec.inside
            d_eps = -math.sqrt(1.0 - ab) / math.sqrt(ab) * g_hat
            d_xk = g_hat / math.sqrt(ab) + math.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab) * g
        grads, g_in = backward(rec.tape, d_eps)
        g = d_xk + g_in[..., : trace.action_dim]
        total = grads if total is None else [a + b for a, b in zip(total, grads)]
    return total


def log_softmax(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise NumericError("non-finite logits")
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def policy_distribution(x0):
    """Softmax over servers, treating ``x_0`` as logits."""
    return np.exp(log_softmax(x0))


def greedy_action(x0) -> int:
    return int(np.argmax(x0))  # argmax already breaks ties toward the lowest index


def entropy(probs, log_probs) -> np.ndarray:
    return -(probs * log_probs).sum(axis=-1)


class DiffusionActor:
    """Denoiser-backed policy with the same surface as the plain MLP actor.

    Logits are ``x_0 / temperature``.  The default temperature is the spread
    of ``x_0`` under a zero denoiser, which keeps the untrained softmax away
    from saturation; argmax over logits equals argmax over ``x_0``.
    """

    def __init__(self, net: DenseNet, schedule: DiffusionSchedule, clip=None, temperature=None):
        self.net = net
        self.schedule = schedule
        self.clip = clip
        self.temperature = schedule.zero_denoiser_std() if temperature is None else float(temperature)
        if not self.temperature > 0:
            raise ConfigError("policy temperature must be > 0", key="policy_temperature")

    @classmethod
    def build(cls, action_dim, state_dim, rng, schedule, hidden=400, activation="mish", clip=None, temperature=None):
        return cls(build_denoiser(action_dim, state_dim, rng, hidden, activation), schedule, clip, temperature)

    def logits(self, states, rng=None, noise=None):
        x0, trace = sample_action_logits(self.net, states, self.schedule, rng, noise, self.clip)
        return x0 / self.temperature, trace

    def backward(self, trace, dlogits):
        return chain_backward(trace, self.schedule, np.asarray(dlogits) / self.temperature)
