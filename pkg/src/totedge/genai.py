"""Token-count laws for generation quality and delay, and their fitting.

Quality saturates exponentially in the output token budget ``C``::

    score = score_max - sigma * exp(-rho * C)

while delay is affine, ``eta * C + psi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FitDomainError, SingularityError

SCORE_MAX = 10.0
BS_TOKENS = 150

# Table ranges for service providers (open intervals, sampled uniformly).
SP_RANGES = {
    "sigma": (30.0, 55.0),
    "rho": (0.035, 0.055),
    "eta": (0.02, 0.04),
    "psi": (0.05, 0.15),
}


@dataclass(frozen=True)
class ServerProfile:
    sigma: float
    rho: float
    eta: float
    psi: float
    score_max: float = SCORE_MAX
    role: str = "SP"

    def __post_init__(self):
        if not (self.sigma > 0 and self.rho > 0 and self.eta > 0 and self.psi >= 0 and self.score_max > 0):
            raise ConfigError(f"invalid server profile {self}")


BS_PROFILE = ServerProfile(sigma=50.0, rho=0.085, eta=0.05, psi=0.1, role="BS")
# Reference lightweight-model fit (Qwen 2.5-7B-Instruct).
QWEN_PROFILE = ServerProfile(sigma=49.13, rho=0.046, eta=0.025, psi=0.062)


def sample_sp_profile(rng: np.random.Generator) -> ServerProfile:
    draw = {key: rng.uniform(lo, hi) for key, (lo, hi) in SP_RANGES.items()}
    return ServerProfile(**draw)


def gen_quality(profile: ServerProfile, tokens: float) -> float:
    # not clamped: tiny budgets give negative scores by design
    return profile.score_max - profile.sigma * math.exp(-profile.rho * tokens)


def gen_delay(profile: ServerProfile, tokens: float) -> float:
    return profile.eta * tokens + profile.psi


@dataclass(frozen=True)
class FitSample:
    tokens: float
    value: float


def _columns(samples):
    c = np.array([s.tokens for s in samples], dtype=np.float64)
    y = np.array([s.value for s in samples], dtype=np.float64)
    if (c <= 0).any():
        raise FitDomainError("token counts must be positive")
    if len(np.unique(c)) < 2:
        raise SingularityError("need at least two distinct token counts")
    return c, y


def fit_quality(samples, score_max: float = SCORE_MAX) -> tuple[float, float]:
    """Fit ``(sigma, rho)`` by regressing log(score_max - score) on C.

    The linearised regression is weighted by the squared deficit, which is
    the first-order correction for additive noise on the score scale; for
    noiseless data every weighting gives the exact parameters.
    """
    c, y = _columns(samples)
    deficit = score_max - y
    if (deficit <= 0).any():
        raise FitDomainError(f"scores must stay below score_max={score_max}")
    log_def = np.log(deficit)
    w = deficit
    design = np.column_stack([np.ones_like(c), -c])
    coef, *_ = np.linalg.lstsq(design * w[:, None], log_def * w, rcond=None)
    return float(math.exp(coef[0])), float(coef[1])


def fit_delay(samples) -> tuple[float, float]:
    """Ordinary least-squares line ``delay = eta * C + psi``; returns ``(eta, psi)``."""
    c, y = _columns(samples)
    cm = c.mean()
    eta = float(((c - cm) * (y - y.mean())).sum() / ((c - cm) ** 2).sum())
    return eta, float(y.mean() - eta * cm)


def rmse(pred, observed) -> float:
    pred, observed = np.asarray(pred, dtype=np.float64), np.asarray(observed, dtype=np.float64)
    return float(np.sqrt(np.mean((pred - observed) ** 2)))
