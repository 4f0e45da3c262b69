"""Wireless link model: path loss, Rayleigh fading, Shannon rate, transfer time."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, UnreachableLinkError

DISTANCE_UNITS = {"km": 1e-3, "m": 1.0}


@dataclass(frozen=True)
class NodePosition:
    x: float
    y: float

    def distance_m(self, other: NodePosition) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class LinkParams:
    bandwidth_hz: float = 2e6
    power_w: float = 1.0
    noise_psd: float = 4e-21

    def __post_init__(self):
        for key in ("bandwidth_hz", "power_w", "noise_psd"):
            if not getattr(self, key) > 0:
                raise ConfigError("must be strictly positive", key=key)


def path_loss(d) -> float:
    """Large-scale loss in dB, 127 + 30 log10(d), with ``d`` already in model units."""
    if not d > 0:
        raise DomainError(f"link distance must be positive, got {d}")
    return 127.0 + 30.0 * math.log10(d)


def to_model_distance(d_m: float, unit: str = "km") -> float:
    """Convert metres into the unit the path-loss law is evaluated in."""
    try:
        return d_m * DISTANCE_UNITS[unit]
    except KeyError:
        raise ConfigError(f"unknown distance unit {unit!r}", key="distance_unit") from None


def sample_fading(rng: np.random.Generator, size=None):
    """|g|^2 for g ~ CN(0, 1), i.e. Exp(1) power gains."""
    return rng.exponential(1.0, size=size)


def link_rate(params: LinkParams, gain: float, d: float) -> float:
    """Achievable rate in bit/s for fading power ``gain`` over model distance ``d``."""
    h = gain / 10.0 ** (path_loss(d) / 10.0)
    return params.bandwidth_hz * math.log2(1.0 + params.power_w * h / (params.bandwidth_hz * params.noise_psd))


def tx_time(bits: float, rate: float) -> float:
    if bits == 0:
        return 0.0
    if not rate > 0:
        raise UnreachableLinkError(f"cannot move {bits} bits over a link with rate {rate}")
    return bits / rate
