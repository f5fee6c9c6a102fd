"""Seeded noise channels (AWGN, additive Student-t, Radar) and their metrics.

SNR convention used everywhere: per coded symbol, unit symbol power,
``sigma = 10 ** (-snr_db / 20)``.  For the Student-t channel ``sigma`` is a
scale on a standard t draw, so the noise variance is ``sigma**2 * nu / (nu - 2)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigurationError, InputError

SNR_CONVENTION = "per-coded-symbol SNR, unit symbol power, sigma = 10^(-snr_db/20)"

KINDS = ("awgn", "atn", "radar")


def snr_to_sigma(snr_db: float) -> float:
    return 10.0 ** (-float(snr_db) / 20.0)


@dataclass(frozen=True)
class ChannelSpec:
    kind: str = "awgn"
    snr_db: float = 0.0
    nu: float = 3.0
    p: float = 0.05
    sigma2_sq: float = 5.0

    @property
    def sigma(self) -> float:
        return snr_to_sigma(self.snr_db)

    def validate(self) -> "ChannelSpec":
        if self.kind not in KINDS:
            raise ConfigurationError(f"channel kind {self.kind!r} not in {KINDS}")
        if math.isnan(self.snr_db):
            raise ConfigurationError("channel snr_db is NaN")
        if self.kind == "atn" and not self.nu > 2:
            raise ConfigurationError(f"ATN needs nu > 2 for finite variance, got {self.nu}")
        if self.kind == "radar":
            if not 0.0 <= self.p <= 1.0:
                raise ConfigurationError(f"radar pulse probability {self.p} outside [0, 1]")
            if not self.sigma2_sq > self.sigma ** 2:
                raise ConfigurationError(
                    f"radar pulse variance {self.sigma2_sq} must exceed the base noise "
                    f"variance {self.sigma ** 2:.4g}")
        return self

    def at(self, snr_db: float) -> "ChannelSpec":
        return replace(self, snr_db=float(snr_db))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSpec":
        unknown = set(d) - {"kind", "snr_db", "nu", "p", "sigma2_sq"}
        if unknown:
            raise ConfigurationError(f"unknown channel keys {sorted(unknown)}")
        return cls(**{k: (str(v).lower() if k == "kind" else float(v)) for k, v in d.items()})

    def label(self) -> str:
        if self.kind == "atn":
            return f"atn(nu={self.nu:g})"
        if self.kind == "radar":
            return f"radar(p={self.p:g},sigma2_sq={self.sigma2_sq:g})"
        return "awgn"


class NoiseStream:
    """Deterministic random source addressed by ``(seed, *stream)``."""

    def __init__(self, seed: int, *stream: int):
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        self.rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.stream))

    def spawn(self, *sub: int) -> "NoiseStream":
        return NoiseStream(self.seed, *self.stream, *sub)


def apply_channel(x, spec: ChannelSpec, rng) -> np.ndarray:
    """Received symbols ``y`` for transmitted ``x`` (any shape).

    The base Gaussian draw always comes first from the stream, so a Radar
    channel with ``p = 0`` reproduces the AWGN samples exactly.
    """
    spec.validate()
    gen = rng.rng if isinstance(rng, NoiseStream) else rng
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise InputError("apply_channel: non-finite transmitted symbols")
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    sigma = spec.sigma
    if spec.kind == "atn":
        z = sigma * gen.standard_t(spec.nu, size=x.shape)
    else:
        z = sigma * gen.standard_normal(size=x.shape)
        if spec.kind == "radar":
            hit = gen.random(size=x.shape) < spec.p
            pulse = gen.standard_normal(size=x.shape)
            z = z + hit * (math.sqrt(spec.sigma2_sq) * pulse)
    return (x + z).astype(dtype, copy=False)


def channel_loglik(y, x, spec: ChannelSpec) -> np.ndarray:
    """Per-symbol noise log-density of ``y - x`` with x-independent constants dropped."""
    spec.validate()
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape:
        y, x = np.broadcast_arrays(y, x)
    d = y - x
    s2 = spec.sigma ** 2
    if spec.kind == "awgn" or (spec.kind == "radar" and spec.p == 0.0):
        return -(d * d) / (2.0 * s2)
    if spec.kind == "atn":
        return -0.5 * (spec.nu + 1.0) * np.log1p(d * d / (spec.nu * s2))
    # Radar: Gaussian mixture, both components normalized relative to the base one
    wide = s2 + spec.sigma2_sq
    base = math.log1p(-spec.p) - (d * d) / (2.0 * s2) if spec.p < 1.0 else np.full_like(d, -np.inf)
    pulse = math.log(spec.p) + 0.5 * math.log(s2 / wide) - (d * d) / (2.0 * wide)
    return np.logaddexp(base, pulse)
