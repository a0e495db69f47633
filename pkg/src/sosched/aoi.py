"""Age-of-information model for a delivery process given by (mu, sigma^2).

A client whose cumulative deliveries behave like a Brownian motion with
drift mu and variance sigma^2 has inter-delivery times distributed like the
first-hitting time of level 1, which is inverse Gaussian with

    E[H] = 1/mu,    E[H^2] = sigma^2/mu^3 + 1/mu^2.

With updates generated per slot with probability lambda (the receiver sees
only the freshest one), the long-run time-average age is

    E[B^2]/(2 E[B]) + 1/lambda - 1/2

over inter-delivery times B, which the hitting moments turn into the closed
approximation (sigma^2/mu^2 + 1/mu)/2 + 1/lambda - 1/2.

Slot conventions used throughout the package: an update generated in slot t
carries timestamp t-1 (slot start), ages are measured at slot ends, so a
same-slot generate-and-deliver shows age 1, and a delivery gap of B slots
contributes ages 1..B.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, EmptySamples


@dataclass(frozen=True)
class UpdateModel:
    """Per-slot Bernoulli update generation rate and AoI weight."""

    lam: float
    weight: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.lam <= 1.0):
            raise DomainError(f"update rate must be in (0, 1], got {self.lam}")
        if not self.weight > 0.0:
            raise DomainError(f"AoI weight must be > 0, got {self.weight}")


@dataclass(frozen=True)
class HittingMoments:
    """First two moments of the unit-level first-hitting time, in slots."""

    first: float
    second: float


def ig_moments(mu: float, sigma2: float) -> HittingMoments:
    """Moments of the inverse-Gaussian hitting time for drift mu, variance sigma2."""
    if not (mu > 0.0) or not (sigma2 > 0.0):
        raise DomainError(f"need mu > 0 and sigma2 > 0, got mu={mu}, sigma2={sigma2}")
    return HittingMoments(first=1.0 / mu, second=sigma2 / mu**3 + 1.0 / mu**2)


def aoi_approx(mu: float, sigma2: float, lam: float) -> float:
    """Closed-form time-average AoI for delivery model (mu, sigma2), rate lam."""
    if not (mu > 0.0) or sigma2 < 0.0 or not (0.0 < lam <= 1.0):
        raise DomainError(
            f"need mu > 0, sigma2 >= 0, lam in (0, 1]; got {mu}, {sigma2}, {lam}"
        )
    return 0.5 * (sigma2 / mu**2 + 1.0 / mu) + 1.0 / lam - 0.5


def empirical_aoi_renewal(interdelivery_samples: Sequence[float], lam: float) -> float:
    """Renewal AoI estimate from observed inter-delivery times (slots, >= 1)."""
    if not (0.0 < lam <= 1.0):
        raise DomainError(f"update rate must be in (0, 1], got {lam}")
    samples = np.asarray(interdelivery_samples, dtype=float)
    if samples.size == 0:
        raise EmptySamples("need at least one inter-delivery sample")
    if samples.min() < 1.0:
        raise DomainError("inter-delivery times are slot counts >= 1")
    return float((samples**2).sum() / (2.0 * samples.sum()) + 1.0 / lam - 0.5)


def reference_delivery_sampler(
    mu: float, sigma2: float, n_samples: int, seed: int
) -> np.ndarray:
    """Sample integer inter-delivery times of the reference delivery process.

    Draws i.i.d. inverse-Gaussian hitting times with mean 1/mu and shape
    1/sigma2 and rounds them up to whole slots (>= 1), the discrete skeleton
    of a drifting Brownian motion crossing unit levels.
    """
    if not (mu > 0.0) or not (sigma2 > 0.0):
        raise DomainError(f"need mu > 0 and sigma2 > 0, got mu={mu}, sigma2={sigma2}")
    if n_samples < 1:
        raise DomainError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    raw = rng.wald(1.0 / mu, 1.0 / sigma2, size=n_samples)
    return np.maximum(np.ceil(raw), 1.0).astype(np.int64)


def trace_time_average_aoi(
    delivery_slots: Sequence[int],
    generation_slots: Sequence[int],
    horizon: int,
    warmup: int = 0,
) -> float:
    """Time-average AoI of one client from its delivery and generation slots.

    Both event lists are ascending slot indices in [1, horizon]. Within a
    slot, generation precedes delivery; a delivery forwards the freshest
    generated update. The receiver starts holding a timestamp-0 update, and
    the age at the end of slot t is t minus the held timestamp. Slots
    <= warmup are excluded from the average.
    """
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    if not (0 <= warmup < horizon):
        raise DomainError(f"warmup must be in [0, horizon), got {warmup}")
    deliveries = list(delivery_slots)
    generations = list(generation_slots)
    if any(deliveries[i] >= deliveries[i + 1] for i in range(len(deliveries) - 1)):
        raise DomainError("delivery slots must be strictly ascending")
    if any(generations[i] > generations[i + 1] for i in range(len(generations) - 1)):
        raise DomainError("generation slots must be ascending")
    sensor_ts = 0
    receiver_ts = 0
    gi = di = 0
    total = 0.0
    for t in range(1, horizon + 1):
        while gi < len(generations) and generations[gi] <= t:
            sensor_ts = generations[gi] - 1
            gi += 1
        if di < len(deliveries) and deliveries[di] == t:
            receiver_ts = sensor_ts
            di += 1
        if t > warmup:
            total += t - receiver_ts
    return total / (horizon - warmup)
