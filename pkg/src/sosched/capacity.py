"""Membership tests for the second-order capacity region.

The region of feasible delivery models {(mu_i, sigma_i^2)} is bracketed by a
necessary outer bound and a sufficient inner bound over the channel model
{(m_S, v_S^2)}:

  outer:  sum_{i in S} mu_i <= m_S for every non-empty S,
          sum_i mu_i = m_full,  sum_i sigma_i >= sqrt(v_full^2),  mu_i >= 0;
  inner:  the subset constraints hold strictly on proper subsets (checked
          here with an explicit margin delta), plus sigma_i^2 > 0.

Subset constraints are enumerated exhaustively over bitmasks (cheap for the
N <= 25 sizes this package targets) rather than via submodular minimization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .channel import SecondOrderStats, subset_sums
from .errors import DimensionMismatch, DomainError, TooManyClients

# Analytic tolerance for equality-type constraints on exact points; callers
# with Monte Carlo points pass a statistical tol on top.
EQUALITY_TOL = 1e-9

# Slack ties within this are broken toward the lowest bitmask, so instances
# that tie in exact arithmetic stay deterministic under float rounding.
TIE_TOL = 1e-12

MAX_ENUM_CLIENTS = 25


@dataclass
class OperatingPoint:
    """Target delivery model: per-client rate mu and temporal variance sigma2."""

    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        if self.mu.ndim != 1 or self.mu.shape != self.sigma2.shape:
            raise DomainError("mu and sigma2 must be 1-D arrays of equal length")

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.sigma2)


class Violation(NamedTuple):
    """One violated constraint: id, subset bitmask it concerns, signed slack.

    For per-client constraints the bitmask is the client's singleton; for
    whole-point constraints it is the full-set mask. Slack is negative for a
    reported violation.
    """

    constraint: str
    subset: int
    slack: float


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    violations: tuple[Violation, ...] = field(default_factory=tuple)


def _check_dims(stats: SecondOrderStats, point: OperatingPoint) -> None:
    if point.n != stats.n_clients:
        raise DimensionMismatch(
            f"point has {point.n} clients, stats has {stats.n_clients}"
        )


def check_outer(
    stats: SecondOrderStats, point: OperatingPoint, tol: float = 0.0
) -> FeasibilityReport:
    """Necessary conditions for the point to be achievable by any policy.

    `tol` loosens every constraint uniformly (pass a statistical tolerance
    for empirical points); equality-type constraints always keep at least
    the analytic EQUALITY_TOL.
    """
    _check_dims(stats, point)
    if tol < 0.0:
        raise DomainError(f"tol must be >= 0, got {tol}")
    n = stats.n_clients
    violations: list[Violation] = []

    means = stats.means_all()
    mu_sums = subset_sums(point.mu)
    slack = means - mu_sums
    eq_tol = max(tol, EQUALITY_TOL)
    for mask in range(1, (1 << n)):
        # The full set is an equality in disguise (paired with the total-rate
        # constraint), so it keeps the analytic equality tolerance.
        bound = eq_tol if mask == stats.full_mask else tol
        if slack[mask] < -bound:
            violations.append(Violation("subset_rate", mask, float(slack[mask])))
    total_gap = abs(float(mu_sums[stats.full_mask]) - stats.full_mean)
    if total_gap > eq_tol:
        violations.append(Violation("total_rate", stats.full_mask, eq_tol - total_gap))

    sd_slack = float(point.sigma.sum()) - math.sqrt(stats.full_variance)
    if sd_slack < -eq_tol:
        violations.append(Violation("total_sd", stats.full_mask, sd_slack))

    for i in range(n):
        if point.mu[i] < -tol:
            violations.append(Violation("nonneg_rate", 1 << i, float(point.mu[i])))

    return FeasibilityReport(feasible=not violations, violations=tuple(violations))


def check_inner(
    stats: SecondOrderStats, point: OperatingPoint, delta: float
) -> FeasibilityReport:
    """Sufficient conditions (margin delta on proper subsets) for feasibility."""
    _check_dims(stats, point)
    if not delta > 0.0:
        raise DomainError(f"delta must be > 0, got {delta}")
    n = stats.n_clients
    violations: list[Violation] = []

    means = stats.means_all()
    mu_sums = subset_sums(point.mu)
    for mask in range(1, stats.full_mask):
        margin = float(means[mask] - mu_sums[mask]) - delta
        if margin < 0.0:
            violations.append(Violation("subset_rate_margin", mask, margin))

    total_gap = abs(float(mu_sums[stats.full_mask]) - stats.full_mean)
    if total_gap > EQUALITY_TOL:
        violations.append(
            Violation("total_rate", stats.full_mask, EQUALITY_TOL - total_gap)
        )

    sd_slack = float(point.sigma.sum()) - math.sqrt(stats.full_variance)
    if sd_slack < -EQUALITY_TOL:
        violations.append(Violation("total_sd", stats.full_mask, sd_slack))

    for i in range(n):
        if point.mu[i] < 0.0:
            violations.append(Violation("nonneg_rate", 1 << i, float(point.mu[i])))
        if not point.sigma2[i] > 0.0:
            violations.append(Violation("positive_variance", 1 << i, float(point.sigma2[i])))

    return FeasibilityReport(feasible=not violations, violations=tuple(violations))


def most_violated_subset(stats: SecondOrderStats, mu) -> tuple[int, float]:
    """Proper non-empty subset minimizing m_S - sum_{i in S} mu_i.

    Returns (bitmask, slack). Near-ties (within TIE_TOL) break toward the
    lowest bitmask. With a single client there are no proper non-empty
    subsets and (0, inf) is returned.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.shape[0] != stats.n_clients:
        raise DimensionMismatch(
            f"mu has {mu.shape[0]} entries, stats has {stats.n_clients}"
        )
    n = stats.n_clients
    if n > MAX_ENUM_CLIENTS:
        raise TooManyClients(f"subset enumeration guard: N={n} > {MAX_ENUM_CLIENTS}")
    if n == 1:
        return 0, math.inf
    slack = (stats.means_all() - subset_sums(mu))[1 : stats.full_mask]
    best = float(slack.min())
    mask = int(np.flatnonzero(slack <= best + TIE_TOL)[0]) + 1
    return mask, float(slack[mask - 1])
