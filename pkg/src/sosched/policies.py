"""The four schedulers as pure per-slot decision functions.

All policies are work-conserving: some client is scheduled exactly when the
ON set is non-empty. Ties break toward the lowest client index so replays
are deterministic. Each policy exists in two forms that share the same
arithmetic: a scalar form matching the documented contracts, and a
vectorized kernel over a batch of independent runs used by the simulator
(shape conventions: scores and masks are (runs, clients)).

The scoring rules, per scheduled name:

  vwd         argmax d_i / sqrt(sigma_i^2) over ON clients
  whittle     argmax AoI_i^2/2 - AoI_i/2 + AoI_i/(q_i/(p_i+q_i)) over ON
  randomized  pick ON client i with probability proportional to mu_i
  maxweight   argmax (AoI_i - 1/lambda_i) / mu_i over ON

The baselines take no AoI weights by default; `alpha` optionally scales the
whittle/maxweight scores for exploration (off in the shipped comparisons).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .aoi import UpdateModel
from .capacity import OperatingPoint
from .channel import ChannelParams
from .errors import DomainError

POLICY_NAMES = ("vwd", "whittle", "randomized", "maxweight")

# Policies that need a target operating point to run.
POINT_POLICIES = ("vwd", "randomized", "maxweight")


@dataclass
class SchedulerState:
    """Per-slot view handed to deciders: deficits d_i, current AoI_i, slot t."""

    deficits: np.ndarray
    aoi: np.ndarray
    slot: int = 0

    def __post_init__(self):
        self.deficits = np.atleast_1d(np.asarray(self.deficits, dtype=float))
        self.aoi = np.atleast_1d(np.asarray(self.aoi, dtype=float))


@dataclass(frozen=True)
class Decision:
    """Scheduled client index, or None when every channel is OFF."""

    scheduled: int | None


def _on_matrix(on_set) -> np.ndarray:
    on = np.atleast_2d(np.asarray(on_set, dtype=bool))
    if on.ndim != 2:
        raise DomainError("ON set must be a 1-D or 2-D boolean mask")
    return on


def masked_argmax(scores: np.ndarray, on: np.ndarray) -> np.ndarray:
    """Row-wise argmax of `scores` restricted to ON entries; -1 when none ON."""
    masked = np.where(on, scores, -np.inf)
    chosen = masked.argmax(axis=1).astype(np.int64)
    chosen[~on.any(axis=1)] = -1
    return chosen


def _to_decision(chosen: np.ndarray) -> Decision:
    idx = int(chosen[0])
    return Decision(scheduled=None if idx < 0 else idx)


# ---------------------------------------------------------------------------
# VWD
# ---------------------------------------------------------------------------


def vwd_choose(deficits: np.ndarray, inv_sd: np.ndarray, on: np.ndarray) -> np.ndarray:
    return masked_argmax(deficits * inv_sd, on)


def vwd_select(state: SchedulerState, point: OperatingPoint, on_set) -> Decision:
    """Schedule the ON client with the largest deficit over sigma."""
    if not np.all(point.sigma2 > 0.0):
        raise DomainError("vwd needs sigma_i^2 > 0 for every client")
    on = _on_matrix(on_set)
    inv_sd = 1.0 / np.sqrt(point.sigma2)
    return _to_decision(vwd_choose(np.atleast_2d(state.deficits), inv_sd, on))


def update_deficits(
    state: SchedulerState,
    point: OperatingPoint,
    decision: Decision,
    delivered: bool = True,
) -> SchedulerState:
    """Advance deficits one slot: d_i += mu_i, minus 1 for a delivered client.

    Maintains sum_i d_i(t) = t * sum_i mu_i - (deliveries so far). In this
    channel model a scheduled ON client always delivers; the flag exists for
    future loss models.
    """
    deficits = state.deficits + point.mu
    if decision.scheduled is not None and delivered:
        deficits[decision.scheduled] -= 1.0
    return replace(state, deficits=deficits, slot=state.slot + 1)


# ---------------------------------------------------------------------------
# Whittle index
# ---------------------------------------------------------------------------


def whittle_choose(
    aoi: np.ndarray,
    stationary_on: np.ndarray,
    on: np.ndarray,
    alpha: np.ndarray | None = None,
) -> np.ndarray:
    scores = aoi * aoi / 2.0 - aoi / 2.0 + aoi / stationary_on
    if alpha is not None:
        scores = scores * alpha
    return masked_argmax(scores, on)


def whittle_select(
    state: SchedulerState,
    channel_params: Sequence[ChannelParams],
    on_set,
    alpha: np.ndarray | None = None,
) -> Decision:
    """Schedule the ON client with the largest AoI-based index."""
    stationary_on = np.array([cp.on_prob for cp in channel_params])
    on = _on_matrix(on_set)
    return _to_decision(whittle_choose(np.atleast_2d(state.aoi), stationary_on, on, alpha))


# ---------------------------------------------------------------------------
# Stationary randomized
# ---------------------------------------------------------------------------


def randomized_choose(mu: np.ndarray, on: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF pick among ON clients with weights mu, one uniform per row."""
    weights = np.where(on, mu, 0.0)
    totals = weights.sum(axis=1)
    cdf = np.cumsum(weights, axis=1)
    chosen = (cdf > (u * totals)[:, None]).argmax(axis=1).astype(np.int64)
    chosen[totals <= 0.0] = -1
    return chosen


def randomized_select(point: OperatingPoint, on_set, u: float) -> Decision:
    """Pick an ON client with probability proportional to its target rate."""
    if not (0.0 <= u < 1.0):
        raise DomainError(f"uniform draw must be in [0, 1), got {u}")
    on = _on_matrix(on_set)
    if bool(on.any()) and float(np.where(on[0], point.mu, 0.0).sum()) <= 0.0:
        raise DomainError("randomized policy needs some ON client with mu > 0")
    return _to_decision(randomized_choose(point.mu[None, :], on, np.array([u])))


# ---------------------------------------------------------------------------
# Max weight
# ---------------------------------------------------------------------------


def maxweight_choose(
    aoi: np.ndarray,
    inv_lam: np.ndarray,
    mu: np.ndarray,
    on: np.ndarray,
    alpha: np.ndarray | None = None,
) -> np.ndarray:
    scores = (aoi - inv_lam) / mu
    if alpha is not None:
        scores = scores * alpha
    return masked_argmax(scores, on)


def maxweight_select(
    state: SchedulerState,
    update_models: Sequence[UpdateModel],
    point: OperatingPoint,
    on_set,
    alpha: np.ndarray | None = None,
) -> Decision:
    """Schedule the ON client with the largest (AoI_i - 1/lambda_i)/mu_i.

    Negative scores are still schedulable; the rule is an argmax, not a
    threshold.
    """
    if not np.all(point.mu > 0.0):
        raise DomainError("maxweight needs mu_i > 0 for every client")
    inv_lam = np.array([1.0 / um.lam for um in update_models])
    on = _on_matrix(on_set)
    return _to_decision(
        maxweight_choose(np.atleast_2d(state.aoi), inv_lam, point.mu, on, alpha)
    )
