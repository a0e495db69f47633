"""Choose the AoI-optimal operating point inside the tightened inner region.

The program is: minimize the weighted total AoI over delivery models
{(mu_i, sigma_i^2)} subject to the inner-bound constraints with subset
margins delta. Because the objective is separable and strictly decreasing
in each sigma_i^2, the standard-deviation budget sum_i sigma_i = V binds at
any optimum and the inner sigma-problem has a closed form
(`sigma_allocation`). That leaves a problem over mu alone:

    J(mu) = V^2 / (2 W) + sum_i alpha_i / (2 mu_i) + sum_i alpha_i (1/lam_i - 1/2),
    W = sum_j mu_j^2 / alpha_j,

minimized over {sum mu = m_full, sum_{i in S} mu_i <= m_S - delta (proper S),
mu >= MU_FLOOR}. A projected gradient descent with proportional subset
repair handles the polytope; convexity is not assumed, so five starts (the
rate-proportional point plus four random feasible ones) guard against local
minima, and a brute-force grid oracle cross-checks small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aoi import UpdateModel, aoi_approx
from .capacity import OperatingPoint, check_inner, most_violated_subset
from .channel import SecondOrderStats, mask_indices, subset_sums
from .errors import (
    DimensionMismatch,
    DomainError,
    InfeasibleRegion,
    NumericalInconsistency,
    TooManyClients,
)

# Strict positivity floor on rates: the AoI objective diverges at mu = 0, so
# any positively weighted client has an interior optimum.
MU_FLOOR = 1e-4

_N_RANDOM_STARTS = 4
_MAX_REPAIR_ROUNDS = 200
_MAX_BACKTRACKS = 40


@dataclass(frozen=True)
class SolverConfig:
    delta: float = 1e-3
    max_iters: int = 400
    step_size: float = 0.05
    tolerance: float = 1e-10
    grid_resolution: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if not self.delta > 0.0:
            raise DomainError(f"delta must be > 0, got {self.delta}")
        if not self.tolerance > 0.0:
            raise DomainError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iters < 1 or not self.step_size > 0.0 or not self.grid_resolution > 0.0:
            raise DomainError("max_iters, step_size, grid_resolution must be positive")


@dataclass(frozen=True)
class SolveResult:
    point: OperatingPoint
    objective: float  # weighted total AoI at the point (minimized)
    iterations: int
    binding_subsets: tuple[int, ...]
    converged: bool


def theoretical_total_aoi(
    point: OperatingPoint, update_models: Sequence[UpdateModel]
) -> float:
    """Weighted sum of closed-form per-client AoI at the operating point."""
    if point.n != len(update_models):
        raise DimensionMismatch("point and update models disagree on N")
    return float(
        sum(
            um.weight * aoi_approx(float(point.mu[i]), float(point.sigma2[i]), um.lam)
            for i, um in enumerate(update_models)
        )
    )


def sigma_allocation(mu, total_sd_budget: float, weights) -> np.ndarray:
    """Split the SD budget V across clients to minimize the variance cost.

    Minimizes sum_i (alpha_i/2) sigma_i^2 / mu_i^2 subject to
    sum_i sigma_i = V, sigma_i > 0; the Lagrange solution is
    sigma_i = V * (mu_i^2/alpha_i) / sum_j (mu_j^2/alpha_j). Returns sigma^2.
    """
    mu = np.asarray(mu, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not np.all(mu > 0.0) or not total_sd_budget > 0.0:
        raise DomainError("sigma allocation needs mu > 0 and a positive SD budget")
    w = mu * mu / weights
    sigma = total_sd_budget * w / w.sum()
    return sigma * sigma


def reduced_objective(mu, sd_budget: float, update_models: Sequence[UpdateModel]) -> float:
    """Weighted total AoI as a function of mu, sigma eliminated at its optimum."""
    mu = np.asarray(mu, dtype=float)
    alpha = np.array([um.weight for um in update_models])
    lam = np.array([um.lam for um in update_models])
    w_sum = float((mu * mu / alpha).sum())
    return float(
        0.5 * sd_budget * sd_budget / w_sum
        + (0.5 * alpha / mu).sum()
        + (alpha * (1.0 / lam - 0.5)).sum()
    )


def reduced_gradient(mu, sd_budget: float, update_models: Sequence[UpdateModel]) -> np.ndarray:
    """Analytic gradient of `reduced_objective` in mu."""
    mu = np.asarray(mu, dtype=float)
    alpha = np.array([um.weight for um in update_models])
    w_sum = float((mu * mu / alpha).sum())
    return -(sd_budget * sd_budget) * mu / (alpha * w_sum * w_sum) - 0.5 * alpha / (mu * mu)


def _project_rate_slice(x: np.ndarray, total: float, floor: float) -> np.ndarray:
    """Euclidean projection onto {sum mu = total, mu >= floor}."""
    n = x.shape[0]
    budget = total - n * floor
    if budget < 0.0:
        raise InfeasibleRegion(f"rate floor infeasible: {n} * {floor} > {total}")
    if budget == 0.0:
        return np.full(n, floor)
    v = x - floor
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, n + 1)
    rho = int(np.nonzero(u * idx > (css - budget))[0][-1])
    theta = (css[rho] - budget) / (rho + 1.0)
    return np.maximum(v - theta, 0.0) + floor


def _repair_subsets(
    stats: SecondOrderStats, mu: np.ndarray, delta: float, floor: float
) -> tuple[np.ndarray, bool]:
    """Proportionally move rate off violated subsets until margins hold.

    Each round takes the most violated proper subset and shifts the excess
    to the complement, proportionally to removable mass (mu - floor) inside
    and to current rates outside. Rounds are bounded; reports success.
    """
    mu = mu.copy()
    n = stats.n_clients
    if n == 1:
        return mu, True
    all_idx = np.arange(n)
    for _ in range(_MAX_REPAIR_ROUNDS):
        mask, slack = most_violated_subset(stats, mu)
        if slack >= delta - 1e-12:
            return mu, True
        inside = np.array(mask_indices(mask))
        outside = np.setdiff1d(all_idx, inside, assume_unique=True)
        removable = mu[inside] - floor
        cap = float(removable.sum())
        need = delta - slack
        if cap <= 0.0 or outside.size == 0:
            return mu, False
        move = min(need, cap)
        mu[inside] -= move * removable / cap
        out_weights = mu[outside]
        mu[outside] += move * out_weights / out_weights.sum()
        if move < need:
            return mu, False
    mask, slack = most_violated_subset(stats, mu)
    return mu, bool(slack >= delta - 1e-12)


def _feasible_point(
    stats: SecondOrderStats,
    mu: np.ndarray,
    sd_budget: float,
    update_models: Sequence[UpdateModel],
) -> OperatingPoint:
    alpha = [um.weight for um in update_models]
    return OperatingPoint(mu=mu, sigma2=sigma_allocation(mu, sd_budget, alpha))


def solve_operating_point(
    stats: SecondOrderStats,
    update_models: Sequence[UpdateModel],
    config: SolverConfig = SolverConfig(),
) -> SolveResult:
    """Projected-gradient solve of the tightened program; see module docstring.

    Raises InfeasibleRegion when the rate-proportional start cannot be made
    inner-feasible (the emptiness pre-check). A non-converged best iterate
    is still returned, flagged via `converged`.
    """
    n = stats.n_clients
    if len(update_models) != n:
        raise DimensionMismatch("stats and update models disagree on N")
    m_full = stats.full_mean
    sd_budget = math.sqrt(stats.full_variance)
    delta = config.delta
    floor = MU_FLOOR
    if m_full <= n * floor:
        raise InfeasibleRegion(f"total rate {m_full} cannot support {n} clients at the floor")

    def prepared(x: np.ndarray) -> tuple[np.ndarray, bool]:
        proj = _project_rate_slice(x, m_full, floor)
        return _repair_subsets(stats, proj, delta, floor)

    singleton_means = np.array([stats.mean(1 << i) for i in range(n)])
    prop_raw = singleton_means * (m_full / singleton_means.sum())
    prop, prop_ok = prepared(prop_raw)
    prop_report = check_inner(stats, _feasible_point(stats, prop, sd_budget, update_models), delta)
    if not (prop_ok and prop_report.feasible):
        raise InfeasibleRegion(
            "proportional start infeasible; region empty or delta too large",
            violations=prop_report.violations,
        )

    starts = [prop]
    rng = np.random.default_rng(config.seed)
    for _ in range(_N_RANDOM_STARTS):
        raw = rng.dirichlet(np.ones(n)) * (m_full - n * floor) + floor
        cand, ok = prepared(raw)
        if ok and check_inner(
            stats, _feasible_point(stats, cand, sd_budget, update_models), delta
        ).feasible:
            starts.append(cand)

    best_mu = None
    best_obj = math.inf
    best_iters = 0
    best_converged = False
    for start in starts:
        mu = start.copy()
        obj = reduced_objective(mu, sd_budget, update_models)
        iters = 0
        converged = False
        for _ in range(config.max_iters):
            grad = reduced_gradient(mu, sd_budget, update_models)
            step = config.step_size
            accepted = None
            for _ in range(_MAX_BACKTRACKS):
                cand, ok = prepared(mu - step * grad)
                if ok:
                    cand_obj = reduced_objective(cand, sd_budget, update_models)
                    if cand_obj < obj:
                        accepted = (cand, cand_obj)
                        break
                step *= 0.5
            if accepted is None:
                converged = True
                break
            iters += 1
            improvement = obj - accepted[1]
            mu, obj = accepted
            if improvement < config.tolerance:
                converged = True
                break
        if obj < best_obj - 1e-12:
            best_mu, best_obj, best_iters, best_converged = mu, obj, iters, converged

    point = _feasible_point(stats, best_mu, sd_budget, update_models)
    final = check_inner(stats, point, delta * (1.0 - 1e-6))
    if not final.feasible:
        raise NumericalInconsistency(
            f"solver produced an infeasible point: {final.violations}"
        )
    return SolveResult(
        point=point,
        objective=theoretical_total_aoi(point, update_models),
        iterations=best_iters,
        binding_subsets=_binding_subsets(stats, point.mu, delta),
        converged=best_converged,
    )


def _binding_subsets(stats: SecondOrderStats, mu: np.ndarray, delta: float) -> tuple[int, ...]:
    """Proper subsets whose rate slack m_S - sum mu_S is within 10*delta."""
    n = stats.n_clients
    if n == 1:
        return ()
    slack = (stats.means_all() - subset_sums(mu))[1 : stats.full_mask]
    return tuple(int(m) + 1 for m in np.flatnonzero(slack <= 10.0 * delta))


def brute_force_oracle(
    stats: SecondOrderStats,
    update_models: Sequence[UpdateModel],
    delta: float,
    grid_resolution: float,
) -> SolveResult:
    """Grid search over the rate slice for N <= 3; verification oracle.

    Scans mu on the equality slice at the given resolution, allocates sigma
    by `sigma_allocation`, and returns the best inner-feasible grid point.
    """
    n = stats.n_clients
    if n > 3:
        raise TooManyClients(f"grid oracle supports N <= 3, got {n}")
    if len(update_models) != n:
        raise DimensionMismatch("stats and update models disagree on N")
    m_full = stats.full_mean
    sd_budget = math.sqrt(stats.full_variance)
    floor = MU_FLOOR

    def axis() -> np.ndarray:
        hi = m_full - (n - 1) * floor
        return np.arange(floor, hi + 1e-12, grid_resolution)

    candidates: list[np.ndarray] = []
    if n == 1:
        candidates.append(np.array([m_full]))
    elif n == 2:
        for mu1 in axis():
            mu2 = m_full - mu1
            if mu2 >= floor - 1e-12:
                candidates.append(np.array([mu1, mu2]))
    else:
        ax = axis()
        for mu1 in ax:
            for mu2 in ax:
                mu3 = m_full - mu1 - mu2
                if mu3 >= floor - 1e-12:
                    candidates.append(np.array([mu1, mu2, mu3]))

    best = None
    best_obj = math.inf
    evaluated = 0
    for mu in candidates:
        point = _feasible_point(stats, mu, sd_budget, update_models)
        if not check_inner(stats, point, delta).feasible:
            continue
        evaluated += 1
        obj = theoretical_total_aoi(point, update_models)
        if obj < best_obj:
            best, best_obj = point, obj
    if best is None:
        raise InfeasibleRegion("no grid point is inner-feasible")
    return SolveResult(
        point=best,
        objective=best_obj,
        iterations=evaluated,
        binding_subsets=_binding_subsets(stats, best.mu, delta),
        converged=True,
    )
