"""Gilbert-Elliott ON/OFF channel processes and their second-order statistics.

Each client's channel is a two-state Markov chain: good (G, ON) and bad
(B, OFF), with per-slot transition probabilities p (G to B) and q (B to G).
For a subset S of clients, X_S(t) indicates that at least one client in S is
ON at slot t. The second-order model of X_S is its long-run mean m_S and its
temporal variance v_S^2, the variance of the CLT-normalized partial sums
(sum_t X_S(t) - T*m_S)/sqrt(T).

Closed forms (chains independent across clients, stationary start):

    a_i  = p_i / (p_i + q_i)                    stationary OFF probability
    G_i(k) = a_i + (1 - a_i) * (1 - p_i - q_i)^(k-1)
                                                Prob(OFF at slot k | OFF at 1)
    m_S  = 1 - prod_{i in S} a_i
    v_S^2 = 2 * sum_{k>=1} (prod_i G_i(k+1) - prod_i a_i) * prod_i a_i
            + prod_i a_i - (prod_i a_i)^2

The covariance sum converges geometrically and is truncated (default 100
terms with an early exit once the summand is negligible).

This module also provides exact finite-horizon count variances, stationary
trace sampling with per-(run, client) random streams, and the across-run
empirical estimators of (m_S, v_S^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DomainError, InsufficientRuns, NumericalInconsistency

# Default truncation of the geometric covariance tail.
DEFAULT_TRUNCATION_K = 100
DEFAULT_TAIL_TOL = 1e-12

# Negative values beyond this are genuine bugs, not rounding dust.
_NEGATIVE_DUST = 1e-12

# Purpose codes for derived random streams (see stream_rng).
STREAM_CHANNEL = 0
STREAM_ARRIVAL = 1
STREAM_POLICY = 2


@dataclass(frozen=True)
class ChannelParams:
    """Two-state chain transition probabilities: p = G->B, q = B->G."""

    p: float
    q: float

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0) or not (0.0 < self.q <= 1.0):
            raise DomainError(
                f"channel params must satisfy 0 < p,q <= 1, got p={self.p}, q={self.q}"
            )

    @property
    def off_prob(self) -> float:
        """Stationary probability of the OFF state, p/(p+q)."""
        return self.p / (self.p + self.q)

    @property
    def on_prob(self) -> float:
        """Stationary probability of the ON state, q/(p+q)."""
        return self.q / (self.p + self.q)

    @property
    def memory(self) -> float:
        """Second eigenvalue 1-p-q of the transition matrix."""
        return 1.0 - self.p - self.q


@dataclass(frozen=True)
class ChannelState:
    """Channel state indicator: on=True is the good (ON) state."""

    on: bool


@dataclass(frozen=True)
class SubsetStats:
    """Second-order statistics (m_S, v_S^2) of a subset-ON indicator."""

    mean: float
    variance: float


def step(state: ChannelState, params: ChannelParams, u: float) -> ChannelState:
    """Advance the chain one slot using the uniform draw u in [0, 1)."""
    if not (0.0 <= u < 1.0):
        raise DomainError(f"uniform draw must be in [0, 1), got {u}")
    if state.on:
        return ChannelState(on=not (u < params.p))
    return ChannelState(on=u < params.q)


def stationary_off_prob(params: ChannelParams) -> float:
    """Stationary OFF probability p/(p+q)."""
    return params.off_prob


def g_correlation(params: ChannelParams, k: int) -> float:
    """Prob(OFF at slot k | OFF at slot 1), for lag k >= 1.

    Equals a + (1-a)*(1-p-q)^(k-1) with a = p/(p+q); exactly 1 at k=1.
    """
    if k < 1:
        raise DomainError(f"lag must be >= 1, got {k}")
    if k == 1:
        return 1.0
    return params.off_prob + params.on_prob * params.memory ** (k - 1)


def subset_mean(params_list: Sequence[ChannelParams]) -> float:
    """Long-run fraction of slots where at least one client in S is ON."""
    if not params_list:
        raise DomainError("subset must be non-empty")
    prod_off = 1.0
    for cp in params_list:
        prod_off *= cp.off_prob
    return 1.0 - prod_off


def subset_variance(
    params_list: Sequence[ChannelParams],
    truncation_k: int = DEFAULT_TRUNCATION_K,
    tail_tol: float = DEFAULT_TAIL_TOL,
) -> float:
    """Temporal variance of the subset-ON indicator for clients in S.

    Sums the autocovariance tail up to `truncation_k` lags, exiting early
    once a summand's magnitude drops below `tail_tol`. The analytic value is
    nonnegative: a result below -1e-12 raises NumericalInconsistency, while
    rounding dust in (-1e-12, 0) is clamped to zero.
    """
    if not params_list:
        raise DomainError("subset must be non-empty")
    if truncation_k < 1:
        raise DomainError(f"truncation_k must be >= 1, got {truncation_k}")
    if tail_tol < 0.0:
        raise DomainError(f"tail_tol must be >= 0, got {tail_tol}")
    prod_off = 1.0
    for cp in params_list:
        prod_off *= cp.off_prob
    acc = 0.0
    for k in range(1, truncation_k + 1):
        gp = 1.0
        for cp in params_list:
            gp *= g_correlation(cp, k + 1)
        summand = (gp - prod_off) * prod_off
        acc += summand
        if abs(summand) < tail_tol:
            break
    var = 2.0 * acc + prod_off - prod_off * prod_off
    if var < -_NEGATIVE_DUST:
        raise NumericalInconsistency(
            f"subset variance came out {var} (< -{_NEGATIVE_DUST})"
        )
    return max(var, 0.0)


def iid_subset_stats(q_list: Sequence[float]) -> SubsetStats:
    """Second-order stats for memoryless channels, ON each slot w.p. q_i.

    Special case p_i = 1 - q_i of the general closed forms:
    mean = 1 - prod(1-q_i), variance = prod(1-q_i) - prod(1-q_i)^2.
    """
    if not q_list:
        raise DomainError("subset must be non-empty")
    prod_off = 1.0
    for qi in q_list:
        if not (0.0 < qi <= 1.0):
            raise DomainError(f"ON probability must be in (0, 1], got {qi}")
        prod_off *= 1.0 - qi
    return SubsetStats(mean=1.0 - prod_off, variance=prod_off - prod_off * prod_off)


# ---------------------------------------------------------------------------
# Subset enumeration helpers (bitmask convention: bit i set = client i in S)
# ---------------------------------------------------------------------------


def full_mask(n_clients: int) -> int:
    return (1 << n_clients) - 1


def mask_indices(mask: int) -> list[int]:
    """Client indices contained in a subset bitmask, ascending."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def subset_products(values: Sequence[float]) -> np.ndarray:
    """prod_{i in S} values[i] for every bitmask S, indexed by mask.

    Built by doubling, multiplying in ascending client order, so entries are
    bit-identical to an ascending scalar product over the mask's members.
    """
    prods = np.ones(1)
    for v in values:
        prods = np.concatenate([prods, prods * v])
    return prods


def subset_sums(values: Sequence[float]) -> np.ndarray:
    """sum_{i in S} values[i] for every bitmask S, indexed by mask."""
    sums = np.zeros(1)
    for v in values:
        sums = np.concatenate([sums, sums + v])
    return sums


class SecondOrderStats:
    """The map S -> (m_S, v_S^2) for independent two-state channels.

    Subset statistics are evaluated lazily from the per-client parameters;
    `means_all` / `variances_all` materialize the full 2^N tables (used by
    constraint enumeration and the stats command).
    """

    def __init__(
        self,
        params: Sequence[ChannelParams],
        truncation_k: int = DEFAULT_TRUNCATION_K,
        tail_tol: float = DEFAULT_TAIL_TOL,
    ):
        if not params:
            raise DomainError("need at least one client")
        self.params = tuple(params)
        self.truncation_k = int(truncation_k)
        self.tail_tol = float(tail_tol)
        self._off = np.array([cp.off_prob for cp in self.params])
        self._means_all: np.ndarray | None = None
        self._variances_all: np.ndarray | None = None
        self.full_mask = full_mask(self.n_clients)
        self.full_mean = self.mean(self.full_mask)
        self.full_variance = self.variance(self.full_mask)

    @property
    def n_clients(self) -> int:
        return len(self.params)

    def _params_of(self, mask: int) -> list[ChannelParams]:
        if mask <= 0 or mask > self.full_mask:
            raise DomainError(f"subset mask {mask} out of range for N={self.n_clients}")
        return [self.params[i] for i in mask_indices(mask)]

    def mean(self, mask: int) -> float:
        return subset_mean(self._params_of(mask))

    def variance(self, mask: int) -> float:
        return subset_variance(self._params_of(mask), self.truncation_k, self.tail_tol)

    def subset(self, mask: int) -> SubsetStats:
        return SubsetStats(mean=self.mean(mask), variance=self.variance(mask))

    def means_all(self) -> np.ndarray:
        """m_S for every bitmask (index 0, the empty set, is 0 by convention)."""
        if self._means_all is None:
            means = 1.0 - subset_products(self._off)
            means[0] = 0.0
            self._means_all = means
        return self._means_all

    def variances_all(self) -> np.ndarray:
        """v_S^2 for every bitmask (index 0 is 0 by convention).

        Vectorized over masks with the same per-subset truncation rule as
        `subset_variance`, so entries match the scalar path bit for bit.
        """
        if self._variances_all is not None:
            return self._variances_all
        n_masks = 1 << self.n_clients
        prod_off = subset_products(self._off)
        on = np.array([cp.on_prob for cp in self.params])
        rho = np.array([cp.memory for cp in self.params])
        acc = np.zeros(n_masks)
        active = np.ones(n_masks, dtype=bool)
        active[0] = False
        for k in range(1, self.truncation_k + 1):
            if not active.any():
                break
            g_vals = self._off + on * rho**k  # per-client G_i(k+1)
            gp = subset_products(g_vals)
            summand = (gp - prod_off) * prod_off
            acc[active] += summand[active]
            active &= np.abs(summand) >= self.tail_tol
        var = 2.0 * acc + prod_off - prod_off * prod_off
        var[0] = 0.0
        if var.min() < -_NEGATIVE_DUST:
            raise NumericalInconsistency(
                f"subset variance table has entry {var.min()} (< -{_NEGATIVE_DUST})"
            )
        self._variances_all = np.maximum(var, 0.0)
        return self._variances_all


# ---------------------------------------------------------------------------
# Finite-horizon count variance (single client, stationary start)
# ---------------------------------------------------------------------------

_ENUMERATION_MAX_T = 22
_CLOSED_FORM_CHECK_MAX_T = 12
_CLOSED_FORM_CHECK_TOL = 1e-9


def enumerated_count_variance(params: ChannelParams, horizon: int) -> float:
    """Exact Var of the ON-slot count over `horizon` slots by 2^T path sums.

    Enumerates every state path, weighting by the stationary initial
    probability times the transition probabilities. Exponential in the
    horizon; guarded.
    """
    if not (1 <= horizon <= _ENUMERATION_MAX_T):
        raise DomainError(f"enumeration supports 1 <= horizon <= {_ENUMERATION_MAX_T}")
    t = horizon
    paths = (np.arange(1 << t, dtype=np.int64)[:, None] >> np.arange(t)) & 1
    prob = np.where(paths[:, 0] == 1, params.on_prob, params.off_prob).astype(float)
    p, q = params.p, params.q
    for s in range(1, t):
        prev, cur = paths[:, s - 1], paths[:, s]
        prob *= np.where(
            prev == 1, np.where(cur == 1, 1.0 - p, p), np.where(cur == 1, q, 1.0 - q)
        )
    counts = paths.sum(axis=1).astype(float)
    mean = float(np.dot(prob, counts))
    second = float(np.dot(prob, counts * counts))
    return second - mean * mean


def _count_variance_closed_form(p: float, q: float, horizon: int) -> float:
    # Candidate algebraic expression for the stationary count variance. Only
    # trusted after validation against enumerated_count_variance; see
    # finite_horizon_variance.
    t = float(horizon)
    s = p + q
    rho = 1.0 - s
    return (
        (2.0 * t * q * q + t * p * q) / s**2
        + 2.0 * p * q * rho * t / s**3
        - 2.0 * p * q * (rho**2 - rho ** (horizon + 2)) / s**4
    )


def _count_variance_recurrence(p: float, q: float, horizon: int) -> float:
    """Count variance from the two-state generating-function recursions.

    Tracks, split by the final chain state, the generating function of the
    ON-count through its value and first two derivatives at z=1:

        G_T(z) = z * ((1-p) * G_{T-1}(z) + q * B_{T-1}(z))
        B_T(z) = p * G_{T-1}(z) + (1-q) * B_{T-1}(z)

    starting from the stationary split (G_0, B_0) = (q, p)/(p+q). Exact up
    to float rounding, O(horizon) arithmetic.
    """
    g, b = q / (p + q), p / (p + q)
    g1 = g2 = b1 = b2 = 0.0
    for _ in range(horizon):
        f = (1.0 - p) * g + q * b
        f1 = (1.0 - p) * g1 + q * b1
        f2 = (1.0 - p) * g2 + q * b2
        nb = p * g + (1.0 - q) * b
        nb1 = p * g1 + (1.0 - q) * b1
        nb2 = p * g2 + (1.0 - q) * b2
        # d/dz and d2/dz2 of z*F(z) at z=1 are F+F' and 2F'+F''.
        g, g1, g2 = f, f + f1, 2.0 * f1 + f2
        b, b1, b2 = nb, nb1, nb2
    mean = g1 + b1
    second_factorial = g2 + b2
    return second_factorial + mean - mean * mean


@lru_cache(maxsize=None)
def _closed_form_is_valid(p: float, q: float) -> bool:
    for t in range(1, _CLOSED_FORM_CHECK_MAX_T + 1):
        cf = _count_variance_closed_form(p, q, t)
        oracle = enumerated_count_variance(ChannelParams(p, q), t)
        if abs(cf - oracle) > _CLOSED_FORM_CHECK_TOL:
            return False
    return True


def finite_horizon_variance(params: ChannelParams, horizon: int) -> float:
    """Variance of the ON-slot count over `horizon` stationary slots.

    The candidate closed form is validated once per (p, q) against the exact
    path-enumeration oracle on small horizons; if it disagrees beyond 1e-9
    anywhere, the generating-function recurrence is used instead.
    """
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    if _closed_form_is_valid(params.p, params.q):
        return _count_variance_closed_form(params.p, params.q, horizon)
    return _count_variance_recurrence(params.p, params.q, horizon)


# ---------------------------------------------------------------------------
# Trace sampling and empirical estimators
# ---------------------------------------------------------------------------


def stream_rng(
    seed: int, purpose: int, run: int, client: int, salt: tuple[int, ...] = ()
) -> np.random.Generator:
    """Independent random stream keyed by (seed, purpose, run, client).

    Streams are derived from the master seed alone, so results do not depend
    on execution order or on how runs are batched across workers.
    """
    ss = np.random.SeedSequence((int(seed), int(purpose), int(run), int(client)) + salt)
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class Traces:
    """Sampled ON indicators, shape (runs, clients, horizon), with provenance."""

    on: np.ndarray
    params: tuple[ChannelParams, ...]
    seed: int

    @property
    def n_runs(self) -> int:
        return self.on.shape[0]

    @property
    def n_clients(self) -> int:
        return self.on.shape[1]

    @property
    def horizon(self) -> int:
        return self.on.shape[2]


def sample_traces(
    params_list: Sequence[ChannelParams],
    horizon: int,
    n_runs: int,
    seed: int,
    time_block: int = 4096,
    salt: tuple[int, ...] = (),
) -> Traces:
    """Sample independent stationary chains for every (run, client).

    Each chain starts from a stationary draw and consumes exactly `horizon`
    uniforms from its own stream (one to initialize, one per later slot), so
    traces are reproducible bit for bit given the seed.
    """
    if horizon < 1 or n_runs < 1:
        raise DomainError("horizon and n_runs must be >= 1")
    n = len(params_list)
    if n == 0:
        raise DomainError("need at least one client")
    on_prob = np.array([cp.on_prob for cp in params_list])
    p = np.array([cp.p for cp in params_list])
    q = np.array([cp.q for cp in params_list])
    gens = [
        [stream_rng(seed, STREAM_CHANNEL, r, c, salt) for c in range(n)]
        for r in range(n_runs)
    ]
    out = np.empty((n_runs, n, horizon), dtype=np.uint8)
    state = np.zeros((n_runs, n), dtype=bool)
    u_block = np.empty((n_runs, n, time_block))
    t = 0
    while t < horizon:
        width = min(time_block, horizon - t)
        for r in range(n_runs):
            for c in range(n):
                u_block[r, c, :width] = gens[r][c].random(width)
        for k in range(width):
            u = u_block[:, :, k]
            if t + k == 0:
                state = u < on_prob
            else:
                state = np.where(state, u >= p, u < q)
            out[:, :, t + k] = state
        t += width
    return Traces(on=out, params=tuple(params_list), seed=int(seed))


def subset_counts(traces: Traces, mask: int, checkpoint: int) -> np.ndarray:
    """Per-run count of slots <= checkpoint where some client in S is ON."""
    if not (1 <= checkpoint <= traces.horizon):
        raise DomainError(f"checkpoint must be in [1, {traces.horizon}]")
    cols = mask_indices(mask)
    if not cols or mask > full_mask(traces.n_clients):
        raise DomainError(f"subset mask {mask} out of range")
    window = traces.on[:, cols, :checkpoint]
    return window.any(axis=1).sum(axis=1)


@dataclass(frozen=True)
class EmpiricalSubsetStats:
    """Across-run estimates of (m_S, v_S^2) with their standard errors."""

    mean: float
    variance: float
    mean_se: float
    variance_se: float


def empirical_subset_stats(
    traces: Traces, mask: int, checkpoint: int
) -> EmpiricalSubsetStats:
    """Estimate (m_S, v_S^2) from traces at the given checkpoint.

    m_hat averages per-run ON fractions. v_hat2 averages the squared
    CLT-normalized deviations (count - t*m_S)/sqrt(t), centered on the
    closed-form m_S rather than the empirical mean: that is the quantity the
    temporal variance is defined around, and it keeps a systematic rate bias
    visible instead of absorbing it into the centering.
    """
    if traces.n_runs < 2:
        raise InsufficientRuns("need at least 2 runs for across-run estimates")
    counts = subset_counts(traces, mask, checkpoint).astype(float)
    t = float(checkpoint)
    fractions = counts / t
    m_hat = float(fractions.mean())
    m_se = float(fractions.std(ddof=1) / np.sqrt(traces.n_runs))
    m_true = subset_mean([traces.params[i] for i in mask_indices(mask)])
    w_sq = (counts - t * m_true) ** 2 / t
    v_hat = float(w_sq.mean())
    v_se = float(w_sq.std(ddof=1) / np.sqrt(traces.n_runs))
    return EmpiricalSubsetStats(mean=m_hat, variance=v_hat, mean_se=m_se, variance_se=v_se)
