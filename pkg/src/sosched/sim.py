"""Discrete-time Monte Carlo engine for scheduled update delivery.

Per slot, in order: sensors generate updates (Bernoulli lambda_i), channels
step, the policy picks one ON client using end-of-previous-slot state, the
pick (if any) delivers the sensor's freshest update, deficits advance, and
the age of every client is measured at the slot end (an update generated in
slot t carries timestamp t-1, so same-slot generate-and-deliver shows age 1).

Runs are independent and processed in lockstep batches for speed. Every
(run, client) pair owns its own random stream derived from the master seed
(purposes: channel, arrival, policy), so results are bit-identical however
runs are chunked or parallelized, and channel/arrival traces are shared
across policies by construction (common random numbers) unless
`independent_traces` salts the streams with the policy identity.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aoi import UpdateModel
from .capacity import OperatingPoint
from .channel import (
    STREAM_ARRIVAL,
    STREAM_CHANNEL,
    STREAM_POLICY,
    ChannelParams,
    stream_rng,
)
from .errors import ConfigError, DomainError
from .policies import (
    POINT_POLICIES,
    POLICY_NAMES,
    maxweight_choose,
    randomized_choose,
    vwd_choose,
    whittle_choose,
)


@dataclass(frozen=True)
class ClientConfig:
    """One client: channel transition probabilities plus update model."""

    channel: ChannelParams
    update: UpdateModel


def default_checkpoints(horizon: int, n_points: int = 100) -> tuple[int, ...]:
    """About n_points log-spaced slots in [1, horizon], always including horizon."""
    raw = np.logspace(0.0, math.log10(horizon), n_points) if horizon > 1 else [1.0]
    slots = sorted(set(int(round(x)) for x in raw) | {horizon})
    return tuple(s for s in slots if 1 <= s <= horizon)


@dataclass(frozen=True)
class SimConfig:
    clients: tuple[ClientConfig, ...]
    horizon: int
    runs: int
    seed: int
    policy: str
    point: OperatingPoint | None = None
    checkpoints: tuple[int, ...] = ()
    warmup: int = 0
    weight_baselines: bool = False
    independent_traces: bool = False
    jobs: int = 1
    run_chunk: int = 256

    def __post_init__(self):
        if not self.clients:
            raise ConfigError("need at least one client")
        if self.horizon < 1 or self.runs < 1:
            raise ConfigError("horizon and runs must be >= 1")
        if not (0 <= self.warmup < self.horizon):
            raise ConfigError("warmup must be in [0, horizon)")
        if self.policy not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {self.policy!r}; know {POLICY_NAMES}")
        if self.policy in POINT_POLICIES:
            if self.point is None:
                raise ConfigError(f"policy {self.policy!r} needs an operating point")
            if self.point.n != len(self.clients):
                raise ConfigError("operating point and client list disagree on N")
            if self.policy == "vwd" and not np.all(self.point.sigma2 > 0.0):
                raise ConfigError("vwd needs sigma_i^2 > 0 for every client")
            if self.policy in ("randomized", "maxweight") and not np.all(
                self.point.mu > 0.0
            ):
                raise ConfigError(f"{self.policy} needs mu_i > 0 for every client")
        for t in self.checkpoints:
            if not (1 <= t <= self.horizon):
                raise ConfigError(f"checkpoint {t} outside [1, {self.horizon}]")
        if list(self.checkpoints) != sorted(set(self.checkpoints)):
            raise ConfigError("checkpoints must be strictly ascending")
        if self.jobs < 1 or self.run_chunk < 1:
            raise ConfigError("jobs and run_chunk must be >= 1")

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    def resolved_checkpoints(self) -> tuple[int, ...]:
        return self.checkpoints if self.checkpoints else default_checkpoints(self.horizon)


@dataclass(frozen=True)
class RunMetrics:
    """Metrics of one simulated run."""

    run_index: int
    checkpoints: tuple[int, ...]
    deliveries_at_checkpoint: np.ndarray  # (n_ckpt, N) int64
    time_avg_aoi: np.ndarray  # (N,)
    total_weighted_aoi: float
    interdelivery_sum: np.ndarray  # (N,)
    interdelivery_sumsq: np.ndarray  # (N,)
    interdelivery_count: np.ndarray  # (N,) int64
    max_rel_deficit: float  # nan when no operating point is tracked
    rel_deficit_at_checkpoint: np.ndarray  # (n_ckpt,), running max; nan likewise


@dataclass(frozen=True)
class BatchMetrics:
    """Across-run aggregates at each checkpoint, plus per-run raw arrays."""

    checkpoints: tuple[int, ...]
    deliveries: np.ndarray  # (R, n_ckpt, N) int64
    mu_hat: np.ndarray  # (n_ckpt, N): mean over runs of deliveries/t
    mu_se: np.ndarray  # (n_ckpt, N)
    sigma2_hat: np.ndarray  # (n_ckpt, N): across-run variance of deliveries/sqrt(t)
    sigma2_se: np.ndarray  # (n_ckpt, N)
    time_avg_aoi_mean: np.ndarray  # (N,)
    total_weighted_aoi_runs: np.ndarray  # (R,)
    total_aoi_mean: float
    total_aoi_se: float
    rel_deficit_median: np.ndarray  # (n_ckpt,), nan when not tracked
    max_rel_deficit_runs: np.ndarray  # (R,), nan when not tracked

    @property
    def n_runs(self) -> int:
        return self.deliveries.shape[0]

    def total_empirical_variance(self) -> np.ndarray:
        """sum_i sigma2_hat_i at each checkpoint."""
        return self.sigma2_hat.sum(axis=1)


def relative_deficit_series(deficits: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """max_i |d_i(t)/sigma_i - D(t)| per slot, for a (T, N) deficit trajectory."""
    deficits = np.atleast_2d(np.asarray(deficits, dtype=float))
    sd = np.sqrt(np.asarray(sigma2, dtype=float))
    if not np.all(sd > 0.0):
        raise DomainError("relative deficits need sigma_i^2 > 0")
    rel = deficits / sd
    d_avg = deficits.sum(axis=1) / sd.sum()
    return np.abs(rel - d_avg[:, None]).max(axis=1)


def relative_deficit_diagnostic(deficits: np.ndarray, sigma2: np.ndarray) -> float:
    """Trajectory maximum of the relative-deficit spread (boundedness check)."""
    return float(relative_deficit_series(deficits, sigma2).max())


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


def _policy_salt(config: SimConfig) -> tuple[int, ...]:
    if not config.independent_traces:
        return ()
    return (POLICY_NAMES.index(config.policy) + 1,)


def _time_block(n_runs: int, n_clients: int) -> int:
    # Keep the prefetched uniform blocks around tens of MB.
    return int(min(8192, max(256, 4_000_000 // max(1, n_runs * n_clients))))


@dataclass
class _ChunkResult:
    runs: list[int]
    deliveries: np.ndarray  # (Rc, n_ckpt, N)
    aoi_avg: np.ndarray  # (Rc, N)
    bsum: np.ndarray
    bsq: np.ndarray
    bcount: np.ndarray
    rel_ckpt: np.ndarray  # (Rc, n_ckpt)
    rel_max: np.ndarray  # (Rc,)


def _simulate_chunk(config: SimConfig, runs: Sequence[int]) -> _ChunkResult:
    n = config.n_clients
    rc = len(runs)
    horizon = config.horizon
    ckpts = config.resolved_checkpoints()
    ckpt_pos = {t: k for k, t in enumerate(ckpts)}
    salt = _policy_salt(config)

    p = np.array([c.channel.p for c in config.clients])
    q = np.array([c.channel.q for c in config.clients])
    on_prob = np.array([c.channel.on_prob for c in config.clients])
    lam = np.array([c.update.lam for c in config.clients])
    alpha = np.array([c.update.weight for c in config.clients])
    inv_lam = 1.0 / lam

    policy = config.policy
    point = config.point
    track_deficits = point is not None
    if track_deficits:
        mu_target = point.mu
        sd = np.sqrt(point.sigma2) if np.all(point.sigma2 > 0) else None
        inv_sd = (1.0 / sd) if sd is not None else None
        sd_sum = float(sd.sum()) if sd is not None else None
    baseline_alpha = alpha if config.weight_baselines else None
    stat_on = on_prob  # whittle denominator q/(p+q)

    chan_gens = [
        [stream_rng(config.seed, STREAM_CHANNEL, r, c, salt) for c in range(n)]
        for r in runs
    ]
    arr_gens = [
        [stream_rng(config.seed, STREAM_ARRIVAL, r, c, salt) for c in range(n)]
        for r in runs
    ]
    pol_gens = [stream_rng(config.seed, STREAM_POLICY, r, 0, salt) for r in runs]

    on = np.zeros((rc, n), dtype=bool)
    sensor_ts = np.zeros((rc, n), dtype=np.int64)
    receiver_ts = np.zeros((rc, n), dtype=np.int64)
    deficit = np.zeros((rc, n)) if track_deficits else None
    deliv = np.zeros((rc, n), dtype=np.int64)
    last_deliv = np.zeros((rc, n), dtype=np.int64)
    aoi_sum = np.zeros((rc, n))
    bsum = np.zeros((rc, n))
    bsq = np.zeros((rc, n))
    bcount = np.zeros((rc, n), dtype=np.int64)
    rel_max = np.full(rc, np.nan)
    if track_deficits and inv_sd is not None:
        rel_max = np.zeros(rc)

    deliveries_ckpt = np.zeros((rc, len(ckpts), n), dtype=np.int64)
    rel_ckpt = np.full((rc, len(ckpts)), np.nan)

    block = _time_block(rc, n)
    u_chan = np.empty((rc, n, block))
    u_arr = np.empty((rc, n, block))
    u_pol = np.empty((rc, block))

    t = 0
    while t < horizon:
        width = min(block, horizon - t)
        for i in range(rc):
            for c in range(n):
                u_chan[i, c, :width] = chan_gens[i][c].random(width)
                u_arr[i, c, :width] = arr_gens[i][c].random(width)
            u_pol[i, :width] = pol_gens[i].random(width)
        for k in range(width):
            slot = t + k + 1
            # 1. update generation (timestamp = slot start)
            generated = u_arr[:, :, k] < lam
            sensor_ts = np.where(generated, slot - 1, sensor_ts)
            # 2. channel realization
            if slot == 1:
                on = u_chan[:, :, k] < on_prob
            else:
                on = np.where(on, u_chan[:, :, k] >= p, u_chan[:, :, k] < q)
            # 3. scheduling decision from end-of-previous-slot state
            if policy == "vwd":
                chosen = vwd_choose(deficit, inv_sd, on)
            elif policy == "whittle":
                aoi_prev = (slot - 1) - receiver_ts
                chosen = whittle_choose(aoi_prev, stat_on, on, baseline_alpha)
            elif policy == "randomized":
                chosen = randomized_choose(mu_target, on, u_pol[:, k])
            else:  # maxweight
                aoi_prev = (slot - 1) - receiver_ts
                chosen = maxweight_choose(aoi_prev, inv_lam, mu_target, on, baseline_alpha)
            # 4. delivery
            rows = np.flatnonzero(chosen >= 0)
            cols = chosen[rows]
            receiver_ts[rows, cols] = sensor_ts[rows, cols]
            deliv[rows, cols] += 1
            gaps = (slot - last_deliv[rows, cols]).astype(float)
            bsum[rows, cols] += gaps
            bsq[rows, cols] += gaps * gaps
            bcount[rows, cols] += 1
            last_deliv[rows, cols] = slot
            # deficits advance with the slot
            if track_deficits:
                deficit += mu_target
                deficit[rows, cols] -= 1.0
            # 5. age measured at slot end
            if slot > config.warmup:
                aoi_sum += slot - receiver_ts
            if track_deficits and inv_sd is not None:
                rel = deficit * inv_sd
                d_avg = deficit.sum(axis=1) / sd_sum
                np.maximum(rel_max, np.abs(rel - d_avg[:, None]).max(axis=1), out=rel_max)
            pos = ckpt_pos.get(slot)
            if pos is not None:
                deliveries_ckpt[:, pos, :] = deliv
                rel_ckpt[:, pos] = rel_max
        t += width

    aoi_avg = aoi_sum / (horizon - config.warmup)
    return _ChunkResult(
        runs=list(runs),
        deliveries=deliveries_ckpt,
        aoi_avg=aoi_avg,
        bsum=bsum,
        bsq=bsq,
        bcount=bcount,
        rel_ckpt=rel_ckpt,
        rel_max=rel_max,
    )


def run_episode(config: SimConfig, run_index: int) -> RunMetrics:
    """Simulate one run; deterministic given (config.seed, run_index)."""
    if not (0 <= run_index < config.runs):
        raise ConfigError(f"run_index {run_index} outside [0, {config.runs})")
    chunk = _simulate_chunk(config, [run_index])
    alpha = np.array([c.update.weight for c in config.clients])
    return RunMetrics(
        run_index=run_index,
        checkpoints=config.resolved_checkpoints(),
        deliveries_at_checkpoint=chunk.deliveries[0],
        time_avg_aoi=chunk.aoi_avg[0],
        total_weighted_aoi=float(chunk.aoi_avg[0] @ alpha),
        interdelivery_sum=chunk.bsum[0],
        interdelivery_sumsq=chunk.bsq[0],
        interdelivery_count=chunk.bcount[0],
        max_rel_deficit=float(chunk.rel_max[0]),
        rel_deficit_at_checkpoint=chunk.rel_ckpt[0],
    )


def _chunk_worker(args: tuple[SimConfig, list[int]]) -> _ChunkResult:
    return _simulate_chunk(*args)


def run_batch(config: SimConfig) -> BatchMetrics:
    """Simulate all runs and aggregate; bit-reproducible given the seed.

    Runs are split into fixed-size chunks processed sequentially or by a
    process pool (config.jobs); per-run streams and an ordered merge make
    the result independent of chunking and worker scheduling.
    """
    r_total = config.runs
    ckpts = config.resolved_checkpoints()
    n = config.n_clients
    chunks = [
        (config, list(range(lo, min(lo + config.run_chunk, r_total))))
        for lo in range(0, r_total, config.run_chunk)
    ]
    if config.jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_chunk_worker, chunks))
    else:
        results = [_simulate_chunk(cfg, runs) for cfg, runs in chunks]

    deliveries = np.zeros((r_total, len(ckpts), n), dtype=np.int64)
    aoi_avg = np.zeros((r_total, n))
    rel_ckpt = np.full((r_total, len(ckpts)), np.nan)
    rel_max = np.full(r_total, np.nan)
    for res in results:
        deliveries[res.runs] = res.deliveries
        aoi_avg[res.runs] = res.aoi_avg
        rel_ckpt[res.runs] = res.rel_ckpt
        rel_max[res.runs] = res.rel_max

    alpha = np.array([c.update.weight for c in config.clients])
    t_vals = np.array(ckpts, dtype=float)[None, :, None]
    rates = deliveries / t_vals  # (R, C, N)
    mu_hat = rates.mean(axis=0)
    mu_se = rates.std(axis=0, ddof=1) / math.sqrt(r_total) if r_total > 1 else np.zeros_like(mu_hat)
    norm = deliveries / np.sqrt(t_vals)
    dev_sq = (norm - norm.mean(axis=0, keepdims=True)) ** 2
    if r_total > 1:
        sigma2_hat = dev_sq.sum(axis=0) / (r_total - 1)
        sigma2_se = dev_sq.std(axis=0, ddof=1) / math.sqrt(r_total)
    else:
        sigma2_hat = np.zeros_like(mu_hat)
        sigma2_se = np.zeros_like(mu_hat)

    total_w = aoi_avg @ alpha
    total_mean = float(total_w.mean())
    total_se = float(total_w.std(ddof=1) / math.sqrt(r_total)) if r_total > 1 else 0.0

    return BatchMetrics(
        checkpoints=ckpts,
        deliveries=deliveries,
        mu_hat=mu_hat,
        mu_se=mu_se,
        sigma2_hat=sigma2_hat,
        sigma2_se=sigma2_se,
        time_avg_aoi_mean=aoi_avg.mean(axis=0),
        total_weighted_aoi_runs=total_w,
        total_aoi_mean=total_mean,
        total_aoi_se=total_se,
        rel_deficit_median=np.median(rel_ckpt, axis=0),
        max_rel_deficit_runs=rel_max,
    )
