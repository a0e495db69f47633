"""Command-line driver: config ingestion, experiment orchestration, CSV/JSON output.

Subcommands:

  validate   single-client sweep comparing closed-form AoI to simulation
  stats      closed-form (and optionally empirical) subset statistics
  solve      AoI-optimal operating point inside the inner region
  simulate   one policy on one instance
  compare    all configured policies on a common instance, shared traces

Configuration is a single JSON document (schema in the README); unknown keys
are rejected. A few scalar fields can be overridden from the command line.
Numbers in CSV files carry 9 significant digits and row order is fixed, so
re-running a command with the same config and seed reproduces every output
byte for byte. Exit codes: 0 ok, 2 config error, 3 infeasible instance,
4 numerical inconsistency.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .aoi import UpdateModel, aoi_approx
from .capacity import OperatingPoint, check_inner
from .channel import (
    ChannelParams,
    SecondOrderStats,
    empirical_subset_stats,
    sample_traces,
)
from .errors import (
    ConfigError,
    DomainError,
    InfeasibleRegion,
    NumericalInconsistency,
    SoschedError,
    TooManyClients,
)
from .policies import POLICY_NAMES
from .sim import BatchMetrics, ClientConfig, SimConfig, run_batch
from .solver import SolveResult, SolverConfig, solve_operating_point

_STATS_MAX_CLIENTS = 20
_STATS_SIM_MAX_CLIENTS = 10

DEFAULT_P_VALUES = tuple(round(0.05 + 0.1 * i, 2) for i in range(10))
DEFAULT_Q_VALUES = (0.2, 0.8)
DEFAULT_LAMBDA_VALUES = (1.0, 0.1)


def fmt(x: float) -> str:
    """Serialize a number with 9 significant digits."""
    return format(float(x), ".9g")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceSpec:
    """Randomized instance: channels, rates and weights drawn from ranges."""

    n_clients: int
    instance_seed: int
    weighted: bool = False
    p_range: tuple[float, float] = (0.05, 0.95)
    q_range: tuple[float, float] = (0.05, 0.95)
    lam_range: tuple[float, float] | None = None  # default (0.1/N, 1/N)
    alpha_range: tuple[float, float] = (1.0, 5.0)


@dataclass(frozen=True)
class ValidateGrid:
    p_values: tuple[float, ...] = DEFAULT_P_VALUES
    q_values: tuple[float, ...] = DEFAULT_Q_VALUES
    lambda_values: tuple[float, ...] = DEFAULT_LAMBDA_VALUES


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    clients: tuple[ClientConfig, ...] | None = None
    instance: InstanceSpec | None = None
    horizon: int = 20000
    runs: int = 200
    seed: int = 0
    warmup: int = 0
    checkpoints: tuple[int, ...] = ()
    policy: str = "vwd"
    policies: tuple[str, ...] = POLICY_NAMES
    solver: SolverConfig = field(default_factory=SolverConfig)
    validate_grid: ValidateGrid = field(default_factory=ValidateGrid)
    out_dir: str = "./out"
    weight_baselines: bool = False
    independent_traces: bool = False
    jobs: int = 1

    def resolved_clients(self) -> tuple[ClientConfig, ...]:
        if self.clients is not None:
            return self.clients
        if self.instance is not None:
            return generate_instance(self.instance)
        raise ConfigError("config needs either 'clients' or 'instance'")


def generate_instance(spec: InstanceSpec) -> tuple[ClientConfig, ...]:
    """Draw a random instance; deterministic in the instance seed.

    Channel p, q come from p_range/q_range, update rates from lam_range
    (default (0.1/N, 1/N)) and weights from alpha_range when weighted,
    otherwise 1.
    """
    n = spec.n_clients
    if n < 1:
        raise ConfigError("instance needs n_clients >= 1")
    rng = np.random.default_rng(spec.instance_seed)
    p = rng.uniform(*spec.p_range, n)
    q = rng.uniform(*spec.q_range, n)
    lam_range = spec.lam_range if spec.lam_range is not None else (0.1 / n, 1.0 / n)
    lam = rng.uniform(*lam_range, n)
    alpha = rng.uniform(*spec.alpha_range, n) if spec.weighted else np.ones(n)
    return tuple(
        ClientConfig(ChannelParams(float(p[i]), float(q[i])),
                     UpdateModel(float(lam[i]), float(alpha[i])))
        for i in range(n)
    )


def _take(raw: dict, key: str, default):
    return raw.pop(key) if key in raw else default

def _no_unknown(raw: dict, where: str) -> None:
    if raw:
        raise ConfigError(f"unknown keys in {where}: {sorted(raw)}")


def _parse_pair(value, where: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{where} must be a [low, high] pair")
    return float(value[0]), float(value[1])


def _parse_client(raw: dict, idx: int) -> ClientConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"clients[{idx}] must be an object")
    raw = dict(raw)
    p = _take(raw, "p", None)
    q = _take(raw, "q", None)
    lam = _take(raw, "lambda", None)
    alpha = _take(raw, "alpha", 1.0)
    _no_unknown(raw, f"clients[{idx}]")
    if p is None or q is None or lam is None:
        raise ConfigError(f"clients[{idx}] needs p, q and lambda")
    try:
        return ClientConfig(ChannelParams(float(p), float(q)),
                            UpdateModel(float(lam), float(alpha)))
    except DomainError as exc:
        raise ConfigError(f"clients[{idx}]: {exc}") from exc


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    raw = dict(raw)

    clients = None
    if (raw_clients := _take(raw, "clients", None)) is not None:
        if not isinstance(raw_clients, list) or not raw_clients:
            raise ConfigError("'clients' must be a non-empty list")
        clients = tuple(_parse_client(c, i) for i, c in enumerate(raw_clients))

    instance = None
    if (raw_inst := _take(raw, "instance", None)) is not None:
        if not isinstance(raw_inst, dict):
            raise ConfigError("'instance' must be an object")
        ri = dict(raw_inst)
        n_clients = _take(ri, "n_clients", None)
        instance_seed = _take(ri, "instance_seed", None)
        if n_clients is None or instance_seed is None:
            raise ConfigError("'instance' needs n_clients and instance_seed")
        weighted = bool(_take(ri, "weighted", False))
        p_range = _parse_pair(_take(ri, "p_range", [0.05, 0.95]), "instance.p_range")
        q_range = _parse_pair(_take(ri, "q_range", [0.05, 0.95]), "instance.q_range")
        lam_raw = _take(ri, "lam_range", None)
        lam_range = None if lam_raw is None else _parse_pair(lam_raw, "instance.lam_range")
        alpha_range = _parse_pair(_take(ri, "alpha_range", [1.0, 5.0]), "instance.alpha_range")
        _no_unknown(ri, "instance")
        instance = InstanceSpec(
            n_clients=int(n_clients), instance_seed=int(instance_seed),
            weighted=weighted, p_range=p_range, q_range=q_range,
            lam_range=lam_range, alpha_range=alpha_range,
        )
    if clients is not None and instance is not None:
        raise ConfigError("give either 'clients' or 'instance', not both")

    solver_cfg = SolverConfig()
    if (raw_solver := _take(raw, "solver", None)) is not None:
        rs = dict(raw_solver)
        try:
            solver_cfg = SolverConfig(
                delta=float(_take(rs, "delta", 1e-3)),
                max_iters=int(_take(rs, "max_iters", 400)),
                step_size=float(_take(rs, "step_size", 0.05)),
                tolerance=float(_take(rs, "tolerance", 1e-10)),
                grid_resolution=float(_take(rs, "grid_resolution", 0.005)),
                seed=int(_take(rs, "seed", 0)),
            )
        except DomainError as exc:
            raise ConfigError(f"solver: {exc}") from exc
        _no_unknown(rs, "solver")

    grid = ValidateGrid()
    if (raw_grid := _take(raw, "validate_grid", None)) is not None:
        rg = dict(raw_grid)
        grid = ValidateGrid(
            p_values=tuple(float(x) for x in _take(rg, "p_values", DEFAULT_P_VALUES)),
            q_values=tuple(float(x) for x in _take(rg, "q_values", DEFAULT_Q_VALUES)),
            lambda_values=tuple(
                float(x) for x in _take(rg, "lambda_values", DEFAULT_LAMBDA_VALUES)
            ),
        )
        _no_unknown(rg, "validate_grid")
        if not (grid.p_values and grid.q_values and grid.lambda_values):
            raise ConfigError("validate_grid values must be non-empty")

    policies = tuple(_take(raw, "policies", POLICY_NAMES))
    for name in policies:
        if name not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {name!r} in 'policies'")
    if not policies:
        raise ConfigError("'policies' must be non-empty")
    policy = str(_take(raw, "policy", "vwd"))
    if policy not in POLICY_NAMES:
        raise ConfigError(f"unknown policy {policy!r}")

    checkpoints = tuple(int(t) for t in _take(raw, "checkpoints", []) or [])

    cfg = ExperimentConfig(
        name=str(_take(raw, "name", "experiment")),
        clients=clients,
        instance=instance,
        horizon=int(_take(raw, "horizon", 20000)),
        runs=int(_take(raw, "runs", 200)),
        seed=int(_take(raw, "seed", 0)),
        warmup=int(_take(raw, "warmup", 0)),
        checkpoints=checkpoints,
        policy=policy,
        policies=policies,
        solver=solver_cfg,
        validate_grid=grid,
        out_dir=str(_take(raw, "out_dir", "./out")),
        weight_baselines=bool(_take(raw, "weight_baselines", False)),
        independent_traces=bool(_take(raw, "independent_traces", False)),
        jobs=int(_take(raw, "jobs", 1)),
    )
    _no_unknown(raw, "config")
    if cfg.horizon < 1 or cfg.runs < 1:
        raise ConfigError("horizon and runs must be >= 1")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sim_config(cfg: ExperimentConfig, clients, policy: str, point) -> SimConfig:
    return SimConfig(
        clients=clients,
        horizon=cfg.horizon,
        runs=cfg.runs,
        seed=cfg.seed,
        policy=policy,
        point=point,
        checkpoints=cfg.checkpoints,
        warmup=cfg.warmup,
        weight_baselines=cfg.weight_baselines,
        independent_traces=cfg.independent_traces,
        jobs=cfg.jobs,
    )


def _solve_instance(cfg: ExperimentConfig, clients) -> SolveResult:
    stats = SecondOrderStats([c.channel for c in clients])
    return solve_operating_point(stats, [c.update for c in clients], cfg.solver)


def _convergence_rows(batch: BatchMetrics, point: OperatingPoint) -> list[str]:
    rows = []
    for i in range(point.n):
        for k, t in enumerate(batch.checkpoints):
            rows.append(
                f"{i},{t},{fmt(batch.mu_hat[k, i])},{fmt(point.mu[i])},"
                f"{fmt(batch.sigma2_hat[k, i])},{fmt(point.sigma2[i])}"
            )
    return rows


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_validate(cfg: ExperimentConfig, out_dir: Path) -> None:
    """Single-client model check: closed-form AoI vs simulated AoI on a grid."""
    lines = ["p,q,lambda,theoretical_aoi,empirical_aoi,abs_diff,stderr"]
    for q in cfg.validate_grid.q_values:
        for lam in cfg.validate_grid.lambda_values:
            for p in cfg.validate_grid.p_values:
                stats = SecondOrderStats([ChannelParams(p, q)])
                theo = aoi_approx(stats.full_mean, stats.full_variance, lam)
                client = ClientConfig(ChannelParams(p, q), UpdateModel(lam))
                batch = run_batch(_sim_config(cfg, (client,), "whittle", None))
                emp = batch.total_aoi_mean
                lines.append(
                    f"{fmt(p)},{fmt(q)},{fmt(lam)},{fmt(theo)},{fmt(emp)},"
                    f"{fmt(abs(theo - emp))},{fmt(batch.total_aoi_se)}"
                )
    _write_text(out_dir / "validate.csv", "\n".join(lines) + "\n")


def cmd_stats(cfg: ExperimentConfig, out_dir: Path, simulate: bool = False) -> None:
    """Emit (subset, m_S, v_S^2) tables, optionally with empirical estimates."""
    clients = cfg.resolved_clients()
    n = len(clients)
    if n > _STATS_MAX_CLIENTS:
        raise TooManyClients(f"stats enumerates subsets; N={n} > {_STATS_MAX_CLIENTS}")
    if simulate and n > _STATS_SIM_MAX_CLIENTS:
        raise TooManyClients(
            f"stats --simulate estimates every subset; N={n} > {_STATS_SIM_MAX_CLIENTS}"
        )
    params = [c.channel for c in clients]
    stats = SecondOrderStats(params)
    means = stats.means_all()
    variances = stats.variances_all()

    # Adjacent-superset audit; by transitivity this covers all inclusions.
    monotone_ok = np.ones(1 << n, dtype=bool)
    for mask in range(1, (1 << n) - 1):
        for i in range(n):
            if not mask & (1 << i) and means[mask] > means[mask | (1 << i)] + 1e-12:
                monotone_ok[mask] = False

    traces = None
    if simulate:
        traces = sample_traces(params, cfg.horizon, cfg.runs, cfg.seed)

    header = "subset,m,v2,monotone_ok"
    if simulate:
        header += ",m_hat,m_se,v2_hat,v2_se"
    lines = [header]
    records = []
    for mask in range(1, 1 << n):
        row = f"{mask},{fmt(means[mask])},{fmt(variances[mask])},{int(monotone_ok[mask])}"
        rec = {
            "subset": mask,
            "m": float(means[mask]),
            "v2": float(variances[mask]),
            "monotone_ok": bool(monotone_ok[mask]),
        }
        if simulate:
            est = empirical_subset_stats(traces, mask, cfg.horizon)
            row += f",{fmt(est.mean)},{fmt(est.mean_se)},{fmt(est.variance)},{fmt(est.variance_se)}"
            rec.update(
                m_hat=est.mean, m_se=est.mean_se, v2_hat=est.variance, v2_se=est.variance_se
            )
        lines.append(row)
        records.append(rec)
    _write_text(out_dir / "stats.csv", "\n".join(lines) + "\n")
    _write_json(out_dir / "stats.json", {"n_clients": n, "subsets": records})


def _solve_payload(result: SolveResult) -> dict:
    return {
        "mu": [float(x) for x in result.point.mu],
        "sigma2": [float(x) for x in result.point.sigma2],
        "objective": result.objective,
        "iterations": result.iterations,
        "binding_subsets": list(result.binding_subsets),
        "converged": result.converged,
    }


def cmd_solve(cfg: ExperimentConfig, out_dir: Path) -> None:
    """Solve for the operating point and write it as JSON."""
    clients = cfg.resolved_clients()
    result = _solve_instance(cfg, clients)
    stats = SecondOrderStats([c.channel for c in clients])
    report = check_inner(stats, result.point, cfg.solver.delta * (1.0 - 1e-6))
    if not report.feasible:
        raise NumericalInconsistency(f"solved point fails re-validation: {report.violations}")
    _write_json(out_dir / "solve.json", _solve_payload(result))


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path) -> None:
    """Run one policy on the instance; write summary JSON (+ convergence CSV)."""
    clients = cfg.resolved_clients()
    point = None
    theoretical = None
    result = None
    if cfg.policy in ("vwd", "randomized", "maxweight"):
        result = _solve_instance(cfg, clients)
        point = result.point
        theoretical = result.objective
    batch = run_batch(_sim_config(cfg, clients, cfg.policy, point))
    payload = {
        "name": cfg.name,
        "policy": cfg.policy,
        "n_clients": len(clients),
        "runs": cfg.runs,
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "total_aoi_mean": batch.total_aoi_mean,
        "total_aoi_stderr": batch.total_aoi_se,
        "theoretical_aoi": theoretical,
        "mu_hat_final": [float(x) for x in batch.mu_hat[-1]],
        "sigma2_hat_final": [float(x) for x in batch.sigma2_hat[-1]],
        "time_avg_aoi_mean": [float(x) for x in batch.time_avg_aoi_mean],
    }
    if result is not None:
        payload["operating_point"] = _solve_payload(result)
    _write_json(out_dir / "simulate.json", payload)
    if point is not None:
        lines = ["client,t,empirical_mean,target_mean,empirical_variance,target_variance"]
        lines += _convergence_rows(batch, point)
        _write_text(out_dir / "convergence.csv", "\n".join(lines) + "\n")


def cmd_compare(cfg: ExperimentConfig, out_dir: Path) -> None:
    """Run every configured policy on a shared instance and emit comparison CSVs."""
    clients = cfg.resolved_clients()
    result = _solve_instance(cfg, clients)
    point = result.point
    theoretical = result.objective

    aoi_lines = ["policy,n_clients,total_aoi_mean,total_aoi_stderr,theoretical_aoi"]
    traj_lines = ["policy,t,total_empirical_variance"]
    conv_lines = ["client,t,empirical_mean,target_mean,empirical_variance,target_variance"]
    for policy in cfg.policies:
        batch = run_batch(_sim_config(cfg, clients, policy, point))
        aoi_lines.append(
            f"{policy},{len(clients)},{fmt(batch.total_aoi_mean)},"
            f"{fmt(batch.total_aoi_se)},{fmt(theoretical)}"
        )
        total_var = batch.total_empirical_variance()
        for k, t in enumerate(batch.checkpoints):
            traj_lines.append(f"{policy},{t},{fmt(total_var[k])}")
        if policy == "vwd":
            conv_lines += _convergence_rows(batch, point)
    _write_text(out_dir / "compare_aoi.csv", "\n".join(aoi_lines) + "\n")
    _write_text(out_dir / "variance_traj.csv", "\n".join(traj_lines) + "\n")
    if len(conv_lines) > 1:
        _write_text(out_dir / "convergence.csv", "\n".join(conv_lines) + "\n")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sosched",
        description="Second-order scheduling experiments over two-state fading channels.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("validate", "single-client closed-form vs simulated AoI sweep"),
        ("stats", "subset second-order statistics tables"),
        ("solve", "AoI-optimal operating point"),
        ("simulate", "run one policy on the configured instance"),
        ("compare", "run all configured policies on a common instance"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the JSON config")
        cmd.add_argument("--out", default=None, help="output directory (default ./out)")
        cmd.add_argument("--seed", type=int, default=None, help="override master seed")
        cmd.add_argument("--runs", type=int, default=None, help="override run count")
        cmd.add_argument("--horizon", type=int, default=None, help="override horizon")
        cmd.add_argument("--policy", default=None, help="override policy (simulate)")
        cmd.add_argument("--jobs", type=int, default=None, help="parallel worker count")
        if name == "stats":
            cmd.add_argument(
                "--simulate", action="store_true", help="add empirical subset estimates"
            )
        if name == "compare":
            cmd.add_argument(
                "--independent-traces",
                action="store_true",
                help="resample channel/arrival traces per policy instead of sharing them",
            )
    return parser


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.runs is not None:
        updates["runs"] = args.runs
    if args.horizon is not None:
        updates["horizon"] = args.horizon
    if args.policy is not None:
        if args.policy not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {args.policy!r}")
        updates["policy"] = args.policy
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    if getattr(args, "independent_traces", False):
        updates["independent_traces"] = True
    return replace(cfg, **updates) if updates else cfg


def run_command(argv: Sequence[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out_dir = Path(cfg.out_dir)
        if args.command == "validate":
            cmd_validate(cfg, out_dir)
        elif args.command == "stats":
            cmd_stats(cfg, out_dir, simulate=args.simulate)
        elif args.command == "solve":
            cmd_solve(cfg, out_dir)
        elif args.command == "simulate":
            cmd_simulate(cfg, out_dir)
        elif args.command == "compare":
            cmd_compare(cfg, out_dir)
    except (ConfigError, DomainError, TooManyClients) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleRegion as exc:
        print(f"infeasible instance: {exc}", file=sys.stderr)
        return 3
    except NumericalInconsistency as exc:
        print(f"numerical inconsistency: {exc}", file=sys.stderr)
        return 4
    except SoschedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
