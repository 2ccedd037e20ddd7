"""Configuration-driven Monte Carlo engine: runs the filters over simulated
truths, aggregates metrics, benchmarks the enclosing-ellipsoid solver, and
writes CSV/JSON outputs for external plotting.

All randomness flows from a single master seed; per-run seeds are derived
with a stable 64-bit mix and recorded so any single run can be replayed.
Wall-clock timings are measured with a monotonic clock but serialized only
when explicitly requested, so that default outputs are byte-identical
across executions of the same configuration.
"""

from __future__ import annotations

import dataclasses
import json
import time
from configparser import ConfigParser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import scenarios as sc
from .baselines import GaussianBelief, UkfOptions, esmf_predict, esmf_step, ukf_step
from .dsmf import FilterOptions, predict, step
from .ellipsoid import Ellipsoid, contains, sample_interior
from .errors import ConfigError, NumericalError
from .mvee import fw_solve
from .scenarios import build_model, build_scenario, initial_estimate, simulate_truth

KNOWN_FILTERS = ("dsmf", "esmf", "ukf")
CONTAINMENT_SLACK = 1e-6
ELLIPSE_POINTS = 128


def mix_seed(master_seed: int, index: int) -> int:
    """Stable 64-bit mix of (master seed, run index): splitmix64 finalizer
    over the golden-ratio-stepped input."""
    mask = (1 << 64) - 1
    z = (master_seed + (index + 1) * 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return (z ^ (z >> 31)) & mask


@dataclass(frozen=True)
class RunConfig:
    """One experiment: scenario, filter set, replication and solver knobs."""

    scenario: str = "radar"
    filters: tuple[str, ...] = ("dsmf",)
    runs: int = 1
    steps: int | None = None  # None: scenario default
    master_seed: int = 0
    m_samples: int = 200
    tol: float = 1e-5
    size_criterion: str | None = None  # None: scenario preference, else trace
    out_dir: str = "out"
    on_empty: str = "carry"  # carry | raise
    record_timing: bool = False
    sampling: str = "boundary"
    scenario_overrides: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.scenario not in sc.PRESETS:
            raise ConfigError(f"unknown scenario preset {self.scenario!r}")
        if not self.filters:
            raise ConfigError("filters must not be empty")
        unknown = [f for f in self.filters if f not in KNOWN_FILTERS]
        if unknown:
            raise ConfigError(f"unknown filters {unknown}; choose from {KNOWN_FILTERS}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.on_empty not in ("carry", "raise"):
            raise ConfigError(f"on_empty must be carry or raise, got {self.on_empty!r}")
        if self.size_criterion not in (None, "trace", "logdet"):
            raise ConfigError(f"unknown size criterion {self.size_criterion!r}")
        if self.m_samples < 4:
            raise ConfigError("m_samples must be >= 4")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        return self


_BOOL_KEYS = {"record_timing"}
_INT_KEYS = {"runs", "steps", "master_seed", "m_samples"}
_FLOAT_KEYS = {"tol"}


def parse_config(path: str | Path) -> RunConfig:
    """Read a flat key = value config file with one optional [scenario]
    section holding preset-field overrides (values are Python literals)."""
    import ast

    text = Path(path).read_text()
    parser = ConfigParser()
    try:
        parser.read_string("[run]\n" + text)
    except Exception as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from None

    kwargs: dict = {}
    for key, raw in parser["run"].items():
        if key == "filters":
            kwargs["filters"] = tuple(s.strip() for s in raw.split(",") if s.strip())
        elif key in _BOOL_KEYS:
            kwargs[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif key in _INT_KEYS:
            kwargs[key] = int(raw)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(raw)
        elif key in ("scenario", "size_criterion", "out_dir", "on_empty", "sampling"):
            kwargs[key] = raw.strip()
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if parser.has_section("scenario"):
        overrides = {}
        for key, raw in parser["scenario"].items():
            try:
                overrides[key] = ast.literal_eval(raw)
            except (ValueError, SyntaxError):
                raise ConfigError(
                    f"scenario override {key} = {raw!r} is not a literal"
                ) from None
        kwargs["scenario_overrides"] = overrides
    return RunConfig(**kwargs).validate()


@dataclass
class FilterRunLog:
    """Per-step artifacts of one filter on one run."""

    estimates: np.ndarray  # (steps, n) centers / means
    sets: list  # Ellipsoid (dsmf/esmf) or GaussianBelief (ukf) per step
    contained: np.ndarray  # (steps,) bool
    traces: np.ndarray
    logdets: np.ndarray
    times: np.ndarray
    failures: int
    records: list  # StepRecord for dsmf, None otherwise


@dataclass
class RunLog:
    run_index: int
    seed: int
    truth: np.ndarray
    measurements: np.ndarray
    filters: dict[str, FilterRunLog]


@dataclass(frozen=True)
class MetricsRow:
    k: int
    filter: str
    trace: float
    logdet: float
    rmse_x: float
    rmse_theta: float
    contained: float
    time_s: float


@dataclass
class MetricsTable:
    rows: list[MetricsRow]


@dataclass
class ExperimentResult:
    config: RunConfig
    scenario: object
    runs: list[RunLog]
    metrics: MetricsTable
    failures: dict[str, int]
    seeds: list[int]


def _logdet(shape: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(shape)
    return float(val) if sign > 0 else -np.inf


def _ukf_set(belief: GaussianBelief) -> Ellipsoid:
    """The three-sigma confidence ellipsoid used for size/containment."""
    return Ellipsoid(belief.mean, 9.0 * belief.cov)


def effective_criterion(config: RunConfig, scenario) -> str:
    """The fusion size criterion actually used: explicit config value,
    else the scenario's preference, else trace."""
    return (config.size_criterion
            or getattr(scenario, "size_criterion", None)
            or "trace")


def _run_filter(name: str, config: RunConfig, scenario, model, e0: Ellipsoid,
                truth: np.ndarray, measurements: np.ndarray,
                rng: np.random.Generator) -> FilterRunLog:
    steps = measurements.shape[0]
    n = model.state_dim
    criterion = effective_criterion(config, scenario)
    opts = FilterOptions(
        m_samples=config.m_samples,
        tol=config.tol,
        sampling=config.sampling,
        size_criterion=criterion,
    )
    estimates = np.empty((steps, n))
    sets: list = []
    records: list = []
    contained = np.zeros(steps, dtype=bool)
    traces = np.empty(steps)
    logdets = np.empty(steps)
    times = np.empty(steps)
    failures = 0

    if name == "ukf":
        belief = GaussianBelief(e0.center, e0.shape * UkfOptions().scale_for(n))
        for k in range(steps):
            t0 = time.perf_counter()
            belief = ukf_step(belief, model, measurements[k], k)
            times[k] = time.perf_counter() - t0
            conf = _ukf_set(belief)
            estimates[k] = belief.mean
            sets.append(belief)
            contained[k] = bool(contains(conf, truth[k + 1], CONTAINMENT_SLACK))
            traces[k] = float(np.trace(conf.shape))
            logdets[k] = _logdet(conf.shape)
        return FilterRunLog(estimates, sets, contained, traces, logdets,
                            times, failures, records)

    e = e0
    for k in range(steps):
        t0 = time.perf_counter()
        try:
            if name == "dsmf":
                rec = step(e, model, measurements[k], k, opts, rng)
                e = rec.updated
                records.append(rec)
            else:
                e = esmf_step(e, model, measurements[k], k, rng,
                              size_criterion=criterion)
        except NumericalError:
            if config.on_empty == "raise":
                raise
            failures += 1
            # Fall back to carrying the prediction for this step.
            if name == "dsmf":
                e, _ = predict(e, model, k, opts, rng)
                records.append(None)
            else:
                e = esmf_predict(e, model, k, rng)
        times[k] = time.perf_counter() - t0
        estimates[k] = e.center
        sets.append(e)
        contained[k] = bool(contains(e, truth[k + 1], CONTAINMENT_SLACK))
        traces[k] = float(np.trace(e.shape))
        logdets[k] = _logdet(e.shape)
    return FilterRunLog(estimates, sets, contained, traces, logdets,
                        times, failures, records)


def _theta_index(scenario) -> int | None:
    return 2 if isinstance(scenario, sc.RobotScenario) else None


def compute_metrics(config: RunConfig, scenario, runs: list[RunLog],
                    steps: int) -> MetricsTable:
    """Aggregate per-step, per-filter metrics over the Monte Carlo runs.

    RMSE_k per component is sqrt(mean over runs of squared estimate error);
    trace/logdet/time are means over runs; contained is the fraction of
    runs whose true state lies in the filter set at that step.
    """
    th = _theta_index(scenario)
    rows = []
    for name in config.filters:
        err = np.stack([
            log.filters[name].estimates - log.truth[1:] for log in runs
        ])  # (runs, steps, n)
        rmse = np.sqrt((err**2).mean(axis=0))  # (steps, n)
        traces = np.stack([log.filters[name].traces for log in runs])
        logdets = np.stack([log.filters[name].logdets for log in runs])
        times = np.stack([log.filters[name].times for log in runs])
        cont = np.stack([log.filters[name].contained for log in runs])
        for k in range(steps):
            rows.append(MetricsRow(
                k=k + 1,
                filter=name,
                trace=float(traces[:, k].mean()),
                logdet=float(logdets[:, k].mean()),
                rmse_x=float(rmse[k, 0]),
                rmse_theta=float(rmse[k, th]) if th is not None else float("nan"),
                contained=float(cont[:, k].mean()),
                time_s=float(times[:, k].mean()),
            ))
    return MetricsTable(rows)


def run_experiment(config: RunConfig) -> ExperimentResult:
    """Simulate truth and run every requested filter for each replicate.

    Deterministic given the config: replicate r uses seed mix(master_seed, r)
    for its truth and an independent, filter-indexed stream for each filter.
    """
    config.validate()
    scenario = build_scenario(config.scenario, **config.scenario_overrides)
    model = build_model(scenario)
    steps = config.steps if config.steps is not None else scenario.steps
    seeds = [mix_seed(config.master_seed, r) for r in range(config.runs)]
    runs: list[RunLog] = []
    failures = {name: 0 for name in config.filters}
    for r, seed in enumerate(seeds):
        truth_rng = np.random.default_rng([seed, 0])
        truth, measurements = simulate_truth(scenario, truth_rng, steps=steps)
        e0 = initial_estimate(scenario, truth_rng)
        logs = {}
        for j, name in enumerate(config.filters):
            filt_rng = np.random.default_rng([seed, 1 + j])
            log = _run_filter(name, config, scenario, model, e0, truth,
                              measurements, filt_rng)
            failures[name] += log.failures
            logs[name] = log
        runs.append(RunLog(r, seed, truth, measurements, logs))
    metrics = compute_metrics(config, scenario, runs, steps)
    return ExperimentResult(config, scenario, runs, metrics, failures, seeds)


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_outputs(result: ExperimentResult, out_dir: str | Path) -> list[Path]:
    """Write metrics.csv, summary.json and per-step ellipse polylines.

    The ellipse files hold 128-point outlines of the position-projected
    filter set, one file per (run, step, filter).  Timing columns are left
    empty unless the config requested timing, keeping default outputs
    byte-identical across executions.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        raise ConfigError(f"output directory {out} is not writable: {err}") from None

    config = result.config
    written = []

    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        fh.write("k,filter,trace,logdet,rmse_x,rmse_theta,contained,time_s\n")
        for row in result.metrics.rows:
            time_field = _fmt(row.time_s) if config.record_timing else ""
            fh.write(
                f"{row.k},{row.filter},{_fmt(row.trace)},{_fmt(row.logdet)},"
                f"{_fmt(row.rmse_x)},{_fmt(row.rmse_theta)},"
                f"{_fmt(row.contained)},{time_field}\n"
            )
    written.append(metrics_path)

    summary = {
        "config": {
            **dataclasses.asdict(config),
            "filters": list(config.filters),
            "size_criterion_effective": effective_criterion(config, result.scenario),
        },
        "steps": int(result.metrics.rows[-1].k) if result.metrics.rows else 0,
        "seeds": [int(s) for s in result.seeds],
        "failures": result.failures,
        "aggregate": {
            name: {
                "containment_rate": float(np.mean([
                    log.filters[name].contained.mean() for log in result.runs
                ])),
                "mean_trace": float(np.mean([
                    log.filters[name].traces.mean() for log in result.runs
                ])),
                "time_avg_rmse_x": float(np.mean([
                    row.rmse_x for row in result.metrics.rows if row.filter == name
                ])),
            }
            for name in config.filters
        },
    }
    if config.record_timing:
        summary["timing"] = {
            name: float(np.mean([
                log.filters[name].times.mean() for log in result.runs
            ]))
            for name in config.filters
        }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(summary_path)

    scenario = result.scenario
    model = build_model(scenario)
    e_p = model.E_p
    ellipse_dir = out / "ellipses"
    ellipse_dir.mkdir(exist_ok=True)
    phase = np.linspace(0.0, 2.0 * np.pi, ELLIPSE_POINTS, endpoint=False)
    circle = np.stack([np.cos(phase), np.sin(phase)], axis=0)  # (2, 128)
    for log in result.runs:
        for name, flog in log.filters.items():
            for k, obj in enumerate(flog.sets):
                e = _ukf_set(obj) if isinstance(obj, GaussianBelief) else obj
                center = e_p @ e.center
                proj = e_p @ e.shape @ e_p.T
                ell = Ellipsoid(center, proj)
                pts = ell.center[:, None] + ell.factor() @ circle
                path = ellipse_dir / f"run{log.run_index}_k{k + 1}_{name}.csv"
                with open(path, "w", newline="") as fh:
                    fh.write("x,y\n")
                    for col in pts.T:
                        fh.write(f"{_fmt(col[0])},{_fmt(col[1])}\n")
                written.append(path)
    return written


def bench_mvee(n_list, m_list, trials: int, master_seed: int = 0,
               tol: float = 1e-7) -> list[dict]:
    """Mean solver wall time over standard-uniform clouds per (n, m) cell.

    Also reports mean iteration counts and per-iteration time, which is the
    quantity expected to grow affinely in m at fixed n.
    """
    rows = []
    for n in n_list:
        for m in m_list:
            rng = np.random.default_rng([master_seed, n, m])
            times = []
            iters = []
            for _ in range(trials):
                pts = rng.random((m, n))
                t0 = time.perf_counter()
                sol = fw_solve(pts, tol=tol)
                times.append(time.perf_counter() - t0)
                iters.append(max(sol.iterations, 1))
            times = np.asarray(times)
            iters = np.asarray(iters, dtype=float)
            rows.append({
                "n": n,
                "m": m,
                "fw_time_s": float(times.mean()),
                "iterations": float(iters.mean()),
                # Minimum over trials: the least scheduler-contaminated
                # estimate of the clean per-iteration cost.
                "time_per_iter_s": float(np.min(times / iters)),
            })
    return rows


def write_bench_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write("n,m,fw_time_s,iterations,time_per_iter_s\n")
        for r in rows:
            fh.write(
                f"{r['n']},{r['m']},{_fmt(r['fw_time_s'])},"
                f"{_fmt(r['iterations'])},{_fmt(r['time_per_iter_s'])}\n"
            )
    return path


def affine_fit_r2(x, y) -> tuple[float, float, float]:
    """Least-squares line fit returning (slope, intercept, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    pred = design @ coef
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


def sweep_sigma(sigmas, replicates: int = 50, master_seed: int = 0,
                m_samples: int = 200, tol: float = 1e-5) -> list[dict]:
    """Single-update study of how the posterior volume scales with the
    prior size, comparing the enclosing-set update against the linearizing
    update on the range/bearing geometry with the sensor at the origin.

    For each sigma the prior is {(10, 20), sigma I}; a true position is
    drawn from it, measured with noise bounded by diag(10, 1), and both
    updates are applied; the mean posterior logdet over the replicates is
    recorded.
    """
    from .baselines import add_remainder, remainder_bound_h
    from .dsmf import fuse, measurement_ellipsoid, optimize_rho

    results = []
    prior_center = np.array([10.0, 20.0])
    r_shape = np.diag([10.0, 1.0])

    def h(x):
        x = np.asarray(x, dtype=float)
        return np.stack(
            [np.hypot(x[..., 0], x[..., 1]),
             np.arctan2(x[..., 1], x[..., 0])], axis=-1
        )

    def h_jac(x):
        dx, dy = x[0], x[1]
        rho2 = dx * dx + dy * dy
        rho = np.sqrt(rho2)
        return np.array([[dx / rho, dy / rho], [-dy / rho2, dx / rho2]])

    def h_inv(y, v, aux):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        rng_val = y[0] - v[:, 0]
        ang = y[1] - v[:, 1]
        return np.stack([rng_val * np.cos(ang), rng_val * np.sin(ang)], axis=-1)

    from .dsmf import SystemModel

    model = SystemModel(
        state_dim=2, meas_dim=2,
        f=lambda x, k: x, h=h, h_inv=h_inv,
        E_p=np.eye(2), Q=1e-9 * np.eye(2), R=r_shape,
        h_jac=h_jac,
    )
    opts = FilterOptions(m_samples=m_samples, tol=tol, size_criterion="logdet")
    v_ball = Ellipsoid(np.zeros(2), r_shape)

    for sigma in sigmas:
        prior = Ellipsoid(prior_center, float(sigma) * np.eye(2))
        ld_new, ld_lin = [], []
        for rep in range(replicates):
            rng = np.random.default_rng([master_seed, int(round(100 * sigma)), rep])
            x_true = sample_interior(prior, 1, rng).points[0]
            v_true = sample_interior(v_ball, 1, rng).points[0]
            y = h(x_true) + v_true
            # Enclosing-set update.
            meas, _ = measurement_ellipsoid(y, model, None, opts, rng)
            params = optimize_rho(prior, meas, np.eye(2), "logdet")
            _, shape, _ = fuse(prior, meas, np.eye(2), params.rho)
            ld_new.append(_logdet(shape))
            # Linearizing update.
            jac = h_jac(prior_center)
            r_eff = add_remainder(r_shape, remainder_bound_h(prior, model, rng))
            z = y - h(prior_center) + jac @ prior_center
            meas_lin = Ellipsoid(z, r_eff)
            params = optimize_rho(prior, meas_lin, jac, "logdet")
            _, shape, _ = fuse(prior, meas_lin, jac, params.rho)
            ld_lin.append(_logdet(shape))
        results.append({
            "sigma": float(sigma),
            "dsmf_logdet": float(np.mean(ld_new)),
            "esmf_logdet": float(np.mean(ld_lin)),
        })
    return results


def write_sweep_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write("sigma,dsmf_logdet,esmf_logdet\n")
        for r in rows:
            fh.write(
                f"{_fmt(r['sigma'])},{_fmt(r['dsmf_logdet'])},"
                f"{_fmt(r['esmf_logdet'])}\n"
            )
    return path
