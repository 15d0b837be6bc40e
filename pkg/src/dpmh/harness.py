"""Experiment harness: config parsing, single runs, sweeps, and diagnostics.

Config files are flat key=value text with sections ([model], [sampler],
[metrics], [sweep], [output], [diagnose]); every run writes its resolved
configuration back out so outputs can be reproduced from the snapshot alone.
All numeric output uses 17 significant digits.

Output schemas (header order is contractual):

trace.csv   iter,theta_0..theta_{d-1},branch,B,batch_kept,noise_added,xi,
            sensitivity,log_r,accepted,eps_step,delta_step
            (booleans as 1/0; theta columns are the post-step chain state;
            B records the Poisson draw where one happened and N on forced
            full-batch rows; out_of_domain rows have B=0)
ledger.csv  iter,eps_step,delta_step,eps_total,delta_total
metrics.csv metric,config_id,value,stderr   (stderr empty when undefined;
            checkpointed metrics are suffixed "@<iteration>")
grid.csv    i,j,theta_0,theta_1,probability  (flattened oracle table)
kernel.csv  i,j,T,stderr
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diagnostics, models, privacy, samplers
from .errors import (
    ConfigurationError,
    DataValidationError,
    DiagnosticsError,
    DpmhError,
    InvariantViolationError,
    NumericError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

AUTO = "auto"
AUTO_WIDE = "auto_wide"


def fmt(x) -> str:
    """17-significant-digit rendering used for every numeric output."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def default_k(epsilon: float, C: float, max_c: float, *, factor: float = 6.0) -> int:
    """Recommended batch cap round(eps*C/(factor*max_c)), floored at 1."""
    if epsilon <= 0 or C <= 0 or max_c <= 0:
        raise ConfigurationError("default_k inputs must be positive")
    return max(1, round(epsilon * C / (factor * max_c)))


def derive_seed(master: int, *parts) -> int:
    """Stable sub-seed from the master seed and sweep-cell coordinates."""
    key = "|".join([str(int(master))] + [p if isinstance(p, str) else fmt(p) for p in parts])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


@dataclass
class ModelSettings:
    kind: str = "mixture"
    n: int = 1000
    data_seed: int = 0
    theta1: float = 0.0
    theta2: float = 1.0
    sigma_x2: float = 2.0
    temperature: float = 1.0
    features_csv: str = ""
    holdout_csv: str = ""
    domain_low: tuple = ()
    domain_high: tuple = ()


@dataclass
class SamplerSettings:
    mode: str = "dpfast"
    lam: float = 1.0
    batch_cap: str = AUTO  # "auto", "auto_wide", or an integer literal
    epsilon: float = 0.1
    delta: float = 1e-5
    proposal_scale: str = AUTO  # "auto" or a float literal
    iters: int = 1000
    seed: int = 0
    theta0: tuple = ()
    burn_in: float = 0.2


@dataclass
class MetricsSettings:
    grid_resolution: int = 50
    kl_checkpoints: int = 0


@dataclass
class SweepSettings:
    modes: tuple = ()
    epsilons: tuple = ()
    batch_caps: tuple = ()
    replicates: int = 1


@dataclass
class DiagnoseSettings:
    states: tuple = ()  # flattened floats, reshaped to (S, dim)
    trials: int = 100_000
    seed: int = 0


@dataclass
class ExperimentConfig:
    model: ModelSettings = field(default_factory=ModelSettings)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    diagnose: DiagnoseSettings = field(default_factory=DiagnoseSettings)
    out_dir: str = "out"
    workers: int = 1


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split())


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    cfg = ExperimentConfig()
    try:
        if cp.has_section("model"):
            m = cp["model"]
            cfg.model = ModelSettings(
                kind=m.get("kind", cfg.model.kind),
                n=m.getint("n", cfg.model.n),
                data_seed=m.getint("data_seed", cfg.model.data_seed),
                theta1=m.getfloat("theta1", cfg.model.theta1),
                theta2=m.getfloat("theta2", cfg.model.theta2),
                sigma_x2=m.getfloat("sigma_x2", cfg.model.sigma_x2),
                temperature=m.getfloat("temperature", cfg.model.temperature),
                features_csv=m.get("features_csv", ""),
                holdout_csv=m.get("holdout_csv", ""),
                domain_low=_floats(m.get("domain_low", "")),
                domain_high=_floats(m.get("domain_high", "")),
            )
        if cp.has_section("sampler"):
            s = cp["sampler"]
            cfg.sampler = SamplerSettings(
                mode=s.get("mode", cfg.sampler.mode),
                lam=s.getfloat("lambda", cfg.sampler.lam),
                batch_cap=s.get("batch_cap", cfg.sampler.batch_cap).strip(),
                epsilon=s.getfloat("epsilon", cfg.sampler.epsilon),
                delta=s.getfloat("delta", cfg.sampler.delta),
                proposal_scale=s.get("proposal_scale", cfg.sampler.proposal_scale).strip(),
                iters=s.getint("iters", cfg.sampler.iters),
                seed=s.getint("seed", cfg.sampler.seed),
                theta0=_floats(s.get("theta0", "")),
                burn_in=s.getfloat("burn_in", cfg.sampler.burn_in),
            )
        if cp.has_section("metrics"):
            mm = cp["metrics"]
            cfg.metrics = MetricsSettings(
                grid_resolution=mm.getint("grid_resolution", cfg.metrics.grid_resolution),
                kl_checkpoints=mm.getint("kl_checkpoints", cfg.metrics.kl_checkpoints),
            )
        if cp.has_section("sweep"):
            w = cp["sweep"]
            cfg.sweep = SweepSettings(
                modes=tuple(w.get("modes", "").split()),
                epsilons=_floats(w.get("epsilons", "")),
                batch_caps=tuple(w.get("batch_caps", "").split()),
                replicates=w.getint("replicates", 1),
            )
        if cp.has_section("diagnose"):
            d = cp["diagnose"]
            cfg.diagnose = DiagnoseSettings(
                states=_floats(d.get("states", "")),
                trials=d.getint("trials", 100_000),
                seed=d.getint("seed", 0),
            )
        if cp.has_section("output"):
            o = cp["output"]
            cfg.out_dir = o.get("directory", cfg.out_dir)
            cfg.workers = o.getint("workers", cfg.workers)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return cfg


def write_resolved(cfg: ExperimentConfig, path) -> None:
    cp = configparser.ConfigParser()
    m = cfg.model
    cp["model"] = {
        "kind": m.kind,
        "n": str(m.n),
        "data_seed": str(m.data_seed),
        "theta1": fmt(m.theta1),
        "theta2": fmt(m.theta2),
        "sigma_x2": fmt(m.sigma_x2),
        "temperature": fmt(m.temperature),
        "features_csv": m.features_csv,
        "holdout_csv": m.holdout_csv,
        "domain_low": " ".join(fmt(v) for v in m.domain_low),
        "domain_high": " ".join(fmt(v) for v in m.domain_high),
    }
    s = cfg.sampler
    cp["sampler"] = {
        "mode": s.mode,
        "lambda": fmt(s.lam),
        "batch_cap": str(s.batch_cap),
        "epsilon": fmt(s.epsilon),
        "delta": fmt(s.delta),
        "proposal_scale": str(s.proposal_scale),
        "iters": str(s.iters),
        "seed": str(s.seed),
        "theta0": " ".join(fmt(v) for v in s.theta0),
        "burn_in": fmt(s.burn_in),
    }
    cp["metrics"] = {
        "grid_resolution": str(cfg.metrics.grid_resolution),
        "kl_checkpoints": str(cfg.metrics.kl_checkpoints),
    }
    if cfg.sweep.modes or cfg.sweep.epsilons:
        cp["sweep"] = {
            "modes": " ".join(cfg.sweep.modes),
            "epsilons": " ".join(fmt(e) for e in cfg.sweep.epsilons),
            "batch_caps": " ".join(str(k) for k in cfg.sweep.batch_caps),
            "replicates": str(cfg.sweep.replicates),
        }
    if cfg.diagnose.states:
        cp["diagnose"] = {
            "states": " ".join(fmt(v) for v in cfg.diagnose.states),
            "trials": str(cfg.diagnose.trials),
            "seed": str(cfg.diagnose.seed),
        }
    cp["output"] = {"directory": str(cfg.out_dir), "workers": str(cfg.workers)}
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def build_domain(m: ModelSettings) -> models.BoxDomain:
    if not m.domain_low or not m.domain_high:
        raise ConfigurationError(
            "domain_low/domain_high must be declared: the global distance bound A "
            "is the diameter of this box and is reported with results"
        )
    return models.BoxDomain(np.array(m.domain_low), np.array(m.domain_high))


def build_model(m: ModelSettings) -> models.EnergyModel:
    domain = build_domain(m)
    if m.kind == "mixture":
        return models.generate_mixture_data(
            m.n,
            m.data_seed,
            theta1=m.theta1,
            theta2=m.theta2,
            sigma_x2=m.sigma_x2,
            temperature=m.temperature,
            domain=domain,
        )
    if m.kind == "logistic":
        if not m.features_csv:
            raise ConfigurationError("logistic model needs features_csv")
        return models.load_feature_csv(
            m.features_csv, temperature=m.temperature, domain=domain
        )
    raise ConfigurationError(f"unknown model kind {m.kind!r}")


def resolve_sampler(
    cfg: ExperimentConfig, model: models.EnergyModel
) -> tuple[ExperimentConfig, samplers.SamplerConfig]:
    """Materialize auto batch cap / proposal scale; returns (snapshot cfg, run config)."""
    s = cfg.sampler
    cap_text = str(s.batch_cap).strip().lower()
    if cap_text == AUTO:
        cap = default_k(s.epsilon, model.C, model.max_c)
    elif cap_text == AUTO_WIDE:
        cap = default_k(s.epsilon, model.C, model.max_c, factor=1.0)
    else:
        try:
            cap = int(cap_text)
        except ValueError:
            raise ConfigurationError(f"batch_cap must be an integer, auto or auto_wide; got {s.batch_cap!r}") from None
    scale_text = str(s.proposal_scale).strip().lower()
    theta0 = np.array(s.theta0) if s.theta0 else None
    run_cfg = samplers.SamplerConfig(
        mode=s.mode,
        lam=s.lam,
        batch_cap=cap,
        epsilon=s.epsilon,
        delta=s.delta,
        proposal_scale=0.1,
        iters=s.iters,
        seed=s.seed,
        theta0=theta0,
    )
    if scale_text == AUTO:
        probe = replace(run_cfg, proposal_scale=model.domain.diameter / 20.0)
        scale = samplers.tune_proposal_scale(model, probe)
    else:
        try:
            scale = float(scale_text)
        except ValueError:
            raise ConfigurationError(f"proposal_scale must be a float or auto; got {s.proposal_scale!r}") from None
    run_cfg = replace(run_cfg, proposal_scale=scale)
    run_cfg.validate()
    resolved = replace(
        cfg, sampler=replace(s, batch_cap=str(cap), proposal_scale=fmt(scale))
    )
    return resolved, run_cfg


TRACE_FIXED_COLUMNS = [
    "branch",
    "B",
    "batch_kept",
    "noise_added",
    "xi",
    "sensitivity",
    "log_r",
    "accepted",
    "eps_step",
    "delta_step",
]


def trace_header(dim: int) -> list[str]:
    return ["iter"] + [f"theta_{i}" for i in range(dim)] + TRACE_FIXED_COLUMNS


def write_trace_csv(path, trace: list[samplers.StepRecord], dim: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(trace_header(dim))
        for r in trace:
            w.writerow(
                [str(r.iter)]
                + [fmt(v) for v in r.theta]
                + [
                    r.branch,
                    str(r.batch_size),
                    str(r.batch_kept),
                    fmt(r.noise_added),
                    fmt(r.noise_value),
                    fmt(r.sensitivity),
                    fmt(r.log_ratio),
                    fmt(r.accepted),
                    fmt(r.eps_spent),
                    fmt(r.delta_spent),
                ]
            )


def read_trace_thetas(path, dim: int) -> np.ndarray:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append([float(row[f"theta_{i}"]) for i in range(dim)])
    return np.array(out).reshape(-1, dim)


def write_ledger_csv(path, ledger: privacy.PrivacyLedger) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "eps_step", "delta_step", "eps_total", "delta_total"])
        for it, es, ds, et, dt in ledger.rows:
            w.writerow([str(it), fmt(es), fmt(ds), fmt(et), fmt(dt)])


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "config_id", "value", "stderr"])
        for metric, config_id, value, stderr in rows:
            w.writerow(
                [metric, config_id, fmt(value), "" if stderr is None else fmt(stderr)]
            )


def write_grid_csv(path, grid: diagnostics.GridPosterior) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "theta_0", "theta_1", "probability"])
        c0 = grid.axis_centers(0)
        c1 = grid.axis_centers(1) if grid.dim == 2 else np.array([0.0])
        probs = grid.probs if grid.dim == 2 else grid.probs.reshape(-1, 1)
        for i in range(probs.shape[0]):
            for j in range(probs.shape[1]):
                w.writerow([str(i), str(j), fmt(c0[i]), fmt(c1[j]), fmt(probs[i, j])])


def config_id(mode: str, eps: float, cap: int, rep: int = 0) -> str:
    return f"mode={mode};eps={fmt(eps)};K={cap};rep={rep}"


def data_touches(record: samplers.StepRecord, n_data: int) -> int:
    if record.branch == samplers.BRANCH_MINIBATCH:
        return record.batch_size
    if record.branch == samplers.BRANCH_FULLBATCH:
        return n_data
    return 0


def compute_metrics(
    model: models.EnergyModel,
    cfg: ExperimentConfig,
    run_cfg: samplers.SamplerConfig,
    trace: list[samplers.StepRecord],
    cid: str,
    stats: samplers.ChainStats,
    grid: diagnostics.GridPosterior | None,
) -> list[tuple]:
    rows: list[tuple] = []
    rows.append(("domain_diameter", cid, model.domain.diameter, None))
    rows.append(("clamp_count", cid, stats.artanh_clamps, None))
    if not trace:
        return rows
    n = len(trace)
    acc = samplers.acceptance_rate(trace)
    rows.append(("acceptance_rate", cid, acc, math.sqrt(max(acc * (1 - acc), 0.0) / n)))
    touches = np.array([data_touches(r, model.n_data) for r in trace], dtype=float)
    rows.append(
        ("mean_data_touches", cid, touches.mean(), touches.std(ddof=1) / math.sqrt(n) if n > 1 else None)
    )
    mini = np.array(
        [r.batch_size for r in trace if r.branch == samplers.BRANCH_MINIBATCH], dtype=float
    )
    if mini.size:
        rows.append(
            (
                "mean_batch_size_minibatch",
                cid,
                mini.mean(),
                mini.std(ddof=1) / math.sqrt(mini.size) if mini.size > 1 else None,
            )
        )
        rows.append(("minibatch_fraction", cid, mini.size / n, None))
    thetas = np.array([r.theta for r in trace])
    burn = cfg.sampler.burn_in
    kept = diagnostics.discard_burn_in(thetas, burn)
    if grid is not None and kept.shape[0] >= 1:
        rows.append(("symmetric_kl", cid, diagnostics.symmetric_kl(kept, grid), None))
        n_chk = cfg.metrics.kl_checkpoints
        if n_chk > 0:
            for t in np.unique(np.linspace(n / n_chk, n, n_chk).astype(int)):
                part = diagnostics.discard_burn_in(thetas[:t], burn)
                if part.shape[0] >= 1:
                    rows.append(
                        (f"symmetric_kl@{t}", cid, diagnostics.symmetric_kl(part, grid), None)
                    )
    if (
        isinstance(model, models.LogisticRegressionModel)
        and cfg.model.holdout_csv
        and kept.shape[0] >= 1
    ):
        holdout = models.load_feature_csv(cfg.model.holdout_csv)
        rows.append(
            (
                "test_accuracy",
                cid,
                diagnostics.test_accuracy(model, kept, holdout.features, holdout.labels),
                None,
            )
        )
    return rows


def run_single(cfg: ExperimentConfig, out_dir: Path) -> list[tuple]:
    """Execute one experiment into out_dir; returns its metrics rows."""
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg.model)
    resolved, run_cfg = resolve_sampler(cfg, model)
    write_resolved(resolved, out_dir / "resolved.cfg")
    stats = samplers.ChainStats()
    trace = samplers.run_chain(model, run_cfg, stats=stats)
    write_trace_csv(out_dir / "trace.csv", trace, model.dim)

    private = run_cfg.mode in samplers.PRIVATE_MODES
    ledger = privacy.PrivacyLedger(
        eps_step=run_cfg.epsilon if private else 0.0,
        delta_step=run_cfg.delta if private else 0.0,
        p=model.max_c / model.C,
        batch_cap=run_cfg.batch_cap,
    )
    for rec in trace:
        privacy.ledger_record(ledger, rec)
    write_ledger_csv(out_dir / "ledger.csv", ledger)

    grid = None
    if model.dim <= 2:
        ranges = list(zip(model.domain.low, model.domain.high))
        grid = diagnostics.grid_posterior(model, ranges, cfg.metrics.grid_resolution)
        if model.dim == 2:
            write_grid_csv(out_dir / "grid.csv", grid)

    cid = config_id(run_cfg.mode, run_cfg.epsilon, run_cfg.batch_cap)
    rows = compute_metrics(model, cfg, run_cfg, trace, cid, stats, grid)
    eps_t, delta_t = ledger.totals()
    rows.append(("eps_total", cid, eps_t, None))
    rows.append(("delta_total", cid, delta_t, None))
    write_metrics_csv(out_dir / "metrics.csv", rows)
    return rows


def _sweep_cell(args) -> tuple[str, list[tuple] | None, str | None]:
    cfg, cell_dir, cid = args
    try:
        rows = run_single(cfg, Path(cell_dir))
        return cid, rows, None
    except DpmhError as exc:
        return cid, None, str(exc)


def sweep_cells(cfg: ExperimentConfig):
    sw = cfg.sweep
    if not sw.modes or not sw.epsilons:
        raise ConfigurationError("sweep needs non-empty modes and epsilons lists")
    caps = sw.batch_caps if sw.batch_caps else (str(cfg.sampler.batch_cap),)
    for mode in sw.modes:
        for eps in sw.epsilons:
            for cap in caps:
                for rep in range(sw.replicates):
                    yield mode, eps, cap, rep


def run_sweep(cfg: ExperimentConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out_dir / "resolved.cfg")
    jobs = []
    for mode, eps, cap, rep in sweep_cells(cfg):
        seed = derive_seed(cfg.sampler.seed, mode, eps, str(cap), rep)
        cell_sampler = replace(
            cfg.sampler, mode=mode, epsilon=eps, batch_cap=str(cap), seed=seed
        )
        cell_cfg = replace(cfg, sampler=cell_sampler, sweep=SweepSettings())
        cap_label = str(cap)
        cid = f"mode={mode};eps={fmt(eps)};K={cap_label};rep={rep}"
        cell_dir = out_dir / "cells" / cid.replace(";", "_").replace("=", "-")
        jobs.append((cell_cfg, str(cell_dir), cid))

    results = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]

    all_rows: list[tuple] = []
    failed = []
    for cid, rows, err in results:
        if err is not None:
            failed.append((cid, err))
            all_rows.append(("failed", cid, math.nan, None))
            continue
        # cell config ids were computed per-cell without the rep index; rewrite
        all_rows.extend((metric, cid, value, stderr) for metric, _, value, stderr in rows)
    write_metrics_csv(out_dir / "metrics.csv", all_rows)
    for cid, err in failed:
        print(f"sweep cell failed: {cid}: {err}", file=sys.stderr)
    return EXIT_OK if not failed else 1


def run_diagnose(cfg: ExperimentConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg.model)
    resolved, run_cfg = resolve_sampler(cfg, model)
    write_resolved(resolved, out_dir / "resolved.cfg")
    d = cfg.diagnose
    if d.states:
        states = np.array(d.states, dtype=float).reshape(-1, model.dim)
    else:
        # default layout: 5 states along the main diagonal of the domain box
        frac = np.linspace(0.3, 0.7, 5)[:, None]
        states = model.domain.low + frac * (model.domain.high - model.domain.low)
    pi = diagnostics.exact_target_pmf(model, states)
    kern = diagnostics.estimate_kernel(
        model, run_cfg, states, trials=d.trials, seed=d.seed
    )
    kern_mh = diagnostics.estimate_kernel(
        model, replace(run_cfg, mode="mh"), states, trials=d.trials, seed=d.seed + 1
    )
    cid = config_id(run_cfg.mode, run_cfg.epsilon, run_cfg.batch_cap)
    rows = []
    worst = diagnostics.check_reversibility(kern, pi)
    rows.append(("db_max_residual_se_units", cid, worst, None))
    gap = diagnostics.spectral_gap(kern, pi)
    gap_se = diagnostics.spectral_gap_stderr(kern, pi)
    gap_mh = diagnostics.spectral_gap(kern_mh, pi)
    gap_mh_se = diagnostics.spectral_gap_stderr(kern_mh, pi)
    rows.append((f"gap_{run_cfg.mode}", cid, gap, gap_se))
    rows.append(("gap_mh", cid, gap_mh, gap_mh_se))
    ratio = gap / gap_mh
    ratio_se = abs(ratio) * math.sqrt((gap_se / gap) ** 2 + (gap_mh_se / gap_mh) ** 2)
    rows.append(("gap_ratio", cid, ratio, ratio_se))
    if run_cfg.mode in samplers.PRIVATE_MODES and run_cfg.batch_cap > 0:
        bound = diagnostics.gap_ratio_lower_bound(
            run_cfg.epsilon,
            run_cfg.delta,
            run_cfg.batch_cap,
            model.C,
            model.max_c,
            model.domain.diameter,
            run_cfg.lam,
        )
        rows.append(("gap_ratio_lower_bound", cid, bound, None))
        rows.append(
            (
                "log_gap_ratio_lower_bound",
                cid,
                diagnostics.log_gap_ratio_lower_bound(
                    run_cfg.epsilon,
                    run_cfg.delta,
                    run_cfg.batch_cap,
                    model.C,
                    model.max_c,
                    model.domain.diameter,
                    run_cfg.lam,
                ),
                None,
            )
        )
    pi_hat = diagnostics.stationary_estimate(kern)
    rows.append(("tv_stationary", cid, 0.5 * float(np.abs(pi_hat - pi).sum()), None))
    write_metrics_csv(out_dir / "metrics.csv", rows)
    with open(out_dir / "kernel.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "T", "stderr"])
        for i in range(kern.n_states):
            for j in range(kern.n_states):
                w.writerow([str(i), str(j), fmt(kern.T_hat[i, j]), fmt(kern.stderr[i, j])])
    return EXIT_OK


def run_datagen(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "mixture":
        model = models.generate_mixture_data(
            args.n,
            args.seed,
            theta1=args.theta1,
            theta2=args.theta2,
            sigma_x2=args.sigma_x2,
        )
        with open(out, "w", encoding="utf-8") as fh:
            for x in model.data:
                fh.write(fmt(x) + "\n")
        return EXIT_OK
    if args.kind == "logistic":
        rng = np.random.default_rng(args.seed)
        X = rng.standard_normal((args.n, args.dim))
        theta = np.zeros(args.dim)
        theta[: min(2, args.dim)] = (1.5, -1.0)[: min(2, args.dim)]
        probs = 1.0 / (1.0 + np.exp(-(X @ theta)))
        y = (rng.random(args.n) < probs).astype(int)
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"f{i}" for i in range(args.dim)] + ["label"])
            for row, label in zip(X, y):
                w.writerow([fmt(v) for v in row] + [str(int(label))])
        return EXIT_OK
    raise ConfigurationError(f"unknown data kind {args.kind!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpmh", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="path to the experiment config")
        sp.add_argument("--out", default=None, help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, default=None, help="override the sampler seed")
        sp.add_argument("--workers", type=int, default=None, help="parallel sweep cells")

    common(sub.add_parser("run", help="single experiment"))
    common(sub.add_parser("sweep", help="cross-product of modes x epsilons x caps"))
    common(sub.add_parser("diagnose", help="kernel, detailed-balance and gap suite"))

    g = sub.add_parser("data-gen", help="generate datasets")
    g.add_argument("--kind", choices=("mixture", "logistic"), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--theta1", type=float, default=0.0)
    g.add_argument("--theta2", type=float, default=1.0)
    g.add_argument("--sigma-x2", dest="sigma_x2", type=float, default=2.0)
    g.add_argument("--dim", type=int, default=2)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "data-gen":
            return run_datagen(args)
        cfg = parse_config(args.config)
        if args.out is not None:
            cfg.out_dir = args.out
        if args.seed is not None:
            cfg.sampler = replace(cfg.sampler, seed=args.seed)
        if args.workers is not None:
            cfg.workers = args.workers
        out_dir = Path(cfg.out_dir)
        if args.command == "run":
            run_single(cfg, out_dir)
            return EXIT_OK
        if args.command == "sweep":
            return run_sweep(cfg, out_dir)
        if args.command == "diagnose":
            return run_diagnose(cfg, out_dir)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except (ConfigurationError, DataValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, InvariantViolationError, DiagnosticsError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
