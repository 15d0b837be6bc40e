"""Metropolis-Hastings step kernels sharing one proposal and one record schema.

Five modes over a common bounded-energy model interface:

* ``mh``        full-batch Metropolis-Hastings, no noise.
* ``tunamh``    exact minibatch MH with Poisson batch sizes and artanh terms.
* ``dpfast``    the private hybrid: minibatch below the cap K, full batch at
                or above it, Gaussian noise on either branch unless the
                branch sensitivity is under its free threshold.
* ``dpfast_fullbatch``  same, with the minibatch branch disabled (K = 0).
* ``penalty``   full-batch baseline that always adds noise.

The proposal is an isotropic Gaussian random walk, so the proposal ratio is
one everywhere. Each chain owns four independent RNG streams (proposal,
batch, noise, accept) spawned from its seed; modes consume only the streams
they need, which keeps acceptance decisions aligned across modes under a
shared seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, InvariantViolationError, NumericError
from .models import EnergyModel, energy_diff_sum
from .privacy import NoiseCalibration, calibrate, sensitivity_l1, sensitivity_l2

MODES = ("mh", "tunamh", "dpfast", "dpfast_fullbatch", "penalty")
PRIVATE_MODES = ("dpfast", "dpfast_fullbatch", "penalty")

BRANCH_MINIBATCH = "minibatch"
BRANCH_FULLBATCH = "fullbatch"
BRANCH_OUT_OF_DOMAIN = "out_of_domain"

_ARTANH_CLAMP = 1.0 - 1e-12
_KEEP_PROB_TOL = 1e-9


@dataclass
class SamplerConfig:
    """Hyperparameters for one chain.

    ``lam`` is the Poisson batch-size offset; ``batch_cap`` is K (0 forces
    the full-batch branch); ``epsilon``/``delta`` are the per-iteration
    privacy target, required in (0, 1] x (0, 1) for the noisy modes.
    """

    mode: str
    lam: float = 1.0
    batch_cap: int = 0
    epsilon: float = 1.0
    delta: float = 1e-5
    proposal_scale: float = 0.1
    iters: int = 0
    seed: int = 0
    theta0: np.ndarray | None = None

    def validate(self) -> "SamplerConfig":
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.lam <= 0:
            raise ConfigurationError("lambda must be positive")
        if self.batch_cap < 0:
            raise ConfigurationError("batch cap must be >= 0")
        if self.proposal_scale <= 0:
            raise ConfigurationError("proposal scale must be positive")
        if self.iters < 0:
            raise ConfigurationError("iteration count must be >= 0")
        if self.mode in PRIVATE_MODES:
            if not 0.0 < self.epsilon <= 1.0:
                raise ConfigurationError("epsilon must lie in (0, 1] for private modes")
            if not 0.0 < self.delta < 1.0:
                raise ConfigurationError("delta must lie in (0, 1) for private modes")
        return self


@dataclass
class RngStreams:
    """One independent generator per randomness purpose."""

    proposal: np.random.Generator
    batch: np.random.Generator
    noise: np.random.Generator
    accept: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        return cls.from_seed_sequence(np.random.SeedSequence(seed))

    @classmethod
    def from_seed_sequence(cls, ss: np.random.SeedSequence) -> "RngStreams":
        children = ss.spawn(4)
        return cls(*(np.random.default_rng(c) for c in children))


@dataclass
class ChainState:
    theta: np.ndarray
    iter: int
    rngs: RngStreams


@dataclass
class ChainStats:
    """Per-chain diagnostics counters; artanh clamps must stay at zero."""

    artanh_clamps: int = 0


@dataclass
class StepRecord:
    """One trace row: what the step did and what it cost."""

    iter: int
    theta: np.ndarray
    theta_proposed: np.ndarray
    branch: str
    batch_size: int
    batch_kept: int
    noise_added: bool
    noise_value: float
    noise_shift: float
    sensitivity: float
    log_ratio: float
    accept_ratio: float
    accepted: bool
    eps_spent: float
    delta_spent: float


def propose(theta, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric Gaussian random-walk proposal theta + scale * z."""
    if scale <= 0:
        raise ConfigurationError("proposal scale must be positive")
    theta = np.asarray(theta, dtype=float)
    return theta + scale * rng.standard_normal(theta.shape)


def draw_batch_size(lam: float, C: float, M_val: float, rng: np.random.Generator) -> int:
    """Poisson batch size with mean lam + C*M."""
    if lam <= 0:
        raise ConfigurationError("lambda must be positive")
    if C <= 0:
        raise ConfigurationError("C must be positive")
    if M_val < 0:
        raise ConfigurationError("M must be nonnegative")
    return int(rng.poisson(lam + C * M_val))


def candidate_cdf(model: EnergyModel) -> np.ndarray:
    """Cumulative weights of the c_i/C candidate distribution."""
    cdf = np.cumsum(model.c) / model.C
    cdf[-1] = 1.0
    return cdf


def draw_candidates(cdf: np.ndarray, B: int, rng: np.random.Generator) -> np.ndarray:
    return np.searchsorted(cdf, rng.random(B), side="right")


def keep_probabilities(
    model: EnergyModel, theta, theta_prime, idx: np.ndarray, M_val: float, lam: float
) -> np.ndarray:
    """Per-candidate retention probabilities of the batch-formation step.

    A keep probability outside [0, 1] by more than 1e-9 signals a breach of
    the |U_i(a)-U_i(b)| <= c_i*M bound and raises.
    """
    ci = model.c[idx]
    diff_fwd = model.energy_diff(theta_prime, theta, idx)  # U_i(theta') - U_i(theta)
    numer = lam * ci + (model.C / 2.0) * (diff_fwd + ci * M_val)
    denom = ci * (lam + model.C * M_val)
    probs = numer / denom
    if np.any(probs < -_KEEP_PROB_TOL) or np.any(probs > 1.0 + _KEEP_PROB_TOL):
        worst = float(probs[np.argmax(np.abs(probs - 0.5))])
        raise InvariantViolationError(
            f"batch keep probability {worst} outside [0, 1]; energy bound violated"
        )
    return np.clip(probs, 0.0, 1.0)


def form_batch(
    model: EnergyModel,
    theta,
    theta_prime,
    B: int,
    lam: float,
    rng: np.random.Generator,
    *,
    M_val: float | None = None,
    cdf: np.ndarray | None = None,
) -> np.ndarray:
    """Draw B candidates with probability c_i/C (with replacement) and thin them.

    Returns the kept index multiset; a datum sampled twice appears twice.
    """
    if B < 0:
        raise ConfigurationError("B must be >= 0")
    if B == 0:
        return np.empty(0, dtype=np.int64)
    if M_val is None:
        M_val = model.distance(theta, theta_prime)
    if cdf is None:
        cdf = candidate_cdf(model)
    idx = draw_candidates(cdf, B, rng)
    probs = keep_probabilities(model, theta, theta_prime, idx, M_val, lam)
    return idx[rng.random(B) < probs]


def artanh_terms(
    model: EnergyModel,
    theta,
    theta_prime,
    idx: np.ndarray,
    M_val: float,
    lam: float,
    stats: ChainStats | None = None,
) -> np.ndarray:
    """artanh(C*(U_i(theta)-U_i(theta')) / (c_i*(2*lam + C*M))) per batch index.

    Arguments are clamped at magnitude 1 - 1e-12; clamps are counted because
    they can only happen when floating error grazes the energy bound.
    """
    if idx.size == 0:
        return np.empty(0)
    diff = model.energy_diff(theta, theta_prime, idx)
    args = model.C * diff / (model.c[idx] * (2.0 * lam + model.C * M_val))
    clipped = np.clip(args, -_ARTANH_CLAMP, _ARTANH_CLAMP)
    if stats is not None:
        stats.artanh_clamps += int(np.sum(clipped != args))
    return np.arctanh(clipped)


def mh_ratio_minibatch(
    model: EnergyModel,
    batch_idx: np.ndarray,
    theta,
    theta_prime,
    lam: float,
    noise_shift: float = 0.0,
    *,
    M_val: float | None = None,
    stats: ChainStats | None = None,
) -> float:
    """Minibatch acceptance ratio exp(2*sum artanh(..) + noise_shift).

    The proposal ratio is 1 by symmetry. Raises on a non-finite result.
    """
    if M_val is None:
        M_val = model.distance(theta, theta_prime)
    terms = artanh_terms(model, theta, theta_prime, batch_idx, M_val, lam, stats)
    log_r = 2.0 * float(terms.sum()) + noise_shift
    r = math.exp(log_r) if log_r < 709.0 else math.inf
    if not math.isfinite(r):
        raise NumericError(f"minibatch acceptance ratio is not finite (log ratio {log_r})")
    return r


def _accept(log_ratio: float, rng: np.random.Generator) -> bool:
    u = rng.random()
    return math.log(u) < log_ratio if u > 0.0 else True


def _domain_reject_record(it: int, theta, theta_prime, eps: float, delta: float) -> StepRecord:
    return StepRecord(
        iter=it,
        theta=np.array(theta),
        theta_proposed=np.array(theta_prime),
        branch=BRANCH_OUT_OF_DOMAIN,
        batch_size=0,
        batch_kept=0,
        noise_added=False,
        noise_value=0.0,
        noise_shift=0.0,
        sensitivity=0.0,
        log_ratio=-math.inf,
        accept_ratio=0.0,
        accepted=False,
        eps_spent=eps,
        delta_spent=delta,
    )


def _finish(
    state: ChainState,
    record: StepRecord,
    theta_prime: np.ndarray,
    log_ratio: float,
) -> tuple[ChainState, StepRecord]:
    if math.isnan(log_ratio):
        raise NumericError("log acceptance ratio is NaN")
    accepted = _accept(log_ratio, state.rngs.accept)
    new_theta = theta_prime if accepted else state.theta
    record.accepted = accepted
    record.theta = np.array(new_theta)
    new_state = ChainState(theta=np.array(new_theta), iter=state.iter + 1, rngs=state.rngs)
    return new_state, record


def _out_of_domain(model: EnergyModel, theta_prime) -> bool:
    return model.domain is not None and not model.domain.contains(theta_prime)


def dpfast_step(
    model: EnergyModel,
    state: ChainState,
    config: SamplerConfig,
    calib: NoiseCalibration | None = None,
    *,
    stats: ChainStats | None = None,
    cdf: np.ndarray | None = None,
) -> tuple[ChainState, StepRecord]:
    """One private hybrid step: minibatch below the cap, full batch otherwise."""
    if calib is None:
        calib = calibrate(config, model.C, model.max_c)
    rngs = state.rngs
    theta = state.theta
    theta_prime = propose(theta, config.proposal_scale, rngs.proposal)
    if _out_of_domain(model, theta_prime):
        rec = _domain_reject_record(state.iter, theta, theta_prime, config.epsilon, config.delta)
        return ChainState(np.array(theta), state.iter + 1, rngs), rec

    M_val = model.distance(theta, theta_prime)
    K = config.batch_cap
    if K > 0:
        B = draw_batch_size(config.lam, model.C, M_val, rngs.batch)
    else:
        B = model.n_data  # forced full batch; no draw happens

    if 0 < K and B < K:
        batch = form_batch(
            model, theta, theta_prime, B, config.lam, rngs.batch, M_val=M_val, cdf=cdf
        )
        sens = sensitivity_l1(model.C, M_val, config.lam)
        if sens <= calib.free_threshold_minibatch:
            noise_added, xi, shift = False, 0.0, 0.0
        else:
            std = calib.sigma1 * sens
            xi = float(rngs.noise.normal(0.0, std))
            noise_added, shift = True, xi - std * std / 2.0
        terms = artanh_terms(model, theta, theta_prime, batch, M_val, config.lam, stats)
        log_r = 2.0 * float(terms.sum()) + shift
        branch, kept = BRANCH_MINIBATCH, int(batch.size)
    else:
        sens = sensitivity_l2(model.max_c, M_val)
        if sens <= calib.free_threshold_fullbatch:
            noise_added, xi, shift = False, 0.0, 0.0
        else:
            std = calib.sigma2 * sens
            xi = float(rngs.noise.normal(0.0, std))
            noise_added, shift = True, xi - std * std / 2.0
        log_r = energy_diff_sum(model, theta, theta_prime) + shift
        branch, kept = BRANCH_FULLBATCH, model.n_data

    rec = StepRecord(
        iter=state.iter,
        theta=np.array(theta),
        theta_proposed=theta_prime,
        branch=branch,
        batch_size=int(B),
        batch_kept=kept,
        noise_added=noise_added,
        noise_value=xi,
        noise_shift=shift,
        sensitivity=sens,
        log_ratio=log_r,
        accept_ratio=math.exp(min(log_r, 709.0)),
        accepted=False,
        eps_spent=config.epsilon,
        delta_spent=config.delta,
    )
    return _finish(state, rec, theta_prime, log_r)


def dpfast_fullbatch_step(
    model: EnergyModel,
    state: ChainState,
    config: SamplerConfig,
    calib: NoiseCalibration | None = None,
    *,
    stats: ChainStats | None = None,
    cdf: np.ndarray | None = None,
) -> tuple[ChainState, StepRecord]:
    forced = replace(config, batch_cap=0)
    if calib is None or calib.batch_cap != 0:
        calib = calibrate(forced, model.C, model.max_c)
    return dpfast_step(model, state, forced, calib, stats=stats, cdf=cdf)


def penalty_step(
    model: EnergyModel,
    state: ChainState,
    config: SamplerConfig,
    calib: NoiseCalibration | None = None,
    *,
    stats: ChainStats | None = None,
    cdf: np.ndarray | None = None,
) -> tuple[ChainState, StepRecord]:
    """Full-batch baseline: Gaussian noise on the energy difference, every step."""
    if calib is None:
        calib = calibrate(config, model.C, model.max_c)
    rngs = state.rngs
    theta = state.theta
    theta_prime = propose(theta, config.proposal_scale, rngs.proposal)
    if _out_of_domain(model, theta_prime):
        rec = _domain_reject_record(state.iter, theta, theta_prime, config.epsilon, config.delta)
        return ChainState(np.array(theta), state.iter + 1, rngs), rec
    M_val = model.distance(theta, theta_prime)
    sens = sensitivity_l2(model.max_c, M_val)
    std = calib.sigma2 * sens
    xi = float(rngs.noise.normal(0.0, std))
    log_r = energy_diff_sum(model, theta, theta_prime) + xi - std * std / 2.0
    rec = StepRecord(
        iter=state.iter,
        theta=np.array(theta),
        theta_proposed=theta_prime,
        branch=BRANCH_FULLBATCH,
        batch_size=model.n_data,
        batch_kept=model.n_data,
        noise_added=True,
        noise_value=xi,
        noise_shift=xi - std * std / 2.0,
        sensitivity=sens,
        log_ratio=log_r,
        accept_ratio=math.exp(min(log_r, 709.0)),
        accepted=False,
        eps_spent=config.epsilon,
        delta_spent=config.delta,
    )
    return _finish(state, rec, theta_prime, log_r)


def mh_step(
    model: EnergyModel,
    state: ChainState,
    config: SamplerConfig,
    calib: NoiseCalibration | None = None,
    *,
    stats: ChainStats | None = None,
    cdf: np.ndarray | None = None,
) -> tuple[ChainState, StepRecord]:
    """Plain full-batch Metropolis-Hastings; spends no privacy."""
    rngs = state.rngs
    theta = state.theta
    theta_prime = propose(theta, config.proposal_scale, rngs.proposal)
    if _out_of_domain(model, theta_prime):
        rec = _domain_reject_record(state.iter, theta, theta_prime, 0.0, 0.0)
        return ChainState(np.array(theta), state.iter + 1, rngs), rec
    log_r = energy_diff_sum(model, theta, theta_prime)
    rec = StepRecord(
        iter=state.iter,
        theta=np.array(theta),
        theta_proposed=theta_prime,
        branch=BRANCH_FULLBATCH,
        batch_size=model.n_data,
        batch_kept=model.n_data,
        noise_added=False,
        noise_value=0.0,
        noise_shift=0.0,
        sensitivity=0.0,
        log_ratio=log_r,
        accept_ratio=math.exp(min(log_r, 709.0)),
        accepted=False,
        eps_spent=0.0,
        delta_spent=0.0,
    )
    return _finish(state, rec, theta_prime, log_r)


def tunamh_step(
    model: EnergyModel,
    state: ChainState,
    config: SamplerConfig,
    calib: NoiseCalibration | None = None,
    *,
    stats: ChainStats | None = None,
    cdf: np.ndarray | None = None,
) -> tuple[ChainState, StepRecord]:
    """Exact minibatch MH: uncapped Poisson batch, artanh ratio, no noise."""
    rngs = state.rngs
    theta = state.theta
    theta_prime = propose(theta, config.proposal_scale, rngs.proposal)
    if _out_of_domain(model, theta_prime):
        rec = _domain_reject_record(state.iter, theta, theta_prime, 0.0, 0.0)
        return ChainState(np.array(theta), state.iter + 1, rngs), rec
    M_val = model.distance(theta, theta_prime)
    B = draw_batch_size(config.lam, model.C, M_val, rngs.batch)
    batch = form_batch(model, theta, theta_prime, B, config.lam, rngs.batch, M_val=M_val, cdf=cdf)
    terms = artanh_terms(model, theta, theta_prime, batch, M_val, config.lam, stats)
    log_r = 2.0 * float(terms.sum())
    rec = StepRecord(
        iter=state.iter,
        theta=np.array(theta),
        theta_proposed=theta_prime,
        branch=BRANCH_MINIBATCH,
        batch_size=int(B),
        batch_kept=int(batch.size),
        noise_added=False,
        noise_value=0.0,
        noise_shift=0.0,
        sensitivity=0.0,
        log_ratio=log_r,
        accept_ratio=math.exp(min(log_r, 709.0)),
        accepted=False,
        eps_spent=0.0,
        delta_spent=0.0,
    )
    return _finish(state, rec, theta_prime, log_r)


STEP_FUNCTIONS = {
    "mh": mh_step,
    "tunamh": tunamh_step,
    "dpfast": dpfast_step,
    "dpfast_fullbatch": dpfast_fullbatch_step,
    "penalty": penalty_step,
}


def initial_state(model: EnergyModel, config: SamplerConfig) -> ChainState:
    if config.theta0 is not None:
        theta0 = np.asarray(config.theta0, dtype=float)
    elif model.domain is not None:
        theta0 = model.domain.center()
    else:
        raise ConfigurationError("no initial state: set theta0 or declare a model domain")
    if theta0.shape != (model.dim,):
        raise ConfigurationError("theta0 dimension does not match the model")
    if model.domain is not None and not model.domain.contains(theta0):
        raise ConfigurationError("initial state lies outside the declared domain")
    return ChainState(theta=theta0, iter=0, rngs=RngStreams.from_seed(config.seed))


def run_chain(
    model: EnergyModel,
    config: SamplerConfig,
    *,
    stats: ChainStats | None = None,
) -> list[StepRecord]:
    """Run the configured kernel for config.iters steps; one record per step."""
    config.validate()
    step = STEP_FUNCTIONS[config.mode]
    needs_calib = config.mode in PRIVATE_MODES
    effective = config if config.mode != "dpfast_fullbatch" else replace(config, batch_cap=0)
    calib = calibrate(effective, model.C, model.max_c) if needs_calib else None
    cdf = candidate_cdf(model)
    state = initial_state(model, config)
    trace: list[StepRecord] = []
    for _ in range(config.iters):
        state, rec = step(model, state, config, calib, stats=stats, cdf=cdf)
        trace.append(rec)
    return trace


def acceptance_rate(trace: list[StepRecord]) -> float:
    if not trace:
        return math.nan
    return sum(r.accepted for r in trace) / len(trace)


def tune_proposal_scale(
    model: EnergyModel,
    config: SamplerConfig,
    *,
    target: float = 0.60,
    tol: float = 0.02,
    probe_steps: int = 250,
    budget: int = 2000,
) -> float:
    """Pre-run stochastic bisection of the proposal scale toward a target acceptance.

    Probes short chains (fresh seed stream per probe), brackets the target by
    doubling/halving, then bisects in log space until the measured acceptance
    is within ``tol`` or the step budget is exhausted. The returned scale is
    then frozen; tuning is not privacy-accounted and must happen on public or
    expendable budget.
    """
    spent = 0
    probe_idx = 0
    cdf = candidate_cdf(model)
    theta0 = initial_state(model, config).theta

    def measure(scale: float) -> float:
        nonlocal spent, probe_idx
        probe = replace(config, proposal_scale=scale)
        # distinct stream per probe: fold the probe index into the seed sequence
        rngs = RngStreams.from_seed_sequence(
            np.random.SeedSequence((config.seed & 0xFFFFFFFF, 0xBEEF, probe_idx))
        )
        probe_idx += 1
        state = ChainState(theta=np.array(theta0), iter=0, rngs=rngs)
        step = STEP_FUNCTIONS[probe.mode]
        effective = probe if probe.mode != "dpfast_fullbatch" else replace(probe, batch_cap=0)
        calib = (
            calibrate(effective, model.C, model.max_c) if probe.mode in PRIVATE_MODES else None
        )
        n_acc = 0
        for _ in range(probe_steps):
            state, rec = step(model, state, probe, calib, cdf=cdf)
            n_acc += rec.accepted
        spent += probe_steps
        return n_acc / probe_steps

    lo = hi = None
    scale = config.proposal_scale
    acc = measure(scale)
    while spent < budget and abs(acc - target) > tol:
        if acc > target:
            lo = scale  # too tame: acceptance high, grow the step
            scale = scale * 2.0 if hi is None else math.sqrt(scale * hi)
        else:
            hi = scale
            scale = scale / 2.0 if lo is None else math.sqrt(scale * lo)
        acc = measure(scale)
    return scale
