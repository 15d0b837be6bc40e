"""Ground-truth oracles and chain-quality metrics.

Desk-scale instruments: exact grid posteriors for 1-D/2-D targets, smoothed
symmetric KL between a sample cloud and a grid oracle, posterior-mean test
accuracy, Monte Carlo transition-kernel estimation on a small discrete state
set (with detailed-balance residuals and spectral gaps), and the printed
lower bound on the private-to-plain spectral-gap ratio.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np
from scipy.special import log_ndtr

from .errors import ConfigurationError, DiagnosticsError, NumericError
from .models import EnergyModel, LogisticRegressionModel, energy_diff_sum
from .privacy import calibrate, sensitivity_l1, sensitivity_l2
from .samplers import (
    PRIVATE_MODES,
    SamplerConfig,
    candidate_cdf,
    keep_probabilities,
    artanh_terms,
)

DEFAULT_SMOOTHING = 1e-6
DEFAULT_BURN_IN = 0.2


@dataclass(frozen=True)
class GridPosterior:
    """Normalized probability table over a regular grid of cell centers."""

    lows: np.ndarray
    highs: np.ndarray
    probs: np.ndarray  # shape = resolution per axis

    @property
    def dim(self) -> int:
        return self.lows.size

    @property
    def shape(self) -> tuple[int, ...]:
        return self.probs.shape

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        edges = np.linspace(self.lows[axis], self.highs[axis], n + 1)
        return 0.5 * (edges[:-1] + edges[1:])

    def axis_edges(self, axis: int) -> np.ndarray:
        return np.linspace(self.lows[axis], self.highs[axis], self.shape[axis] + 1)

    def flat_probs(self) -> np.ndarray:
        return self.probs.reshape(-1)


def grid_posterior(model: EnergyModel, ranges, resolution) -> GridPosterior:
    """Exact posterior table: exp(-total energy) at cell centers, normalized.

    ``ranges`` is one (low, high) pair per model dimension; ``resolution`` an
    int or per-axis sequence (>= 2, models of dimension <= 2 only). The max
    log density is subtracted before exponentiation to dodge underflow.
    """
    if model.dim > 2:
        raise ConfigurationError("grid oracle supports dimension <= 2")
    ranges = [(float(lo), float(hi)) for lo, hi in ranges]
    if len(ranges) != model.dim:
        raise ConfigurationError("one range per model dimension required")
    if np.isscalar(resolution):
        resolution = [int(resolution)] * model.dim
    resolution = [int(r) for r in resolution]
    if any(r < 1 for r in resolution):
        raise ConfigurationError("resolution must be >= 1 per axis")
    centers = [
        np.linspace(lo, hi, n + 1)[:-1] + (hi - lo) / (2 * n)
        for (lo, hi), n in zip(ranges, resolution)
    ]
    mesh = np.meshgrid(*centers, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    log_dens = np.array([-model.energy_total(p) for p in points])
    log_dens -= log_dens.max()
    dens = np.exp(log_dens)
    total = dens.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise NumericError("grid posterior mass vanished or overflowed")
    return GridPosterior(
        lows=np.array([lo for lo, _ in ranges]),
        highs=np.array([hi for _, hi in ranges]),
        probs=(dens / total).reshape(resolution),
    )


def discard_burn_in(samples: np.ndarray, fraction: float = DEFAULT_BURN_IN) -> np.ndarray:
    """Drop the first ``fraction`` of rows."""
    if not 0.0 <= fraction < 1.0:
        raise ConfigurationError("burn-in fraction must lie in [0, 1)")
    samples = np.asarray(samples)
    return samples[int(math.floor(fraction * samples.shape[0])) :]


def histogram_on_grid(samples: np.ndarray, grid: GridPosterior) -> np.ndarray:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[1] != grid.dim:
        raise ConfigurationError("sample dimension does not match the grid")
    edges = [grid.axis_edges(a) for a in range(grid.dim)]
    counts, _ = np.histogramdd(samples, bins=edges)
    return counts


def _smooth(p: np.ndarray, alpha: float) -> np.ndarray:
    p = p / p.sum()
    p = p + alpha
    return p / p.sum()


def symmetric_kl_pmf(p, q, alpha: float = DEFAULT_SMOOTHING) -> float:
    """KL(P||Q) + KL(Q||P) after additive smoothing of both tables."""
    p = _smooth(np.asarray(p, dtype=float).reshape(-1), alpha)
    q = _smooth(np.asarray(q, dtype=float).reshape(-1), alpha)
    return float(np.sum((p - q) * (np.log(p) - np.log(q))))


def symmetric_kl(samples, oracle: GridPosterior, alpha: float = DEFAULT_SMOOTHING) -> float:
    """Symmetric KL between a histogrammed sample cloud and the grid oracle."""
    counts = histogram_on_grid(samples, oracle)
    if counts.sum() == 0:
        raise ConfigurationError("no samples fell inside the oracle grid")
    return symmetric_kl_pmf(counts, oracle.probs, alpha)


def test_accuracy(model: LogisticRegressionModel, samples, holdout_features, holdout_labels) -> float:
    """Posterior-mean predictive accuracy; sigmoid averaged over samples, 0.5 ties to 1."""
    X = np.asarray(holdout_features, dtype=float)
    y = np.asarray(holdout_labels, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ConfigurationError("holdout must be a non-empty feature matrix")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[1] != X.shape[1]:
        raise ConfigurationError("sample dimension does not match holdout features")
    z = X @ samples.T
    mean_prob = np.mean(1.0 / (1.0 + np.exp(-z)), axis=1)
    pred = (mean_prob >= 0.5).astype(float)
    return float(np.mean(pred == y))


@dataclass(frozen=True)
class KernelEstimate:
    """Monte Carlo transition-matrix estimate over a small discretized state set."""

    states: np.ndarray  # (S, dim)
    T_hat: np.ndarray  # row-stochastic (S, S)
    stderr: np.ndarray  # per off-diagonal entry; zeros on the diagonal
    trials: int

    @property
    def n_states(self) -> int:
        return self.states.shape[0]


def _pair_accept_mask(
    model: EnergyModel,
    theta,
    theta_prime,
    config: SamplerConfig,
    calib,
    cdf: np.ndarray,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized accept/reject outcomes of n independent single steps at a fixed pair.

    Shares the per-datum keep-probability and artanh-term helpers with the
    samplers module so the formulas live in one place; the batching of trials
    is the only difference from the sequential step functions.
    """
    M_val = model.distance(theta, theta_prime)
    mode = config.mode
    log_r = np.zeros(n)

    if mode in ("mh", "penalty", "dpfast_fullbatch") or (mode == "dpfast" and config.batch_cap == 0):
        full = np.ones(n, dtype=bool)
    else:
        B = rng.poisson(config.lam + model.C * M_val, size=n)
        full = B >= config.batch_cap if mode == "dpfast" else np.zeros(n, dtype=bool)
        mini = ~full
        n_mini = int(mini.sum())
        if n_mini:
            b_mini = B[mini]
            total = int(b_mini.sum())
            idx = np.searchsorted(cdf, rng.random(total), side="right")
            kept = rng.random(total) < keep_probabilities(
                model, theta, theta_prime, idx, M_val, config.lam
            )
            seg = np.repeat(np.arange(n_mini), b_mini)
            terms = artanh_terms(model, theta, theta_prime, idx, M_val, config.lam)
            sums = np.bincount(seg[kept], weights=terms[kept], minlength=n_mini)
            log_mini = 2.0 * sums
            if mode == "dpfast":
                sens1 = sensitivity_l1(model.C, M_val, config.lam)
                if sens1 > calib.free_threshold_minibatch:
                    std = calib.sigma1 * sens1
                    log_mini = log_mini + rng.normal(0.0, std, size=n_mini) - std * std / 2.0
            log_r[mini] = log_mini

    n_full = int(full.sum())
    if n_full:
        base = energy_diff_sum(model, theta, theta_prime)
        shift = np.zeros(n_full)
        if mode == "penalty":
            std = calib.sigma2 * sensitivity_l2(model.max_c, M_val)
            shift = rng.normal(0.0, std, size=n_full) - std * std / 2.0
        elif mode in ("dpfast", "dpfast_fullbatch"):
            sens2 = sensitivity_l2(model.max_c, M_val)
            if sens2 > calib.free_threshold_fullbatch:
                std = calib.sigma2 * sens2
                shift = rng.normal(0.0, std, size=n_full) - std * std / 2.0
        log_r[full] = base + shift

    return np.log(rng.random(n)) < log_r


def estimate_kernel(
    model: EnergyModel,
    config: SamplerConfig,
    states,
    *,
    trials: int = 100_000,
    seed: int = 0,
) -> KernelEstimate:
    """Estimate the one-step kernel of the configured sampler on a discrete state set.

    The proposal is uniform over the other states. Each ordered pair gets
    ``trials`` independent single-step simulations on its own RNG stream, so
    the estimate is deterministic for a fixed seed regardless of execution
    order. At most 25 states.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    S = states.shape[0]
    if S < 2 or S > 25:
        raise ConfigurationError("state set must have between 2 and 25 states")
    config.validate()
    effective = config if config.mode != "dpfast_fullbatch" else dc_replace(config, batch_cap=0)
    calib = (
        calibrate(effective, model.C, model.max_c) if config.mode in PRIVATE_MODES else None
    )
    cdf = candidate_cdf(model)
    q = 1.0 / (S - 1)
    T_hat = np.zeros((S, S))
    stderr = np.zeros((S, S))
    streams = np.random.SeedSequence(seed).spawn(S * S)
    for i in range(S):
        for j in range(S):
            if i == j:
                continue
            rng = np.random.default_rng(streams[i * S + j])
            acc = _pair_accept_mask(
                model, states[i], states[j], effective, calib, cdf, trials, rng
            )
            a_hat = float(acc.mean())
            T_hat[i, j] = q * a_hat
            stderr[i, j] = q * math.sqrt(a_hat * (1.0 - a_hat) / trials)
        T_hat[i, i] = 1.0 - T_hat[i].sum()
    return KernelEstimate(states=states, T_hat=T_hat, stderr=stderr, trials=trials)


def exact_mh_kernel(model: EnergyModel, states) -> np.ndarray:
    """Closed-form full-batch MH kernel on a state set with uniform proposals."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    S = states.shape[0]
    energies = np.array([model.energy_total(s) for s in states])
    T = np.zeros((S, S))
    q = 1.0 / (S - 1)
    for i in range(S):
        for j in range(S):
            if i != j:
                T[i, j] = q * min(1.0, math.exp(energies[i] - energies[j]))
        T[i, i] = 1.0 - T[i].sum()
    return T


def exact_target_pmf(model: EnergyModel, states) -> np.ndarray:
    """Normalized exp(-total energy) over the state set."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    log_w = np.array([-model.energy_total(s) for s in states])
    log_w -= log_w.max()
    w = np.exp(log_w)
    return w / w.sum()


def detailed_balance_residuals(
    kernel: KernelEstimate, pi: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """|pi_x T(x,y) - pi_y T(y,x)| and its propagated MC standard error, per pair."""
    pi = np.asarray(pi, dtype=float)
    T, se = kernel.T_hat, kernel.stderr
    resid = np.abs(pi[:, None] * T - pi[None, :] * T.T)
    resid_se = np.sqrt((pi[:, None] * se) ** 2 + (pi[None, :] * se.T) ** 2)
    return resid, resid_se


def check_reversibility(kernel: KernelEstimate, pi: np.ndarray, n_se: float = 4.0) -> float:
    """Max off-diagonal balance residual in units of its standard error."""
    resid, resid_se = detailed_balance_residuals(kernel, pi)
    S = kernel.n_states
    worst = 0.0
    for i in range(S):
        for j in range(i + 1, S):
            if resid_se[i, j] > 0:
                worst = max(worst, resid[i, j] / resid_se[i, j])
            elif resid[i, j] > 0:
                worst = math.inf
    return worst


def stationary_estimate(kernel: KernelEstimate) -> np.ndarray:
    """Left Perron eigenvector of the estimated kernel, normalized to a pmf."""
    vals, vecs = np.linalg.eig(kernel.T_hat.T)
    lead = int(np.argmax(vals.real))
    v = np.abs(vecs[:, lead].real)
    return v / v.sum()


def _symmetrized(kernel: KernelEstimate, pi: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.asarray(pi, dtype=float))
    return (d[:, None] / d[None, :]) * kernel.T_hat


def spectral_gap(kernel: KernelEstimate, pi, *, reversibility_se: float = 4.0) -> float:
    """1 - (second-largest eigenvalue modulus) of the pi-symmetrized kernel.

    Refuses to report a gap when the estimate fails the detailed-balance gate,
    since eigenvalues of a biased kernel do not measure mixing of anything.
    """
    pi = np.asarray(pi, dtype=float)
    worst = check_reversibility(kernel, pi)
    if worst > reversibility_se:
        raise DiagnosticsError(
            f"kernel estimate is non-reversible ({worst:.2f} standard errors)"
        )
    vals = np.linalg.eigvals(_symmetrized(kernel, pi))
    mods = np.sort(np.abs(vals))[::-1]
    return float(1.0 - mods[1])


def spectral_gap_stderr(kernel: KernelEstimate, pi) -> float:
    """First-order MC standard error of the spectral gap estimate.

    Propagates per-entry acceptance errors through the second eigenvalue of
    the symmetrized matrix, accounting for the diagonal compensation of each
    off-diagonal perturbation.
    """
    pi = np.asarray(pi, dtype=float)
    S_mat = _symmetrized(kernel, pi)
    sym = 0.5 * (S_mat + S_mat.T)
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(np.abs(vals))[::-1]
    v = vecs[:, order[1]]
    n = kernel.n_states
    var = 0.0
    for x in range(n):
        for y in range(n):
            if x == y:
                continue
            coeff = v[x] * v[y] * math.sqrt(pi[x] / pi[y]) - v[x] * v[x]
            var += (coeff * kernel.stderr[x, y]) ** 2
    return math.sqrt(var)


def gap_ratio_lower_bound(
    eps: float, delta: float, K: int, C: float, max_c: float, A: float, lam: float
) -> float:
    """Printed lower bound on (private gap) / (plain MH gap).

    Evaluates
        (1 - Phi(216 K^2 max_c^2 log(2.5 K max_c/(delta C)) log^2(1+CA/lam) / (eps^2 C^2)))
        * exp(-C^2 A^2/lam - 2 sqrt(C^2 A^2/lam * log 2))
    with Phi the standard normal CDF. Can underflow to 0.0 in double
    precision; use :func:`log_gap_ratio_lower_bound` for comparisons there.
    """
    arg = _bound_phi_arg(eps, delta, K, C, max_c, A, lam)
    tail = 0.5 * math.erfc(arg / math.sqrt(2.0))
    return tail * math.exp(_bound_log_exp_factor(C, A, lam))


def log_gap_ratio_lower_bound(
    eps: float, delta: float, K: int, C: float, max_c: float, A: float, lam: float
) -> float:
    """log of the same bound, computed without underflow."""
    arg = _bound_phi_arg(eps, delta, K, C, max_c, A, lam)
    return float(log_ndtr(-arg)) + _bound_log_exp_factor(C, A, lam)


def _bound_phi_arg(
    eps: float, delta: float, K: int, C: float, max_c: float, A: float, lam: float
) -> float:
    if min(eps, delta, K, C, max_c, lam) <= 0 or A < 0:
        raise ConfigurationError("bound inputs must be positive (A >= 0)")
    return (
        216.0
        * K**2
        * max_c**2
        * math.log(2.5 * K * max_c / (delta * C))
        * math.log1p(C * A / lam) ** 2
        / (eps**2 * C**2)
    )


def _bound_log_exp_factor(C: float, A: float, lam: float) -> float:
    s = C * C * A * A / lam
    return -s - 2.0 * math.sqrt(s * math.log(2.0))
