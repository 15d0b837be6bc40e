"""Sensitivities, Gaussian-noise calibration, and privacy accounting.

Per-iteration noise scales follow the two-branch design: a minibatch branch
whose log-ratio sensitivity is 2*log(1 + C*M/lambda), and a full-batch
branch with sensitivity 2*max_c*M. Either branch skips its noise entirely
when the sensitivity already sits under the branch's free threshold, because
the accept/reject randomness then bounds the neighboring-dataset probability
ratio on its own.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigurationError

# Simplified amplification bounds are only provable in a restricted regime;
# outside it the exact expressions are still returned but not cross-checked.
_DELTA_CHECK_LIMIT = 1.25


def sensitivity_l1(C: float, M_val: float, lam: float) -> float:
    """Worst-case change of the minibatch log-ratio when one datum changes."""
    if lam <= 0:
        raise ConfigurationError("lambda must be positive")
    if C <= 0:
        raise ConfigurationError("C must be positive")
    if M_val < 0:
        raise ConfigurationError("M must be nonnegative")
    return 2.0 * math.log1p(C * M_val / lam)

def sensitivity_l2(max_c: float, M_val: float) -> float:
    """Worst-case change of the full-batch energy difference when one datum changes."""
    if max_c <= 0:
        raise ConfigurationError("max_c must be positive")
    if M_val < 0:
        raise ConfigurationError("M must be nonnegative")
    return 2.0 * max_c * M_val


@dataclass(frozen=True)
class NoiseCalibration:
    """Noise scales and privacy-for-free thresholds for one (epsilon, delta, K) setting.

    ``sigma1``/``sigma2`` multiply the branch sensitivity to give the noise
    standard deviation on the minibatch/full-batch branch. ``batch_cap == 0``
    disables the minibatch branch entirely (sigma1 = 0, threshold = inf).
    """

    sigma1: float
    sigma2: float
    free_threshold_minibatch: float
    free_threshold_fullbatch: float
    epsilon: float
    delta: float
    batch_cap: int
    C: float
    max_c: float


def calibrate(config, C: float, max_c: float) -> NoiseCalibration:
    """Noise scales for a sampler config against a model's (C, max_c).

    ``config`` needs ``epsilon``, ``delta`` and ``batch_cap`` attributes.
    """
    eps = float(config.epsilon)
    delta = float(config.delta)
    K = int(config.batch_cap)
    if not 0.0 < eps <= 1.0:
        raise ConfigurationError("epsilon must lie in (0, 1]")
    if not 0.0 < delta < 1.0:
        raise ConfigurationError("delta must lie in (0, 1)")
    if C <= 0 or max_c <= 0:
        raise ConfigurationError("model constants C and max_c must be positive")
    if K < 0:
        raise ConfigurationError("batch cap must be >= 0")
    sigma2 = math.sqrt(2.0 * math.log(1.25 / delta)) / eps
    if K == 0:
        sigma1 = 0.0
        free_mb = math.inf
    else:
        log_arg = 2.5 * K * max_c / (delta * C)
        if log_arg <= 1.0:
            raise ConfigurationError(
                "noise scale undefined: 2.5*K*max_c must exceed delta*C"
            )
        sigma1 = 6.0 * K * max_c * math.sqrt(2.0 * math.log(log_arg)) / (eps * C)
        free_mb = eps * C / (6.0 * K * max_c)
    return NoiseCalibration(
        sigma1=sigma1,
        sigma2=sigma2,
        free_threshold_minibatch=free_mb,
        free_threshold_fullbatch=eps,
        epsilon=eps,
        delta=delta,
        batch_cap=K,
        C=float(C),
        max_c=float(max_c),
    )


def amplify_simplified(eps: float, delta: float, p: float, K: int) -> tuple[float, float]:
    """The loose closed-form amplification bounds (6*K*p*eps, 2*K*p*delta)."""
    return 6.0 * K * p * eps, 2.0 * K * p * delta


def amplify_subsampled(eps: float, delta: float, p: float, K: int) -> tuple[float, float]:
    """Exact per-iteration privacy after K-capped sampling with max inclusion prob p.

    Returns the pair

        eps' = K * log((1-p+p*e^eps) / (1-p+p*e^-eps))
        delta' = (delta / (e^eps - 1)) * ((1-p+p*e^eps)^K - 1)

    and cross-checks them against the simplified bounds where those are valid
    (eps <= 1 for the eps bound; additionally K*p*(e^eps-1) <= 1.25 for the
    delta bound, outside of which the simplification is genuinely false).
    """
    if not 0.0 < p <= 1.0:
        raise ConfigurationError("sampling probability p must lie in (0, 1]")
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    if delta < 0:
        raise ConfigurationError("delta must be nonnegative")
    grow = 1.0 - p + p * math.exp(eps)
    shrink = 1.0 - p + p * math.exp(-eps)
    eps_exact = K * math.log(grow / shrink)
    delta_exact = delta / (math.exp(eps) - 1.0) * (grow**K - 1.0)
    eps_simple, delta_simple = amplify_simplified(eps, delta, p, K)
    if eps <= 1.0 and eps_exact > eps_simple * (1.0 + 1e-12):
        raise AssertionError("exact amplified eps exceeded its simplified bound")
    if (
        eps <= 1.0
        and K * p * (math.exp(eps) - 1.0) <= _DELTA_CHECK_LIMIT
        and delta_exact > delta_simple * (1.0 + 1e-12)
    ):
        raise AssertionError("exact amplified delta exceeded its simplified bound")
    return eps_exact, delta_exact


def compose_advanced(
    eps_step: float, delta_step: float, T: int, delta_slack: float
) -> tuple[float, float]:
    """Privacy of T adaptive compositions under advanced composition.

    eps_total = sqrt(2*T*log(1/delta_slack))*eps_step + T*eps_step*(e^eps_step - 1)
    delta_total = T*delta_step + delta_slack
    """
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    if not 0.0 < delta_slack < 1.0:
        raise ConfigurationError("delta_slack must lie in (0, 1)")
    eps_total = math.sqrt(2.0 * T * math.log(1.0 / delta_slack)) * eps_step + T * eps_step * (
        math.expm1(eps_step)
    )
    return eps_total, T * delta_step + delta_slack


@dataclass
class PrivacyLedger:
    """Per-iteration privacy bookkeeping with running composed totals.

    Every recorded step is charged the configured per-iteration (eps, delta)
    regardless of which branch ran; the free branches are what make the
    iteration private at that level, not a reason to charge less. Rows carry
    (iter, eps_step, delta_step, eps_total, delta_total).
    """

    eps_step: float
    delta_step: float
    p: float | None = None
    batch_cap: int | None = None
    delta_slack: float | None = None
    rows: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.rows)

    def totals(self, T: int | None = None) -> tuple[float, float]:
        if T is None:
            T = self.T
        if T == 0 or self.eps_step == 0.0:
            return 0.0, 0.0
        slack = self.delta_slack if self.delta_slack is not None else T * self.delta_step
        return compose_advanced(self.eps_step, self.delta_step, T, slack)

    def record(self, record) -> "PrivacyLedger":
        eps_t, delta_t = self.totals(self.T + 1)
        self.rows.append((record.iter, self.eps_step, self.delta_step, eps_t, delta_t))
        return self

    def amplified_exact(self, eps_mech: float, delta_mech: float) -> tuple[float, float]:
        """Exact subsampling amplification at this ledger's (p, K)."""
        if self.p is None or self.batch_cap is None:
            raise ConfigurationError("ledger has no amplification inputs (p, batch_cap)")
        return amplify_subsampled(eps_mech, delta_mech, self.p, self.batch_cap)


def ledger_record(ledger: PrivacyLedger, record) -> PrivacyLedger:
    """Append one completed step to the ledger and refresh composed totals."""
    return ledger.record(record)
