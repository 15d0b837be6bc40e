"""Bounded-energy targets for minibatch Metropolis-Hastings.

A model bundles a dataset with per-datum energies U_i(theta), per-datum
Lipschitz constants c_i bounding |U_i(theta) - U_i(theta')| by
c_i * M(theta, theta'), and a box domain whose Euclidean diameter bounds M.
All energies and constants are divided by the model temperature, so the
bound survives tempering unchanged.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataValidationError, DpmhError

MIXTURE_TRUNCATION = (-3.0, 3.0)
_MAX_REJECTION_ROUNDS = 10**6


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box; proposals outside it are rejected by the samplers."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float))
        high = np.atleast_1d(np.asarray(self.high, dtype=float))
        if low.shape != high.shape or low.ndim != 1:
            raise ConfigurationError("domain bounds must be 1-D and equally shaped")
        if not np.all(low < high):
            raise ConfigurationError("domain low bounds must be strictly below high bounds")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return self.low.size

    @property
    def diameter(self) -> float:
        """Euclidean diameter; the global proposal-distance bound A."""
        return float(np.linalg.norm(self.high - self.low))

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.low) and np.all(theta <= self.high))

    def center(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        shape = (self.dim,) if n is None else (n, self.dim)
        return rng.uniform(self.low, self.high, size=shape)


class EnergyModel:
    """Base class: dataset + tempered per-datum energies and Lipschitz constants.

    Subclasses implement :meth:`energy`. Construction fixes the tempered
    constants ``c`` (= raw constants / temperature), their sum ``C`` and
    maximum ``max_c``. Instances are immutable after construction and safe
    to share across concurrently running chains.
    """

    dim: int

    def __init__(self, c_raw, temperature: float, domain: BoxDomain | None):
        if temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        c_raw = np.asarray(c_raw, dtype=float)
        if c_raw.ndim != 1 or c_raw.size < 1:
            raise DataValidationError("model needs at least one datum")
        if not np.all(np.isfinite(c_raw)) or np.any(c_raw <= 0):
            raise DataValidationError("every per-datum constant c_i must be finite and > 0")
        self.temperature = float(temperature)
        self.domain = domain
        self.c = c_raw / self.temperature
        self.C = float(self.c.sum())
        self.max_c = float(self.c.max())

    @property
    def n_data(self) -> int:
        return self.c.size

    def energy(self, theta, idx=None) -> np.ndarray:
        """Tempered energies U_i(theta)/temperature for ``idx`` (all data if None)."""
        raise NotImplementedError

    def energy_total(self, theta) -> float:
        return float(self.energy(theta).sum())

    def energy_diff(self, theta, theta_prime, idx=None) -> np.ndarray:
        """Per-datum U_i(theta) - U_i(theta_prime), tempered."""
        return self.energy(theta, idx) - self.energy(theta_prime, idx)

    def distance(self, theta, theta_prime) -> float:
        """Proposal distance M(theta, theta'); Euclidean by default."""
        theta = self._check_theta(theta)
        theta_prime = self._check_theta(theta_prime)
        return float(np.linalg.norm(theta - theta_prime))

    def capacity_residual(self) -> float:
        """|fsum(c) - C|; must stay within 1e-9 * C."""
        return abs(math.fsum(self.c.tolist()) - self.C)

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ConfigurationError(
                f"theta has shape {theta.shape}, model dimension is {self.dim}"
            )
        return theta


def energy_diff_sum(model: EnergyModel, theta, theta_prime) -> float:
    """Sum of tempered energy differences sum_i (U_i(theta) - U_i(theta')).

    The acceptance ratio of a full-batch step is exp of this value times
    the proposal ratio.
    """
    theta = model._check_theta(theta)
    theta_prime = model._check_theta(theta_prime)
    return float(np.sum(model.energy_diff(theta, theta_prime)))


def mixture_lipschitz_constants(x, sigma_x2: float) -> np.ndarray:
    """Per-datum gradient bound for the two-component location mixture."""
    ax = np.abs(np.asarray(x, dtype=float))
    return np.hypot((2.0 * ax + 9.0) / sigma_x2, (ax + 6.0) / sigma_x2)


class GaussianMixtureModel(EnergyModel):
    """Equal-weight mixture of N(theta1, s2) and N(theta1+theta2, s2), data truncated.

    The per-datum energy is the negative log likelihood of one observation;
    the prior is flat on the declared box domain.
    """

    dim = 2

    def __init__(
        self,
        data,
        sigma_x2: float = 2.0,
        temperature: float = 1.0,
        domain: BoxDomain | None = None,
        truncation: tuple[float, float] = MIXTURE_TRUNCATION,
    ):
        data = np.asarray(data, dtype=float)
        if data.ndim != 1:
            raise DataValidationError("mixture data must be a 1-D array of observations")
        if sigma_x2 <= 0:
            raise ConfigurationError("sigma_x2 must be positive")
        lo, hi = float(truncation[0]), float(truncation[1])
        if data.size and (data.min() < lo or data.max() > hi):
            raise DataValidationError(
                f"observations must lie in the truncation interval [{lo}, {hi}]"
            )
        super().__init__(mixture_lipschitz_constants(data, sigma_x2), temperature, domain)
        self.data = data
        self.sigma_x2 = float(sigma_x2)
        self.truncation = (lo, hi)
        self._log_norm = math.log(2.0) + 0.5 * math.log(2.0 * math.pi * self.sigma_x2)

    def energy(self, theta, idx=None) -> np.ndarray:
        theta = self._check_theta(theta)
        x = self.data if idx is None else self.data[idx]
        t1, t2 = theta
        a = -((x - t1) ** 2) / (2.0 * self.sigma_x2)
        b = -((x - t1 - t2) ** 2) / (2.0 * self.sigma_x2)
        return (self._log_norm - np.logaddexp(a, b)) / self.temperature


def generate_mixture_data(
    n: int,
    seed: int,
    *,
    theta1: float = 0.0,
    theta2: float = 1.0,
    sigma_x2: float = 2.0,
    temperature: float = 1.0,
    domain: BoxDomain | None = None,
    truncation: tuple[float, float] = MIXTURE_TRUNCATION,
) -> GaussianMixtureModel:
    """Draw n observations from the mixture, rejection-sampled into the truncation box.

    Deterministic for a fixed seed. Each round draws one candidate per
    still-unfilled slot; a slot exceeding the round cap raises.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    sd = math.sqrt(sigma_x2)
    lo, hi = truncation
    out = np.empty(n)
    remaining = n
    rounds = 0
    while remaining:
        rounds += 1
        if rounds > _MAX_REJECTION_ROUNDS:
            raise DpmhError("rejection sampling failed to terminate")
        means = np.where(rng.random(remaining) < 0.5, theta1, theta1 + theta2)
        draws = means + sd * rng.standard_normal(remaining)
        ok = (draws >= lo) & (draws <= hi)
        n_ok = int(ok.sum())
        out[n - remaining : n - remaining + n_ok] = draws[ok]
        remaining -= n_ok
    return GaussianMixtureModel(
        out, sigma_x2=sigma_x2, temperature=temperature, domain=domain, truncation=truncation
    )


class LogisticRegressionModel(EnergyModel):
    """Binary logistic regression; energies are per-datum negative log likelihoods."""

    def __init__(self, features, labels, temperature: float = 1.0, domain: BoxDomain | None = None):
        X = np.asarray(features, dtype=float)
        y = np.asarray(labels, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DataValidationError("features must be a non-empty 2-D matrix")
        if y.shape != (X.shape[0],):
            raise DataValidationError("labels must match the number of feature rows")
        if not np.all(np.isfinite(X)):
            raise DataValidationError("features must be finite")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DataValidationError("labels must be 0 or 1")
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0.0):
            bad = int(np.flatnonzero(norms == 0.0)[0])
            raise DataValidationError(
                f"feature row {bad} has zero norm; c_i must be > 0"
            )
        super().__init__(norms, temperature, domain)
        self.features = X
        self.labels = y
        self.dim = X.shape[1]

    def energy(self, theta, idx=None) -> np.ndarray:
        theta = self._check_theta(theta)
        X = self.features if idx is None else self.features[idx]
        y = self.labels if idx is None else self.labels[idx]
        z = X @ theta
        # -y log h(z) - (1-y) log h(-z) == softplus((1-2y) z)
        return np.logaddexp(0.0, (1.0 - 2.0 * y) * z) / self.temperature


def load_feature_csv(
    path, *, temperature: float = 1.0, domain: BoxDomain | None = None
) -> LogisticRegressionModel:
    """Load a feature CSV: header row, numeric feature columns, binary label last.

    Raises a parse error naming the offending line for malformed rows, and a
    validation error for non-binary labels or zero-norm feature rows.
    """
    rows = []
    labels = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: empty file, expected a header row") from None
        width = len(header)
        if width < 2:
            raise DataValidationError(f"{path}: need at least one feature column and a label")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataValidationError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(row)}"
                )
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DataValidationError(f"{path}: line {lineno}: {exc}") from None
            label = values[-1]
            if label not in (0.0, 1.0):
                raise DataValidationError(
                    f"{path}: line {lineno}: label must be 0 or 1, got {row[-1]!r}"
                )
            feats = values[:-1]
            if not any(feats):
                raise DataValidationError(
                    f"{path}: line {lineno}: zero feature vector; c_i must be > 0"
                )
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataValidationError(f"{path}: no data rows")
    return LogisticRegressionModel(
        np.array(rows), np.array(labels), temperature=temperature, domain=domain
    )


def probe_energy_bound(model: EnergyModel, n_probes: int = 1000, seed: int = 0) -> float:
    """Largest violation of |U_i(a) - U_i(b)| <= c_i * M(a, b) over random probes.

    Samples probe pairs uniformly from the model domain; returns the max of
    |diff| - c_i*M, which should not exceed ~1e-9 for a well-posed model.
    """
    if model.domain is None:
        raise ConfigurationError("probe needs a declared domain")
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(n_probes):
        a = model.domain.sample(rng)
        b = model.domain.sample(rng)
        i = int(rng.integers(model.n_data))
        m = model.distance(a, b)
        diff = float(model.energy_diff(a, b, np.array([i]))[0])
        worst = max(worst, abs(diff) - model.c[i] * m)
    return worst


def probe_distance_bound(model: EnergyModel, n_probes: int = 1000, seed: int = 0) -> float:
    """Largest M(a, b) - A over random in-domain probe pairs (<= 0 when A is the diameter)."""
    if model.domain is None:
        raise ConfigurationError("probe needs a declared domain")
    rng = np.random.default_rng(seed)
    A = model.domain.diameter
    worst = -math.inf
    for _ in range(n_probes):
        m = model.distance(model.domain.sample(rng), model.domain.sample(rng))
        worst = max(worst, m - A)
    return worst
