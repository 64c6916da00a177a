"""Datasets, minibatches and stochastic potential gradients.

The minibatch estimate of the potential is

    U~(theta) = -(|S| / |S~|) sum_{x in S~} log p(x | theta) - log p(theta),

and its gradient is unbiased for grad U.  ``estimate_gradient_noise`` measures
the covariance of that estimate at a fixed theta.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError, ParseError

DIAGONAL_ABOVE = 100


@dataclass(frozen=True)
class Dataset:
    """Immutable indexed collection of observations (first axis indexes items)."""

    items: np.ndarray

    def __post_init__(self):
        items = np.asarray(self.items, dtype=float)
        if items.ndim == 0:
            items = items[None]
        if items.shape[0] < 1:
            raise ConfigurationError("dataset must contain at least one observation")
        items = items.copy()
        items.flags.writeable = False
        object.__setattr__(self, "items", items)

    @property
    def size(self) -> int:
        return self.items.shape[0]

    def __len__(self):
        return self.size

    def __getitem__(self, idx):
        return self.items[idx]


@dataclass(frozen=True)
class Minibatch:
    indices: np.ndarray
    scale: float

    @classmethod
    def of(cls, indices, n_total):
        indices = np.asarray(indices, dtype=np.int64)
        if len(np.unique(indices)) != len(indices):
            raise ConfigurationError("minibatch indices must be distinct")
        if len(indices) == 0:
            raise ConfigurationError("minibatch must be nonempty")
        return cls(indices, n_total / len(indices))

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class NoiseEstimate:
    """Empirical covariance ``V`` of the stochastic gradient at one theta."""

    matrix: np.ndarray
    n_samples: int
    diagonal: bool = False

    @property
    def dense(self) -> np.ndarray:
        return np.diag(self.matrix) if self.diagonal else self.matrix


def sample_minibatch(dataset: Dataset, m: int, rng) -> Minibatch:
    """Uniform subset of ``m`` distinct indices."""
    n = dataset.size
    if not 1 <= m <= n:
        raise ConfigurationError(f"minibatch size must lie in [1, {n}], got {m}")
    if m == n:
        return Minibatch(np.arange(n), 1.0)
    return Minibatch(np.sort(rng.choice(n, size=m, replace=False)), n / m)


class GaussianLikelihood:
    """``x ~ N(theta, sigma^2 I)`` with an optional Gaussian prior ``N(0, tau^2 I)``.

    ``prior_scale=None`` gives a flat prior.
    """

    def __init__(self, sigma=1.0, prior_scale=None):
        self.sigma = float(sigma)
        self.prior_scale = prior_scale

    def grad_log_lik(self, theta, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return (x - theta) / self.sigma**2

    def grad_log_prior(self, theta):
        if self.prior_scale is None:
            return np.zeros_like(theta)
        return -theta / self.prior_scale**2

    def potential(self, theta, dataset: Dataset):
        x = dataset.items if dataset.items.ndim > 1 else dataset.items[:, None]
        u = 0.5 * np.sum((x - theta) ** 2) / self.sigma**2
        if self.prior_scale is not None:
            u += 0.5 * np.sum(theta**2) / self.prior_scale**2
        return u


def stochastic_potential_grad(likelihood, theta, dataset: Dataset, minibatch: Minibatch):
    """``grad U~ = -scale * sum grad log p(x | theta) - grad log p(theta)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    per_item = np.asarray(likelihood.grad_log_lik(theta, dataset[minibatch.indices]), dtype=float)
    bad = ~np.all(np.isfinite(per_item.reshape(len(minibatch.indices), -1)), axis=1)
    if bad.any():
        raise NumericError(f"non-finite log-likelihood gradient for item {int(minibatch.indices[np.argmax(bad)])}")
    return -minibatch.scale * per_item.sum(axis=0) - likelihood.grad_log_prior(theta)


def full_potential_grad(likelihood, theta, dataset: Dataset):
    return stochastic_potential_grad(likelihood, theta, dataset, Minibatch(np.arange(dataset.size), 1.0))


def estimate_gradient_noise(likelihood, theta, dataset: Dataset, m: int, trials: int, rng,
                            diagonal: bool | None = None) -> NoiseEstimate:
    """Empirical covariance of ``trials`` independent minibatch gradients at ``theta``.

    Dense by default; diagonal when ``diagonal`` is set or ``d > 100``.
    """
    if trials < 2:
        raise ConfigurationError("noise estimation needs at least two trials")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = theta.size
    if diagonal is None:
        diagonal = d > DIAGONAL_ABOVE
    if m == dataset.size:
        return NoiseEstimate(np.zeros(d) if diagonal else np.zeros((d, d)), trials, diagonal)
    draws = np.stack([stochastic_potential_grad(likelihood, theta, dataset, sample_minibatch(dataset, m, rng))
                      for _ in range(trials)]).reshape(trials, d)
    if diagonal:
        return NoiseEstimate(draws.var(axis=0, ddof=1), trials, True)
    cov = np.atleast_2d(np.cov(draws, rowvar=False))
    return NoiseEstimate(0.5 * (cov + cov.T), trials, False)


@dataclass
class MinibatchGradient:
    """Gradient oracle drawing a fresh minibatch at each call."""

    likelihood: object
    dataset: Dataset
    m: int

    def __call__(self, theta, rng):
        return stochastic_potential_grad(self.likelihood, theta, self.dataset,
                                         sample_minibatch(self.dataset, self.m, rng))


@dataclass
class GaussianGradientNoise:
    """Synthetic stochastic gradient ``grad U(theta) + N(0, V)``.

    Stands in for minibatch noise on targets that have no dataset.  ``V`` is a
    scalar, a diagonal or a full covariance.
    """

    model: object
    variance: object = 1.0
    _chol: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.variance, dtype=float)
        d = self.model.dim
        if v.ndim == 0:
            v = np.full(d, float(v))
        if v.ndim == 1:
            if v.shape != (d,) or np.any(v < 0):
                raise ConfigurationError("gradient-noise variance must be non-negative of length dim")
            self._scale = np.sqrt(v)
        else:
            if v.shape != (d, d):
                raise ConfigurationError("gradient-noise covariance must be dim x dim")
            self._chol = np.linalg.cholesky(v)
            self._scale = None
        self.covariance = np.diag(v) if v.ndim == 1 else v

    @property
    def dim(self):
        return self.model.dim

    def noise(self, normals):
        if self._chol is not None:
            return normals @ self._chol.T
        return self._scale * normals

    def batch(self, theta, normals):
        """Noisy gradients for a stack of parameters given standard normals of the same shape."""
        return self.model.grad_potential(theta) + self.noise(normals)

    def __call__(self, theta, rng):
        theta = np.asarray(theta, dtype=float)
        return self.batch(theta, rng.standard_normal(theta.shape))


def load_dataset(path) -> Dataset:
    """Read a whitespace- or comma-separated numeric file, one observation per row."""
    text = Path(path).read_text()
    rows = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = next(csv.reader([line])) if "," in line else line.split()
        try:
            rows.append([float(v) for v in fields])
        except ValueError as exc:
            raise ParseError(f"non-numeric value ({exc})", lineno) from None
        if len(rows[-1]) != len(rows[0]):
            raise ParseError(f"expected {len(rows[0])} columns, got {len(rows[-1])}", lineno)
    if not rows:
        raise ConfigurationError(f"{path} contains no observations")
    items = np.asarray(rows)
    return Dataset(items[:, 0] if items.shape[1] == 1 else items)
