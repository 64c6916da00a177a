"""State vectors, energy models and the synthetic target distributions.

Every sampler works on an augmented state ``z`` made of named blocks:
``theta`` (the parameters of interest), an optional momentum ``r`` and an
optional scalar thermostat ``xi``.  Internally the engine uses flat arrays of
shape ``(..., d)``; :class:`Layout` maps block names to slices of that array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError

BLOCK_ORDER = ("theta", "r", "xi")


@dataclass(frozen=True)
class Layout:
    """Ordered block specification ``((name, size), ...)``."""

    blocks: tuple

    def __post_init__(self):
        names = [name for name, _ in self.blocks]
        if len(set(names)) != len(names):
            raise DimensionError(f"duplicate block names in {names}")
        if "theta" not in names:
            raise DimensionError("layout must contain a theta block")
        for name, size in self.blocks:
            if name not in BLOCK_ORDER:
                raise DimensionError(f"unknown block {name!r}")
            if int(size) < 1:
                raise DimensionError(f"block {name!r} must be non-empty")
        offsets = np.cumsum([0] + [int(s) for _, s in self.blocks])
        slices = {name: slice(int(a), int(b)) for (name, _), a, b in zip(self.blocks, offsets[:-1], offsets[1:])}
        object.__setattr__(self, "_slices", slices)

    @property
    def dim(self) -> int:
        return int(sum(size for _, size in self.blocks))

    @property
    def names(self):
        return tuple(name for name, _ in self.blocks)

    def slice(self, name) -> slice:
        return self._slices[name]

    def size(self, name) -> int:
        s = self._slices[name]
        return s.stop - s.start

    def __contains__(self, name):
        return name in self._slices


@dataclass
class StateVector:
    """Augmented state ``z`` stored as an ordered mapping of named blocks."""

    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.blocks = {name: np.atleast_1d(np.asarray(v, dtype=float)).copy() for name, v in self.blocks.items()}
        # Validates names and sizes.
        self.layout

    @classmethod
    def of(cls, theta, r=None, xi=None) -> "StateVector":
        blocks = {"theta": theta}
        if r is not None:
            blocks["r"] = r
        if xi is not None:
            blocks["xi"] = xi
        return cls(blocks)

    @property
    def layout(self) -> Layout:
        return Layout(tuple((name, v.size) for name, v in self.blocks.items()))

    @property
    def dim(self) -> int:
        return sum(v.size for v in self.blocks.values())

    def __getitem__(self, name):
        return self.blocks[name]

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.blocks.values()])

    @classmethod
    def unflatten(cls, layout: Layout, v) -> "StateVector":
        v = np.asarray(v, dtype=float)
        if v.shape != (layout.dim,):
            raise DimensionError(f"expected vector of length {layout.dim}, got shape {v.shape}")
        return cls({name: v[layout.slice(name)] for name in layout.names})

    def copy(self) -> "StateVector":
        return StateVector({k: v.copy() for k, v in self.blocks.items()})


def _fd_gradient(fn, x, rel_step=1e-5):
    """Central finite-difference gradient of a scalar function, batched over leading axes."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.shape[-1]):
        h = rel_step * np.maximum(1.0, np.abs(x[..., i]))
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += h
        xm[..., i] -= h
        g[..., i] = (fn(xp) - fn(xm)) / (2 * h)
    return g


@dataclass(frozen=True)
class EnergyModel:
    """Hamiltonian ``H(z) = U(theta) + g(theta, r) [+ thermostat term]``.

    ``potential`` and ``potential_grad`` act on arrays of shape ``(..., dim)``.
    When ``momentum`` is set the kinetic coupling ``g = r^T M^{-1} r / 2`` is
    attached; ``thermostat`` (the constant ``A``) adds a scalar ``xi`` block
    with energy ``d/2 (xi - A)^2``.
    """

    potential: Callable
    dim: int
    potential_grad: Callable | None = None
    momentum: bool = False
    mass: np.ndarray | None = None
    thermostat: float | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.thermostat is not None and not self.momentum:
            raise ConfigurationError("a thermostat requires a momentum block")
        if self.mass is not None:
            mass = np.atleast_2d(np.asarray(self.mass, dtype=float))
            if mass.shape == (1, 1) and self.dim > 1:
                mass = mass[0, 0] * np.eye(self.dim)
            if mass.shape != (self.dim, self.dim):
                raise DimensionError(f"mass matrix must be {self.dim}x{self.dim}")
            object.__setattr__(self, "mass", mass)
            object.__setattr__(self, "_mass_inv", np.linalg.inv(mass))
        else:
            object.__setattr__(self, "_mass_inv", None)
        blocks = [("theta", self.dim)]
        if self.momentum:
            blocks.append(("r", self.dim))
        if self.thermostat is not None:
            blocks.append(("xi", 1))
        object.__setattr__(self, "_layout", Layout(tuple(blocks)))

    @property
    def layout(self) -> Layout:
        return self._layout

    @property
    def mass_inv(self):
        return self._mass_inv

    def with_momentum(self, mass=None) -> "EnergyModel":
        return EnergyModel(self.potential, self.dim, self.potential_grad, True, mass, None, self.name)

    def with_thermostat(self, A: float) -> "EnergyModel":
        return EnergyModel(self.potential, self.dim, self.potential_grad, True, None, float(A), self.name)

    def potential_only(self) -> "EnergyModel":
        return EnergyModel(self.potential, self.dim, self.potential_grad, name=self.name)

    def grad_potential(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.potential_grad is None:
            return _fd_gradient(self.potential, theta)
        return np.asarray(self.potential_grad(theta), dtype=float)

    def _flat(self, z):
        if isinstance(z, StateVector):
            if z.layout != self.layout:
                raise DimensionError(f"state layout {z.layout.blocks} does not match model {self.layout.blocks}")
            return z.flatten()
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.layout.dim:
            raise DimensionError(f"state has dimension {z.shape[-1]}, model expects {self.layout.dim}")
        return z

    def kinetic(self, r):
        if self._mass_inv is None:
            return 0.5 * np.sum(r * r, axis=-1)
        return 0.5 * np.einsum("...i,ij,...j->...", r, self._mass_inv, r)

    def energy(self, z):
        z = self._flat(z)
        lay = self.layout
        h = np.asarray(self.potential(z[..., lay.slice("theta")]), dtype=float)
        if self.momentum:
            h = h + self.kinetic(z[..., lay.slice("r")])
        if self.thermostat is not None:
            xi = z[..., lay.slice("xi")][..., 0]
            h = h + 0.5 * self.dim * (xi - self.thermostat) ** 2
        return h

    def grad(self, z, theta_grad=None):
        """Flat gradient of ``H``; ``theta_grad`` substitutes the potential gradient (e.g. a noisy one)."""
        z = self._flat(z)
        lay = self.layout
        out = np.empty_like(z)
        th = lay.slice("theta")
        out[..., th] = self.grad_potential(z[..., th]) if theta_grad is None else theta_grad
        if self.momentum:
            r = z[..., lay.slice("r")]
            out[..., lay.slice("r")] = r if self._mass_inv is None else r @ self._mass_inv.T
        if self.thermostat is not None:
            xs = lay.slice("xi")
            out[..., xs] = self.dim * (z[..., xs] - self.thermostat)
        return out


def energy(model: EnergyModel, z) -> float:
    return float(model.energy(z))


def grad_energy(model: EnergyModel, z: StateVector) -> StateVector:
    flat = model.grad(z)
    lay = model.layout
    for name in lay.names:
        block = flat[lay.slice(name)]
        if not np.all(np.isfinite(block)):
            raise NumericError(f"non-finite gradient in block {name!r}")
    return StateVector.unflatten(lay, flat)


# -- synthetic targets ------------------------------------------------------

def _one_peak(t):
    return 0.5 * t[..., 0] ** 2


def _one_peak_grad(t):
    return t.copy()


def _two_peaks(t):
    x = t[..., 0]
    return x**4 - 2 * x**2


def _two_peaks_grad(t):
    x = t[..., 0]
    return (4 * x**3 - 4 * x)[..., None]


def _correlated(t):
    a, b = t[..., 0], t[..., 1]
    return a**4 / 10 + (4 * (b + 1.2) - a**2) ** 2 / 2


def _correlated_grad(t):
    a, b = t[..., 0], t[..., 1]
    w = 4 * (b + 1.2) - a**2
    return np.stack([0.4 * a**3 - 2 * a * w, 4 * w], axis=-1)


class _Gaussian:
    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (self.mean.size, self.mean.size):
            raise ConfigurationError("gaussian-nd covariance shape does not match mean")
        self.cov = cov
        self.precision = np.linalg.inv(cov)

    def potential(self, t):
        d = t - self.mean
        return 0.5 * np.einsum("...i,ij,...j->...", d, self.precision, d)

    def grad(self, t):
        return (t - self.mean) @ self.precision.T


SYNTHETIC_TARGETS = ("one-peak", "two-peaks", "correlated-2d", "gaussian-nd")


def make_synthetic_target(name: str, params: dict | None = None, *, momentum=False, mass=None,
                          thermostat=None) -> EnergyModel:
    """Build one of the named synthetic targets.

    ``gaussian-nd`` takes ``params={"mean": ..., "cov": ...}`` (defaults to a
    standard normal of dimension ``params["dim"]``, itself defaulting to 1).
    """
    params = dict(params or {})
    if name == "one-peak":
        model = EnergyModel(_one_peak, 1, _one_peak_grad, name=name)
    elif name == "two-peaks":
        model = EnergyModel(_two_peaks, 1, _two_peaks_grad, name=name)
    elif name == "correlated-2d":
        model = EnergyModel(_correlated, 2, _correlated_grad, name=name)
    elif name == "gaussian-nd":
        dim = int(params.pop("dim", np.size(params.get("mean", [0.0]))))
        mean = params.pop("mean", np.zeros(dim))
        cov = params.pop("cov", np.eye(np.size(mean)))
        g = _Gaussian(mean, cov)
        model = EnergyModel(g.potential, g.mean.size, g.grad, name=name)
    else:
        raise ConfigurationError(f"unknown synthetic target {name!r}; expected one of {SYNTHETIC_TARGETS}")
    if params:
        raise ConfigurationError(f"unused parameters for {name}: {sorted(params)}")
    if thermostat is not None:
        return model.with_thermostat(thermostat)
    if momentum or mass is not None:
        return model.with_momentum(mass)
    return model
