"""The sampler zoo, each expressed as an ``(H, D, Q)`` triple.

Corrected samplers are returned as :class:`~sgmcmc.engine.SamplerSpec`.  The
two naive controls (HMC with noisy gradients, and preconditioned SGHMC without
the metric-derivative term) are returned as :class:`RawUpdater`, which runs
the same arithmetic but is deliberately not a ``SamplerSpec``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .engine import (CURL, DIFFUSION, MatrixField, NoiseCompensation, SamplerSpec, StepSchedule, ValidationReport,
                     advance, noisy_grad_h)
from .errors import ConfigurationError, DomainError, StepError
from .state import EnergyModel, StateVector, _fd_gradient

DEFAULT_RESAMPLE = 50
DEFAULT_EPSILON = {"hmc": 0.1, "sgld": 0.01, "naive-sghmc": 0.1, "sghmc": 0.1, "sgrld": 0.01,
                   "sgnht": 0.01, "naive-sgrhmc": 0.02, "gsgrhmc": 0.02}
PRESETS = tuple(DEFAULT_EPSILON)
CAST_TOL = 1e-3
POSITIVE_FLOOR = 1e-10


# -- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class MetricSpec:
    """Riemannian metric ``G(theta)`` given through its inverse.

    ``inv``/``inv_sqrt`` return diagonals ``(..., d)`` for diagonal metrics and
    matrices ``(..., d, d)`` otherwise.  ``div_inv`` and ``div_inv_sqrt`` return
    the row sums ``sum_j d/dtheta_j (.)_ij``.
    """

    kind: str
    dim: int
    diagonal: bool = True
    params: dict = field(default_factory=dict)
    fn: Callable | None = None
    model: EnergyModel | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "fisher-diagonal-lda", "potential-level", "user-fn"):
            raise ConfigurationError(f"unknown metric kind {self.kind!r}")
        if self.kind == "potential-level" and self.model is None:
            raise ConfigurationError("potential-level metric needs the target model")
        if self.kind == "user-fn" and self.fn is None:
            raise ConfigurationError("user-fn metric needs fn")

    @classmethod
    def identity(cls, dim):
        return cls("identity", dim)

    @classmethod
    def fisher_lda(cls, dim):
        return cls("fisher-diagonal-lda", dim)

    @classmethod
    def potential_level(cls, model, D=1.5, C=0.5, delta=0.05):
        """``G^{-1} = D sqrt(|U(theta) + C|) I``, with ``|s|`` smoothed to ``sqrt(s^2 + delta^2)``.

        The smoothing keeps the metric positive definite where ``U + C``
        crosses zero; ``delta=0`` recovers the unsmoothed form.
        """
        if D <= 0 or delta < 0:
            raise ConfigurationError("potential-level metric needs D > 0 and delta >= 0")
        return cls("potential-level", model.dim, params={"D": float(D), "C": float(C), "delta": float(delta)},
                   model=model)

    @classmethod
    def user(cls, fn, dim, diagonal=True):
        return cls("user-fn", dim, diagonal=diagonal, fn=fn)

    # Scalar factor of the potential-level metric and its gradient.  One step
    # asks for it several times at the same theta, so the last result is kept.
    def _level(self, theta):
        key = (theta.shape, theta.tobytes())
        cached = self.__dict__.get("_last")
        if cached is not None and cached[0] == key:
            return cached[1]
        out = self._level_eval(theta)
        object.__setattr__(self, "_last", (key, out))
        return out

    def _level_eval(self, theta):
        p = self.params
        s = np.asarray(self.model.potential(theta), dtype=float) + p["C"]
        a = s * s + p["delta"] ** 2
        g = p["D"] * a**0.25
        with np.errstate(divide="ignore", invalid="ignore"):
            dg = (0.5 * p["D"] * s * a ** (-0.75))[..., None] * self.model.grad_potential(theta)
        return g, dg

    def inv(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "identity":
            return np.ones(theta.shape)
        if self.kind == "fisher-diagonal-lda":
            return theta.copy()
        if self.kind == "potential-level":
            g, _ = self._level(theta)
            return np.broadcast_to(g[..., None], theta.shape).copy()
        return np.asarray(self.fn(theta), dtype=float)

    def inv_sqrt(self, theta):
        g = self.inv(theta)
        if self.diagonal:
            return np.sqrt(g)
        w, v = np.linalg.eigh(g)
        return (v * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.swapaxes(v, -1, -2)

    def div_inv(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "identity":
            return np.zeros(theta.shape)
        if self.kind == "fisher-diagonal-lda":
            return np.ones(theta.shape)
        if self.kind == "potential-level":
            return self._level(theta)[1]
        return self._numeric_div(self.inv, theta)

    def div_inv_sqrt(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "identity":
            return np.zeros(theta.shape)
        if self.kind == "fisher-diagonal-lda":
            return 0.5 / np.sqrt(theta)
        if self.kind == "potential-level":
            g, dg = self._level(theta)
            return dg / (2.0 * np.sqrt(g))[..., None]
        return self._numeric_div(self.inv_sqrt, theta)

    def _numeric_div(self, fn, theta):
        out = np.zeros(theta.shape)
        for j in range(theta.shape[-1]):
            h = 1e-4 * np.maximum(1.0, np.abs(theta[..., j]))
            tp = theta.copy()
            tm = theta.copy()
            tp[..., j] += h
            tm[..., j] -= h
            if self.diagonal:
                out[..., j] = (fn(tp)[..., j] - fn(tm)[..., j]) / (2 * h)
            else:
                out += (fn(tp)[..., :, j] - fn(tm)[..., :, j]) / (2 * h)[..., None]
        return out

    def check(self, theta):
        """Raise :class:`StepError` naming the first non-positive-definite component."""
        g = self.inv(theta)
        vals = g if self.diagonal else np.linalg.eigvalsh(g)
        bad = ~(vals > 0)
        if bad.any():
            idx = np.argwhere(bad)[0]
            raise StepError(f"metric is not positive definite: component {tuple(int(i) for i in idx)} "
                            f"has G^-1 value {vals[tuple(idx)]:.3e}")


# -- configuration -------------------------------------------------------------

_RELEVANT = {
    "hmc": {"mass", "resample_every", "schedule", "integrator"},
    "sgld": {"diffusion", "schedule", "compensation", "reflect"},
    "naive-sghmc": {"mass", "resample_every", "schedule"},
    "sghmc": {"mass", "friction", "resample_every", "schedule", "compensation"},
    "sgrld": {"metric", "schedule", "compensation", "reflect"},
    "sgnht": {"thermostat", "schedule", "compensation"},
    "naive-sgrhmc": {"metric", "resample_every", "schedule", "compensation", "reflect"},
    "gsgrhmc": {"metric", "resample_every", "schedule", "compensation", "reflect"},
}


@dataclass(frozen=True)
class PresetConfig:
    """Per-preset parameters; anything left ``None`` takes the preset default.

    ``resample_every`` is the momentum refresh period ``L`` (``0`` disables it).
    ``stochastic`` records that the chain will be driven by noisy gradients.
    """

    preset: str
    mass: object = None
    friction: object = None
    thermostat: float | None = None
    diffusion: object = None
    metric: MetricSpec | None = None
    resample_every: int | None = None
    schedule: StepSchedule | None = None
    compensation: NoiseCompensation | None = None
    integrator: str | None = None
    reflect: bool | None = None
    stochastic: bool = False

    def __post_init__(self):
        if self.preset not in _RELEVANT:
            raise ConfigurationError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        allowed = _RELEVANT[self.preset] | {"preset", "stochastic"}
        extra = [f.name for f in fields(self) if f.name not in allowed and getattr(self, f.name) is not None]
        if extra:
            raise ConfigurationError(f"parameters {extra} are not used by preset {self.preset!r}")
        if self.resample_every is not None and self.resample_every < 0:
            raise ConfigurationError("resample_every must be >= 0")

    def get(self, name, default):
        value = getattr(self, name)
        return default if value is None else value

    @property
    def schedule_or_default(self) -> StepSchedule:
        return self.get("schedule", StepSchedule.constant(DEFAULT_EPSILON[self.preset]))

    @property
    def refresh(self):
        period = self.get("resample_every", DEFAULT_RESAMPLE)
        return period or None


def _config(preset, config, overrides):
    if config is None:
        config = PresetConfig(preset, **overrides)
    elif overrides:
        config = replace(config, **overrides)
    if config.preset != preset:
        raise ConfigurationError(f"config is for {config.preset!r}, not {preset!r}")
    return config


def _psd(name, value, dim):
    m = np.asarray(value, dtype=float)
    if m.ndim == 0:
        m = float(m) * np.eye(dim)
    elif m.ndim == 1:
        m = np.diag(m)
    if m.shape != (dim, dim):
        raise ConfigurationError(f"{name} must be {dim}x{dim}")
    if np.abs(m - m.T).max() > 1e-12 or np.linalg.eigvalsh(m).min() < -1e-10:
        raise ConfigurationError(f"{name} must be symmetric positive semidefinite")
    return m


def _block_diag(*blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out


def _symplectic(d):
    eye = np.eye(d)
    zero = np.zeros((d, d))
    return np.block([[zero, -eye], [eye, zero]])


def reflection(layout):
    """Boundary map ``theta -> |theta|`` (exact zeros nudged to ``1e-10``).

    With a momentum block the matching momentum components change sign, which
    is the elastic bounce of the particle off the wall.
    """
    th = layout.slice("theta")
    r = layout.slice("r") if "r" in layout else None

    def reflect(z):
        theta = z[..., th]
        neg = theta < 0
        if not neg.any() and (theta != 0).all():
            return z
        z = z.copy()
        if r is not None:
            z[..., r] = np.where(neg, -z[..., r], z[..., r])
        z[..., th] = reflect_values(theta)
        return z

    return reflect


def reflect_values(theta):
    out = np.abs(theta)
    return np.where(out == 0, POSITIVE_FLOOR, out)


def _base_model(model: EnergyModel) -> EnergyModel:
    return model.potential_only() if (model.momentum or model.thermostat is not None) else model


# -- corrected presets ---------------------------------------------------------

def make_hmc(model: EnergyModel, config: PresetConfig | None = None, **overrides) -> SamplerSpec:
    """``D = 0``, ``Q = [[0, -I], [I, 0]]``, ``H = U + r^T M^{-1} r / 2``."""
    config = _config("hmc", config, overrides)
    if config.stochastic:
        raise ConfigurationError("hmc runs on full-data gradients; use naive-sghmc or sghmc for noisy gradients")
    d = model.dim
    mass = None if config.mass is None else _psd("mass", config.mass, d)
    full = _base_model(model).with_momentum(mass)
    return SamplerSpec(full, MatrixField.zero(2 * d, DIFFUSION), MatrixField.constant(_symplectic(d), CURL),
                       schedule=config.schedule_or_default, name="hmc", momentum_refresh=config.refresh,
                       integrator=config.get("integrator", "leapfrog"))


def make_sgld(model: EnergyModel, config: PresetConfig | None = None, **overrides) -> SamplerSpec:
    """``z = theta``, constant ``D``, ``Q = 0``."""
    config = _config("sgld", config, overrides)
    d = model.dim
    diff = _psd("diffusion", config.get("diffusion", 1.0), d)
    base = _base_model(model)
    return SamplerSpec(base, MatrixField.constant(diff, DIFFUSION), MatrixField.zero(d, CURL),
                       compensation=config.get("compensation", NoiseCompensation()),
                       schedule=config.schedule_or_default, name="sgld",
                       boundary=reflection(base.layout) if config.reflect else None)


def make_sghmc(model: EnergyModel, config: PresetConfig | None = None, **overrides) -> SamplerSpec:
    """HMC's ``Q`` and ``H`` with friction ``D = diag(0, C)``."""
    config = _config("sghmc", config, overrides)
    d = model.dim
    mass = None if config.mass is None else _psd("mass", config.mass, d)
    friction = _psd("friction", config.get("friction", 1.0), d)
    full = _base_model(model).with_momentum(mass)
    return SamplerSpec(full, MatrixField.constant(_block_diag(np.zeros((d, d)), friction), DIFFUSION),
                       MatrixField.constant(_symplectic(d), CURL),
                       compensation=config.get("compensation", NoiseCompensation()),
                       schedule=config.schedule_or_default, name="sghmc", momentum_refresh=config.refresh)


def make_sgrld(model: EnergyModel, config: PresetConfig | None = None, **overrides) -> SamplerSpec:
    """``D = G(theta)^{-1}``, ``Q = 0``; ``Gamma`` is the metric's row divergence."""
    config = _config("sgrld", config, overrides)
    d = model.dim
    metric = config.get("metric", MetricSpec.identity(d))
    base = _base_model(model)
    if metric.diagonal:
        D = MatrixField.diagonal(metric.inv, d, DIFFUSION, divergence=metric.div_inv)
    else:
        D = MatrixField.dense(metric.inv, d, DIFFUSION, divergence=metric.div_inv)
    return SamplerSpec(base, D, MatrixField.zero(d, CURL),
                       compensation=config.get("compensation", NoiseCompensation()),
                       schedule=config.schedule_or_default, name="sgrld",
                       boundary=reflection(base.layout) if config.reflect else None)


def make_sgnht(model: EnergyModel, config: PresetConfig | None = None, **overrides) -> SamplerSpec:
    """Thermostat sampler on ``z = (theta, r, xi)``.

    ``D = diag(0, A I, 0)`` and ``Q`` couples ``r`` to ``xi`` through ``r/d``;
    its row divergence is ``-1`` in the ``xi`` row only.
    """
    config = _config("sgnht", config, overrides)
    A = float(config.get("thermostat", 1.0))
    if not A > 0:
        raise ConfigurationError("thermostat constant A must be positive")
    d = model.dim
    full = _base_model(model).with_thermostat(A)
    n = 2 * d + 1
    th, r, xi = slice(0, d), slice(d, 2 * d), 2 * d

    def q_eval(z):
        out = np.zeros(z.shape[:-1] + (n, n))
        idx = np.arange(d)
        out[..., idx, d + idx] = -1.0
        out[..., d + idx, idx] = 1.0
        out[..., r, xi] = z[..., r] / d
        out[..., xi, r] = -z[..., r] / d
        return out

    def q_matvec(z, v):
        out = np.empty_like(v)
        rr = z[..., r]
        out[..., th] = -v[..., r]
        out[..., r] = v[..., th] + rr * (v[..., xi:xi + 1] / d)
        out[..., xi] = -np.sum(rr * v[..., r], axis=-1) / d
        return out

    def q_div(z):
        out = np.zeros(z.shape)
        out[..., xi] = -1.0
        return out

    diff = np.zeros(n)
    diff[r] = A
    return SamplerSpec(full, MatrixField.constant(np.diag(diff), DIFFUSION),
                       MatrixField.dense(q_eval, n, CURL, divergence=q_div, matvec=q_matvec),
                       compensation=config.get("compensation", NoiseCompensation()),
                       schedule=config.schedule_or_default, name="sgnht")


def _riemann_fields(metric: MetricSpec, d: int, with_correction: bool):
    th, r = slice(0, d), slice(d, 2 * d)
    n = 2 * d

    def d_diag(z):
        return np.concatenate([np.zeros(z.shape[:-1] + (d,)), metric.inv(z[..., th])], axis=-1)

    def d_dense(z):
        out = np.zeros(z.shape[:-1] + (n, n))
        out[..., r, r] = metric.inv(z[..., th])
        return out

    def zero_div(z):
        return np.zeros(z.shape)

    def q_eval(z):
        s = metric.inv_sqrt(z[..., th])
        if metric.diagonal:
            s = s[..., :, None] * np.eye(d)
        out = np.zeros(z.shape[:-1] + (n, n))
        out[..., th, r] = -s
        out[..., r, th] = s
        return out

    def q_matvec(z, v):
        s = metric.inv_sqrt(z[..., th])
        out = np.empty_like(v)
        if metric.diagonal:
            out[..., th] = -s * v[..., r]
            out[..., r] = s * v[..., th]
        else:
            out[..., th] = -np.einsum("...ij,...j->...i", s, v[..., r])
            out[..., r] = np.einsum("...ij,...j->...i", s, v[..., th])
        return out

    def q_div(z):
        out = np.zeros(z.shape)
        if with_correction:
            out[..., r] = metric.div_inv_sqrt(z[..., th])
        return out

    if metric.diagonal:
        D = MatrixField.diagonal(d_diag, n, DIFFUSION, divergence=zero_div)
    else:
        D = MatrixField.dense(d_dense, n, DIFFUSION, divergence=zero_div)
    Q = MatrixField.dense(q_eval, n, CURL, divergence=q_div, matvec=q_matvec)
    return D, Q


def make_gsgrhmc(model: EnergyModel, config: PresetConfig | None = None, **overrides) -> SamplerSpec:
    """``D = diag(0, G^{-1})``, ``Q = [[0, -G^{-1/2}], [G^{-1/2}, 0]]``, ``H = U + r^T r / 2``.

    ``Gamma = (0, grad_theta G^{-1/2})`` is the metric-derivative correction.
    """
    config = _config("gsgrhmc", config, overrides)
    d = model.dim
    metric = config.get("metric", MetricSpec.identity(d))
    if metric.dim != d:
        raise ConfigurationError("metric dimension does not match model")
    full = _base_model(model).with_momentum()
    D, Q = _riemann_fields(metric, d, with_correction=True)
    return SamplerSpec(full, D, Q, compensation=config.get("compensation", NoiseCompensation()),
                       schedule=config.schedule_or_default, name="gsgrhmc", momentum_refresh=config.refresh,
                       boundary=reflection(full.layout) if config.reflect else None)


# -- naive controls --------------------------------------------------------------

@dataclass(frozen=True)
class CastReport:
    """How far a raw update is from every recipe drift sharing its diffusion.

    ``residual`` is the smaller of the best constant-curl fit and the fit
    against the corrected sampler's own curl, as a sup-norm over probes.
    """

    residual_constant_q: float
    residual_reference_q: float
    tol: float = CAST_TOL

    @property
    def residual(self) -> float:
        return min(self.residual_constant_q, self.residual_reference_q)

    @property
    def castable(self) -> bool:
        return self.residual <= self.tol


@dataclass(frozen=True)
class RawUpdater:
    """An update rule that is *not* a recipe sampler.

    ``inner`` carries the arithmetic (it is a ``SamplerSpec`` only as an
    implementation device and is never exposed as one); ``implied_diffusion``
    is the diffusion the update's noise corresponds to and ``reference_curl``
    the curl of the corrected sampler it imitates.
    """

    name: str
    inner: SamplerSpec
    implied_diffusion: MatrixField
    reference_curl: MatrixField
    recipe_valid: bool = False

    @property
    def model(self):
        return self.inner.model

    @property
    def schedule(self):
        return self.inner.schedule

    @property
    def momentum_refresh(self):
        return self.inner.momentum_refresh

    @property
    def boundary(self):
        return self.inner.boundary

    @property
    def integrator(self):
        return "euler"

    @property
    def dim(self):
        return self.inner.dim

    def raw_drift(self, z, grad_h):
        from .engine import drift_array
        return drift_array(self.inner, np.asarray(z, dtype=float), np.asarray(grad_h, dtype=float))

    def step(self, z: StateVector, t: int, noisy_grad, rng) -> StateVector:
        flat = self.model._flat(z)
        out = advance(self.inner, flat, self.schedule(t), noisy_grad_h(self.inner, flat, noisy_grad), rng=rng)
        return StateVector.unflatten(self.model.layout, out)

    def cast_report(self, probes) -> CastReport:
        z = np.stack([p.flatten() if isinstance(p, StateVector) else np.asarray(p, dtype=float) for p in probes])
        g = self.model.grad(z)
        f = self.raw_drift(z, g)
        # What the diffusion alone contributes to any recipe drift.
        base = -self.implied_diffusion.apply(z, g) + self.implied_diffusion.div(z)
        target = f - base
        n = z.shape[-1]
        iu = np.triu_indices(n, 1)
        # -Q g for skew Q with free upper entries q_ab: row a gets -q_ab g_b, row b gets +q_ab g_a.
        cols = []
        for a, b in zip(*iu):
            col = np.zeros_like(g)
            col[:, a] = -g[:, b]
            col[:, b] = g[:, a]
            cols.append(col.ravel())
        basis = np.stack(cols, axis=1)
        coef, *_ = np.linalg.lstsq(basis, target.ravel(), rcond=None)
        res_const = float(np.abs(target.ravel() - basis @ coef).max())
        ref = -self.reference_curl.apply(z, g) + self.reference_curl.div(z)
        res_ref = float(np.abs(target - ref).max())
        return CastReport(res_const, res_ref)

    def validation_report(self, probes) -> ValidationReport:
        cast = self.cast_report(probes)
        report = ValidationReport(n_probes=len(probes))
        if not cast.castable:
            report.cast_failures.append((self.name, cast.residual))
        return report


def make_naive_sghmc(model: EnergyModel, config: PresetConfig | None = None, *, noise_variance=1.0,
                     epsilon_hint=None, **overrides) -> RawUpdater:
    """HMC's Euler update driven by noisy gradients, with no friction.

    The gradient noise acts as diffusion ``diag(0, eps V / 2)``; no recipe
    drift pairs that diffusion with this update.
    """
    config = _config("naive-sghmc", config, overrides)
    d = model.dim
    mass = None if config.mass is None else _psd("mass", config.mass, d)
    full = _base_model(model).with_momentum(mass)
    schedule = config.schedule_or_default
    inner = SamplerSpec(full, MatrixField.zero(2 * d, DIFFUSION), MatrixField.constant(_symplectic(d), CURL),
                        schedule=schedule, name="naive-sghmc", momentum_refresh=config.refresh)
    eps = epsilon_hint if epsilon_hint is not None else schedule(0)
    v = _psd("noise_variance", noise_variance, d)
    implied = MatrixField.constant(_block_diag(np.zeros((d, d)), 0.5 * eps * v), DIFFUSION)
    return RawUpdater("naive-sghmc", inner, implied, inner.curl)


def make_naive_sgrhmc(model: EnergyModel, config: PresetConfig | None = None, **overrides) -> RawUpdater:
    """Preconditioned SGHMC with metric friction but without ``grad_theta G^{-1/2}``."""
    config = _config("naive-sgrhmc", config, overrides)
    d = model.dim
    metric = config.get("metric", MetricSpec.identity(d))
    full = _base_model(model).with_momentum()
    D, Q = _riemann_fields(metric, d, with_correction=False)
    _, Q_ref = _riemann_fields(metric, d, with_correction=True)
    inner = SamplerSpec(full, D, Q, compensation=config.get("compensation", NoiseCompensation()),
                        schedule=config.schedule_or_default, name="naive-sgrhmc", momentum_refresh=config.refresh,
                        boundary=reflection(full.layout) if config.reflect else None)
    return RawUpdater("naive-sgrhmc", inner, D, Q_ref)


_FACTORIES = {
    "hmc": make_hmc, "sgld": make_sgld, "sghmc": make_sghmc, "sgrld": make_sgrld, "sgnht": make_sgnht,
    "gsgrhmc": make_gsgrhmc, "naive-sghmc": make_naive_sghmc, "naive-sgrhmc": make_naive_sgrhmc,
}


def make_preset(name: str, model: EnergyModel, **kwargs):
    """Build any preset by name; keyword arguments become :class:`PresetConfig` fields."""
    if name not in _FACTORIES:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {PRESETS}")
    return _FACTORIES[name](model, **kwargs)


# -- HMC integrator and momentum refresh ------------------------------------------

def leapfrog(spec: SamplerSpec, z, eps, theta_grad=None):
    """One leapfrog step on flat (possibly batched) ``(theta, r)`` states."""
    model = spec.model
    lay = model.layout
    th, r = lay.slice("theta"), lay.slice("r")
    theta = z[..., th]
    g = model.grad_potential(theta) if theta_grad is None else theta_grad
    r_half = z[..., r] - 0.5 * eps * g
    v = r_half if model.mass_inv is None else r_half @ model.mass_inv.T
    theta_new = theta + eps * v
    r_new = r_half - 0.5 * eps * model.grad_potential(theta_new)
    out = np.empty_like(z)
    out[..., th] = theta_new
    out[..., r] = r_new
    return out


def momentum_sampler(model: EnergyModel):
    """Map standard normals to momenta ``r ~ N(0, M)``."""
    if model.mass is None:
        return lambda normals: normals
    chol = np.linalg.cholesky(model.mass)
    return lambda normals: normals @ chol.T


def assert_positive(theta):
    theta = np.asarray(theta)
    if np.any(theta <= 0):
        raise DomainError("parameters must be strictly positive")
