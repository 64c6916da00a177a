"""Drift construction and discretised updates for ``(H, D, Q)`` samplers.

A sampler is fully described by an energy ``H``, a PSD diffusion field
``D(z)`` and a skew-symmetric curl field ``Q(z)``.  The continuous dynamics are

    dz = f(z) dt + sqrt(2 D(z)) dW,   f = -(D + Q) grad H + Gamma,
    Gamma_i = sum_j d/dz_j (D_ij + Q_ij),

and the discretised update is ``z' = z + eps f(z) + N(0, eps (2 D - eps B))``
where ``B`` compensates for stochastic-gradient noise (zero by default).

All internal helpers operate on flat arrays of shape ``(..., d)`` so several
chains can be advanced in lockstep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DimensionError, NumericError, StepError, StructuralError
from .state import EnergyModel, StateVector

CONSTANT = "constant"
DIAGONAL = "diagonal-fn"
DENSE = "dense-fn"
DIFFUSION = "diffusion"
CURL = "curl"

PSD_TOL = 1e-10
SKEW_TOL = 1e-12
FD_REL_STEP = 1e-4


@dataclass(frozen=True)
class MatrixField:
    """State-dependent square matrix used as ``D`` or ``Q``.

    ``fn`` maps states ``(..., d)`` to ``(..., d)`` diagonals for
    ``diagonal-fn`` fields and to ``(..., d, d)`` matrices for ``dense-fn``
    fields.  ``divergence`` optionally gives ``sum_j d M_ij / dz_j`` in closed
    form and ``matvec(z, v)`` a structured product that avoids building the
    dense matrix.
    """

    kind: str
    structure: str
    dim: int
    value: np.ndarray | None = None
    fn: Callable | None = None
    divergence: Callable | None = None
    matvec: Callable | None = None

    def __post_init__(self):
        if self.kind not in (CONSTANT, DIAGONAL, DENSE):
            raise ConfigurationError(f"unknown field kind {self.kind!r}")
        if self.structure not in (DIFFUSION, CURL):
            raise ConfigurationError(f"unknown field structure {self.structure!r}")
        if self.kind == CONSTANT:
            value = np.asarray(self.value, dtype=float)
            if value.shape != (self.dim, self.dim):
                raise DimensionError(f"constant field must be {self.dim}x{self.dim}, got {value.shape}")
            object.__setattr__(self, "value", value)
            offdiag = value - np.diag(np.diag(value))
            object.__setattr__(self, "_diag", np.diag(value).copy() if not offdiag.any() else None)
            object.__setattr__(self, "_zero", not value.any())
        else:
            if self.fn is None:
                raise ConfigurationError(f"{self.kind} field needs fn")
            object.__setattr__(self, "_diag", None)
            object.__setattr__(self, "_zero", False)

    # -- constructors ------------------------------------------------------
    @classmethod
    def constant(cls, value, structure=DIFFUSION):
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return cls(CONSTANT, structure, value.shape[0], value=value)

    @classmethod
    def zero(cls, dim, structure=DIFFUSION):
        return cls(CONSTANT, structure, dim, value=np.zeros((dim, dim)))

    @classmethod
    def diagonal(cls, fn, dim, structure=DIFFUSION, divergence=None):
        return cls(DIAGONAL, structure, dim, fn=fn, divergence=divergence)

    @classmethod
    def dense(cls, fn, dim, structure=DIFFUSION, divergence=None, matvec=None):
        return cls(DENSE, structure, dim, fn=fn, divergence=divergence, matvec=matvec)

    # -- evaluation --------------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return self._zero

    @property
    def is_diagonal(self) -> bool:
        return self.kind == DIAGONAL or self._diag is not None

    def diagonal_values(self, z):
        """Diagonal entries, shape ``(..., d)``; only valid when :attr:`is_diagonal`."""
        z = np.asarray(z, dtype=float)
        if self.kind == DIAGONAL:
            return np.asarray(self.fn(z), dtype=float)
        return np.broadcast_to(self._diag, z.shape)

    def evaluate(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == CONSTANT:
            return np.broadcast_to(self.value, z.shape[:-1] + (self.dim, self.dim))
        if self.kind == DIAGONAL:
            diag = np.asarray(self.fn(z), dtype=float)
            out = np.zeros(diag.shape + (self.dim,))
            idx = np.arange(self.dim)
            out[..., idx, idx] = diag
            return out
        return np.asarray(self.fn(z), dtype=float)

    def apply(self, z, v):
        """``M(z) @ v`` batched over leading axes."""
        if self._zero:
            return np.zeros_like(v)
        if self._diag is not None:
            return self._diag * v
        if self.kind == CONSTANT:
            return v @ self.value.T
        if self.kind == DIAGONAL:
            return self.fn(z) * v
        if self.matvec is not None:
            return self.matvec(z, v)
        return np.einsum("...ij,...j->...i", self.fn(z), v)

    def numeric_divergence(self, z, rel_step=FD_REL_STEP):
        """Central finite-difference estimate of ``sum_j d M_ij / dz_j``."""
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape)
        if self.kind == CONSTANT:
            return out
        for j in range(self.dim):
            h = rel_step * np.maximum(1.0, np.abs(z[..., j]))
            zp = z.copy()
            zm = z.copy()
            zp[..., j] += h
            zm[..., j] -= h
            if self.kind == DIAGONAL:
                out[..., j] += (self.fn(zp)[..., j] - self.fn(zm)[..., j]) / (2 * h)
            else:
                out += (self.evaluate(zp)[..., :, j] - self.evaluate(zm)[..., :, j]) / (2 * h)[..., None]
        return out

    def div(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == CONSTANT:
            return np.zeros(z.shape)
        if self.divergence is not None:
            return np.asarray(self.divergence(z), dtype=float)
        return self.numeric_divergence(z)


@dataclass(frozen=True)
class StepSchedule:
    """Step size ``eps_t``: constant, or ``(a (1 + t/b))^(-c)``."""

    kind: str = "constant"
    epsilon: float | None = 0.01
    a: float | None = None
    b: float | None = None
    c: float | None = None

    def __post_init__(self):
        if self.kind == "constant":
            if self.epsilon is None or not self.epsilon > 0:
                raise ConfigurationError("constant schedule needs epsilon > 0")
        elif self.kind == "polynomial":
            if not (self.a and self.a > 0 and self.b and self.b > 0 and self.c is not None and self.c >= 0):
                raise ConfigurationError("polynomial schedule needs a > 0, b > 0, c >= 0")
        else:
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, epsilon):
        return cls("constant", float(epsilon))

    @classmethod
    def polynomial(cls, a, b, c):
        return cls("polynomial", None, float(a), float(b), float(c))

    def __call__(self, t) -> float:
        if self.kind == "constant":
            return self.epsilon
        return (self.a * (1.0 + t / self.b)) ** (-self.c)


@dataclass(frozen=True)
class NoiseCompensation:
    """Estimate ``B`` of the extra noise injected by stochastic gradients.

    * ``none`` -- ``B = 0``.
    * ``constant-estimate`` -- ``value`` is ``B`` itself in state space, a
      ``(d, d)`` matrix or a length-``d`` diagonal.
    * ``empirical`` -- ``value`` is the gradient-noise covariance ``V`` in
      parameter space (scalar, matrix, diagonal, a ``NoiseEstimate`` or a
      callable of theta).  It is pushed through the drift, ``B = P V P^T`` with
      ``P = (D + Q)[:, theta]``, which is exactly the covariance of the term
      that noisy gradients add to the update.
    """

    kind: str = "none"
    value: object = None

    def __post_init__(self):
        if self.kind not in ("none", "constant-estimate", "empirical"):
            raise ConfigurationError(f"unknown compensation kind {self.kind!r}")
        if self.kind != "none" and self.value is None:
            raise ConfigurationError(f"{self.kind} compensation needs a value")

    @property
    def active(self) -> bool:
        return self.kind != "none"


@dataclass(frozen=True)
class SamplerSpec:
    """Full description of a recipe sampler.

    Besides the recipe's ``(H, D, Q, B, schedule)`` this carries chain-level
    options: momentum refresh period, a boundary map (e.g. reflection) applied
    after every step, and the integrator (``euler`` or ``leapfrog``).
    """

    model: EnergyModel
    diffusion: MatrixField
    curl: MatrixField
    compensation: NoiseCompensation = NoiseCompensation()
    schedule: StepSchedule = StepSchedule()
    name: str = "custom"
    momentum_refresh: int | None = None
    boundary: Callable | None = None
    integrator: str = "euler"
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.diffusion.structure != DIFFUSION:
            raise ConfigurationError("diffusion field must have structure 'diffusion'")
        if self.curl.structure != CURL:
            raise ConfigurationError("curl field must have structure 'curl'")
        d = self.model.layout.dim
        if self.diffusion.dim != d or self.curl.dim != d:
            raise DimensionError(f"field dimensions ({self.diffusion.dim}, {self.curl.dim}) != model dimension {d}")
        if self.integrator not in ("euler", "leapfrog"):
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")
        if self.momentum_refresh is not None and "r" not in self.model.layout:
            raise ConfigurationError("momentum refresh needs an r block")

    @property
    def dim(self) -> int:
        return self.model.layout.dim

    @property
    def deterministic(self) -> bool:
        return self.diffusion.is_zero and not self.compensation.active


# -- recipe operations -------------------------------------------------------

def _as_flat(spec_or_model, z):
    model = spec_or_model.model if isinstance(spec_or_model, SamplerSpec) else spec_or_model
    return model._flat(z)


def gamma_correction(D: MatrixField, Q: MatrixField, z):
    """``Gamma_i(z) = sum_j d/dz_j (D_ij + Q_ij)``."""
    flat = z.flatten() if isinstance(z, StateVector) else np.asarray(z, dtype=float)
    return D.div(flat) + Q.div(flat)


def drift_array(spec: SamplerSpec, z, grad_h):
    out = -(spec.diffusion.apply(z, grad_h) + spec.curl.apply(z, grad_h))
    if spec.diffusion.kind != CONSTANT or spec.curl.kind != CONSTANT:
        out = out + gamma_correction(spec.diffusion, spec.curl, z)
    return out


def drift(spec: SamplerSpec, z, grad_h):
    """``f(z) = -[D(z) + Q(z)] grad H(z) + Gamma(z)``."""
    flat = _as_flat(spec, z)
    grad_h = np.asarray(grad_h, dtype=float)
    if grad_h.shape != flat.shape:
        raise DimensionError(f"gradient shape {grad_h.shape} does not match state shape {flat.shape}")
    return drift_array(spec, flat, grad_h)


def _bhat_dense(spec: SamplerSpec, z):
    comp = spec.compensation
    d = spec.dim
    if comp.kind == "constant-estimate":
        value = np.asarray(comp.value, dtype=float)
        if value.ndim == 1:
            value = np.diag(value)
        if value.shape != (d, d):
            raise DimensionError(f"compensation matrix must be {d}x{d}")
        return np.broadcast_to(value, z.shape[:-1] + (d, d))
    th = spec.model.layout.slice("theta")
    v = comp.value
    if callable(v):
        v = v(z[..., th])
    v = getattr(v, "matrix", v)
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = v * np.eye(th.stop - th.start)
    if v.shape[-1:] == (th.stop - th.start,) and (v.ndim == 1 or v.shape[-2] != v.shape[-1]):
        v = v[..., :, None] * np.eye(th.stop - th.start)
    p = spec.diffusion.evaluate(z)[..., :, th] + spec.curl.evaluate(z)[..., :, th]
    return p @ v @ np.swapaxes(p, -1, -2)


def noise_covariance(spec: SamplerSpec, z, eps):
    """Covariance ``eps (2 D(z) - eps B)`` of the injected Gaussian noise.

    Returns ``(kind, value)`` with kind ``"none"``, ``"diag"`` (value of shape
    ``(..., d)``) or ``"dense"`` (``(..., d, d)``).
    """
    if spec.deterministic:
        return "none", None
    comp = spec.compensation
    D = spec.diffusion
    bdiag = None
    if comp.kind == "constant-estimate":
        value = np.asarray(comp.value, dtype=float)
        if value.ndim == 1:
            bdiag = value
        elif not (value - np.diag(np.diag(value))).any():
            bdiag = np.diag(value)
    if D.is_diagonal and (comp.kind == "none" or bdiag is not None):
        var = 2.0 * eps * D.diagonal_values(z)
        if bdiag is not None:
            var = var - eps * eps * bdiag
        return "diag", var
    cov = 2.0 * eps * D.evaluate(z)
    if comp.active:
        bhat = _bhat_dense(spec, z)
        cov = cov - eps * eps * bhat
    offdiag = cov - np.einsum("...ii->...i", cov)[..., None] * np.eye(spec.dim)
    if not offdiag.any():
        return "diag", np.einsum("...ii->...i", cov).copy()
    return "dense", cov


def _describe(z):
    return np.array2string(np.asarray(z), precision=6, threshold=20)


def _psd_failure(spec, z, eps, detail):
    if spec.compensation.active:
        raise StepError(
            f"noise covariance eps(2D - eps B) is not PSD at z={_describe(z)} ({detail}); "
            f"reduce the step size (eps={eps:g})"
        )
    raise StructuralError(f"diffusion matrix is not PSD at z={_describe(z)} ({detail})")


def noise_factor(spec: SamplerSpec, z, eps):
    """Symmetric square root of the noise covariance (``None`` for deterministic specs)."""
    kind, cov = noise_covariance(spec, z, eps)
    if kind == "none":
        return kind, None
    if kind == "diag":
        low = cov.min()
        if low < -PSD_TOL:
            _psd_failure(spec, z, eps, f"min variance {low:.3e}")
        return kind, np.sqrt(np.maximum(cov, 0.0))
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    w, v = np.linalg.eigh(cov)
    if w.min() < -PSD_TOL:
        _psd_failure(spec, z, eps, f"min eigenvalue {w.min():.3e}")
    return kind, v * np.sqrt(np.maximum(w, 0.0))[..., None, :]


def apply_noise(kind, factor, normals):
    if kind == "diag":
        return factor * normals
    return np.einsum("...ij,...j->...i", factor, normals)


def advance(spec: SamplerSpec, z, eps, grad_h, normals=None, rng=None, check=True):
    """One Euler-Maruyama step on flat (possibly batched) states.

    Standard normals come from ``normals`` (same shape as ``z``) or are drawn
    from ``rng``; nothing is drawn when the dynamics are deterministic.
    """
    f = drift_array(spec, z, grad_h)
    if check and not np.all(np.isfinite(f)):
        raise NumericError(f"non-finite drift at z={_describe(z)}")
    z_new = z + eps * f
    kind, factor = noise_factor(spec, z, eps)
    if kind != "none":
        if normals is None:
            normals = rng.standard_normal(z.shape)
        z_new = z_new + apply_noise(kind, factor, normals)
    return z_new


def step_full_data(spec: SamplerSpec, z: StateVector, t: int, rng) -> StateVector:
    """Full-gradient update ``z' = z + eps_t f(z) + N(0, 2 eps_t D(z))``.

    Compensation is ignored here: with exact gradients there is no extra noise
    to subtract.
    """
    flat = _as_flat(spec, z)
    eps = spec.schedule(t)
    if spec.compensation.active:
        spec = _uncompensated(spec)
    z_new = advance(spec, flat, eps, spec.model.grad(flat), rng=rng)
    return StateVector.unflatten(spec.model.layout, z_new)


def _uncompensated(spec):
    cached = spec._cache.get("uncompensated")
    if cached is None:
        cached = SamplerSpec(spec.model, spec.diffusion, spec.curl, NoiseCompensation(), spec.schedule,
                             spec.name, spec.momentum_refresh, spec.boundary, spec.integrator)
        spec._cache["uncompensated"] = cached
    return cached


def noisy_grad_h(spec: SamplerSpec, flat, noisy_grad):
    """Promote a parameter-space gradient to a full ``grad H~`` when needed."""
    noisy_grad = np.asarray(noisy_grad, dtype=float)
    d = spec.dim
    dth = spec.model.dim
    if noisy_grad.shape[-1] == d:
        return noisy_grad
    if noisy_grad.shape[-1] == dth:
        return spec.model.grad(flat, theta_grad=noisy_grad)
    raise DimensionError(f"noisy gradient has length {noisy_grad.shape[-1]}, expected {d} or {dth}")


def step_minibatch(spec: SamplerSpec, z: StateVector, t: int, noisy_grad, rng) -> StateVector:
    """Stochastic-gradient update ``z' = z + eps_t f~(z) + N(0, eps_t (2D - eps_t B))``.

    ``noisy_grad`` is either the full ``grad H~`` or just the noisy potential
    gradient for the theta block.
    """
    flat = _as_flat(spec, z)
    eps = spec.schedule(t)
    z_new = advance(spec, flat, eps, noisy_grad_h(spec, flat, noisy_grad), rng=rng)
    return StateVector.unflatten(spec.model.layout, z_new)


# -- validation ----------------------------------------------------------------

@dataclass
class ValidationReport:
    """Findings from probing a spec; an empty report means the recipe's hypotheses hold."""

    psd_violations: list = field(default_factory=list)
    skew_violations: list = field(default_factory=list)
    gamma_mismatches: list = field(default_factory=list)
    cast_failures: list = field(default_factory=list)
    n_probes: int = 0

    @property
    def ok(self) -> bool:
        return not (self.psd_violations or self.skew_violations or self.gamma_mismatches or self.cast_failures)

    def summary(self) -> str:
        if self.ok:
            return f"clean ({self.n_probes} probes)"
        return (f"{len(self.psd_violations)} PSD, {len(self.skew_violations)} skew, "
                f"{len(self.gamma_mismatches)} Gamma, {len(self.cast_failures)} cast violations "
                f"over {self.n_probes} probes")


def validate_spec(spec: SamplerSpec, probes, gamma_tol=1e-4) -> ValidationReport:
    """Check the stationarity hypotheses at each probe state.

    Flags ``D`` with an eigenvalue below ``-1e-10``, ``Q`` with
    ``||Q + Q^T||_inf > 1e-12`` and analytic divergences that differ from the
    finite-difference divergence by more than ``gamma_tol`` (relative).
    Raw (non-recipe) updaters are checked for castability instead and fail
    when no recipe drift reproduces them.
    """
    if getattr(spec, "recipe_valid", True) is False:
        return spec.validation_report(list(probes))
    probes = [p.flatten() if isinstance(p, StateVector) else np.asarray(p, dtype=float) for p in probes]
    if not probes:
        raise ConfigurationError("validate_spec needs at least one probe state")
    report = ValidationReport(n_probes=len(probes))
    z = np.stack(probes)
    D = spec.diffusion.evaluate(z)
    Q = spec.curl.evaluate(z)
    eig_min = np.linalg.eigvalsh(0.5 * (D + np.swapaxes(D, -1, -2))).min(axis=-1)
    asym_d = np.abs(D - np.swapaxes(D, -1, -2)).max(axis=(-1, -2))
    skew = np.abs(Q + np.swapaxes(Q, -1, -2)).max(axis=(-1, -2))
    for i, p in enumerate(probes):
        if eig_min[i] < -PSD_TOL or asym_d[i] > SKEW_TOL:
            report.psd_violations.append((p, float(min(eig_min[i], -asym_d[i]))))
        if skew[i] > SKEW_TOL:
            report.skew_violations.append((p, float(skew[i])))
    for fld in (spec.diffusion, spec.curl):
        if fld.divergence is None or fld.kind == CONSTANT:
            continue
        analytic = fld.div(z)
        numeric = fld.numeric_divergence(z)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        for i in np.flatnonzero(err.max(axis=-1) > gamma_tol):
            report.gamma_mismatches.append((probes[i], fld.structure, float(err[i].max())))
    return report
