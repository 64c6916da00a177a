"""Grid-based stationarity checks and sample-quality metrics.

Densities, drifts and matrix fields are sampled on uniform 1-D or 2-D grids.
All derivatives are second-order central differences.  Residual norms skip the
outermost cell on every side, where central stencils are unavailable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .engine import SamplerSpec, drift_array
from .errors import ConfigurationError, NumericError, ReconstructionError

MIN_POINTS = 5
DIVERGENCE_TOL = 1e-3


# -- grids -----------------------------------------------------------------------

@dataclass(frozen=True)
class Axis:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if self.n < MIN_POINTS:
            raise ConfigurationError(f"grid axis needs at least {MIN_POINTS} points, got {self.n}")
        if not self.hi > self.lo:
            raise ConfigurationError("grid axis needs hi > lo")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)


@dataclass(frozen=True)
class Grid:
    axes: tuple

    def __post_init__(self):
        if len(self.axes) not in (1, 2):
            raise ConfigurationError("grid checks support 1 or 2 dimensions only")

    @classmethod
    def box(cls, bounds, h) -> "Grid":
        """Uniform grid over ``[(lo, hi), ...]`` with spacing ``h`` (rounded to fit)."""
        axes = []
        for lo, hi in bounds:
            n = int(round((hi - lo) / h)) + 1
            axes.append(Axis(float(lo), float(hi), n))
        return cls(tuple(axes))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self):
        return tuple(a.n for a in self.axes)

    @property
    def spacing(self):
        return tuple(a.h for a in self.axes)

    def points(self) -> np.ndarray:
        """Grid coordinates, shape ``shape + (ndim,)``."""
        mesh = np.meshgrid(*[a.points for a in self.axes], indexing="ij")
        return np.stack(mesh, axis=-1)

    def integrate(self, values) -> float:
        out = values
        for ax in reversed(range(self.ndim)):
            out = trapezoid(out, dx=self.axes[ax].h, axis=ax)
        return float(out)

    def interior(self, values) -> np.ndarray:
        sl = tuple(slice(1, -1) for _ in range(self.ndim))
        return values[sl]


@dataclass(frozen=True)
class GridDensity:
    grid: Grid
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ConfigurationError(f"density shape {values.shape} does not match grid {self.grid.shape}")
        if np.any(values < 0):
            raise ConfigurationError("density values must be non-negative")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_energy(cls, grid: Grid, energy_values) -> "GridDensity":
        """Normalized ``exp(-H)`` (shifted by ``min H`` for stability)."""
        e = np.asarray(energy_values, dtype=float)
        p = np.exp(-(e - e.min()))
        return cls(grid, p / grid.integrate(p), True)

    def normalize(self) -> "GridDensity":
        return GridDensity(self.grid, self.values / self.grid.integrate(self.values), True)

    @property
    def mass(self) -> float:
        return self.grid.integrate(self.values)


@dataclass(frozen=True)
class FieldOnGrid:
    """Vector field (``shape + (n,)``) or matrix field (``shape + (n, n)``) on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        g = self.grid
        if values.shape[:g.ndim] != g.shape or values.ndim not in (g.ndim + 1, g.ndim + 2):
            raise ConfigurationError(f"field shape {values.shape} does not match grid {g.shape}")
        if any(s != g.ndim for s in values.shape[g.ndim:]):
            raise ConfigurationError("field components must match the grid dimension")
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: Grid, value) -> "FieldOnGrid":
        value = np.asarray(value, dtype=float)
        return cls(grid, np.broadcast_to(value, grid.shape + value.shape).copy())

    @property
    def is_matrix(self) -> bool:
        return self.values.ndim == self.grid.ndim + 2


def _d1(u, axis, h):
    """Central first derivative; one-sided second-order at the edges."""
    return np.gradient(u, h, axis=axis, edge_order=2)


def _d2(u, axis, h):
    """Three-point second derivative on the interior (edges left at zero)."""
    out = np.zeros_like(u)
    n = u.shape[axis]
    c = [slice(None)] * u.ndim
    lo, mid, hi = list(c), list(c), list(c)
    lo[axis], mid[axis], hi[axis] = slice(0, n - 2), slice(1, n - 1), slice(2, n)
    out[tuple(mid)] = (u[tuple(hi)] - 2.0 * u[tuple(mid)] + u[tuple(lo)]) / h**2
    return out


def _mask_edges(u, ndim, margin=1):
    out = np.zeros_like(u)
    sl = tuple(slice(margin, -margin) for _ in range(ndim))
    out[sl] = u[sl]
    return out


# -- Fokker-Planck operators -------------------------------------------------------

def fp_rhs_direct(f: FieldOnGrid, D: FieldOnGrid, p: GridDensity) -> np.ndarray:
    """``-sum_i d_i(f_i p) + sum_ij d_i d_j (D_ij p)``; boundary cells are zero."""
    grid = p.grid
    n = grid.ndim
    h = grid.spacing
    pv = p.values
    out = np.zeros(grid.shape)
    for i in range(n):
        out -= _d1(f.values[..., i] * pv, i, h[i])
    for i in range(n):
        for j in range(n):
            dp = D.values[..., i, j] * pv
            if not dp.any():
                continue
            if i == j:
                out += _d2(dp, i, h[i])
            else:
                out += _d1(_d1(dp, j, h[j]), i, h[i])
    return _mask_edges(out, n)


def fp_rhs_compact(D: FieldOnGrid, Q: FieldOnGrid, H, p: GridDensity, grad_h: FieldOnGrid | None = None) -> np.ndarray:
    """``div([D + Q] [p grad H + grad p])``; the two outer cells are zero.

    The operator nests two first differences, so the second ring of cells
    would see the one-sided edge stencil; it is masked as well.  ``grad_h`` supplies an exact energy gradient; otherwise it is differenced
    from the ``H`` grid.
    """
    grid = p.grid
    n = grid.ndim
    h = grid.spacing
    pv = p.values
    if grad_h is None:
        H = np.asarray(H, dtype=float)
        gh = np.stack([_d1(H, i, h[i]) for i in range(n)], axis=-1)
    else:
        gh = grad_h.values
    bracket = pv[..., None] * gh + np.stack([_d1(pv, i, h[i]) for i in range(n)], axis=-1)
    flux = np.einsum("...ij,...j->...i", D.values + Q.values, bracket)
    out = sum(_d1(flux[..., i], i, h[i]) for i in range(n))
    return _mask_edges(out, n, margin=2)


def spec_fields_on_grid(spec: SamplerSpec, grid: Grid):
    """Sample ``H``, ``D``, ``Q``, ``grad H`` and the recipe drift of a spec on a grid."""
    if spec.dim != grid.ndim:
        raise ConfigurationError(f"spec has dimension {spec.dim}; grid checks need a matching 1-D or 2-D grid")
    z = grid.points()
    H = spec.model.energy(z)
    D = FieldOnGrid(grid, spec.diffusion.evaluate(z))
    Q = FieldOnGrid(grid, spec.curl.evaluate(z))
    grad_h = spec.model.grad(z)
    f = FieldOnGrid(grid, drift_array(spec, z, grad_h))
    return H, D, Q, f, FieldOnGrid(grid, grad_h)


def stationarity_residual(spec: SamplerSpec, grid: Grid, form: str = "max") -> float:
    """Sup-norm Fokker-Planck residual of normalized ``exp(-H)`` under the spec.

    ``compact`` applies the factored operator to ``(D, Q, H)``; ``direct``
    applies the expanded operator to the drift the engine actually builds.
    The compact form presumes a skew ``Q`` and so cannot see a malformed curl;
    the default ``max`` reports the larger of the two.
    """
    if form not in ("max", "compact", "direct"):
        raise ConfigurationError(f"unknown residual form {form!r}")
    if spec.dim > 2:
        raise ConfigurationError("grid stationarity checks are limited to states of dimension <= 2")
    H, D, Q, f, gh = spec_fields_on_grid(spec, grid)
    p = GridDensity.from_energy(grid, H)
    out = 0.0
    if form in ("max", "compact"):
        out = max(out, float(np.abs(grid.interior(fp_rhs_compact(D, Q, H, p, gh))).max()))
    if form in ("max", "direct"):
        out = max(out, float(np.abs(grid.interior(fp_rhs_direct(f, D, p))).max()))
    return out


def refinement_table(spec: SamplerSpec, bounds, hs, form="compact"):
    """Residuals over a sequence of spacings with successive ratios."""
    rows = []
    prev = None
    for h in hs:
        res = stationarity_residual(spec, Grid.box(bounds, h), form)
        ratio = prev / res if prev is not None and res > 0 else float("nan")
        rows.append((h, res, ratio))
        prev = res
    return rows


def direct_compact_gap(spec: SamplerSpec, grid: Grid, density=None) -> float:
    """Sup-norm gap between the direct and compact operators on the same density.

    ``density`` defaults to a standard normal that is *not* stationary for most
    specs, so the comparison exercises both operators away from zero.
    """
    H, D, Q, f, gh = spec_fields_on_grid(spec, grid)
    if density is None:
        z = grid.points()
        density = GridDensity(grid, np.exp(-0.5 * np.sum((z - 0.3) ** 2, axis=-1))).normalize()
    gap = fp_rhs_direct(f, D, density) - fp_rhs_compact(D, Q, H, density, gh)
    return float(np.abs(grid.interior(gap)).max())


# -- curl reconstruction -------------------------------------------------------

@dataclass(frozen=True)
class QReconstruction:
    grid: Grid
    q21: np.ndarray
    divergence_residual: float

    @property
    def q12(self) -> np.ndarray:
        return -self.q21

    def central(self, values=None):
        """Restrict a grid array to the central half of each axis."""
        values = self.q21 if values is None else values
        sl = []
        for a in self.grid.axes:
            quarter = (a.n - 1) // 4
            sl.append(slice(quarter, a.n - quarter))
        return values[tuple(sl)]


def probability_current(f: FieldOnGrid, D: FieldOnGrid, p: GridDensity) -> np.ndarray:
    """``J_i = f_i p - sum_j d_j (D_ij p)``, shape ``grid.shape + (2,)``."""
    grid = p.grid
    h = grid.spacing
    pv = p.values
    n = grid.ndim
    J = f.values * pv[..., None]
    for i in range(n):
        for j in range(n):
            J[..., i] -= _d1(D.values[..., i, j] * pv, j, h[j])
    return J


def reconstruct_q_2d(f: FieldOnGrid, D: FieldOnGrid, p: GridDensity, z0=None, tol=DIVERGENCE_TOL) -> QReconstruction:
    """Recover the curl of a 2-D stationary system from its drift and diffusion.

    With ``J`` the probability current, stationarity means ``div J = 0`` and
    ``J_1 = d_2 (Q_12 p)``; integrating along ``z_2`` from a row where
    ``Q_12 p`` vanishes gives ``Q_12``, and ``Q_21 = -Q_12``.  By default each
    cell integrates from the nearer ``z_2`` edge of the grid (where ``p`` is
    negligible), which keeps the accumulated discretization error small
    relative to ``p``; ``z0`` instead anchors every column at that ``z_2``.
    """
    grid = p.grid
    if grid.ndim != 2:
        raise ConfigurationError("curl reconstruction is implemented for 2-D systems only")
    if np.any(p.values <= 0):
        raise ConfigurationError("stationary density must be strictly positive on the grid")
    J = probability_current(f, D, p)
    h = grid.spacing
    div = _d1(J[..., 0], 0, h[0]) + _d1(J[..., 1], 1, h[1])
    residual = float(np.abs(grid.interior(div)).max())
    if residual > tol:
        raise ReconstructionError("density is not stationary for the supplied drift and diffusion", residual)
    ax = grid.axes[1]
    integral = cumulative_trapezoid(J[..., 0], dx=ax.h, axis=1, initial=0.0)
    if z0 is None:
        upper = integral - integral[:, -1:]
        integral[:, ax.n // 2:] = upper[:, ax.n // 2:]
    else:
        start = int(round((z0 - ax.lo) / ax.h))
        if not 0 <= start < ax.n:
            raise ConfigurationError("reference point lies outside the grid")
        integral = integral - integral[:, start:start + 1]
    q12 = integral / p.values
    return QReconstruction(grid, -q12, residual)


# -- sample quality ---------------------------------------------------------------

@dataclass(frozen=True)
class KLResult:
    kl: float
    bins: int
    sparse: bool
    coverage: float
    n_samples: int

    def __float__(self):
        return self.kl


def _smoothed(counts, n):
    bins = len(counts)
    return (counts / n + 1.0 / (n * bins)) / (1.0 + 1.0 / n)


def kl_histograms(p_counts, q_probs, n=None) -> float:
    """``KL(p || q)`` with ``p`` given as counts (smoothed) and ``q`` as probabilities."""
    p_counts = np.asarray(p_counts, dtype=float)
    q = np.asarray(q_probs, dtype=float)
    n = p_counts.sum() if n is None else n
    p = _smoothed(p_counts, n)
    q = q / q.sum()
    mask = p > 0
    kl = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    if not np.isfinite(kl):
        raise NumericError("KL is not finite; check the target probabilities")
    return max(0.0, kl)


def target_bin_masses(model, lo, hi, bins, resolution=64):
    """Probability of each histogram bin under normalized ``exp(-U)``, plus the mass outside ``[lo, hi]``."""
    width = hi - lo
    outer = np.linspace(lo - width, hi + width, 3 * bins * resolution + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.asarray(model.potential(outer[:, None]), dtype=float)
    # Points outside the target's domain (non-finite U) carry no mass.
    ok = np.isfinite(u)
    if not ok.any():
        raise NumericError("potential is not finite anywhere on the histogram range")
    dens = np.where(ok, np.exp(-(np.where(ok, u, 0.0) - u[ok].min())), 0.0)
    total = trapezoid(dens, outer)
    # Per-bin sums rather than differences of the cumulative integral, so far-tail
    # bins keep tiny positive masses instead of cancelling to zero.
    seg = 0.5 * (dens[1:] + dens[:-1]) * np.diff(outer) / total
    per_bin = seg.reshape(3 * bins, resolution).sum(axis=1)
    masses = np.maximum(per_bin[bins:2 * bins], np.finfo(float).tiny)
    inside = float(per_bin[bins:2 * bins].sum())
    return masses, inside


def kl_divergence(trace, target, bins: int = 50, support=(-4.0, 4.0), component: int = 0) -> KLResult:
    """Histogram KL from the samples of one theta component to ``exp(-U)``.

    Empty bins receive ``1/(n bins)`` pseudo-mass; samples outside the support
    are pooled into one extra cell compared against the target's outside mass.
    ``sparse`` is set when more than half of the bins that carry target mass
    are empty.
    """
    x = np.asarray(getattr(trace, "theta", trace), dtype=float)
    if x.ndim == 2:
        x = x[:, component]
    n = x.size
    if n < 1000:
        raise ConfigurationError(f"KL estimate needs at least 1000 samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise NumericError("trace contains non-finite samples")
    lo, hi = map(float, support)
    masses, inside = target_bin_masses(target, lo, hi, bins)
    if inside < 0.999:
        raise ConfigurationError(f"support [{lo}, {hi}] holds only {inside:.5f} of the target mass (< 0.999)")
    counts, _ = np.histogram(x, bins=bins, range=(lo, hi))
    outside = n - counts.sum()
    p_counts = np.append(counts, outside).astype(float)
    q = np.append(masses, max(1.0 - inside, 1e-300))
    kl = kl_histograms(p_counts, q, n)
    heavy = masses >= 0.1 / bins
    sparse = bool(np.mean(counts[heavy] == 0) > 0.5)
    if sparse:
        warnings.warn("more than half of the target-mass bins are empty; KL estimate is unreliable", stacklevel=2)
    return KLResult(kl, bins, sparse, inside, n)


def autocorrelation(x) -> np.ndarray:
    """Normalized autocorrelation function via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    y = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(y, size)
    acov = np.fft.irfft(spec * np.conj(spec), size)[:n] / n
    return acov / acov[0]


def autocorrelation_time(trace, max_lag: int | None = None, component: int = 0) -> float:
    """Integrated autocorrelation time with the initial positive sequence cutoff.

    Autocorrelations are summed in adjacent pairs until a pair turns
    non-positive.  Constant input has no finite time and returns ``inf``.
    """
    x = np.asarray(getattr(trace, "theta", trace), dtype=float)
    if x.ndim == 2:
        x = x[:, component]
    if not np.all(np.isfinite(x)):
        raise NumericError("trace contains non-finite values")
    n = x.size
    if max_lag is None:
        max_lag = n // 10
    if n < 10 * max_lag or max_lag < 1:
        raise ConfigurationError(f"trace length {n} must be at least 10 * max_lag ({max_lag})")
    var = np.var(x)
    if not np.isfinite(var):
        raise NumericError("variance is not finite")
    if var == 0 or var <= 1e-300:
        return float("inf")
    rho = autocorrelation(x)[: max_lag + 1]
    npairs = (len(rho)) // 2
    pairs = rho[: 2 * npairs].reshape(npairs, 2).sum(axis=1)
    positive = pairs > 0
    m = npairs if positive.all() else max(int(np.argmin(positive)), 1)
    return float(-1.0 + 2.0 * pairs[:m].sum())


# -- export ---------------------------------------------------------------------

def export_grid_csv(path, grid: Grid, values):
    """Write ``z1,z2,value`` rows (``z1,value`` for 1-D grids) with 17 significant digits."""
    values = np.asarray(values, dtype=float)
    pts = grid.points().reshape(-1, grid.ndim)
    header = ["z1", "z2"][: grid.ndim] + ["value"]
    path = Path(path)
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for pt, v in zip(pts, values.ravel()):
            fh.write(",".join(f"{c:.17g}" for c in pt) + f",{v:.17g}\n")
    return path
