"""Chain runner and sample traces.

Chains advance in lockstep on a ``(n_chains, d)`` array.  Each chain owns
three random streams spawned from its seed (diffusion noise, momentum refresh,
gradient noise), so a chain's output depends only on its own seed, not on how
many chains share the batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import SamplerSpec, advance
from .errors import ConfigurationError, NumericError
from .presets import RawUpdater, leapfrog, momentum_sampler
from .state import StateVector

BLOCK = 4096


@dataclass
class Trace:
    """Recorded theta samples of one chain (plus optional auxiliary blocks)."""

    theta: np.ndarray
    steps: np.ndarray
    epsilon: np.ndarray
    seed: int | None = None
    preset: str = "custom"
    aux: dict = field(default_factory=dict)
    diverged: bool = False
    divergence_step: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.steps)

    @property
    def dim(self) -> int:
        return self.theta.shape[1]

    def to_csv(self, path):
        """Write ``step,epsilon,theta_0,...`` rows and a ``.meta.json`` sidecar."""
        path = Path(path)
        header = ",".join(["step", "epsilon"] + [f"theta_{i}" for i in range(self.dim)])
        with path.open("w") as fh:
            fh.write(header + "\n")
            for s, e, row in zip(self.steps, self.epsilon, self.theta):
                fh.write(f"{int(s)},{e:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")
        side = {"preset": self.preset, "seed": self.seed, "diverged": self.diverged,
                "divergence_step": self.divergence_step, "length": len(self), **self.meta}
        meta_path(path).write_text(json.dumps(side, indent=2, sort_keys=True, default=str) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "Trace":
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        side = meta_path(path)
        meta = json.loads(side.read_text()) if side.exists() else {}
        extra = {k: v for k, v in meta.items() if k not in ("preset", "seed", "diverged", "divergence_step", "length")}
        return cls(data[:, 2:], data[:, 0].astype(np.int64), data[:, 1], meta.get("seed"), meta.get("preset", "custom"),
                   diverged=meta.get("diverged", False), divergence_step=meta.get("divergence_step"), meta=extra)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


class _Normals:
    """Block-buffered standard normals, one generator per chain."""

    def __init__(self, rngs, dim):
        self.rngs = rngs
        self.dim = dim
        self.pos = BLOCK
        self.buf = None

    def take(self):
        if self.pos == BLOCK:
            self.buf = np.stack([rng.standard_normal((BLOCK, self.dim)) for rng in self.rngs], axis=1)
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


def _chain_streams(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(3)]


def _stack_init(init, n_chains, layout):
    if isinstance(init, StateVector):
        init = [init] * n_chains
    if isinstance(init, (list, tuple)) and init and isinstance(init[0], StateVector):
        for s in init:
            if s.layout != layout:
                raise ConfigurationError(f"initial state layout {s.layout.blocks} does not match {layout.blocks}")
        z = np.stack([s.flatten() for s in init])
    else:
        z = np.atleast_2d(np.asarray(init, dtype=float))
        if z.shape[0] == 1 and n_chains > 1:
            z = np.repeat(z, n_chains, axis=0)
    if z.shape != (n_chains, layout.dim):
        raise ConfigurationError(f"initial states must have shape {(n_chains, layout.dim)}, got {z.shape}")
    return z.copy()


def run_chains(spec, init, n_steps: int, seeds, record_every: int = 1, gradient=None, keep_aux=False,
               record_init=False) -> list[Trace]:
    """Advance one chain per seed in lockstep and return their traces.

    ``gradient`` attaches a stochastic potential-gradient oracle; without it
    the chains use exact gradients.  Oracles exposing ``batch(theta, normals)``
    are evaluated for all chains at once, others are called per chain as
    ``gradient(theta, rng)``.  A chain whose state stops being finite is frozen
    and its trace ends with ``diverged`` set.
    """
    if n_steps < 1:
        raise ConfigurationError("n_steps must be >= 1")
    if record_every < 1:
        raise ConfigurationError("record_every must be >= 1")
    seeds = [int(s) for s in seeds]
    n = len(seeds)
    raw = isinstance(spec, RawUpdater)
    engine_spec = spec.inner if raw else spec
    if not isinstance(engine_spec, SamplerSpec):
        raise ConfigurationError("run_chains needs a SamplerSpec or RawUpdater")
    model = spec.model
    lay = model.layout
    d = lay.dim
    th = lay.slice("theta")
    z = _stack_init(init, n, lay)

    streams = [_chain_streams(s) for s in seeds]
    diff_normals = _Normals([s[0] for s in streams], d)
    mom_normals = _Normals([s[1] for s in streams], lay.size("r")) if "r" in lay else None
    batched_grad = gradient is not None and hasattr(gradient, "batch")
    grad_normals = _Normals([s[2] for s in streams], model.dim) if batched_grad else None
    draw_mom = momentum_sampler(model) if mom_normals is not None else None

    refresh = spec.momentum_refresh
    boundary = spec.boundary
    leap = spec.integrator == "leapfrog"
    deterministic = engine_spec.deterministic

    n_rec = n_steps // record_every + int(record_init)
    rec_theta = np.empty((n_rec, n, lay.size("theta")))
    rec_aux = {name: np.empty((n_rec, n, lay.size(name))) for name in lay.names if name != "theta"} if keep_aux else {}
    rec_steps = np.empty(n_rec, dtype=np.int64)
    rec_eps = np.empty(n_rec)
    counts = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    div_step = [None] * n
    k = 0

    def record(step, eps):
        nonlocal k
        rec_theta[k] = z[:, th]
        for name, arr in rec_aux.items():
            arr[k] = z[:, lay.slice(name)]
        rec_steps[k] = step
        rec_eps[k] = eps
        counts[alive] += 1
        k += 1

    if record_init:
        record(0, engine_spec.schedule(0))

    with np.errstate(all="ignore"):
        for t in range(n_steps):
            if refresh and t > 0 and t % refresh == 0:
                z[:, lay.slice("r")] = draw_mom(mom_normals.take())
            eps = engine_spec.schedule(t)
            theta = z[:, th]
            if gradient is None:
                theta_grad = None
            elif batched_grad:
                theta_grad = gradient.batch(theta, grad_normals.take())
            else:
                theta_grad = np.stack([gradient(theta[i], streams[i][2]) for i in range(n)])
            if leap:
                z_new = leapfrog(engine_spec, z, eps, theta_grad)
            else:
                grad_h = model.grad(z, theta_grad=theta_grad)
                z_new = advance(engine_spec, z, eps, grad_h,
                                normals=None if deterministic else diff_normals.take(), check=False)
            if boundary is not None:
                z_new = boundary(z_new)
            ok = np.isfinite(z_new).all(axis=1)
            if not ok.all():
                for i in np.flatnonzero(~ok & alive):
                    div_step[i] = t + 1
                alive &= ok
                z_new[~alive] = z[~alive]
            z = z_new
            if (t + 1) % record_every == 0:
                record(t + 1, eps)
            if not alive.any():
                break

    traces = []
    for i, seed in enumerate(seeds):
        c = counts[i]
        traces.append(Trace(rec_theta[:c, i].copy(), rec_steps[:c].copy(), rec_eps[:c].copy(), seed,
                            engine_spec.name, aux={name: arr[:c, i].copy() for name, arr in rec_aux.items()},
                            diverged=div_step[i] is not None, divergence_step=div_step[i],
                            meta={"n_steps": n_steps, "record_every": record_every}))
    return traces


def run_chain(spec, init, n_steps: int, record_every: int = 1, rng=None, gradient=None, keep_aux=False,
              record_init=False) -> Trace:
    """Single-chain convenience wrapper; ``rng`` is a seed or a Generator to draw one from."""
    if rng is None:
        seed = 0
    elif isinstance(rng, np.random.Generator):
        seed = int(rng.integers(2**63))
    else:
        seed = int(rng)
    return run_chains(spec, init, n_steps, [seed], record_every, gradient, keep_aux, record_init)[0]


def final_states(trace: Trace):
    if not len(trace):
        raise NumericError("trace is empty")
    return trace.theta[-1]
