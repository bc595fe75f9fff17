"""Particle dynamics: vanilla SVGD, graphical SVGD and unadjusted Langevin.

Particle sets are plain ``(n, d)`` float arrays, one particle per row.

Graphical SVGD moves coordinate ``i`` of every particle along

    phi_i(x) = 1/n sum_l [ s_i(x^l) k_i(x^l, x) + d/dx^l_i k_i(x^l, x) ]

with ``s_i`` the ``i``-th component of the score and ``k_i`` the coordinate
kernel (see :mod:`graphsvgd.kernel`).  With every ``k_i`` equal to one global
RBF kernel this is ordinary SVGD.  All coordinates are updated from the same
pre-step particles.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .kernel import (
    CoordinateKernel,
    KernelBank,
    KernelSpec,
    coordinate_kernels,
    kernels_and_bank,
    median_bandwidth,
)

__all__ = [
    "ALGORITHMS",
    "NonFiniteError",
    "EngineConfig",
    "OptimizerState",
    "RunLog",
    "RunResult",
    "AuditReport",
    "svgd_direction_vanilla",
    "graphical_direction",
    "graphical_direction_column",
    "adagrad_step",
    "plain_step",
    "langevin_step",
    "initial_particles",
    "run",
    "blanket_access_audit",
]

ALGORITHMS = ("vanilla", "graphical", "langevin")


class NonFiniteError(RuntimeError):
    """A score or particle became NaN/inf."""

    def __init__(self, message, iteration=None, particle=None):
        super().__init__(message)
        self.iteration = iteration
        self.particle = particle


def _finite_scores(model, particles):
    s = model.score(particles)
    bad = ~np.all(np.isfinite(s), axis=1)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise NonFiniteError(f"non-finite score at particle {idx}", particle=idx)
    return s


# --------------------------------------------------------------------------
# directions


def svgd_direction_vanilla(particles, model, bandwidth=None) -> np.ndarray:
    """SVGD direction with one RBF kernel shared by all coordinates.

    ``bandwidth`` may be a float, a :class:`CoordinateKernel` (its bandwidth is
    used) or ``None`` for the median trick on ``particles``.
    """
    x = np.asarray(particles, dtype=float)
    n = len(x)
    if isinstance(bandwidth, CoordinateKernel):
        bandwidth = bandwidth.bandwidth
    h = median_bandwidth(x) if bandwidth is None else float(bandwidth)
    s = _finite_scores(model, x)
    diff = x[:, None, :] - x[None, :, :]
    K = np.exp(-(diff**2).sum(-1) / h)
    drive = K.T @ s
    # sum_l d/dx^l k(x^l, x^m) = -2/h sum_l (x^l - x^m) k(x^l, x^m)
    repulse = -2.0 / h * np.einsum("lmi,lm->mi", diff, K)
    return (drive + repulse) / n


def graphical_direction(particles, model, kernels) -> np.ndarray:
    """Graphical SVGD direction for a list of ``d`` coordinate kernels."""
    x = np.asarray(particles, dtype=float)
    n = len(x)
    xt = x.T
    diff = xt[:, :, None] - xt[:, None, :]
    return _combine(x, model, KernelBank(kernels, x, diff2=diff**2), diff)


def _combine(x, model, bank, diff):
    s = _finite_scores(model, x)
    drive = np.einsum("li,ilm->mi", s, bank.K)
    repulse = -2.0 * np.einsum("ilm,ilm->mi", diff, bank.W1)
    return (drive + repulse) / len(x)


def graphical_direction_column(x, model, kernel: CoordinateKernel, i: int) -> np.ndarray:
    """Column ``i`` of the graphical direction, reading as few columns as possible.

    ``x`` only needs to support ``x[:, cols]`` indexing, so an access-recording
    wrapper can be passed to audit which columns the update touches.
    """
    dom = list(kernel.domain)
    sub = np.asarray(x[:, dom], dtype=float)
    n = sub.shape[0]
    s_i = np.asarray(model.score_coordinate(x, i), dtype=float)
    xi = sub[:, dom.index(i)]
    delta = xi[:, None] - xi[None, :]

    k = kernel.alpha * np.exp(-((sub[:, None] - sub[None]) ** 2).sum(-1) / kernel.bandwidth)
    w1 = k / kernel.bandwidth
    if kernel.combined:
        full = np.asarray(x[:, :], dtype=float)
        g = (1 - kernel.alpha) * np.exp(-((full[:, None] - full[None]) ** 2).sum(-1) / kernel.global_bandwidth)
        k = k + g
        w1 = w1 + g / kernel.global_bandwidth
    return (k.T @ s_i - 2.0 * (delta * w1).sum(0)) / n


# --------------------------------------------------------------------------
# steps


@dataclass
class OptimizerState:
    """AdaGrad state: per-entry sum of squared directions."""

    step: float
    accumulator: np.ndarray
    fudge: float = 1e-6

    @classmethod
    def zeros(cls, shape, step, fudge=1e-6):
        return cls(float(step), np.zeros(shape), float(fudge))


def _clip(x, clip_box):
    if clip_box is None:
        return x
    lower, upper = clip_box
    return np.clip(x, lower, upper)


def adagrad_step(particles, direction, state: OptimizerState, clip_box=None):
    """``x += step * g / (sqrt(sum g^2) + fudge)`` entrywise, then clip.

    Returns ``(particles, state)``; the input arrays are not modified.
    """
    acc = state.accumulator + direction**2
    moved = particles + state.step * direction / (np.sqrt(acc) + state.fudge)
    return _clip(moved, clip_box), replace(state, accumulator=acc)


def plain_step(particles, direction, step, clip_box=None):
    return _clip(particles + step * direction, clip_box)


def langevin_step(particles, model, step, rng: np.random.Generator, clip_box=None):
    """Unadjusted Langevin: ``x + step/2 * score + sqrt(step) * N(0, I)``."""
    x = np.asarray(particles, dtype=float)
    if step == 0:
        return x.copy()
    s = _finite_scores(model, x)
    noise = rng.standard_normal(x.shape)
    return _clip(x + 0.5 * step * s + np.sqrt(step) * noise, clip_box)


# --------------------------------------------------------------------------
# driver


@dataclass
class EngineConfig:
    """Settings for one particle run.

    ``step`` is the AdaGrad master step (or the fixed step for
    ``optimizer="plain"`` and for Langevin).  ``clip_box`` is an optional
    ``(lower, upper)`` pair of per-coordinate bounds applied after each step.
    Initial particles are ``init_mean + init_std * N(0, I)`` unless given to
    :func:`run`.  ``checkpoint_every=0`` records only the final state.
    """

    algorithm: str = "graphical"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    n_particles: int = 50
    iterations: int = 500
    step: float = 0.1
    optimizer: str = "adagrad"
    fudge: float = 1e-6
    seed: int = 0
    clip_box: tuple | None = None
    checkpoint_every: int = 0
    init_mean: float = 0.0
    init_std: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.optimizer not in ("adagrad", "plain"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.n_particles < 1:
            raise ValueError("need at least one particle")

    @property
    def kernel_variant(self) -> str:
        if self.algorithm == "vanilla":
            return "global"
        if self.algorithm == "langevin":
            return "none"
        return self.kernel.variant


@dataclass
class RunLog:
    algorithm: str
    kernel_variant: str
    seed: int
    init: str
    checkpoints: list = field(default_factory=list)
    wall_seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class RunResult:
    final: np.ndarray
    checkpoints: list
    log: RunLog


def _streams(seed):
    init, kernel, noise = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(kernel),
            np.random.default_rng(noise))


def initial_particles(config: EngineConfig, dim: int) -> np.ndarray:
    """Default initialization, drawn from the config seed's ``init`` stream."""
    rng, _, _ = _streams(config.seed)
    return config.init_mean + config.init_std * rng.standard_normal((config.n_particles, dim))


def _direction(x, model, config, kernel_rng, frozen_h):
    if config.algorithm == "vanilla":
        h = median_bandwidth(x, config.kernel.floor) if frozen_h is None else frozen_h[0]
        if config.kernel.bandwidth is not None:
            h = config.kernel.bandwidth
        return svgd_direction_vanilla(x, model, h), np.array([h])
    kernels, bank, diff = kernels_and_bank(config.kernel, model, x, kernel_rng, bandwidths=frozen_h)
    return _combine(x, model, bank, diff), np.array([k.bandwidth for k in kernels])


def run(model, config: EngineConfig, initial=None, init_label: str = "supplied") -> RunResult:
    """Run ``config.iterations`` steps of the configured dynamics.

    ``init_label`` describes caller-supplied ``initial`` particles in the log.

    Random streams are spawned from ``config.seed`` in a fixed order:
    initialization, kernel subset draws, Langevin noise.  The same seed and
    config give a bit-identical trajectory.
    """
    _, kernel_rng, noise_rng = _streams(config.seed)
    if initial is None:
        x = initial_particles(config, model.dim)
        init_desc = f"normal(mean={config.init_mean}, std={config.init_std})"
    else:
        x = np.array(initial, dtype=float)
        init_desc = init_label
    if x.shape[1] != model.dim:
        raise ValueError(f"initial particles have {x.shape[1]} columns, model has {model.dim}")

    log = RunLog(config.algorithm, config.kernel_variant, config.seed, init_desc)
    checkpoints = []
    state = OptimizerState.zeros(x.shape, config.step, config.fudge)
    frozen_h = None
    start = time.perf_counter()
    bandwidths = np.array([])
    direction = np.zeros_like(x)

    def record(t):
        checkpoints.append((t, x.copy()))
        log.checkpoints.append({
            "iteration": t,
            "elapsed": time.perf_counter() - start,
            "bandwidths": bandwidths.tolist(),
            "direction_rms": float(np.sqrt(np.mean(direction**2))) if direction.size else 0.0,
        })

    if config.checkpoint_every:
        record(0)
    for t in range(1, config.iterations + 1):
        try:
            if config.algorithm == "langevin":
                new = langevin_step(x, model, config.step, noise_rng, config.clip_box)
                direction = new - x
            else:
                direction, bandwidths = _direction(x, model, config, kernel_rng, frozen_h)
                if not config.kernel.recompute_bandwidth and frozen_h is None:
                    frozen_h = bandwidths
                if config.optimizer == "adagrad":
                    new, state = adagrad_step(x, direction, state, config.clip_box)
                else:
                    new = plain_step(x, direction, config.step, config.clip_box)
        except NonFiniteError as err:
            raise NonFiniteError(f"iteration {t}: {err}", iteration=t, particle=err.particle) from err
        bad = ~np.all(np.isfinite(new), axis=1)
        if bad.any():
            idx = int(np.flatnonzero(bad)[0])
            raise NonFiniteError(f"iteration {t}: particle {idx} became non-finite", iteration=t, particle=idx)
        x = new
        if config.checkpoint_every and t % config.checkpoint_every == 0:
            record(t)
    if not checkpoints or checkpoints[-1][0] != config.iterations:
        record(config.iterations)
    log.wall_seconds = time.perf_counter() - start
    return RunResult(x, checkpoints, log)


# --------------------------------------------------------------------------
# locality audit


class AccessRecorder:
    """Read-only wrapper around a particle matrix that logs which columns are read."""

    def __init__(self, data):
        self._data = np.asarray(data)
        self.columns: set[int] = set()

    @property
    def shape(self):
        return self._data.shape

    @property
    def ndim(self):
        return self._data.ndim

    def __getitem__(self, key):
        cols = key[-1] if isinstance(key, tuple) else slice(None)
        if cols is Ellipsis:
            cols = slice(None)
        elif isinstance(cols, tuple):
            cols = list(cols)
        self.columns.update(int(c) for c in np.atleast_1d(np.arange(self._data.shape[1])[cols]))
        return self._data[key]

    def __array__(self, dtype=None, copy=None):
        self.columns.update(range(self._data.shape[1]))
        return self._data if dtype is None else self._data.astype(dtype)


@dataclass
class AuditReport:
    reads: list
    allowed: list
    closed_blankets: list
    max_deviation: float

    @property
    def passed(self) -> bool:
        """Every coordinate read only its kernel domain and closed blanket."""
        return all(r <= a for r, a in zip(self.reads, self.allowed))

    @property
    def blanket_local(self) -> bool:
        """Every coordinate read only its closed blanket."""
        return all(r <= set(c) for r, c in zip(self.reads, self.closed_blankets))

    def summary(self) -> str:
        widest = max((len(r) for r in self.reads), default=0)
        return (f"{'PASS' if self.passed else 'FAIL'} audit: blanket_local={self.blanket_local} "
                f"max columns read={widest} max deviation from batched path={self.max_deviation:.2e}")


def blanket_access_audit(model, config: EngineConfig, particles=None) -> AuditReport:
    """Recompute one graphical step column by column through :class:`AccessRecorder`.

    Also reports how far the column-wise path is from the batched direction.
    """
    x = initial_particles(config, model.dim) if particles is None else np.asarray(particles, dtype=float)
    _, kernel_rng, _ = _streams(config.seed)
    spec = KernelSpec(variant="global") if config.algorithm == "vanilla" else config.kernel
    kernels = coordinate_kernels(spec, model, x, kernel_rng)
    batched = graphical_direction(x, model, kernels)

    reads, allowed, dev = [], [], 0.0
    for i, ker in enumerate(kernels):
        view = AccessRecorder(x)
        col = graphical_direction_column(view, model, ker, i)
        dev = max(dev, float(np.max(np.abs(col - batched[:, i]))))
        reads.append(view.columns)
        domain = set(range(model.dim)) if ker.combined else set(ker.domain)
        allowed.append(domain | set(model.closed_blankets[i]))
    return AuditReport(reads, allowed, [list(c) for c in model.closed_blankets], dev)
