"""Desk-scale experiment drivers.

Every experiment is a loop over trials, settings (dimension, radius, ...),
algorithms and particle counts.  Each combination produces one result row per
recorded iteration.  Randomness is derived from the single config seed:

* ``trial_seed(seed, trial)`` mixes the two through
  ``SeedSequence([seed, trial])``;
* inside a trial, independent generators come from
  ``SeedSequence([trial_seed, stream, setting, n])`` with the stream ids in
  :data:`STREAMS` (problem instance, reference pool, initial particles, exact
  draws);
* the particle engine is seeded with the trial seed, so kernel subsets and
  Langevin noise are reproducible per trial.

Consequently a single row is reproduced by re-running its experiment with the
same seed and trial index, regardless of how many other trials run.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .diagnostics import (
    CSV_FIELDS,
    ksd_squared,
    localization_rmse,
    mmd_squared,
    moment_errors,
)
from .engine import EngineConfig, blanket_access_audit, run
from .kernel import VARIANTS, KernelSpec, coordinate_kernels
from .model import (
    CrowdsourcingData,
    GaussianMrfParams,
    GraphicalModel,
    SensorNetwork,
    build_crowdsourcing_model,
    build_gaussian_mrf,
    build_sensor_model,
    gaussian_exact_moments,
    gaussian_exact_sample,
    gaussian_model,
    grid_graph,
    grid_points,
    radius_graph,
)

log = logging.getLogger(__name__)

__all__ = [
    "EXPERIMENTS",
    "STREAMS",
    "ExperimentConfig",
    "ExperimentResult",
    "default_config",
    "parse_algorithm",
    "trial_seed",
    "run_experiment",
    "run_iso_gaussian",
    "run_gaussian_grid",
    "run_sparsity_sweep",
    "run_gaussian_dense",
    "run_sensor",
    "run_crowdsourcing",
    "trial_problems",
    "audit_experiment",
    "builtin_models",
    "summarize",
    "langevin_pool",
    "triangulate_sensors",
    "ambiguity_split",
    "small_sensor_instance",
    "generate_crowdsourcing",
]

EXPERIMENTS = (
    "iso-gaussian", "gaussian-grid", "sparsity-sweep", "gaussian-dense", "sensor", "crowdsourcing",
)
STREAMS = {"problem": 1, "reference": 2, "init": 3, "exact": 4}
SOFT_BUDGET_SECONDS = 300.0

_VARIANT_ALIASES = {"random": "random_subset", "combine": "combined"}


def parse_algorithm(name: str) -> tuple[str, str]:
    """``"graphical-local"`` -> ``("graphical", "local")``.

    Accepted names: ``vanilla``, ``langevin``, ``exact`` and
    ``graphical-<variant>`` with variant ``local``, ``global``,
    ``random``/``random_subset`` or ``combine``/``combined``.
    """
    if name == "vanilla":
        return ("vanilla", "global")
    if name in ("langevin", "exact"):
        return (name, "none")
    head, _, variant = name.partition("-")
    variant = _VARIANT_ALIASES.get(variant, variant)
    if head != "graphical" or variant not in VARIANTS:
        raise ValueError(f"unknown algorithm {name!r}")
    return ("graphical", variant)


def trial_seed(seed: int, trial: int) -> int:
    """Seed of one trial, mixed from the config seed and trial index."""
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def _rng(tseed: int, stream: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([tseed, STREAMS[stream], *extra]))


@dataclass
class ExperimentConfig:
    """One experiment: what to run, how often and with which settings.

    ``algorithms`` holds ``(algorithm, kernel_variant)`` pairs (see
    :func:`parse_algorithm`).  ``steps`` overrides ``master_step`` per
    ``"algorithm-variant"`` or per algorithm.  ``params`` carries the
    experiment-specific knobs listed in :data:`DEFAULT_PARAMS`.
    """

    experiment: str
    algorithms: list = field(default_factory=list)
    particle_counts: list = field(default_factory=lambda: [50])
    trials: int = 10
    seed: int = 0
    iterations: int = 500
    master_step: float = 0.1
    steps: dict = field(default_factory=dict)
    checkpoint_every: int = 0
    params: dict = field(default_factory=dict)
    output: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        self.algorithms = [parse_algorithm(a) if isinstance(a, str) else tuple(a)
                           for a in self.algorithms]
        if not self.algorithms:
            raise ValueError("algorithms must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.particle_counts:
            raise ValueError("particle_counts must be nonempty")
        if any(int(n) < 1 for n in self.particle_counts):
            raise ValueError("particle counts must be positive")
        self.particle_counts = [int(n) for n in self.particle_counts]
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.master_step <= 0 or any(v <= 0 for v in self.steps.values()):
            raise ValueError("steps must be positive")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.experiment])
        if unknown:
            raise ValueError(f"unknown params for {self.experiment}: {sorted(unknown)}")
        self.params = {**DEFAULT_PARAMS[self.experiment], **self.params}

    def step_for(self, algorithm: str, variant: str) -> float:
        for key in (f"{algorithm}-{variant}", algorithm):
            if key in self.steps:
                return float(self.steps[key])
        return float(self.master_step)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["algorithms"] = [_algorithm_name(a, v) for a, v in self.algorithms]
        return out


def _algorithm_name(algorithm, variant):
    return f"graphical-{variant}" if algorithm == "graphical" else algorithm


DEFAULT_PARAMS = {
    "iso-gaussian": {"dims": [1, 10, 100], "pool": 2000},
    "gaussian-grid": {"rows": 10, "cols": 10, "pool": 2000},
    "sparsity-sweep": {"rows": 10, "cols": 10, "radii": list(range(1, 15)), "pool": 2000},
    "gaussian-dense": {"dim": 50, "pool": 2000, "subset_size": 5, "alpha": 0.5},
    "sensor": {
        "layout": "uniform", "n_sensors": 100, "sigma": 0.05, "cutoff": 0.5,
        "init": "triangulated", "init_noise": 0.1,
        "reference_chains": 10, "reference_steps": 50_000, "reference_step": 1e-4,
        "reference_thin": 250, "dump_particles": False,
    },
    "crowdsourcing": {
        "n_items": 80, "n_workers": 40, "min_workers_per_item": 1, "max_workers_per_item": 5,
        "min_items_per_worker": 3, "n_control": 10,
        "sigma_x": 5.0, "sigma_b": 5.0, "alpha": 3.0, "beta": 1.0, "eta_bound": 3.0,
        "init_noise": 0.1,
        "reference_chains": 20, "reference_steps": 50_000, "reference_step": 1e-3,
        "reference_thin": 500,
    },
}

_DEFAULTS = {
    "iso-gaussian": dict(algorithms=["vanilla", "graphical-local"], master_step=0.1,
                         iterations=500),
    "gaussian-grid": dict(algorithms=["vanilla", "graphical-local", "exact"], master_step=1.5,
                          iterations=500),
    "sparsity-sweep": dict(algorithms=["vanilla", "graphical-local"], particle_counts=[20],
                           master_step=1.5, iterations=500),
    "gaussian-dense": dict(algorithms=["vanilla", "graphical-random", "graphical-combine", "exact"],
                           master_step=1.0, iterations=500),
    "sensor": dict(algorithms=["vanilla", "graphical-local", "langevin"], iterations=300,
                   master_step=0.1, steps={"langevin": 1e-4}, trials=5),
    "crowdsourcing": dict(algorithms=["vanilla", "graphical-local", "langevin"], iterations=500,
                          master_step=1.0, steps={"langevin": 0.03}),
}


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    """Desk-scale preset for ``experiment`` with keyword overrides."""
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    base = dict(_DEFAULTS[experiment])
    params = {**base.pop("params", {}), **overrides.pop("params", {})}
    return ExperimentConfig(experiment=experiment, **{**base, **overrides}, params=params)


@dataclass
class ExperimentResult:
    rows: list
    extra_fields: tuple
    dumps: list = field(default_factory=list)
    wall_seconds: float = 0.0


@dataclass
class _Problem:
    """A target with its evaluation; built fresh for every trial and setting."""

    model: GraphicalModel
    setting: str
    initial: Callable[[int, np.random.Generator], np.ndarray]
    metrics: Callable[[np.ndarray], dict]
    init_label: str = "normal(mean=0, std=1)"
    clip_box: tuple | None = None
    exact: Callable[[int, np.random.Generator], np.ndarray] | None = None
    dump: Callable[[np.ndarray], dict] | None = None


def _normal_init(dim):
    return lambda n, rng: rng.standard_normal((n, dim))


def _ksd_local(model, x):
    if len(x) < 2:
        return float("nan")
    kernels = coordinate_kernels(KernelSpec("local"), model, x)
    return ksd_squared(x, model, kernels, "U").total


def _moment_metrics(model, x, mean, second, pool):
    mse_mean, mse_second = moment_errors(x, mean, second)
    return {
        "mse_mean": mse_mean,
        "mse_second": mse_second,
        "mmd2": mmd_squared(x, pool) if pool is not None and len(pool) else float("nan"),
        "ksd2": _ksd_local(model, x),
    }


@dataclass
class _Plan:
    """Settings of an experiment and how to build one problem per (setting, trial)."""

    settings: list
    build: Callable
    extra_fields: tuple = ()
    kernel_options: dict | None = None


def _drive(cfg: ExperimentConfig, plan: _Plan) -> ExperimentResult:
    """Shared loop: trial -> setting -> algorithm -> particle count."""
    settings, build, kernel_options = plan.settings, plan.build, plan.kernel_options
    start = time.perf_counter()
    rows, dumps = [], []
    for trial in range(cfg.trials):
        tseed = trial_seed(cfg.seed, trial)
        for s_idx, setting in enumerate(settings):
            problem = build(setting, s_idx, tseed)
            for algorithm, variant in cfg.algorithms:
                for n in cfg.particle_counts:
                    base = {
                        "n": n, "algorithm": algorithm, "kernel_variant": variant,
                        "seed": cfg.seed, "trial": trial, "setting": problem.setting,
                    }
                    if algorithm == "exact":
                        if problem.exact is None:
                            raise ValueError(f"{cfg.experiment} has no exact sampler")
                        x = problem.exact(n, _rng(tseed, "exact", s_idx, n))
                        rows.append({**base, "iteration": 0, **problem.metrics(x)})
                        continue
                    x0 = problem.initial(n, _rng(tseed, "init", s_idx, n))
                    kernel = KernelSpec(variant, **(kernel_options or {})) \
                        if algorithm == "graphical" else KernelSpec()
                    ecfg = EngineConfig(
                        algorithm=algorithm, kernel=kernel, n_particles=n,
                        iterations=cfg.iterations, step=cfg.step_for(algorithm, variant),
                        seed=tseed, clip_box=problem.clip_box,
                        checkpoint_every=cfg.checkpoint_every,
                    )
                    result = run(problem.model, ecfg, initial=x0, init_label=problem.init_label)
                    for t, x in result.checkpoints:
                        rows.append({**base, "iteration": t, **problem.metrics(x)})
                    if problem.dump is not None:
                        dumps.append({**base, "iteration": cfg.iterations,
                                      **problem.dump(result.final)})
    wall = time.perf_counter() - start
    if wall > SOFT_BUDGET_SECONDS:
        log.warning("%s took %.0f s, over the %.0f s desk budget",
                    cfg.experiment, wall, SOFT_BUDGET_SECONDS)
    else:
        log.info("%s finished in %.1f s", cfg.experiment, wall)
    return ExperimentResult(rows, tuple(plan.extra_fields), dumps, wall)


# --------------------------------------------------------------------------
# Gaussian studies


def _plan_iso_gaussian(cfg: ExperimentConfig) -> _Plan:
    """Variance of particle approximations of ``N(0, I_d)`` across ``d``.

    The ``variance`` column is the per-coordinate variance of the particles
    (as an empirical measure) averaged over coordinates; the truth is 1.
    """
    pool_size = int(cfg.params["pool"])

    def build(d, s_idx, tseed):
        params = GaussianMrfParams(np.eye(d), np.zeros(d))
        model = gaussian_model(params, name="iso-gaussian")
        pool = _rng(tseed, "reference", s_idx).standard_normal((pool_size, d))

        def metrics(x):
            return {"variance": float(np.var(x, axis=0).mean()),
                    **_moment_metrics(model, x, np.zeros(d), np.ones(d), pool)}

        return _Problem(model, f"d={d}", _normal_init(d), metrics,
                        exact=lambda n, rng: rng.standard_normal((n, d)))

    return _Plan([int(d) for d in cfg.params["dims"]], build, ("trial", "setting", "variance"))


def _gaussian_problem(edges, dim, setting, s_idx, tseed, pool_size):
    model, params = build_gaussian_mrf(edges, dim, _rng(tseed, "problem", s_idx))
    mean, cov = gaussian_exact_moments(params)
    second = mean**2 + np.diag(cov)
    pool = gaussian_exact_sample(params, pool_size, _rng(tseed, "reference", s_idx))
    return _Problem(
        model, setting, _normal_init(dim),
        lambda x: _moment_metrics(model, x, mean, second, pool),
        exact=lambda n, rng: gaussian_exact_sample(params, n, rng),
    )


def _plan_gaussian_grid(cfg: ExperimentConfig) -> _Plan:
    """Random Gaussian MRF on a 4-neighbour grid, compared with exact moments."""
    rows, cols = int(cfg.params["rows"]), int(cfg.params["cols"])
    edges = grid_graph(rows, cols)
    return _Plan(
        [f"grid={rows}x{cols}"],
        lambda s, i, ts: _gaussian_problem(edges, rows * cols, s, i, ts, int(cfg.params["pool"])),
        ("trial", "setting"),
    )


def _plan_sparsity_sweep(cfg: ExperimentConfig) -> _Plan:
    """Gaussian MRFs on radius graphs over the unit grid, one setting per radius."""
    rows, cols = int(cfg.params["rows"]), int(cfg.params["cols"])
    points = grid_points(rows, cols)

    def build(r, s_idx, tseed):
        edges = radius_graph(points, r)
        problem = _gaussian_problem(edges, rows * cols, f"r={r:g}", s_idx, tseed,
                                    int(cfg.params["pool"]))
        edge_count = len(edges)
        inner = problem.metrics
        problem.metrics = lambda x: {"edges": edge_count, **inner(x)}
        return problem

    return _Plan([float(r) for r in cfg.params["radii"]], build, ("trial", "setting", "edges"))


def _plan_gaussian_dense(cfg: ExperimentConfig) -> _Plan:
    """Fully connected Gaussian MRF, where local kernels see every coordinate."""
    d = int(cfg.params["dim"])
    edges = [(i, j) for i in range(d) for j in range(i + 1, d)]
    options = {"subset_size": int(cfg.params["subset_size"]), "alpha": float(cfg.params["alpha"])}
    return _Plan(
        [f"complete={d}"],
        lambda s, i, ts: _gaussian_problem(edges, d, s, i, ts, int(cfg.params["pool"])),
        ("trial", "setting"), options,
    )


# --------------------------------------------------------------------------
# reference pools


def langevin_pool(model, start, chains: int, steps: int, step: float, thin: int,
                  rng: np.random.Generator, clip_box=None) -> np.ndarray:
    """Reference draws from parallel unadjusted Langevin chains.

    All chains start at ``start``; the first half of each chain is discarded
    and every ``thin``-th state of the second half is kept.
    """
    x = np.tile(np.asarray(start, dtype=float), (chains, 1))
    lower = upper = None
    if clip_box is not None:
        lower, upper = clip_box
    burn = steps // 2
    kept = []
    sd = np.sqrt(step)
    for t in range(1, steps + 1):
        x = x + 0.5 * step * model.score(x) + sd * rng.standard_normal(x.shape)
        if lower is not None:
            x = np.clip(x, lower, upper)
        if t > burn and (t - burn) % thin == 0:
            kept.append(x.copy())
    return np.concatenate(kept) if kept else np.zeros((0, model.dim))


def _pool_moments(pool):
    if len(pool) == 0:
        return None, None
    return pool.mean(0), (pool**2).mean(0)


# --------------------------------------------------------------------------
# sensor localization

CORNER_ANCHORS = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])

# Nine sensors and three corner anchors with the upper-right anchor missing.
# Sensor 8 is ranged only by sensors 0 and 6 (cutoff 1.0), so its position
# is determined up to reflection through the line joining them; every other
# sensor is pinned down by at least three measurements.
SMALL_ANCHORS = CORNER_ANCHORS[:3]
SMALL_SENSORS = np.array([
    [0.26, 0.6], [0.05, -0.75], [-0.6, 0.38], [-0.62, -0.9], [-0.08, 0.76],
    [-0.31, -0.48], [0.4, -0.23], [-0.8, -0.54], [0.8, 0.2],
])
SMALL_CUTOFF = 1.0
SMALL_AMBIGUOUS = (8,)


def small_sensor_instance(rng: np.random.Generator, sigma: float = 0.05):
    """The nine-sensor network with an ambiguous node; returns ``(model, net)``."""
    return build_sensor_model(SMALL_ANCHORS, SMALL_SENSORS, sigma, SMALL_CUTOFF, rng)


def _partners(net: SensorNetwork, sensor: int) -> list:
    pts = []
    for (i, j) in net.sensor_pairs:
        if i == sensor:
            pts.append(net.true_positions[j])
        elif j == sensor:
            pts.append(net.true_positions[i])
    for (i, a) in net.anchor_pairs:
        if i == sensor:
            pts.append(net.anchors[a])
    return pts


def ambiguity_split(particles, net: SensorNetwork, sensor: int) -> float:
    """Smaller fraction of a sensor's particles on either side of its mirror line.

    The sensor must be ranged by exactly two nodes; the mirror line joins
    their true positions, and its two half-planes hold the two reflected
    posterior modes.
    """
    pts = _partners(net, sensor)
    if len(pts) != 2:
        raise ValueError(f"sensor {sensor} has {len(pts)} measurements, expected 2")
    p, q = pts
    normal = np.array([-(q - p)[1], (q - p)[0]])
    pos = np.asarray(particles, dtype=float)[:, 2 * sensor:2 * sensor + 2]
    frac = float(np.mean((pos - p) @ normal > 0))
    return min(frac, 1.0 - frac)


def triangulate_sensors(net: SensorNetwork, refine: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Positions from measured ranges alone (MDS-MAP).

    Shortest-path distances over the measurement graph (anchors included and
    joined by their known separations) are embedded in the plane by
    classical multidimensional scaling, then mapped onto the anchors by the
    best similarity transform.  With ``refine`` the located sensors are then
    moved to a local least-squares fit of the measured ranges.  Returns
    ``(positions, located)``; sensors not connected to any anchor are not
    located and get position 0.
    """
    m, k = net.n_sensors, len(net.anchors)
    ai, aj = np.triu_indices(k, 1)
    rows = np.concatenate([net.sensor_pairs[:, 0], net.anchor_pairs[:, 0], m + ai])
    cols = np.concatenate([net.sensor_pairs[:, 1], m + net.anchor_pairs[:, 1], m + aj])
    weights = np.concatenate([
        net.sensor_distances, net.anchor_distances,
        np.linalg.norm(net.anchors[ai] - net.anchors[aj], axis=1),
    ])
    graph = coo_matrix((np.maximum(weights, 1e-9), (rows, cols)), shape=(m + k, m + k)).tocsr()
    _, labels = connected_components(graph, directed=False)
    keep = np.flatnonzero(labels == labels[m])
    positions = np.zeros((m, 2))
    located = np.zeros(m, dtype=bool)
    if k < 2 or len(keep) < 3:
        return positions, located

    dist = shortest_path(graph, directed=False, indices=keep)[:, keep]
    size = len(keep)
    center = np.eye(size) - 1.0 / size
    gram = -0.5 * center @ (dist**2) @ center
    vals, vecs = np.linalg.eigh(gram)
    embed = vecs[:, -2:] * np.sqrt(np.maximum(vals[-2:], 0.0))

    where = {node: row for row, node in enumerate(keep)}
    src = embed[[where[m + a] for a in range(k)]]
    dst = net.anchors
    src_c, dst_c = src - src.mean(0), dst - dst.mean(0)
    rot, s = scipy.linalg.orthogonal_procrustes(src_c, dst_c)
    scale = s / max((src_c**2).sum(), 1e-12)
    mapped = (embed - src.mean(0)) @ rot * scale + dst.mean(0)

    sensors = keep[keep < m]
    positions[sensors] = mapped[[where[s_] for s_ in sensors]]
    located[sensors] = True
    if refine:
        positions = _fit_ranges(net, positions)
    return positions, located


def _fit_ranges(net: SensorNetwork, start: np.ndarray) -> np.ndarray:
    si, sj = net.sensor_pairs.T
    ai, aa = net.anchor_pairs.T

    def residuals(flat):
        pos = flat.reshape(-1, 2)
        return np.concatenate([
            np.linalg.norm(pos[si] - pos[sj], axis=1) - net.sensor_distances,
            np.linalg.norm(pos[ai] - net.anchors[aa], axis=1) - net.anchor_distances,
        ])

    if len(si) + len(ai) == 0:
        return start
    fit = scipy.optimize.least_squares(residuals, start.ravel(), method="trf")
    return fit.x.reshape(-1, 2)


def _sensor_initial(net, mode, noise):
    lo, hi = net.anchors.min(0), net.anchors.max(0)
    m = net.n_sensors

    if mode == "normal":
        return (lambda n, rng: rng.standard_normal((n, 2 * m))), "normal(mean=0, std=1)"
    if mode == "uniform":
        return (lambda n, rng: rng.uniform(lo, hi, (n, m, 2)).reshape(n, -1)), "uniform(anchor box)"
    if mode != "triangulated":
        raise ValueError(f"unknown sensor init {mode!r}")

    est, located = triangulate_sensors(net)
    # fewer than three ranges cannot fix a point in the plane
    spread = ~located | (net.degree() < 3)

    def initial(n, rng):
        x = est[None] + noise * rng.standard_normal((n, m, 2))
        x[:, spread] = rng.uniform(lo, hi, (n, int(spread.sum()), 2))
        return x.reshape(n, -1)

    return initial, f"triangulated + normal(std={noise}); uniform(anchor box) if under 3 ranges"


def _plan_sensor(cfg: ExperimentConfig) -> _Plan:
    """Sensor localization: RMSE against the truth and moments against a Langevin pool.

    ``layout="uniform"`` draws ``n_sensors`` positions on ``[-1, 1]^2`` with
    four corner anchors; ``layout="small"`` is the fixed nine-sensor network
    whose ambiguous node is reported in the ``split`` column.
    """
    p = cfg.params
    small = p["layout"] == "small"
    if p["layout"] not in ("uniform", "small"):
        raise ValueError(f"unknown sensor layout {p['layout']!r}")

    def build(_, s_idx, tseed):
        rng = _rng(tseed, "problem", s_idx)
        if small:
            model, net = small_sensor_instance(rng, float(p["sigma"]))
        else:
            truth = rng.uniform(-1.0, 1.0, (int(p["n_sensors"]), 2))
            model, net = build_sensor_model(CORNER_ANCHORS, truth, float(p["sigma"]),
                                            float(p["cutoff"]), rng)
        truth_vec = net.true_positions.ravel()
        pool = np.zeros((0, model.dim))
        if int(p["reference_steps"]) > 0:
            pool = langevin_pool(model, truth_vec, int(p["reference_chains"]),
                                 int(p["reference_steps"]), float(p["reference_step"]),
                                 int(p["reference_thin"]), _rng(tseed, "reference", s_idx))
        mean, second = _pool_moments(pool)

        def metrics(x):
            out = {"rmse": localization_rmse(x, net.true_positions)}
            if mean is not None:
                out.update(_moment_metrics(model, x, mean, second, pool))
            else:
                out["ksd2"] = _ksd_local(model, x)
            if small:
                out["split"] = min(ambiguity_split(x, net, s) for s in SMALL_AMBIGUOUS)
            return out

        initial, label = _sensor_initial(net, p["init"], float(p["init_noise"]))
        dump = None
        if p["dump_particles"]:
            def dump(x):
                return {"anchors": net.anchors.tolist(),
                        "true_positions": net.true_positions.tolist(),
                        "particles": x.reshape(len(x), -1, 2).tolist()}
        return _Problem(model, "small" if small else f"sensors={net.n_sensors}",
                        initial, metrics, init_label=label, dump=dump)

    extra = ("trial", "setting") + (("split",) if small else ())
    return _Plan([p["layout"]], build, extra)


# --------------------------------------------------------------------------
# crowdsourcing


def generate_crowdsourcing(rng: np.random.Generator, n_items=80, n_workers=40,
                           min_workers_per_item=1, max_workers_per_item=5,
                           min_items_per_worker=3, n_control=10, sigma_x=5.0, sigma_b=5.0,
                           alpha=3.0, beta=1.0):
    """Synthetic labels from the bias-variance worker model.

    Each item gets a uniform number of distinct workers in
    ``[min_workers_per_item, max_workers_per_item]``; workers left with fewer
    than ``min_items_per_worker`` items are then topped up with random items
    that still have room.  ``n_control`` random items have known answers.

    Returns ``(data, truth)`` with ``truth = {"x", "b", "nu"}``.
    """
    if min_items_per_worker * n_workers > max_workers_per_item * n_items:
        raise ValueError("too many workers for every one to reach the minimum item count")
    if max_workers_per_item > n_workers or min_items_per_worker > n_items:
        raise ValueError("assignment bounds exceed the number of workers or items")
    if not 0 <= n_control < n_items:
        raise ValueError("n_control must leave at least one free item")
    x = sigma_x * rng.standard_normal(n_items)
    b = sigma_b * rng.standard_normal(n_workers)
    nu = 1.0 / rng.gamma(alpha, 1.0 / beta, n_workers)

    assigned = np.zeros((n_items, n_workers), dtype=bool)
    for i in range(n_items):
        k = rng.integers(min_workers_per_item, max_workers_per_item + 1)
        assigned[i, rng.choice(n_workers, size=k, replace=False)] = True
    for j in range(n_workers):
        while assigned[:, j].sum() < min_items_per_worker:
            room = np.flatnonzero(~assigned[:, j] & (assigned.sum(1) < max_workers_per_item))
            if len(room) == 0:
                room = np.flatnonzero(~assigned[:, j])
            assigned[rng.choice(room), j] = True

    items, workers = np.nonzero(assigned)
    labels = x[items] + b[workers] + np.sqrt(nu[workers]) * rng.standard_normal(len(items))
    controls = np.sort(rng.choice(n_items, size=n_control, replace=False))
    data = CrowdsourcingData(
        items=items, workers=workers, labels=labels, n_items=n_items, n_workers=n_workers,
        control={int(i): float(x[i]) for i in controls},
        sigma_x=sigma_x, sigma_b=sigma_b, alpha=alpha, beta=beta,
    )
    return data, {"x": x, "b": b, "nu": nu}


def _crowd_truth_vector(data, truth, eta_bound):
    eta = np.clip(np.log(truth["nu"]), -eta_bound, eta_bound)
    return np.concatenate([truth["x"][data.free_items], truth["b"], eta])


def _plan_crowdsourcing(cfg: ExperimentConfig) -> _Plan:
    """Worker-bias model on synthetic data; ``label_mse`` scores the free items."""
    p = cfg.params
    gen_keys = ("n_items", "n_workers", "min_workers_per_item", "max_workers_per_item",
                "min_items_per_worker", "n_control", "sigma_x", "sigma_b", "alpha", "beta")

    def build(_, s_idx, tseed):
        data, truth = generate_crowdsourcing(_rng(tseed, "problem", s_idx),
                                             **{k: p[k] for k in gen_keys})
        model = build_crowdsourcing_model(data)
        eta_bound = float(p["eta_bound"])
        box = data.clip_box(eta_bound)
        free = data.free_items
        x_true = truth["x"][free]
        pool = np.zeros((0, model.dim))
        if int(p["reference_steps"]) > 0:
            pool = langevin_pool(model, _crowd_truth_vector(data, truth, eta_bound),
                                 int(p["reference_chains"]), int(p["reference_steps"]),
                                 float(p["reference_step"]), int(p["reference_thin"]),
                                 _rng(tseed, "reference", s_idx), clip_box=box)
        mean, second = _pool_moments(pool)

        sums = np.bincount(data.items, weights=data.labels, minlength=data.n_items)
        counts = np.bincount(data.items, minlength=data.n_items)
        base = np.concatenate([(sums / np.maximum(counts, 1))[free],
                               np.zeros(2 * data.n_workers)])
        noise = float(p["init_noise"])

        def initial(n, rng):
            return np.clip(base + noise * rng.standard_normal((n, model.dim)), *box)

        def metrics(x):
            out = {"label_mse": float(np.mean((x[:, :len(free)].mean(0) - x_true) ** 2))}
            if mean is not None:
                out.update(_moment_metrics(model, x, mean, second, pool))
            else:
                out["ksd2"] = _ksd_local(model, x)
            return out

        return _Problem(model, f"items={data.n_items},workers={data.n_workers}", initial, metrics,
                        init_label=f"(item mean label, 0, 0) + normal(std={noise})",
                        clip_box=box)

    return _Plan(["crowd"], build, ("trial", "setting", "label_mse"))


# --------------------------------------------------------------------------

_PLANS = {
    "iso-gaussian": _plan_iso_gaussian,
    "gaussian-grid": _plan_gaussian_grid,
    "sparsity-sweep": _plan_sparsity_sweep,
    "gaussian-dense": _plan_gaussian_dense,
    "sensor": _plan_sensor,
    "crowdsourcing": _plan_crowdsourcing,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return _drive(cfg, _PLANS[cfg.experiment](cfg))


def run_iso_gaussian(cfg: ExperimentConfig) -> ExperimentResult:
    """Variance of particle approximations of ``N(0, I_d)`` for each ``d`` in ``dims``."""
    return _drive(cfg, _plan_iso_gaussian(cfg))


def run_gaussian_grid(cfg: ExperimentConfig) -> ExperimentResult:
    """Random Gaussian MRF on a 4-neighbour grid against exact moments and draws."""
    return _drive(cfg, _plan_gaussian_grid(cfg))


def run_sparsity_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Gaussian MRFs on radius graphs of the unit grid, one setting per radius."""
    return _drive(cfg, _plan_sparsity_sweep(cfg))


def run_gaussian_dense(cfg: ExperimentConfig) -> ExperimentResult:
    """Fully connected Gaussian MRF."""
    return _drive(cfg, _plan_gaussian_dense(cfg))


def run_sensor(cfg: ExperimentConfig) -> ExperimentResult:
    """Sensor localization; see ``_plan_sensor`` for the layouts."""
    return _drive(cfg, _plan_sensor(cfg))


def run_crowdsourcing(cfg: ExperimentConfig) -> ExperimentResult:
    """Worker bias-variance model on synthetic labels."""
    return _drive(cfg, _plan_crowdsourcing(cfg))


def trial_problems(cfg: ExperimentConfig, trial: int = 0):
    """``(setting, model)`` for every setting of one trial, without running anything."""
    plan = _PLANS[cfg.experiment](cfg)
    tseed = trial_seed(cfg.seed, trial)
    for s_idx, setting in enumerate(plan.settings):
        problem = plan.build(setting, s_idx, tseed)
        yield problem.setting, problem.model


def audit_experiment(cfg: ExperimentConfig, trial: int = 0, n_particles: int = 10) -> list:
    """Blanket-access audit of every graphical algorithm in ``cfg`` on its trial models.

    Returns ``(setting, algorithm name, AuditReport)`` triples.  Without a
    graphical algorithm in the config the local-kernel variant is audited.
    """
    variants = [v for a, v in cfg.algorithms if a == "graphical"] or ["local"]
    tseed = trial_seed(cfg.seed, trial)
    out = []
    for setting, model in trial_problems(cfg, trial):
        for variant in variants:
            ecfg = EngineConfig(algorithm="graphical", kernel=KernelSpec(variant),
                                n_particles=n_particles, seed=tseed)
            out.append((setting, f"graphical-{variant}", blanket_access_audit(model, ecfg)))
    return out


def builtin_models(seed: int = 0) -> dict:
    """One small seeded instance of every model family, keyed by name."""
    rng = np.random.default_rng(seed)
    models = {}
    models["iso-gaussian"] = gaussian_model(GaussianMrfParams(np.eye(5), np.zeros(5)), "iso-gaussian")
    models["gaussian-grid"] = build_gaussian_mrf(grid_graph(4, 4), 16, rng)[0]
    models["gaussian-dense"] = build_gaussian_mrf(
        [(i, j) for i in range(8) for j in range(i + 1, 8)], 8, rng)[0]
    truth = rng.uniform(-1.0, 1.0, (20, 2))
    models["sensor"] = build_sensor_model(CORNER_ANCHORS, truth, 0.05, 0.5, rng)[0]
    models["sensor-small"] = small_sensor_instance(rng)[0]
    data, _ = generate_crowdsourcing(rng, n_items=20, n_workers=8, n_control=3)
    models["crowdsourcing"] = build_crowdsourcing_model(data)
    return models


def summarize(rows, metrics=None) -> list:
    """Mean and standard error over trials per (setting, algorithm, variant, n, iteration).

    ``stderr`` is the sample standard deviation over trials divided by
    ``sqrt(trials)``; it is NaN for a single trial.
    """
    metrics = metrics or [f for f in CSV_FIELDS[5:]] + ["variance", "label_mse", "split"]
    groups = {}
    for row in rows:
        key = (row.get("setting"), row["algorithm"], row["kernel_variant"], row["n"],
               row["iteration"])
        groups.setdefault(key, []).append(row)
    out = []
    for (setting, alg, variant, n, it), members in groups.items():
        for metric in metrics:
            vals = np.array([r[metric] for r in members if metric in r], dtype=float)
            vals = vals[~np.isnan(vals)]
            if len(vals) == 0:
                continue
            stderr = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else float("nan")
            out.append({"setting": setting, "algorithm": alg, "kernel_variant": variant, "n": n,
                        "iteration": it, "metric": metric, "mean": float(vals.mean()),
                        "stderr": stderr, "trials": len(vals)})
    return out
