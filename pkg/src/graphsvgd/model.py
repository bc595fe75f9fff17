"""Continuous graphical models built from clique potentials.

A model is ``log p(x) = sum_s psi_s(x_s) + const`` where each potential acts on
a small index set ``s``.  The Markov blanket of a node is every other node it
shares a potential with.  Three families are provided: pairwise Gaussian MRFs,
the sensor-localization posterior and the bias-variance crowdsourcing model.

Every potential works on batched inputs: ``log_value`` maps ``(..., |s|)`` to
``(...)`` and ``grad`` maps ``(..., |s|)`` to ``(..., |s|)``.  Models may also
carry vectorized whole-model score/density functions; those are only a fast
path and must agree with the potential-by-potential evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse

__all__ = [
    "CliquePotential",
    "GraphicalModel",
    "GaussianMrfParams",
    "NotPositiveDefiniteError",
    "SensorNetwork",
    "CrowdsourcingData",
    "GradientCheckReport",
    "blanket",
    "log_density_unnorm",
    "score_coordinate",
    "score",
    "grid_graph",
    "grid_points",
    "radius_graph",
    "build_gaussian_mrf",
    "gaussian_model",
    "gaussian_exact_moments",
    "gaussian_exact_sample",
    "build_sensor_model",
    "build_crowdsourcing_model",
    "check_gradients",
]


class NotPositiveDefiniteError(ValueError):
    """Raised when a precision matrix fails its Cholesky factorization."""


@dataclass(frozen=True)
class CliquePotential:
    scope: tuple[int, ...]
    log_value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        scope = tuple(int(j) for j in self.scope)
        if len(scope) == 0:
            raise ValueError("potential scope must be nonempty")
        if any(a >= b for a, b in zip(scope, scope[1:])):
            raise ValueError(f"scope {scope} must be sorted and distinct")
        if scope[0] < 0:
            raise ValueError(f"scope {scope} has a negative index")
        object.__setattr__(self, "scope", scope)


def blanket(potentials: Sequence[CliquePotential], dim: int, i: int) -> tuple[int, ...]:
    """Markov blanket of node ``i``: nodes sharing a potential with ``i``."""
    if not 0 <= i < dim:
        raise IndexError(f"node {i} out of range for dim {dim}")
    members: set[int] = set()
    for pot in potentials:
        if pot.scope[-1] >= dim:
            raise ValueError(f"scope {pot.scope} exceeds dim {dim}")
        if i in pot.scope:
            members.update(pot.scope)
    members.discard(i)
    return tuple(sorted(members))


class GraphicalModel:
    """An unnormalized density ``exp(sum of clique potentials)`` over R^dim.

    Parameters
    ----------
    dim : int
        Number of scalar variables.
    potentials : sequence of CliquePotential
    fast_score, fast_log_density : callable, optional
        Vectorized replacements for the potential loop, ``(n, dim) -> (n, dim)``
        and ``(n, dim) -> (n,)``.
    name : str
    """

    def __init__(
        self,
        dim: int,
        potentials: Sequence[CliquePotential],
        *,
        fast_score: Callable[[np.ndarray], np.ndarray] | None = None,
        fast_log_density: Callable[[np.ndarray], np.ndarray] | None = None,
        name: str = "model",
    ):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self.potentials = tuple(potentials)
        self.name = name
        self._fast_score = fast_score
        self._fast_log_density = fast_log_density

        touching: list[list[int]] = [[] for _ in range(self.dim)]
        neighbors: list[set[int]] = [set() for _ in range(self.dim)]
        for k, pot in enumerate(self.potentials):
            if pot.scope[-1] >= self.dim:
                raise ValueError(f"scope {pot.scope} exceeds dim {self.dim}")
            for j in pot.scope:
                touching[j].append(k)
                neighbors[j].update(pot.scope)
        self._touching = tuple(tuple(t) for t in touching)
        self.blankets = tuple(
            tuple(sorted(nb - {i})) for i, nb in enumerate(neighbors)
        )
        self.closed_blankets = tuple(
            tuple(sorted(set(nb) | {i})) for i, nb in enumerate(self.blankets)
        )

    def __repr__(self):
        return f"GraphicalModel(name={self.name!r}, dim={self.dim}, potentials={len(self.potentials)})"

    def _check_index(self, i):
        if not 0 <= i < self.dim:
            raise IndexError(f"node {i} out of range for dim {self.dim}")

    def potentials_of(self, i: int) -> tuple[CliquePotential, ...]:
        self._check_index(i)
        return tuple(self.potentials[k] for k in self._touching[i])

    def log_density(self, x) -> np.ndarray | float:
        """Sum of potentials at ``x`` of shape ``(dim,)`` or ``(n, dim)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dimension {self.dim}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("log density requested at a non-finite point")
        if self._fast_log_density is not None:
            batch = np.atleast_2d(x)
            out = self._fast_log_density(batch)
        else:
            out = self.log_density_slow(x)
        return float(out[0]) if x.ndim == 1 and np.ndim(out) else out

    def log_density_slow(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        total = np.zeros(x.shape[0])
        for pot in self.potentials:
            total = total + pot.log_value(x[:, pot.scope])
        return total

    def score_coordinate(self, x, i: int):
        """``d/dx_i log p(x)`` touching only the potentials that contain ``i``.

        ``x`` may be a single point, a particle matrix, or any object whose
        ``x[..., cols]`` indexing returns an array (used by the access audit).
        """
        self._check_index(i)
        if not self._touching[i]:
            lead = np.shape(x)[:-1]
            return np.zeros(lead) if lead else 0.0
        total = 0.0
        for k in self._touching[i]:
            pot = self.potentials[k]
            g = pot.grad(x[..., pot.scope])
            total = total + g[..., pot.scope.index(i)]
        return total if np.ndim(total) else float(total)

    def score(self, x) -> np.ndarray:
        """Full gradient of the log density, same shape as ``x``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dimension {self.dim}, got {x.shape}")
        if self._fast_score is not None:
            out = self._fast_score(np.atleast_2d(x))
            return out[0] if x.ndim == 1 else out
        return self.score_slow(x)

    def score_slow(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for pot in self.potentials:
            out[..., pot.scope] += pot.grad(x[..., pot.scope])
        return out


def log_density_unnorm(model: GraphicalModel, x):
    return model.log_density(x)


def score_coordinate(model: GraphicalModel, x, i: int):
    return model.score_coordinate(x, i)


def score(model: GraphicalModel, x):
    return model.score(x)


# --------------------------------------------------------------------------
# graphs


def grid_points(rows: int, cols: int) -> np.ndarray:
    """Unit-spaced grid coordinates in row-major order, shape ``(rows*cols, 2)``."""
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.column_stack([r, c]).astype(float)


def grid_graph(rows: int, cols: int) -> list[tuple[int, int]]:
    """4-neighborhood grid edges, row-major node numbering."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return sorted(edges)


def radius_graph(points, r: float) -> list[tuple[int, int]]:
    """All pairs ``i < j`` with Euclidean distance at most ``r``."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    pts = np.asarray(points, dtype=float)
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    ii, jj = np.nonzero(np.triu(dist <= r, k=1))
    return [(int(a), int(b)) for a, b in zip(ii, jj)]


def _validate_edges(edges, dim):
    seen = set()
    for a, b in edges:
        if a == b:
            raise ValueError(f"self-loop on node {a}")
        if not (0 <= a < dim and 0 <= b < dim):
            raise ValueError(f"edge {(a, b)} out of range for dim {dim}")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ValueError(f"duplicate edge {key}")
        seen.add(key)
    return sorted(seen)


# --------------------------------------------------------------------------
# Gaussian MRF


@dataclass(frozen=True)
class GaussianMrfParams:
    """Precision ``A`` and linear term ``b`` of ``log p = b.x - x.A.x / 2``."""

    A: np.ndarray
    b: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"A": self.A.tolist(), "b": self.b.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "GaussianMrfParams":
        obj = json.loads(text)
        return cls(np.asarray(obj["A"], dtype=float), np.asarray(obj["b"], dtype=float))


def _singleton_potential(i, b_i, a_ii):
    return CliquePotential(
        (i,),
        lambda xs: b_i * xs[..., 0] - 0.5 * a_ii * xs[..., 0] ** 2,
        lambda xs: b_i - a_ii * xs,
    )


def _pair_potential(i, j, a_ij):
    # one clique per undirected edge carries the full -A_ij x_i x_j
    return CliquePotential(
        (i, j),
        lambda xs: -a_ij * xs[..., 0] * xs[..., 1],
        lambda xs: -a_ij * xs[..., ::-1],
    )


def gaussian_model(params: GaussianMrfParams, name: str = "gaussian-mrf") -> GraphicalModel:
    """Graphical model for given ``(A, b)``; edges are the nonzero off-diagonals."""
    A = np.asarray(params.A, dtype=float)
    b = np.asarray(params.b, dtype=float)
    d = b.shape[0]
    pots = [_singleton_potential(i, b[i], A[i, i]) for i in range(d)]
    ii, jj = np.nonzero(np.triu(A, k=1))
    pots += [_pair_potential(int(i), int(j), A[i, j]) for i, j in zip(ii, jj)]

    def fast_score(x):
        return b - x @ A

    def fast_log_density(x):
        return x @ b - 0.5 * np.einsum("ni,ni->n", x @ A, x)

    return GraphicalModel(
        d, pots, fast_score=fast_score, fast_log_density=fast_log_density, name=name
    )


def build_gaussian_mrf(edges, dim: int, rng: np.random.Generator):
    """Random diagonally dominant Gaussian MRF on the given edge set.

    ``b_i ~ N(0, 1)``; for each undirected edge both ``A_ij`` and ``A_ji`` are
    drawn from ``U[-0.1, 0.1]`` before symmetrizing, then
    ``A_ii = 0.1 + sum_j |A_ij|``.

    Returns
    -------
    (GraphicalModel, GaussianMrfParams)
    """
    edges = _validate_edges(edges, dim)
    b = rng.standard_normal(dim)
    A = np.zeros((dim, dim))
    if edges:
        e = np.asarray(edges)
        draws = rng.uniform(-0.1, 0.1, size=(len(edges), 2))
        A[e[:, 0], e[:, 1]] = draws[:, 0]
        A[e[:, 1], e[:, 0]] = draws[:, 1]
    A = (A + A.T) / 2
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, 0.1 + np.abs(A).sum(axis=1))
    params = GaussianMrfParams(A, b)
    return gaussian_model(params), params


def _cholesky(A):
    try:
        return scipy.linalg.cholesky(A, lower=True)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefiniteError(str(err)) from err


def gaussian_exact_moments(params: GaussianMrfParams):
    """Mean ``A^-1 b`` and covariance ``A^-1``."""
    L = _cholesky(params.A)
    factor = (L, True)
    mean = scipy.linalg.cho_solve(factor, params.b)
    cov = scipy.linalg.cho_solve(factor, np.eye(len(params.b)))
    cov = (cov + cov.T) / 2
    return mean, cov


def gaussian_exact_sample(params: GaussianMrfParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` exact draws from ``N(A^-1 b, A^-1)`` as an ``(n, d)`` array."""
    d = len(params.b)
    if n == 0:
        return np.zeros((0, d))
    L = _cholesky(params.A)
    mean = scipy.linalg.cho_solve((L, True), params.b)
    z = rng.standard_normal((n, d))
    # A = L L^T, so L^-T z has covariance A^-1
    return mean + scipy.linalg.solve_triangular(L, z.T, lower=True, trans="T").T


# --------------------------------------------------------------------------
# sensor network localization


@dataclass(frozen=True)
class SensorNetwork:
    """Measurements behind a sensor-localization posterior.

    ``sensor_pairs`` rows are ``(i, j)`` sensor indices with distances
    ``sensor_distances``; ``anchor_pairs`` rows are ``(i, a)`` sensor/anchor
    indices with ``anchor_distances``.  Sensor ``i`` owns coordinates
    ``2i, 2i + 1``.
    """

    anchors: np.ndarray
    true_positions: np.ndarray
    sigma: float
    cutoff: float
    sensor_pairs: np.ndarray
    sensor_distances: np.ndarray
    anchor_pairs: np.ndarray
    anchor_distances: np.ndarray

    @property
    def n_sensors(self) -> int:
        return len(self.true_positions)

    def degree(self) -> np.ndarray:
        deg = np.zeros(self.n_sensors, dtype=int)
        np.add.at(deg, self.sensor_pairs.ravel(), 1)
        np.add.at(deg, self.anchor_pairs[:, 0], 1)
        return deg


def _unit_and_dist(diff):
    dist = np.sqrt(np.einsum("...k,...k->...", diff, diff))
    # coincident points divide by inf, giving the zero direction
    unit = diff / np.where(dist > 0, dist, np.inf)[..., None]
    return unit, dist


def _sensor_pair_potential(i, j, r, sigma):
    inv = 1.0 / sigma**2

    def log_value(xs):
        diff = xs[..., 0:2] - xs[..., 2:4]
        dist = np.sqrt((diff**2).sum(-1))
        return -0.5 * inv * (dist - r) ** 2

    def grad(xs):
        unit, dist = _unit_and_dist(xs[..., 0:2] - xs[..., 2:4])
        g = -inv * (dist - r)[..., None] * unit
        return np.concatenate([g, -g], axis=-1)

    # sensor i < j, so coordinates 2i, 2i+1 come first in sorted scope
    return CliquePotential((2 * i, 2 * i + 1, 2 * j, 2 * j + 1), log_value, grad)


def _anchor_potential(i, anchor, r, sigma):
    inv = 1.0 / sigma**2
    anchor = np.asarray(anchor, dtype=float)

    def log_value(xs):
        dist = np.sqrt(((xs - anchor) ** 2).sum(-1))
        return -0.5 * inv * (dist - r) ** 2

    def grad(xs):
        unit, dist = _unit_and_dist(xs - anchor)
        return -inv * (dist - r)[..., None] * unit

    return CliquePotential((2 * i, 2 * i + 1), log_value, grad)


def build_sensor_model(anchor_positions, true_sensor_positions, sigma: float, cutoff: float,
                       rng: np.random.Generator):
    """Posterior over sensor locations given noisy range measurements.

    Every sensor-sensor and sensor-anchor pair closer than ``cutoff`` gets a
    measurement ``|x_i - x_j| + sigma * eps``.  Noise is drawn for sensor pairs
    in ``(i, j)`` lexicographic order, then sensor-anchor pairs in ``(i, a)``
    order.  Anchors are constants; the prior on sensors is flat.

    Returns
    -------
    (GraphicalModel, SensorNetwork)
    """
    if sigma <= 0 or cutoff <= 0:
        raise ValueError("sigma and cutoff must be positive")
    anchors = np.asarray(anchor_positions, dtype=float).reshape(-1, 2)
    truth = np.asarray(true_sensor_positions, dtype=float).reshape(-1, 2)

    sdist = np.sqrt(((truth[:, None] - truth[None]) ** 2).sum(-1))
    si, sj = np.nonzero(np.triu(sdist < cutoff, k=1))
    s_r = sdist[si, sj] + sigma * rng.standard_normal(len(si))
    adist = np.sqrt(((truth[:, None] - anchors[None]) ** 2).sum(-1))
    ai, aa = np.nonzero(adist < cutoff)
    a_r = adist[ai, aa] + sigma * rng.standard_normal(len(ai))

    net = SensorNetwork(
        anchors=anchors,
        true_positions=truth,
        sigma=float(sigma),
        cutoff=float(cutoff),
        sensor_pairs=np.column_stack([si, sj]).astype(int).reshape(-1, 2),
        sensor_distances=s_r,
        anchor_pairs=np.column_stack([ai, aa]).astype(int).reshape(-1, 2),
        anchor_distances=a_r,
    )
    pots = [_sensor_pair_potential(int(i), int(j), r, sigma) for i, j, r in zip(si, sj, s_r)]
    pots += [_anchor_potential(int(i), anchors[a], r, sigma) for i, a, r in zip(ai, aa, a_r)]
    # an unmeasured sensor still forms one 2-D block
    pots += [_zero_potential((2 * int(i), 2 * int(i) + 1)) for i in np.flatnonzero(net.degree() == 0)]
    return _sensor_graphical_model(net, pots), net


def _zero_potential(scope):
    return CliquePotential(scope, lambda xs: np.zeros(xs.shape[:-1]), np.zeros_like)


def _sensor_graphical_model(net: SensorNetwork, pots):
    m = net.n_sensors
    inv = 1.0 / net.sigma**2
    si, sj = net.sensor_pairs[:, 0], net.sensor_pairs[:, 1]
    ai, aa = net.anchor_pairs[:, 0], net.anchor_pairs[:, 1]
    anchor_pts = net.anchors[aa]

    def residuals(pos):
        unit_s, dist_s = _unit_and_dist(pos[:, si] - pos[:, sj])
        unit_a, dist_a = _unit_and_dist(pos[:, ai] - anchor_pts)
        return unit_s, dist_s - net.sensor_distances, unit_a, dist_a - net.anchor_distances

    def fast_log_density(x):
        pos = x.reshape(len(x), m, 2)
        _, res_s, _, res_a = residuals(pos)
        return -0.5 * inv * ((res_s**2).sum(-1) + (res_a**2).sum(-1))

    # signed incidence of measurements on sensors: residual gradients are
    # scattered back to sensors with one sparse product
    e_s, e_a = len(si), len(ai)
    incidence = scipy.sparse.csr_matrix(
        (np.concatenate([np.ones(e_s), -np.ones(e_s), np.ones(e_a)]),
         (np.concatenate([si, sj, ai]), np.concatenate([np.arange(e_s), np.arange(e_s),
                                                         e_s + np.arange(e_a)]))),
        shape=(m, e_s + e_a),
    )

    def fast_score(x):
        pos = x.reshape(len(x), m, 2)
        unit_s, res_s, unit_a, res_a = residuals(pos)
        g = -inv * np.concatenate([res_s[..., None] * unit_s, res_a[..., None] * unit_a], axis=1)
        # (batch, E, 2) -> (E, batch * 2) -> (m, batch * 2)
        out = incidence @ g.transpose(1, 0, 2).reshape(e_s + e_a, -1)
        return out.reshape(m, len(x), 2).transpose(1, 0, 2).reshape(len(x), 2 * m)

    return GraphicalModel(
        2 * m, pots, fast_score=fast_score, fast_log_density=fast_log_density, name="sensor"
    )


# --------------------------------------------------------------------------
# crowdsourcing


@dataclass(frozen=True)
class CrowdsourcingData:
    """Labels ``r`` for ``(item, worker)`` pairs plus known control answers.

    ``control`` maps item index to its known value.  Parameter layout of the
    model built from this is ``[x of free items, b per worker, eta per worker]``
    with ``eta = log(nu)``.
    """

    items: np.ndarray
    workers: np.ndarray
    labels: np.ndarray
    n_items: int
    n_workers: int
    control: dict[int, float] = field(default_factory=dict)
    sigma_x: float = 5.0
    sigma_b: float = 5.0
    alpha: float = 3.0
    beta: float = 1.0

    @property
    def free_items(self) -> np.ndarray:
        return np.array([i for i in range(self.n_items) if i not in self.control], dtype=int)

    @property
    def dim(self) -> int:
        return len(self.free_items) + 2 * self.n_workers

    def x_index(self) -> np.ndarray:
        """Parameter index of each item's ``x``, ``-1`` for control items."""
        idx = -np.ones(self.n_items, dtype=int)
        idx[self.free_items] = np.arange(len(self.free_items))
        return idx

    def b_index(self, j):
        return len(self.free_items) + np.asarray(j)

    def eta_index(self, j):
        return len(self.free_items) + self.n_workers + np.asarray(j)

    def clip_box(self, eta_bound: float = 3.0):
        """Per-coordinate ``(lower, upper)`` bounds clipping only ``eta``."""
        lower = np.full(self.dim, -np.inf)
        upper = np.full(self.dim, np.inf)
        eta = self.eta_index(np.arange(self.n_workers))
        lower[eta], upper[eta] = -eta_bound, eta_bound
        return lower, upper


def _gauss_prior_potential(k, sigma):
    c = 1.0 / sigma**2
    return CliquePotential((k,), lambda xs: -0.5 * c * xs[..., 0] ** 2, lambda xs: -c * xs)


def _eta_prior_potential(k, alpha, beta):
    # inverse-gamma prior on nu = exp(eta) including the log-Jacobian
    return CliquePotential(
        (k,),
        lambda xs: -alpha * xs[..., 0] - beta * np.exp(-xs[..., 0]),
        lambda xs: -alpha + beta * np.exp(-xs),
    )


def _free_label_potential(kx, kb, ke, r):
    def log_value(xs):
        x, b, eta = xs[..., 0], xs[..., 1], xs[..., 2]
        return -0.5 * eta - 0.5 * (r - x - b) ** 2 * np.exp(-eta)

    def grad(xs):
        x, b, eta = xs[..., 0], xs[..., 1], xs[..., 2]
        e = r - x - b
        w = np.exp(-eta)
        return np.stack([e * w, e * w, -0.5 + 0.5 * e**2 * w], axis=-1)

    return CliquePotential((kx, kb, ke), log_value, grad)


def _control_label_potential(kb, ke, r, x_known):
    def log_value(xs):
        b, eta = xs[..., 0], xs[..., 1]
        return -0.5 * eta - 0.5 * (r - x_known - b) ** 2 * np.exp(-eta)

    def grad(xs):
        b, eta = xs[..., 0], xs[..., 1]
        e = r - x_known - b
        w = np.exp(-eta)
        return np.stack([e * w, -0.5 + 0.5 * e**2 * w], axis=-1)

    return CliquePotential((kb, ke), log_value, grad)


def build_crowdsourcing_model(data: CrowdsourcingData) -> GraphicalModel:
    """Posterior over ``theta = [x_free, b, log nu]`` for the bias-variance model.

    Control items carry no prior term; their known value enters the labels'
    likelihood as a constant.
    """
    items = np.asarray(data.items, dtype=int)
    workers = np.asarray(data.workers, dtype=int)
    labels = np.asarray(data.labels, dtype=float)
    counts = np.bincount(workers, minlength=data.n_workers)
    if np.any(counts == 0):
        raise ValueError(f"workers without assignments: {np.flatnonzero(counts == 0).tolist()}")
    if min(data.sigma_x, data.sigma_b, data.alpha, data.beta) <= 0:
        raise ValueError("hyperparameters must be positive")

    F, W = len(data.free_items), data.n_workers
    xi = data.x_index()
    pots = [_gauss_prior_potential(k, data.sigma_x) for k in range(F)]
    pots += [_gauss_prior_potential(F + j, data.sigma_b) for j in range(W)]
    pots += [_eta_prior_potential(F + W + j, data.alpha, data.beta) for j in range(W)]
    for item, j, r in zip(items, workers, labels):
        if xi[item] >= 0:
            pots.append(_free_label_potential(int(xi[item]), F + int(j), F + W + int(j), r))
        else:
            pots.append(_control_label_potential(F + int(j), F + W + int(j), r, data.control[int(item)]))

    is_free = xi[items] >= 0
    kx = xi[items]
    known = np.array([data.control.get(int(i), 0.0) for i in items])
    kb, ke = F + workers, F + W + workers
    cx, cb = 1.0 / data.sigma_x**2, 1.0 / data.sigma_b**2

    def pieces(theta):
        x_item = np.where(is_free, theta[:, np.maximum(kx, 0)], known)
        e = labels - x_item - theta[:, kb]
        w = np.exp(-theta[:, ke])
        return e, w

    def fast_log_density(theta):
        e, w = pieces(theta)
        eta = theta[:, F + W:]
        out = -0.5 * cx * (theta[:, :F] ** 2).sum(-1) - 0.5 * cb * (theta[:, F:F + W] ** 2).sum(-1)
        out = out + (-data.alpha * eta - data.beta * np.exp(-eta)).sum(-1)
        return out + (-0.5 * theta[:, ke] - 0.5 * e**2 * w).sum(-1)

    def fast_score(theta):
        e, w = pieces(theta)
        out = np.zeros_like(theta)
        out[:, :F] = -cx * theta[:, :F]
        out[:, F:F + W] = -cb * theta[:, F:F + W]
        out[:, F + W:] = -data.alpha + data.beta * np.exp(-theta[:, F + W:])
        ew = e * w
        np.add.at(out, (slice(None), kx[is_free]), ew[:, is_free])
        np.add.at(out, (slice(None), kb), ew)
        np.add.at(out, (slice(None), ke), -0.5 + 0.5 * e * ew)
        return out

    return GraphicalModel(
        data.dim, pots, fast_score=fast_score, fast_log_density=fast_log_density,
        name="crowdsourcing",
    )


# --------------------------------------------------------------------------
# gradient verification


@dataclass(frozen=True)
class GradientCheckReport:
    max_error: float
    tol: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max abs-or-rel error {self.max_error:.3e} (tol {self.tol:.0e}, {self.trials} trials)"


def finite_difference_score(model: GraphicalModel, x: np.ndarray) -> np.ndarray:
    """Central differences of the log density, step ``1e-5 * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    d = model.dim
    steps = 1e-5 * np.maximum(1.0, np.abs(x))
    probes = np.repeat(x[None], 2 * d, axis=0)
    probes[np.arange(d), np.arange(d)] += steps
    probes[d + np.arange(d), np.arange(d)] -= steps
    vals = np.atleast_1d(model.log_density(probes))
    return (vals[:d] - vals[d:]) / (2 * steps)


def check_gradients(model: GraphicalModel, trials: int = 10, tol: float = 1e-4,
                    rng: np.random.Generator | None = None, points=None) -> GradientCheckReport:
    """Compare ``model.score`` and every ``score_coordinate`` against finite differences.

    Error per entry is ``|analytic - numeric| / max(1, |numeric|)``.  Points
    default to standard normal draws.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    pts = rng.standard_normal((trials, model.dim)) if points is None else np.atleast_2d(points)
    worst = 0.0
    for x in pts:
        numeric = finite_difference_score(model, x)
        scale = np.maximum(1.0, np.abs(numeric))
        worst = max(worst, float(np.max(np.abs(model.score(x) - numeric) / scale)))
        per_coord = np.array([model.score_coordinate(x, i) for i in range(model.dim)])
        worst = max(worst, float(np.max(np.abs(per_coord - numeric) / scale)))
    return GradientCheckReport(worst, tol, len(pts))
