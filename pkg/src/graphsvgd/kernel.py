"""Gaussian RBF kernels attached to individual coordinates.

Each coordinate ``i`` is updated with its own kernel ``k_i`` that only looks at
the sub-vector ``x[D_i]``:

* ``global``        ``D_i`` is every coordinate (ordinary SVGD),
* ``local``         ``D_i`` is the closed Markov blanket of ``i``,
* ``random_subset`` ``D_i`` is ``i`` plus a few blanket members redrawn per call,
* ``combined``      ``alpha * k_i(x[D_i], y[D_i]) + (1 - alpha) * k(x, y)``.

All kernels are ``exp(-|u - v|^2 / h)``.  Bandwidths follow the median trick
``h = med^2`` on the particles restricted to the kernel's domain.  Gaussian
RBF kernels are strictly integrally positive definite on their own domain,
which is what makes the coordinate-wise Stein discrepancy discriminative for
the conditionals of each node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse

__all__ = [
    "VARIANTS",
    "KernelSpec",
    "CoordinateKernel",
    "KernelBank",
    "rbf_eval",
    "median_bandwidth",
    "kernel_domains",
    "coordinate_kernels",
    "kernels_and_bank",
    "domain_mask",
    "sq_diffs",
    "restricted_sq_dists",
    "k_eval",
    "k_grad_first",
    "k_cross_second",
]

VARIANTS = ("global", "local", "random_subset", "combined")
DEFAULT_FLOOR = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    """How coordinate kernels are built.

    ``combined_base`` selects the domain of the local half of a combined
    kernel (``"random_subset"`` or ``"local"``).  ``bandwidth`` fixes ``h``
    instead of using the median trick.  With ``recompute_bandwidth=False``
    the engine keeps the bandwidths chosen on the initial particles.
    """

    variant: str = "local"
    subset_size: int = 5
    alpha: float = 0.5
    combined_base: str = "random_subset"
    bandwidth: float | None = None
    floor: float = DEFAULT_FLOOR
    recompute_bandwidth: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}; expected one of {VARIANTS}")
        if self.combined_base not in ("random_subset", "local"):
            raise ValueError(f"combined_base must be 'random_subset' or 'local', got {self.combined_base!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.subset_size < 1:
            raise ValueError("subset_size must be at least 1")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("fixed bandwidth must be positive")
        if self.floor <= 0:
            raise ValueError("bandwidth floor must be positive")

    @property
    def randomized(self) -> bool:
        return self.variant == "random_subset" or (
            self.variant == "combined" and self.combined_base == "random_subset"
        )


@dataclass(frozen=True)
class CoordinateKernel:
    """Kernel used for one coordinate.

    For a combined kernel ``alpha`` weights the domain-restricted part and
    ``global_bandwidth`` is the bandwidth of the full-vector part; for pure
    kernels ``alpha`` is 1.
    """

    domain: tuple[int, ...]
    bandwidth: float
    alpha: float = 1.0
    global_bandwidth: float | None = None

    @property
    def combined(self) -> bool:
        return self.alpha < 1.0


def rbf_eval(u, v, h: float) -> float:
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError("vectors must have equal length")
    return float(np.exp(-np.sum((u - v) ** 2) / h))


def _lower_median(values, axis=0):
    m = values.shape[axis]
    k = (m - 1) // 2
    return np.take(np.partition(values, k, axis=axis), k, axis=axis)


def median_bandwidth(points, floor: float = DEFAULT_FLOOR) -> float:
    """``max(med^2, floor)`` with ``med`` the lower median pairwise distance."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = len(pts)
    if n < 2:
        return float(floor)
    iu = np.triu_indices(n, k=1)
    sq = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)[iu]
    # the median of squared distances is the square of the median distance
    return float(max(_lower_median(sq), floor))


def sq_diffs(particles) -> np.ndarray:
    """Squared coordinate differences, ``out[j, l, m] = (x[l, j] - x[m, j])^2``."""
    xt = np.asarray(particles, dtype=float).T
    return (xt[:, :, None] - xt[:, None, :]) ** 2


def restricted_sq_dists(diff2, domains) -> np.ndarray:
    """``out[c, l, m] = sum_{j in domains[c]} diff2[j, l, m]``."""
    d, n, _ = diff2.shape
    if all(len(dom) == d for dom in domains):
        return np.broadcast_to(diff2.sum(0), (len(domains), n, n))
    if len(domains) == d and all(tuple(dom) == (i,) for i, dom in enumerate(domains)):
        return diff2
    mask = domain_mask(domains, d)
    flat = diff2.reshape(d, n * n)
    if mask.sum() < 0.25 * mask.size:
        out = scipy.sparse.csr_matrix(mask.T) @ flat
    else:
        out = mask.T @ flat
    return out.reshape(len(domains), n, n)


def _median_bandwidths(sq, floor):
    """Lower median over ``l < m`` of each ``sq[c]`` (symmetric, zero diagonal)."""
    c, n, _ = sq.shape
    if n < 2:
        return np.full(c, floor)
    k = (n * (n - 1) // 2 - 1) // 2
    # sorted full matrix: n diagonal zeros, then every off-diagonal value twice
    kth = n + 2 * k
    return np.maximum(np.partition(sq.reshape(c, n * n), kth, axis=1)[:, kth], floor)


def _subset_domains(model, size, rng):
    domains = []
    for i, nb in enumerate(model.blankets):
        take = min(size - 1, len(nb))
        extra = rng.choice(np.asarray(nb, dtype=int), size=take, replace=False) if take else []
        domains.append(tuple(sorted({i, *map(int, extra)})))
    return domains


def kernel_domains(spec: KernelSpec, model, rng: np.random.Generator | None = None):
    """Domain ``D_i`` of every coordinate kernel; random subsets consume ``rng``."""
    d = model.dim
    if spec.variant == "global":
        return [tuple(range(d))] * d
    if spec.variant == "local" or (spec.variant == "combined" and spec.combined_base == "local"):
        return list(model.closed_blankets)
    if rng is None:
        raise ValueError("random-subset kernels need an rng")
    return _subset_domains(model, spec.subset_size, rng)


def coordinate_kernels(spec: KernelSpec, model, particles, rng: np.random.Generator | None = None,
                       bandwidths=None, sq=None) -> list[CoordinateKernel]:
    """Build the ``d`` coordinate kernels for the current particles.

    ``bandwidths`` (optional) overrides the domain bandwidths, e.g. to keep the
    values picked at initialization.  ``sq`` may pass precomputed
    domain-restricted squared distances (only valid together with the domains
    they were computed for, so not for random subsets).
    """
    x = np.asarray(particles, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("particles must be a nonempty (n, d) array")
    domains = kernel_domains(spec, model, rng)
    return _kernels_for(spec, x, domains, bandwidths, sq)


def _kernels_for(spec, x, domains, bandwidths=None, sq=None):
    d = x.shape[1]
    if bandwidths is not None:
        h = np.asarray(bandwidths, dtype=float)
    elif spec.bandwidth is not None:
        h = np.full(d, float(spec.bandwidth))
    elif spec.variant == "global":
        h = np.full(d, median_bandwidth(x, spec.floor))
    else:
        if sq is None:
            sq = restricted_sq_dists(sq_diffs(x), domains)
        h = _median_bandwidths(sq, spec.floor)

    if spec.variant == "combined":
        hg = float(spec.bandwidth) if spec.bandwidth is not None else median_bandwidth(x, spec.floor)
        return [CoordinateKernel(dom, float(hi), spec.alpha, hg) for dom, hi in zip(domains, h)]
    return [CoordinateKernel(dom, float(hi)) for dom, hi in zip(domains, h)]


def kernels_and_bank(spec: KernelSpec, model, particles, rng=None, bandwidths=None):
    """:func:`coordinate_kernels` plus their :class:`KernelBank`, sharing the distance work.

    Returns ``(kernels, bank, diff)`` where ``diff[j, l, m] = x[l, j] - x[m, j]``.
    """
    x = np.asarray(particles, dtype=float)
    domains = kernel_domains(spec, model, rng)
    xt = x.T
    diff = xt[:, :, None] - xt[:, None, :]
    diff2 = diff**2
    sq = restricted_sq_dists(diff2, domains)
    kernels = _kernels_for(spec, x, domains, bandwidths, sq)
    return kernels, KernelBank(kernels, x, diff2=diff2, sq=sq), diff


def domain_mask(domains: Sequence[Sequence[int]], d: int) -> np.ndarray:
    """``mask[j, c] = 1`` iff ``j`` is in ``domains[c]``."""
    cols = np.repeat(np.arange(len(domains)), [len(dom) for dom in domains])
    rows = np.fromiter((j for dom in domains for j in dom), dtype=int, count=len(cols))
    mask = np.zeros((d, len(domains)))
    mask[rows, cols] = 1.0
    return mask


# --------------------------------------------------------------------------
# scalar evaluation (reference path)


def _parts(ker: CoordinateKernel, x, y):
    """``(weight, bandwidth, value)`` for each RBF component of ``ker``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dom = list(ker.domain)
    parts = [(ker.alpha, ker.bandwidth, rbf_eval(x[dom], y[dom], ker.bandwidth))]
    if ker.combined:
        parts.append((1.0 - ker.alpha, ker.global_bandwidth, rbf_eval(x, y, ker.global_bandwidth)))
    return parts


def _check_member(ker, i):
    if i not in ker.domain:
        raise ValueError(f"coordinate {i} is not in the kernel domain {ker.domain}")


def k_eval(ker: CoordinateKernel, x, y) -> float:
    return sum(w * k for w, _, k in _parts(ker, x, y))


def k_grad_first(ker: CoordinateKernel, x, y, i: int) -> float:
    """``d k(x, y) / d x_i``."""
    _check_member(ker, i)
    delta = float(x[i]) - float(y[i])
    return sum(-w * (2.0 / h) * delta * k for w, h, k in _parts(ker, x, y))


def k_cross_second(ker: CoordinateKernel, x, y, i: int) -> float:
    """``d^2 k(x, y) / (d x_i d y_i)``."""
    _check_member(ker, i)
    delta2 = (float(x[i]) - float(y[i])) ** 2
    return sum(w * (2.0 / h - 4.0 * delta2 / h**2) * k for w, h, k in _parts(ker, x, y))


# --------------------------------------------------------------------------
# batched evaluation


class KernelBank:
    """All coordinate kernels evaluated on one particle set at once.

    Arrays have shape ``(d, n, n)`` with ``[i, l, m]`` meaning
    ``k_i(x^l, x^m)``:

    ``K``   kernel values,
    ``W1``  ``sum_parts weight * k / h``, so ``dk/dx_i = -2 (x_i - y_i) W1``,
    ``W2``  ``sum_parts weight * k / h^2`` (computed on first access).

    ``coords`` restricts evaluation to a subset of coordinates; the first axis
    then follows that order.  ``diff2`` may pass precomputed :func:`sq_diffs`
    and ``sq`` the matching domain-restricted distances.
    """

    def __init__(self, kernels: Sequence[CoordinateKernel], particles, coords=None, diff2=None,
                 sq=None):
        x = np.asarray(particles, dtype=float)
        d = x.shape[1]
        if len(kernels) != d:
            raise ValueError(f"need {d} coordinate kernels, got {len(kernels)}")
        idx = np.arange(d) if coords is None else np.asarray(coords, dtype=int)
        chosen = [kernels[i] for i in idx]
        self._h = np.array([k.bandwidth for k in chosen])[:, None, None]
        self._alpha = np.array([k.alpha for k in chosen])[:, None, None]
        if diff2 is None:
            diff2 = sq_diffs(x)

        if sq is None:
            sq = restricted_sq_dists(diff2, [k.domain for k in chosen])
        self._local = np.exp(-sq / self._h)
        self._glob = None
        self.K = self._local if np.all(self._alpha == 1.0) else self._alpha * self._local
        self.W1 = self.K / self._h
        if np.any(self._alpha < 1.0):
            self._hg = np.array([k.global_bandwidth if k.combined else 1.0 for k in chosen])[:, None, None]
            self._glob = (1.0 - self._alpha) * np.exp(-diff2.sum(0) / self._hg)
            self.K = self.K + self._glob
            self.W1 = self.W1 + self._glob / self._hg
        self._W2 = None

    @property
    def W2(self) -> np.ndarray:
        if self._W2 is None:
            w2 = self._alpha * self._local / self._h**2
            if self._glob is not None:
                w2 = w2 + self._glob / self._hg**2
            self._W2 = w2
        return self._W2
