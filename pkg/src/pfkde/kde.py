"""Particle-kernel estimators of the filtering density and its derivatives,
the truncated estimator, and the bandwidth/particle-count bookkeeping.

The sufficient particle count for inverse bandwidth k and derivative order
|alpha| is N >= k^(2(d + |alpha| + 1)); conversely k(N) = floor(N^(1/(2(d+1))))
is the largest usable inverse bandwidth for a given budget.  Querying an
under-resolved estimator is allowed but logged as a warning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .bpf import ParticleCloud
from .kernels import Kernel

log = logging.getLogger(__name__)

GAUSS_CUTOFF_SIGMAS = 8.0
_INT64_MAX = 2**63 - 1


def min_particles(k: int, dim: int, deriv_order: int = 0) -> int:
    """k^(2(d + |alpha| + 1)), refusing configurations beyond int64."""
    if k < 1 or dim < 1 or deriv_order < 0:
        raise ValueError("k and dim must be >= 1, deriv_order >= 0")
    n = int(k) ** (2 * (dim + deriv_order + 1))
    if n > _INT64_MAX:
        raise OverflowError(
            f"min_particles(k={k}, d={dim}, |alpha|={deriv_order}) exceeds int64"
        )
    return n


def k_of_n(n_particles: int, dim: int) -> int:
    """floor(N^(1/(2(d+1)))), exact despite float pow rounding."""
    if n_particles < 1:
        raise ValueError("need at least one particle")
    exponent = 2 * (dim + 1)
    k = int(n_particles ** (1.0 / exponent))
    while (k + 1) ** exponent <= n_particles:
        k += 1
    while k > 1 and k**exponent > n_particles:
        k -= 1
    return k


@dataclass(frozen=True)
class Hypercube:
    """[-M_k, M_k]^d with M_k = 0.5 k^(beta/(d p)); measure (2 M_k)^d = k^(beta/p)."""

    half_width: float
    beta: float
    p_exponent: float

    @classmethod
    def for_bandwidth(cls, k: int, dim: int, beta: float = 0.9,
                      p_exponent: float = 4.0) -> "Hypercube":
        if not 0.0 <= beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if p_exponent <= 0.0:
            raise ValueError("p_exponent must be positive")
        half = 0.5 * float(k) ** (beta / (dim * p_exponent))
        return cls(half_width=half, beta=beta, p_exponent=p_exponent)

    def contains(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all(np.abs(pts) <= self.half_width, axis=1)


@dataclass(frozen=True)
class DensityEstimator:
    """Read-only view pairing a particle cloud with a rescaled kernel."""

    cloud: ParticleCloud
    kernel: Kernel
    k: int
    gauss_cutoff: bool = False  # opt-in 8-sigma bounding box for the Gaussian
    _warned: set = field(default_factory=set, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.kernel.dim != self.cloud.dim:
            raise ValueError("kernel dimension does not match the cloud")

    @property
    def bbox(self) -> float:
        """Half-width of the per-source bounding box cull."""
        if self.kernel.support_radius < np.inf:
            return self.kernel.support_radius / self.k
        if self.kernel.name == "gaussian" and self.gauss_cutoff:
            return GAUSS_CUTOFF_SIGMAS / self.k
        return np.inf

    def _check_resolution(self, deriv_order: int):
        if deriv_order in self._warned:
            return
        self._warned.add(deriv_order)
        try:
            needed = min_particles(self.k, self.kernel.dim, deriv_order)
        except OverflowError:
            needed = _INT64_MAX
        if self.cloud.n_particles < needed:
            log.warning(
                "under-resolved estimator: N=%d < %d = k^(2(d+|alpha|+1)) "
                "for k=%d, d=%d, |alpha|=%d",
                self.cloud.n_particles, needed, self.k, self.kernel.dim, deriv_order,
            )


def _uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def estimate_density(est: DensityEstimator, x):
    """p^k(x) = (1/N) sum_n phi_k(x - x^(n)); scalar for a single point."""
    est._check_resolution(0)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    src = est.cloud.particles
    vals = _accel.pair_values(pts, src, _uniform_weights(len(src)),
                              est.kernel.code, est.k, est.bbox)
    return float(vals[0]) if single else vals


def estimate_derivative(est: DensityEstimator, alpha, x):
    """(D^alpha p^k)(x) for alpha zero, a unit vector, or all-ones."""
    alpha = np.asarray(alpha, dtype=np.int64)
    if alpha.shape != (est.kernel.dim,) or np.any(alpha < 0):
        raise ValueError("alpha must be a non-negative multi-index of length d")
    order = int(alpha.sum())
    if order == 0:
        return estimate_density(est, x)
    if order > 1 and not np.all(alpha == 1):
        raise ValueError("supported multi-indices: zero, unit vectors e_i, all-ones")
    est._check_resolution(order)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    src = est.cloud.particles
    vals = _accel.pair_derivs(pts, src, _uniform_weights(len(src)),
                              est.kernel.code, est.k, alpha, est.bbox)
    return float(vals[0]) if single else vals


def estimate_gradient(est: DensityEstimator, x):
    """Gradient of p^k, one estimate_derivative per coordinate."""
    est._check_resolution(1)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    src = est.cloud.particles
    _, grads = _accel.pair_value_grads(pts, src, _uniform_weights(len(src)),
                                       est.kernel.code, est.k, est.bbox)
    return grads[0] if single else grads


def estimate_value_gradient(est: DensityEstimator, x):
    """(p^k(x), grad p^k(x)) fused; used by the gradient-ascent search."""
    est._check_resolution(1)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    src = est.cloud.particles
    vals, grads = _accel.pair_value_grads(pts, src, _uniform_weights(len(src)),
                                          est.kernel.code, est.k, est.bbox)
    if np.asarray(x).ndim == 1:
        return float(vals[0]), grads[0]
    return vals, grads


def truncated_density(est: DensityEstimator, cube: Hypercube, x):
    """Indicator-truncated estimate: p^k(x) inside the cube, exactly 0 outside."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    inside = cube.contains(pts)
    out = np.zeros(pts.shape[0])
    if np.any(inside):
        out[inside] = np.atleast_1d(estimate_density(est, pts[inside]))
    return float(out[0]) if single else out


def unique_particles(cloud: ParticleCloud):
    """Deduplicated particle rows with weights and the lowest original index
    per row.  Resampling leaves many exact duplicates, so collapsing them
    before all-pairs work is an exact rewrite of the same sums.
    """
    uniq, inverse, counts = np.unique(cloud.particles, axis=0,
                                      return_inverse=True, return_counts=True)
    first_index = np.full(uniq.shape[0], cloud.n_particles, dtype=np.int64)
    np.minimum.at(first_index, inverse, np.arange(cloud.n_particles, dtype=np.int64))
    weights = counts / cloud.n_particles
    return uniq, weights, first_index, inverse


def density_at_particles(est: DensityEstimator) -> np.ndarray:
    """p^k evaluated at every particle location, in cloud order."""
    est._check_resolution(0)
    uniq, weights, _, inverse = unique_particles(est.cloud)
    vals = _accel.pair_values(uniq, uniq, weights, est.kernel.code, est.k, est.bbox)
    return vals[inverse]
