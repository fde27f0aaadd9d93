"""Smoothing kernels (Gaussian, Laplacian, Epanechnikov) with rescaling,
partial derivatives and the mixed derivative used by the uniform-convergence
diagnostics.

The rescaled family is phi_k(x) = k^d phi(k x), bandwidth h = 1/k.  All three
kernels are symmetric probability densities with finite second moment c2;
exact c2 values: Gaussian d, Laplacian 1, Epanechnikov d/(d+4).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import EPAN, GAUSS, LAPLACE, _np_deriv_terms, _np_terms

KERNEL_NAMES = ("gaussian", "laplacian", "epanechnikov")
_CODES = {"gaussian": GAUSS, "laplacian": LAPLACE, "epanechnikov": EPAN}


def unit_sphere_volume(d: int) -> float:
    """v_d = pi^(d/2) / Gamma(d/2 + 1), via log-gamma to stay finite."""
    return math.exp(0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0))


@dataclass(frozen=True)
class Kernel:
    name: str
    dim: int
    code: int
    second_moment: float
    zero_first_moment: bool
    support_radius: float  # in units of the unscaled kernel; inf if unbounded

    def evaluate(self, x):
        """phi(x) for x of shape (d,) or (M, d)."""
        return self._call(_np_terms, x)

    def partial(self, x, i: int):
        alpha = np.zeros(self.dim, dtype=np.int64)
        alpha[i] = 1
        return self._call(lambda c, k, d: _np_deriv_terms(c, k, d, alpha), x)

    def mixed(self, x):
        """D^(1,...,1) phi(x), the mixed derivative of total order d."""
        alpha = np.ones(self.dim, dtype=np.int64)
        return self._call(lambda c, k, d: _np_deriv_terms(c, k, d, alpha), x)

    def _call(self, fn, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        out = fn(self.code, 1.0, pts)
        return float(out[0]) if single else out


def make_kernel(name: str, dim: int) -> Kernel:
    if name not in _CODES:
        raise ValueError(f"unknown kernel {name!r}; choose from {KERNEL_NAMES}")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if name == "gaussian":
        c2, support = float(dim), math.inf
    elif name == "laplacian":
        c2, support = 1.0, math.inf
    else:
        c2, support = dim / (dim + 4.0), 1.0
    return Kernel(
        name=name,
        dim=dim,
        code=_CODES[name],
        second_moment=c2,
        zero_first_moment=True,
        support_radius=support,
    )


def gaussian_evaluate(d: int, x):
    return make_kernel("gaussian", d).evaluate(x)


def laplacian_evaluate(d: int, x):
    """(1/(2b))^d exp(-(1/b) sum |x_j|) with b = sqrt(1/(2d))."""
    return make_kernel("laplacian", d).evaluate(x)


def epanechnikov_evaluate(d: int, x):
    """(d+2)/(2 v_d) (1 - ||x||^2) inside the unit ball, 0 outside."""
    return make_kernel("epanechnikov", d).evaluate(x)


def rescale_evaluate(kernel: Kernel, k: int, x):
    """phi_k(x) = k^d phi(k x)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    out = _np_terms(kernel.code, float(k), pts)
    return float(out[0]) if single else out


def _check_alpha(kernel: Kernel, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.int64)
    if alpha.shape != (kernel.dim,) or np.any(alpha < 0):
        raise ValueError("alpha must be a non-negative multi-index of length dim")
    order = int(alpha.sum())
    ok = order == 0 or (order == 1) or bool(np.all(alpha == 1))
    if not ok:
        raise ValueError("supported multi-indices: zero, unit vectors e_i, and all-ones")
    return alpha


def rescale_derivative(kernel: Kernel, k: int, alpha, x):
    """(D^alpha phi_k)(x) = k^(d+|alpha|) (D^alpha phi)(k x)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    alpha = _check_alpha(kernel, alpha)
    if int(alpha.sum()) == 0:
        return rescale_evaluate(kernel, k, x)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    out = _np_deriv_terms(kernel.code, float(k), pts, alpha)
    return float(out[0]) if single else out


def kernel_gradient(kernel: Kernel, k: int, x):
    """Vector of rescale_derivative over alpha = e_1 .. e_d."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    out = np.empty_like(pts)
    alpha = np.zeros(kernel.dim, dtype=np.int64)
    for i in range(kernel.dim):
        alpha[:] = 0
        alpha[i] = 1
        out[:, i] = _np_deriv_terms(kernel.code, float(k), pts, alpha)
    return out[0] if single else out


def optimal_bandwidth_reference(d: int, n: int) -> float:
    """Classical MISE-optimal Epanechnikov bandwidth for i.i.d. unit-covariance
    Gaussian samples.  Reference computation only: the particle filter does
    not draw i.i.d. samples from the target, so this value is never used to
    set h in the experiments.
    """
    vd = unit_sphere_volume(d)
    const = 8.0 / vd * (d + 4.0) * (2.0 * math.sqrt(math.pi)) ** d
    return const ** (1.0 / (d + 4.0)) * n ** (-1.0 / (d + 4.0))
