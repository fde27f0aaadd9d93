"""MAP search on the estimated filtering density: fixed-step gradient ascent
and the argmax over particle locations.

particle_argmax is exact.  Small clouds use the direct all-pairs scan; large
Gaussian clouds in 2-d go through a certified pruning stage that snaps the
sources to a fine lattice, evaluates the lattice sums with FFT convolutions,
and brackets every particle's true density between rigorous bounds built
from radial envelopes of the kernel's first and second derivatives.  Only
particles whose upper bound reaches the best lower bound are evaluated
exactly, and the handful of near-ties at the top is re-checked with the
compensated reference kernel, so the selected particle and its value are
identical to a full scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft

from . import _accel
from .kalman import GaussianDensity, gaussian_pdf
from .kde import DensityEstimator, unique_particles

# pruning engages above this many unique-position pairs
_BRUTE_PAIR_LIMIT = 2_000_000_000
# lattice buffers are kept small so the allocator reuses them across runs
_LATTICE_CELL_BUDGET = 3_200_000
_FFT_SLACK = 1e-9
_WINDOW_SIGMAS = 7.0
_TOP_BAND = 1e-7


@dataclass(frozen=True)
class AscentTrace:
    iterates: np.ndarray        # (I+1, d)
    values: np.ndarray          # (I+1,)
    gradient_norms: np.ndarray  # (I+1,)
    converged: bool
    stop_reason: str            # tolerance | max_iters | non_finite

    def __post_init__(self):
        if not (len(self.iterates) == len(self.values) == len(self.gradient_norms)):
            raise ValueError("trace arrays must have equal length")


def gradient_ascent(value_fn, grad_fn, x0, step: float = 0.1,
                    max_iters: int = 10_000, grad_tol: float = 1e-8,
                    value_grad_fn=None) -> AscentTrace:
    """Fixed-step ascent x <- x + step * grad, stopping on a small gradient.

    Non-finite values or gradients terminate the trace with
    stop_reason="non_finite" instead of raising: partial traces are data.
    """
    if step <= 0.0 or max_iters < 1 or grad_tol <= 0.0:
        raise ValueError("step, max_iters and grad_tol must be positive")
    if value_grad_fn is None:
        value_grad_fn = lambda x: (value_fn(x), grad_fn(x))
    x = np.asarray(x0, dtype=float).copy()
    iterates = [x.copy()]
    values = []
    norms = []
    converged = False
    reason = "max_iters"
    for _ in range(max_iters + 1):
        v, g = value_grad_fn(x)
        g = np.asarray(g, dtype=float)
        gnorm = float(np.sqrt(np.sum(g * g)))
        values.append(float(v))
        norms.append(gnorm)
        if not (np.isfinite(v) and np.isfinite(gnorm)):
            reason = "non_finite"
            break
        if gnorm < grad_tol:
            converged = True
            reason = "tolerance"
            break
        if len(iterates) > max_iters:
            break
        x = x + step * g
        iterates.append(x.copy())
    return AscentTrace(
        iterates=np.array(iterates[: len(values)]),
        values=np.array(values),
        gradient_norms=np.array(norms),
        converged=converged,
        stop_reason=reason,
    )


def _argmax_with_ties(values: np.ndarray, first_index: np.ndarray):
    best = np.max(values)
    tied = np.flatnonzero(values == best)
    winner = tied[np.argmin(first_index[tied])]
    return int(winner), float(best)


def particle_argmax(est: DensityEstimator):
    """(particle, p^k value) maximizing p^k over the particle locations.

    Ties are broken by the lowest particle index in the original cloud.
    """
    uniq, weights, first_index, _ = unique_particles(est.cloud)
    m = uniq.shape[0]
    if (
        m * m > _BRUTE_PAIR_LIMIT
        and est.kernel.name == "gaussian"
        and est.cloud.dim == 2
    ):
        cand_idx = _certified_candidates_gauss2d(uniq, weights, est.k, est.bbox)
        # fast sweep against a source window wide enough that the neglected
        # tail stays far below the re-check band
        margin = _WINDOW_SIGMAS / est.k
        lo = uniq[cand_idx].min(axis=0) - margin
        hi = uniq[cand_idx].max(axis=0) + margin
        in_window = np.all((uniq >= lo) & (uniq <= hi), axis=1)
        fast = _accel.flat_gauss_values(uniq[cand_idx], uniq[in_window],
                                        weights[in_window], est.k)
        band = np.flatnonzero(fast >= fast.max() - _TOP_BAND)
        keep = cand_idx[band]
    else:
        keep = np.arange(m)
    exact = _accel.pair_values(uniq[keep], uniq, weights,
                               est.kernel.code, est.k, est.bbox)
    local, value = _argmax_with_ties(exact, first_index[keep])
    winner = keep[local]
    return uniq[winner].copy(), value


def map_report(est: DensityEstimator, oracle: GaussianDensity,
               step: float = 0.1, max_iters: int = 10_000,
               grad_tol: float = 1e-8, x0=(-2.0, -2.0)):
    """Value gaps of the two MAP surrogates, measured under the exact pdf.

    gap_grad uses the gradient-ascent maximizer of p^k; gap_particle the
    best particle location.  Both are p(mode) - p(surrogate) >= 0.
    """
    # duplicate particles collapse to weighted sources: same sums, fewer terms
    uniq, weights, _, _ = unique_particles(est.cloud)

    def value_grad(x):
        vals, grads = _accel.pair_value_grads(
            np.atleast_2d(np.asarray(x, dtype=float)), uniq, weights,
            est.kernel.code, est.k, est.bbox)
        return float(vals[0]), grads[0]

    trace = gradient_ascent(
        None, None, x0, step=step, max_iters=max_iters, grad_tol=grad_tol,
        value_grad_fn=value_grad,
    )
    s_grad = trace.iterates[-1]
    s_particle, _ = particle_argmax(est)
    p_max = gaussian_pdf(oracle, oracle.mean)
    gap_grad = p_max - gaussian_pdf(oracle, s_grad)
    gap_particle = p_max - gaussian_pdf(oracle, s_particle)
    return float(gap_grad), float(gap_particle)


# --------------------------------------------------------------------------
# certified pruning for large 2-d Gaussian clouds
# --------------------------------------------------------------------------


def _radial_envelope(r_lo: np.ndarray, r_hi: np.ndarray, peak_r: float, fn):
    """max of a unimodal radial function over [r_lo, r_hi]."""
    out = np.where(
        (r_lo <= peak_r) & (peak_r <= r_hi),
        fn(peak_r),
        np.maximum(fn(r_lo), fn(r_hi)),
    )
    return out


def _lattice_bounds(targets, sources, src_weights, k, bbox):
    """Certified value brackets for Gaussian kernel sums at the targets.

    Sources snap to a lattice of pitch delta covering them; the exact lattice
    sums come from one FFT convolution with the sampled kernel and are read
    off at the true target positions by bilinear interpolation.  A second
    convolution with the pre-combined envelope table

        W = (delta/sqrt2) * env_{delta*sqrt2}(||grad phi_k||)
            + (delta^2/8) * env_{delta*sqrt2}(sum_ij |d2 phi_k|)

    bounds the source-snap error plus the bilinear remainder; radial
    envelopes enlarge their argument by the stated radius, which covers both
    the snap moves and the spread of the interpolation cell.  Constant slack
    accounts for table truncation at r_tab, the optional bounding-box jump
    of the true kernel, and FFT roundoff.  Returns (interp, bound) with
    |p(target) - interp| <= bound, where p omits sources the caller excluded
    (their contribution is below the truncation slack by construction when
    they lie more than r_tab from every target).
    """
    k = float(k)
    a = k * k
    pref = a / (2.0 * math.pi)
    r_tab = 6.5 / k
    if np.isfinite(bbox):
        r_tab = min(r_tab, float(bbox))

    lo = sources.min(axis=0)
    hi = sources.max(axis=0)
    span1 = float(hi[0] - lo[0])
    span2 = float(hi[1] - lo[1])
    # pitch sized so grid + kernel padding fits the cell budget
    side = math.sqrt(float(_LATTICE_CELL_BUDGET))
    delta = (max(span1, span2) + 2.0 * r_tab) / side
    delta = max(delta, 1e-6)
    while True:
        pad = int(math.ceil(r_tab / delta))
        n1 = int(np.rint((hi[0] - lo[0]) / delta)) + 1
        n2 = int(np.rint((hi[1] - lo[1]) / delta)) + 1
        if (n1 + 2 * pad) * (n2 + 2 * pad) <= _LATTICE_CELL_BUDGET:
            break
        delta *= 1.25

    i1 = np.rint((sources[:, 0] - lo[0]) / delta).astype(np.int64)
    i2 = np.rint((sources[:, 1] - lo[1]) / delta).astype(np.int64)
    n1 = max(n1, int(i1.max()) + 1)
    n2 = max(n2, int(i2.max()) + 1)
    counts = np.bincount(i1 * n2 + i2, weights=src_weights, minlength=n1 * n2)
    counts = counts.reshape(n1, n2)

    offs = np.arange(-pad, pad + 1) * delta
    r2 = offs[:, None] ** 2 + offs[None, :] ** 2
    r = np.sqrt(r2)
    phi_tab = pref * np.exp(-0.5 * a * r2)
    outside = r > r_tab
    if np.isfinite(bbox):
        outside |= (np.abs(offs)[:, None] > bbox) | (np.abs(offs)[None, :] > bbox)
    phi_tab[outside] = 0.0

    g_rad = lambda rr: a * rr * pref * np.exp(-0.5 * a * rr * rr)
    h_rad = lambda rr: (2.0 * a * a * rr * rr + 2.0 * a) * pref * np.exp(-0.5 * a * rr * rr)
    rho = delta * math.sqrt(2.0)
    env_lo = np.maximum(r - rho, 0.0)
    env_hi = r + rho
    w_tab = (delta / math.sqrt(2.0)) * _radial_envelope(env_lo, env_hi, 1.0 / k, g_rad) \
        + (delta * delta / 8.0) * _radial_envelope(env_lo, env_hi, 1.0 / k, h_rad)
    w_tab[outside] = 0.0

    shape = (n1 + 2 * pad, n2 + 2 * pad)
    fshape = [scipy.fft.next_fast_len(s) for s in shape]
    counts_f = scipy.fft.rfft2(counts, fshape)

    def conv(table):
        spec = scipy.fft.rfft2(table, fshape)
        full = scipy.fft.irfft2(counts_f * spec, fshape)
        return full[pad : pad + n1, pad : pad + n2]

    vhat = conv(phi_tab)
    what = conv(w_tab)

    f1 = (targets[:, 0] - lo[0]) / delta
    f2 = (targets[:, 1] - lo[1]) / delta
    j1 = np.clip(np.floor(f1).astype(np.int64), 0, max(n1 - 2, 0))
    j2 = np.clip(np.floor(f2).astype(np.int64), 0, max(n2 - 2, 0))
    t1 = np.clip(f1 - j1, 0.0, 1.0)
    t2 = np.clip(f2 - j2, 0.0, 1.0)
    j1b = np.minimum(j1 + 1, n1 - 1)
    j2b = np.minimum(j2 + 1, n2 - 1)
    interp = (
        vhat[j1, j2] * (1 - t1) * (1 - t2)
        + vhat[j1b, j2] * t1 * (1 - t2)
        + vhat[j1, j2b] * (1 - t1) * t2
        + vhat[j1b, j2b] * t1 * t2
    )

    tail = pref * math.exp(-0.5 * a * r_tab * r_tab)
    w_tail = (delta / math.sqrt(2.0)) * g_rad(max(r_tab - rho, 1.0 / k)) \
        + (delta * delta / 8.0) * h_rad(max(r_tab - rho, 1.0 / k))
    # pairs whose snap straddles the bounding-box edge escape the gradient
    # argument; their kernel value near the edge bounds the damage
    jump = pref * math.exp(-0.5 * a * max(bbox - rho, 0.0) ** 2) if np.isfinite(bbox) else 0.0
    nearest = what[np.rint(f1).astype(np.int64).clip(0, n1 - 1),
                   np.rint(f2).astype(np.int64).clip(0, n2 - 1)]
    bound = nearest + tail + w_tail + jump + _FFT_SLACK
    return interp, bound


def _certified_candidates_gauss2d(uniq, weights, k, bbox) -> np.ndarray:
    """Indices of unique positions whose density could attain the maximum.

    Runs coarse-to-fine lattice passes: each pass brackets every surviving
    particle's density, keeps those whose upper bound reaches the best lower
    bound, and the next pass re-lattices just the survivor region (sources
    clipped to it plus the table radius, the remainder being covered by the
    truncation slack).
    """
    r_clip = 6.5 / float(k)
    alive = np.arange(uniq.shape[0])
    src_mask = np.ones(uniq.shape[0], dtype=bool)
    best_lb = -np.inf
    for _ in range(3):
        interp, bound = _lattice_bounds(uniq[alive], uniq[src_mask],
                                        weights[src_mask], k, bbox)
        best_lb = max(best_lb, float(np.max(interp - bound)))
        survived = alive[interp + bound >= best_lb]
        if survived.size == 0:
            # bounds are conservative, so the best-lb holder always survives
            raise RuntimeError("certified pruning produced an empty candidate set")
        shrunk = survived.size < 0.7 * alive.size
        alive = survived
        if alive.size <= 2000 or not shrunk:
            break
        region_lo = uniq[alive].min(axis=0) - r_clip
        region_hi = uniq[alive].max(axis=0) + r_clip
        src_mask = np.all((uniq >= region_lo) & (uniq <= region_hi), axis=1)
    return alive
