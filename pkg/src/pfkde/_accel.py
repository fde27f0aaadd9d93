"""Hot pair-sum kernels: numba-jitted loops with a pure-numpy fallback.

Every estimator in this package reduces to weighted sums of a smoothing
kernel evaluated at target-source offsets.  The jitted loops here compute
those sums one target at a time with compensated (Kahan) summation, so the
result does not depend on how callers batch the work.  Setting the
environment variable ``PFKDE_DISABLE_NUMBA=1`` (before import) selects a
chunked numpy implementation of the same contracts; ``benchmarks/bench_accel.py``
compares the two.
"""

from __future__ import annotations

import math
import os

import numpy as np

DISABLE_ENV = "PFKDE_DISABLE_NUMBA"

# kernel family codes shared with kernels.py
GAUSS = 0
LAPLACE = 1
EPAN = 2

_LOG_2PI = math.log(2.0 * math.pi)


def _numba_requested() -> bool:
    flag = os.environ.get(DISABLE_ENV, "").strip().lower()
    if flag in ("1", "true", "yes", "on"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USING_NUMBA = _numba_requested()


def _prefactor(code: int, dim: int, k: float) -> float:
    """k^d * phi(0)-style normalization constant for each family."""
    if code == GAUSS:
        return k**dim * math.exp(-0.5 * dim * _LOG_2PI)
    if code == LAPLACE:
        b = math.sqrt(1.0 / (2.0 * dim))
        return (k / (2.0 * b)) ** dim
    if code == EPAN:
        # (d+2) / (2 v_d), v_d = pi^(d/2) / Gamma(d/2 + 1)
        log_vd = 0.5 * dim * math.log(math.pi) - math.lgamma(0.5 * dim + 1.0)
        return k**dim * (dim + 2.0) / 2.0 * math.exp(-log_vd)
    raise ValueError(f"unknown kernel code {code}")


def _laplace_rate(dim: int, k: float) -> float:
    return k * math.sqrt(2.0 * dim)  # k / b with b = sqrt(1/(2d))


# --------------------------------------------------------------------------
# scalar kernel algebra used by both backends (documented reference forms)
#
#   phi_k(u)        = pref * shape(u)
#   d/du_i phi_k(u) = first-derivative factor * phi_k(u)   (family-specific)
#
# The numpy fallback below is the readable reference; the jitted loops
# reproduce it term by term.
# --------------------------------------------------------------------------


def _np_terms(code, k, diff):
    """Kernel values phi_k(diff) for an (..., d) array of offsets."""
    dim = diff.shape[-1]
    pref = _prefactor(code, dim, k)
    if code == GAUSS:
        return pref * np.exp(-0.5 * k * k * np.sum(diff * diff, axis=-1))
    if code == LAPLACE:
        rate = _laplace_rate(dim, k)
        return pref * np.exp(-rate * np.sum(np.abs(diff), axis=-1))
    sq = k * k * np.sum(diff * diff, axis=-1)
    return pref * np.where(sq < 1.0, 1.0 - sq, 0.0)


def _np_deriv_terms(code, k, diff, alpha):
    """D^alpha phi_k(diff) for alpha a unit vector e_i or the all-ones index."""
    dim = diff.shape[-1]
    order = int(np.sum(alpha))
    if order == 1:
        i = int(np.argmax(alpha))
        vals = _np_terms(code, k, diff)
        if code == GAUSS:
            return -(k * k) * diff[..., i] * vals
        if code == LAPLACE:
            rate = _laplace_rate(dim, k)
            return -rate * np.sign(diff[..., i]) * vals
        pref = _prefactor(EPAN, dim, k)
        sq = k * k * np.sum(diff * diff, axis=-1)
        return np.where(sq < 1.0, -2.0 * k * k * pref * diff[..., i], 0.0)
    # alpha = (1, ..., 1): mixed derivative of total order d
    if code == GAUSS:
        vals = _np_terms(code, k, diff)
        return vals * np.prod(-(k * k) * diff, axis=-1)
    if code == LAPLACE:
        rate = _laplace_rate(dim, k)
        vals = _np_terms(code, k, diff)
        out = vals * (rate**dim) * np.prod(-np.sign(diff), axis=-1)
        return np.where(np.any(diff == 0.0, axis=-1), 0.0, out)
    return np.zeros(diff.shape[:-1])


# --------------------------------------------------------------------------
# numpy fallback backend
# --------------------------------------------------------------------------

_CHUNK = 256  # targets per broadcast block; keeps peak memory modest


def _np_pair_values(targets, sources, weights, code, k, bbox):
    out = np.empty(targets.shape[0])
    for lo in range(0, targets.shape[0], _CHUNK):
        block = targets[lo : lo + _CHUNK]
        diff = block[:, None, :] - sources[None, :, :]
        terms = _np_terms(code, k, diff) * weights[None, :]
        if np.isfinite(bbox):
            terms = np.where(np.all(np.abs(diff) <= bbox, axis=-1), terms, 0.0)
        out[lo : lo + _CHUNK] = terms.sum(axis=1)
    return out


def _np_pair_value_grads(targets, sources, weights, code, k, bbox):
    m, dim = targets.shape
    vals = np.empty(m)
    grads = np.empty((m, dim))
    ei = np.zeros(dim, dtype=np.int64)
    for lo in range(0, m, _CHUNK):
        block = targets[lo : lo + _CHUNK]
        diff = block[:, None, :] - sources[None, :, :]
        keep = (
            np.all(np.abs(diff) <= bbox, axis=-1)
            if np.isfinite(bbox)
            else np.ones(diff.shape[:-1], dtype=bool)
        )
        terms = np.where(keep, _np_terms(code, k, diff) * weights[None, :], 0.0)
        vals[lo : lo + _CHUNK] = terms.sum(axis=1)
        for i in range(dim):
            ei[:] = 0
            ei[i] = 1
            dterms = np.where(keep, _np_deriv_terms(code, k, diff, ei) * weights[None, :], 0.0)
            grads[lo : lo + _CHUNK, i] = dterms.sum(axis=1)
    return vals, grads


def _np_pair_derivs(targets, sources, weights, code, k, alpha, bbox):
    out = np.empty(targets.shape[0])
    for lo in range(0, targets.shape[0], _CHUNK):
        block = targets[lo : lo + _CHUNK]
        diff = block[:, None, :] - sources[None, :, :]
        terms = _np_deriv_terms(code, k, diff, alpha) * weights[None, :]
        if np.isfinite(bbox):
            terms = np.where(np.all(np.abs(diff) <= bbox, axis=-1), terms, 0.0)
        out[lo : lo + _CHUNK] = terms.sum(axis=1)
    return out


def _np_flat_gauss_values(targets, sources, weights, k):
    return _np_pair_values(targets, sources, weights, GAUSS, k, np.inf)


if USING_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _nb_term(code, k, pref, rate, diff):  # pragma: no cover - jitted
        dim = diff.shape[0]
        if code == 0:
            s = 0.0
            for i in range(dim):
                s += diff[i] * diff[i]
            return pref * math.exp(-0.5 * k * k * s)
        if code == 1:
            s = 0.0
            for i in range(dim):
                s += abs(diff[i])
            return pref * math.exp(-rate * s)
        s = 0.0
        for i in range(dim):
            s += diff[i] * diff[i]
        s *= k * k
        if s < 1.0:
            return pref * (1.0 - s)
        return 0.0

    @njit(cache=True)
    def _nb_pair_values(targets, sources, weights, code, k, bbox):  # pragma: no cover
        m, dim = targets.shape
        s_count = sources.shape[0]
        pref = 0.0
        rate = 0.0
        if code == 0:
            pref = k**dim * math.exp(-0.5 * dim * _LOG_2PI)
        elif code == 1:
            rate = k * math.sqrt(2.0 * dim)
            pref = (k / (2.0 * math.sqrt(1.0 / (2.0 * dim)))) ** dim
        else:
            log_vd = 0.5 * dim * math.log(math.pi) - math.lgamma(0.5 * dim + 1.0)
            pref = k**dim * (dim + 2.0) / 2.0 * math.exp(-log_vd)
        out = np.empty(m)
        diff = np.empty(dim)
        for t in range(m):
            acc = 0.0
            comp = 0.0
            for n in range(s_count):
                inside = True
                for i in range(dim):
                    d = targets[t, i] - sources[n, i]
                    if abs(d) > bbox:
                        inside = False
                        break
                    diff[i] = d
                if not inside:
                    continue
                term = weights[n] * _nb_term(code, k, pref, rate, diff)
                y = term - comp
                tmp = acc + y
                comp = (tmp - acc) - y
                acc = tmp
            out[t] = acc
        return out

    @njit(cache=True)
    def _nb_pair_value_grads(targets, sources, weights, code, k, bbox):  # pragma: no cover
        m, dim = targets.shape
        s_count = sources.shape[0]
        pref = 0.0
        rate = 0.0
        if code == 0:
            pref = k**dim * math.exp(-0.5 * dim * _LOG_2PI)
        elif code == 1:
            rate = k * math.sqrt(2.0 * dim)
            pref = (k / (2.0 * math.sqrt(1.0 / (2.0 * dim)))) ** dim
        else:
            log_vd = 0.5 * dim * math.log(math.pi) - math.lgamma(0.5 * dim + 1.0)
            pref = k**dim * (dim + 2.0) / 2.0 * math.exp(-log_vd)
        vals = np.empty(m)
        grads = np.empty((m, dim))
        diff = np.empty(dim)
        gacc = np.empty(dim)
        gcomp = np.empty(dim)
        for t in range(m):
            acc = 0.0
            comp = 0.0
            for i in range(dim):
                gacc[i] = 0.0
                gcomp[i] = 0.0
            for n in range(s_count):
                inside = True
                for i in range(dim):
                    d = targets[t, i] - sources[n, i]
                    if abs(d) > bbox:
                        inside = False
                        break
                    diff[i] = d
                if not inside:
                    continue
                term = weights[n] * _nb_term(code, k, pref, rate, diff)
                y = term - comp
                tmp = acc + y
                comp = (tmp - acc) - y
                acc = tmp
                for i in range(dim):
                    if code == 0:
                        g = -(k * k) * diff[i] * term
                    elif code == 1:
                        if diff[i] > 0.0:
                            g = -rate * term
                        elif diff[i] < 0.0:
                            g = rate * term
                        else:
                            g = 0.0
                    else:
                        if term > 0.0:
                            g = -2.0 * k * k * pref * diff[i] * weights[n]
                        else:
                            g = 0.0
                    y = g - gcomp[i]
                    tmp = gacc[i] + y
                    gcomp[i] = (tmp - gacc[i]) - y
                    gacc[i] = tmp
            vals[t] = acc
            for i in range(dim):
                grads[t, i] = gacc[i]
        return vals, grads

    @njit(cache=True)
    def _nb_pair_derivs(targets, sources, weights, code, k, alpha, bbox):  # pragma: no cover
        m, dim = targets.shape
        s_count = sources.shape[0]
        order = 0
        axis = 0
        for i in range(dim):
            order += alpha[i]
            if alpha[i] == 1:
                axis = i
        pref = 0.0
        rate = 0.0
        if code == 0:
            pref = k**dim * math.exp(-0.5 * dim * _LOG_2PI)
        elif code == 1:
            rate = k * math.sqrt(2.0 * dim)
            pref = (k / (2.0 * math.sqrt(1.0 / (2.0 * dim)))) ** dim
        else:
            log_vd = 0.5 * dim * math.log(math.pi) - math.lgamma(0.5 * dim + 1.0)
            pref = k**dim * (dim + 2.0) / 2.0 * math.exp(-log_vd)
        out = np.empty(m)
        diff = np.empty(dim)
        for t in range(m):
            acc = 0.0
            comp = 0.0
            for n in range(s_count):
                inside = True
                for i in range(dim):
                    d = targets[t, i] - sources[n, i]
                    if abs(d) > bbox:
                        inside = False
                        break
                    diff[i] = d
                if not inside:
                    continue
                if order == 1:
                    base = weights[n] * _nb_term(code, k, pref, rate, diff)
                    if code == 0:
                        term = -(k * k) * diff[axis] * base
                    elif code == 1:
                        if diff[axis] > 0.0:
                            term = -rate * base
                        elif diff[axis] < 0.0:
                            term = rate * base
                        else:
                            term = 0.0
                    else:
                        if base > 0.0:
                            term = -2.0 * k * k * pref * diff[axis] * weights[n]
                        else:
                            term = 0.0
                else:
                    if code == 0:
                        base = weights[n] * _nb_term(code, k, pref, rate, diff)
                        term = base
                        for i in range(dim):
                            term *= -(k * k) * diff[i]
                    elif code == 1:
                        zero = False
                        sgn = 1.0
                        for i in range(dim):
                            if diff[i] == 0.0:
                                zero = True
                                break
                            if diff[i] > 0.0:
                                sgn = -sgn
                        if zero:
                            term = 0.0
                        else:
                            base = weights[n] * _nb_term(code, k, pref, rate, diff)
                            term = sgn * (rate**dim) * base
                    else:
                        term = 0.0
                y = term - comp
                tmp = acc + y
                comp = (tmp - acc) - y
                acc = tmp
            out[t] = acc
        return out

    @njit(cache=True, fastmath=True)
    def _nb_flat_gauss_values(targets, sources, weights, k):  # pragma: no cover
        # Plain accumulation, no bbox: the argmax pruner re-checks its top
        # band with the compensated kernel, so fastmath reassociation is safe.
        m = targets.shape[0]
        s_count = sources.shape[0]
        dim = targets.shape[1]
        pref = k**dim * math.exp(-0.5 * dim * _LOG_2PI)
        a = -0.5 * k * k
        out = np.empty(m)
        for t in range(m):
            acc = 0.0
            for n in range(s_count):
                s = 0.0
                for i in range(dim):
                    d = targets[t, i] - sources[n, i]
                    s += d * d
                acc += weights[n] * math.exp(a * s)
            out[t] = acc * pref
        return out


def _as_c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pair_values(targets, sources, weights, code, k, bbox=np.inf):
    """Sum over sources of w_s * phi_k(target - source), per target."""
    targets = _as_c(np.atleast_2d(targets))
    sources = _as_c(sources)
    weights = _as_c(weights)
    if USING_NUMBA:
        return _nb_pair_values(targets, sources, weights, code, float(k), float(bbox))
    return _np_pair_values(targets, sources, weights, code, float(k), float(bbox))


def pair_value_grads(targets, sources, weights, code, k, bbox=np.inf):
    """Fused kernel sums and their gradients w.r.t. the target point."""
    targets = _as_c(np.atleast_2d(targets))
    sources = _as_c(sources)
    weights = _as_c(weights)
    if USING_NUMBA:
        return _nb_pair_value_grads(targets, sources, weights, code, float(k), float(bbox))
    return _np_pair_value_grads(targets, sources, weights, code, float(k), float(bbox))


def pair_derivs(targets, sources, weights, code, k, alpha, bbox=np.inf):
    """Sum of w_s * (D^alpha phi_k)(target - source) for alpha in {e_i, ones}."""
    targets = _as_c(np.atleast_2d(targets))
    sources = _as_c(sources)
    weights = _as_c(weights)
    alpha = np.ascontiguousarray(alpha, dtype=np.int64)
    if USING_NUMBA:
        return _nb_pair_derivs(targets, sources, weights, code, float(k), alpha, float(bbox))
    return _np_pair_derivs(targets, sources, weights, code, float(k), alpha, float(bbox))


def flat_gauss_values(targets, sources, weights, k):
    """Gaussian kernel sums without compensation; see argmax pruner."""
    targets = _as_c(np.atleast_2d(targets))
    sources = _as_c(sources)
    weights = _as_c(weights)
    if USING_NUMBA:
        return _nb_flat_gauss_values(targets, sources, weights, float(k))
    return _np_flat_gauss_values(targets, sources, weights, float(k))
