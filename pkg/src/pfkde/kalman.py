"""Exact filtering for the linear-Gaussian model.

Supplies the reference density p_t = N(mean_t, cov_t), its gradient and its
entropy.  The 2x2 case (the benchmark) goes through direct determinant and
inverse formulas; larger dimensions use Cholesky factorizations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SYM_TOL = 1e-12


class KalmanError(ValueError):
    """Raised for numerically invalid covariances or singular innovations."""


@dataclass(frozen=True)
class GaussianDensity:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        d = mean.size
        if cov.shape != (d, d):
            raise KalmanError(f"covariance shape {cov.shape} does not match dim {d}")
        if d == 2:
            # scalar path: validation must not dominate the 2x2 filter step
            c00, c01 = float(cov[0, 0]), float(cov[0, 1])
            c10, c11 = float(cov[1, 0]), float(cov[1, 1])
            total = c00 + c01 + c10 + c11 + float(mean[0]) + float(mean[1])
            if not math.isfinite(total):
                raise KalmanError("non-finite mean or covariance")
            scale = max(1.0, abs(c00), abs(c01), abs(c10), abs(c11))
            if abs(c01 - c10) > SYM_TOL * scale:
                raise KalmanError(
                    f"covariance asymmetric beyond tolerance: {abs(c01 - c10):g}")
            # symmetric 2x2 is SPD iff trace > 0 and det > 0
            if c00 * c11 - c01 * c10 <= 0.0 or c00 + c11 <= 0.0:
                raise KalmanError("covariance is not positive definite")
        else:
            if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
                raise KalmanError("non-finite mean or covariance")
            asym = np.max(np.abs(cov - cov.T)) if d > 1 else 0.0
            scale = max(1.0, float(np.max(np.abs(cov))))
            if asym > SYM_TOL * scale:
                raise KalmanError(f"covariance asymmetric beyond tolerance: {asym:g}")
            if np.any(np.linalg.eigvalsh(cov) <= 0.0):
                raise KalmanError("covariance is not positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def _det_inv(cov):
    """(det, inverse) with a direct 2x2 fast path."""
    if cov.shape == (2, 2):
        a, b = cov[0, 0], cov[0, 1]
        c, d = cov[1, 0], cov[1, 1]
        det = a * d - b * c
        if det <= 0.0:
            raise KalmanError("non-positive determinant")
        inv = np.array([[d, -b], [-c, a]]) / det
        return det, inv
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise KalmanError("covariance not SPD") from exc
    det = float(np.prod(np.diag(chol)) ** 2)
    inv = np.linalg.inv(cov)
    return det, inv


def kalman_step(prior: GaussianDensity, y, A, B,
                process_cov=None, observation_cov=None) -> GaussianDensity:
    """One predict/update cycle with a Joseph-form covariance update.

    Predict:  m- = A m,  P- = A P A' + Q
    Update:   S = B P- B' + R,  K = P- B' S^{-1}
              m+ = m- + K (y - B m-),  P+ = (I-KB) P- (I-KB)' + K R K'
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    d = prior.dim
    if d == 2 and B.shape == (2, 2) and process_cov is None and observation_cov is None:
        return _kalman_step_2x2_eye(prior, y, A, B)
    q = np.eye(d) if process_cov is None else np.asarray(process_cov, float)
    r = np.eye(B.shape[0]) if observation_cov is None else np.asarray(observation_cov, float)

    m_pred = A @ prior.mean
    p_pred = A @ prior.cov @ A.T + q

    s = B @ p_pred @ B.T + r
    s = 0.5 * (s + s.T)
    try:
        _, s_inv = _det_inv(s)
    except KalmanError as exc:
        raise KalmanError("innovation covariance numerically singular") from exc
    gain = p_pred @ B.T @ s_inv
    mean = m_pred + gain @ (y - B @ m_pred)
    ikb = np.eye(d) - gain @ B
    cov = ikb @ p_pred @ ikb.T + gain @ r @ gain.T
    cov = 0.5 * (cov + cov.T)
    return GaussianDensity(mean=mean, cov=cov)


def _kalman_step_2x2_eye(prior: GaussianDensity, y, A, B) -> GaussianDensity:
    """Scalarized benchmark path (d_x = d_y = 2, identity noise)."""
    a11, a12 = float(A[0, 0]), float(A[0, 1])
    a21, a22 = float(A[1, 0]), float(A[1, 1])
    b11, b12 = float(B[0, 0]), float(B[0, 1])
    b21, b22 = float(B[1, 0]), float(B[1, 1])
    m1, m2 = float(prior.mean[0]), float(prior.mean[1])
    p11, p12 = float(prior.cov[0, 0]), float(prior.cov[0, 1])
    p22 = float(prior.cov[1, 1])

    # predict
    mp1 = a11 * m1 + a12 * m2
    mp2 = a21 * m1 + a22 * m2
    # P- = A P A' + I, with P symmetric
    t11 = a11 * p11 + a12 * p12
    t12 = a11 * p12 + a12 * p22
    t21 = a21 * p11 + a22 * p12
    t22 = a21 * p12 + a22 * p22
    pp11 = t11 * a11 + t12 * a12 + 1.0
    pp12 = t11 * a21 + t12 * a22
    pp22 = t21 * a21 + t22 * a22 + 1.0

    # S = B P- B' + I (symmetrized by construction)
    u11 = b11 * pp11 + b12 * pp12
    u12 = b11 * pp12 + b12 * pp22
    u21 = b21 * pp11 + b22 * pp12
    u22 = b21 * pp12 + b22 * pp22
    s11 = u11 * b11 + u12 * b12 + 1.0
    s12 = 0.5 * ((u11 * b21 + u12 * b22) + (u21 * b11 + u22 * b12))
    s22 = u21 * b21 + u22 * b22 + 1.0
    det_s = s11 * s22 - s12 * s12
    if det_s <= 0.0 or not np.isfinite(det_s):
        raise KalmanError("innovation covariance numerically singular")
    si11, si12, si22 = s22 / det_s, -s12 / det_s, s11 / det_s

    # K = P- B' S^{-1}
    c11 = pp11 * b11 + pp12 * b12
    c12 = pp11 * b21 + pp12 * b22
    c21 = pp12 * b11 + pp22 * b12
    c22 = pp12 * b21 + pp22 * b22
    k11 = c11 * si11 + c12 * si12
    k12 = c11 * si12 + c12 * si22
    k21 = c21 * si11 + c22 * si12
    k22 = c21 * si12 + c22 * si22

    r1 = float(y[0]) - (b11 * mp1 + b12 * mp2)
    r2 = float(y[1]) - (b21 * mp1 + b22 * mp2)
    mean1 = mp1 + k11 * r1 + k12 * r2
    mean2 = mp2 + k21 * r1 + k22 * r2

    # Joseph form: (I-KB) P- (I-KB)' + K K'
    i11 = 1.0 - (k11 * b11 + k12 * b21)
    i12 = -(k11 * b12 + k12 * b22)
    i21 = -(k21 * b11 + k22 * b21)
    i22 = 1.0 - (k21 * b12 + k22 * b22)
    w11 = i11 * pp11 + i12 * pp12
    w12 = i11 * pp12 + i12 * pp22
    w21 = i21 * pp11 + i22 * pp12
    w22 = i21 * pp12 + i22 * pp22
    q11 = w11 * i11 + w12 * i12 + (k11 * k11 + k12 * k12)
    q12 = w11 * i21 + w12 * i22 + (k11 * k21 + k12 * k22)
    q21 = w21 * i11 + w22 * i12 + (k21 * k11 + k22 * k12)
    q22 = w21 * i21 + w22 * i22 + (k21 * k21 + k22 * k22)
    off = 0.5 * (q12 + q21)
    return GaussianDensity(
        mean=np.array([mean1, mean2]),
        cov=np.array([[q11, off], [off, q22]]),
    )


def run_kalman(A, B, observations, prior: GaussianDensity | None = None,
               process_cov=None, observation_cov=None) -> list[GaussianDensity]:
    """Filter a full observation record; returns the posterior at each t >= 1."""
    A = np.asarray(A, dtype=float)
    if prior is None:
        prior = GaussianDensity(mean=np.zeros(A.shape[0]), cov=np.eye(A.shape[0]))
    out = []
    current = prior
    for y in np.atleast_2d(np.asarray(observations, dtype=float)):
        current = kalman_step(current, y, A, B, process_cov, observation_cov)
        out.append(current)
    return out


def gaussian_pdf(g: GaussianDensity, x) -> float | np.ndarray:
    """Multivariate normal density at one point (d,) or a batch (M, d)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    det, inv = _det_inv(g.cov)
    diff = pts - g.mean[None, :]
    quad = np.einsum("ni,ij,nj->n", diff, inv, diff)
    norm = 1.0 / np.sqrt((2.0 * np.pi) ** g.dim * det)
    vals = norm * np.exp(-0.5 * quad)
    return float(vals[0]) if single else vals


def gaussian_gradient(g: GaussianDensity, x) -> np.ndarray:
    """Gradient of the pdf: -pdf(x) * cov^{-1} (x - mean)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    _, inv = _det_inv(g.cov)
    diff = pts - g.mean[None, :]
    vals = gaussian_pdf(g, pts)
    grads = -vals[:, None] * (diff @ inv.T)
    return grads[0] if single else grads


def gaussian_entropy(g: GaussianDensity) -> float:
    """Differential entropy 0.5 * log((2 pi e)^d |cov|) in nats."""
    det, _ = _det_inv(g.cov)
    if det <= 0.0:
        raise KalmanError("non-positive determinant")
    return 0.5 * (g.dim * np.log(2.0 * np.pi * np.e) + np.log(det))


def gaussian_sample(g: GaussianDensity, rng: np.random.Generator, n: int) -> np.ndarray:
    chol = np.linalg.cholesky(g.cov)
    return g.mean[None, :] + rng.standard_normal((n, g.dim)) @ chol.T
