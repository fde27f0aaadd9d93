"""Bootstrap particle filter: propagate through the transition kernel,
weight by the likelihood, resample multinomially every step.

Per-step randomness comes from Philox substreams keyed by (seed, t, phase),
so a run is fully determined by (model, observations, N, seed) and the
propagation of different steps could be farmed out without changing results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    PHASE_INIT,
    PHASE_PROPAGATE,
    PHASE_RESAMPLE,
    StateSpaceModel,
    substream,
)

WEIGHT_SUM_TOL = 1e-12


class DegenerateWeightsError(RuntimeError):
    """All likelihoods underflowed to zero: the particle set collapsed."""


@dataclass(frozen=True)
class ParticleCloud:
    """N equally-weighted post-resampling particles at time t."""

    particles: np.ndarray  # (N, dim_x)
    t: int
    seed: int

    def __post_init__(self):
        particles = np.asarray(self.particles, dtype=float)
        if particles.ndim != 2 or particles.shape[0] < 1:
            raise ValueError("particles must be a non-empty (N, d) array")
        if not np.all(np.isfinite(particles)):
            raise ValueError("non-finite particle coordinates")
        particles.setflags(write=False)
        object.__setattr__(self, "particles", particles)

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]


@dataclass(frozen=True)
class WeightedStage:
    """Proposed particles and their normalized importance weights."""

    proposals: np.ndarray  # (N, dim_x)
    weights: np.ndarray    # (N,), sums to 1
    t: int
    seed: int

    def __post_init__(self):
        proposals = np.asarray(self.proposals, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (proposals.shape[0],):
            raise ValueError("one weight per proposal required")
        if np.any(weights < 0.0):
            raise ValueError("negative weight")
        if abs(weights.sum() - 1.0) >= WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        proposals.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "proposals", proposals)
        object.__setattr__(self, "weights", weights)


def bpf_init(model: StateSpaceModel, n_particles: int, seed: int) -> ParticleCloud:
    """Draw N i.i.d. particles from the initial distribution."""
    if n_particles < 1:
        raise ValueError("need at least one particle")
    rng = substream(seed, 0, PHASE_INIT)
    particles = model.initial_sampler(rng, n_particles)
    return ParticleCloud(particles=particles, t=0, seed=int(seed))


def _normalize(raw: np.ndarray) -> np.ndarray:
    total = raw.sum()
    if total <= 0.0 or not np.isfinite(total):
        raise DegenerateWeightsError(
            f"likelihood sum is {total!r}; all particles have zero weight"
        )
    return raw / total


def bpf_propagate_weight(cloud: ParticleCloud, y, model: StateSpaceModel) -> WeightedStage:
    """Propagate each particle through the transition kernel and weight it.

    Weights are direct likelihood ratios; when every raw likelihood
    underflows to zero the computation is retried in log space with a
    max shift, provided the model exposes log_likelihood.
    """
    t_next = cloud.t + 1
    rng = substream(cloud.seed, t_next, PHASE_PROPAGATE)
    proposals = model.transition_sampler(rng, cloud.particles)
    raw = np.asarray(model.likelihood(y, proposals), dtype=float)
    if np.any(raw < 0.0) or not np.all(np.isfinite(raw)):
        raise ValueError("likelihood returned negative or non-finite values")
    if raw.sum() > 0.0:
        weights = _normalize(raw)
    elif model.log_likelihood is not None:
        logs = np.asarray(model.log_likelihood(y, proposals), dtype=float)
        shifted = np.exp(logs - logs.max())
        weights = _normalize(shifted)
    else:
        raise DegenerateWeightsError("all likelihoods underflowed to zero")
    return WeightedStage(proposals=proposals, weights=weights, t=t_next, seed=cloud.seed)


def multinomial_resample(stage: WeightedStage, rng: np.random.Generator) -> ParticleCloud:
    """Select N particles i.i.d. with probabilities given by the weights."""
    n = stage.proposals.shape[0]
    cum = np.cumsum(stage.weights)
    cum[-1] = 1.0
    u = rng.random(n)
    # searchsorted over sorted needles is cache-friendly; scattering back
    # through the argsort keeps the output identical to the direct lookup
    order = np.argsort(u)
    idx = np.empty(n, dtype=np.int64)
    idx[order] = np.searchsorted(cum, u[order], side="right")
    return ParticleCloud(particles=stage.proposals[idx], t=stage.t, seed=stage.seed)


def systematic_resample(stage: WeightedStage, rng: np.random.Generator) -> ParticleCloud:
    """Low-variance alternative; never used by the benchmark recipes."""
    n = stage.proposals.shape[0]
    cum = np.cumsum(stage.weights)
    cum[-1] = 1.0
    u = (np.arange(n) + rng.random()) / n
    idx = np.searchsorted(cum, u, side="right")
    return ParticleCloud(particles=stage.proposals[idx], t=stage.t, seed=stage.seed)


_RESAMPLERS = {
    "multinomial": multinomial_resample,
    "systematic": systematic_resample,
}


def bpf_step(cloud: ParticleCloud, y, model: StateSpaceModel,
             resampler: str = "multinomial") -> ParticleCloud:
    stage = bpf_propagate_weight(cloud, y, model)
    rng = substream(cloud.seed, stage.t, PHASE_RESAMPLE)
    return _RESAMPLERS[resampler](stage, rng)


def run_filter(model: StateSpaceModel, observations, n_particles: int, seed: int,
               resampler: str = "multinomial") -> ParticleCloud:
    """Run the filter over a full observation record; returns the final cloud."""
    if resampler not in _RESAMPLERS:
        raise ValueError(f"unknown resampler {resampler!r}")
    cloud = bpf_init(model, n_particles, seed)
    for y in np.atleast_2d(np.asarray(observations, dtype=float)):
        cloud = bpf_step(cloud, y, model, resampler)
    return cloud


def estimate_integral(cloud: ParticleCloud, f) -> float:
    """Particle average (1/N) sum f(x^(n)); f maps (N, d) -> (N,)."""
    values = np.asarray(f(cloud.particles), dtype=float)
    if values.shape != (cloud.n_particles,):
        raise ValueError("f must return one value per particle")
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise ValueError(f"f returned a non-finite value at particle index {int(np.argmax(bad))}")
    return float(values.mean())
