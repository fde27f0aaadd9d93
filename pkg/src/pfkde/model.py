"""State-space models: the generic Markov abstraction, the linear-Gaussian
benchmark instance and trajectory simulation.

All randomness flows through counter-based Philox substreams keyed by
(seed, t, phase), so every draw is reproducible and independent streams can
be handed to workers without coordination.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

# phases for substream() keys
PHASE_INIT = 0
PHASE_PROPAGATE = 1
PHASE_RESAMPLE = 2
PHASE_SIMULATE = 3

_MASK64 = (1 << 64) - 1

# Example benchmark matrices (2x2 state, 2x2 observation map)
BENCH_A = np.array([[0.50, -0.35], [0.39, -0.45]])
BENCH_B = np.array([[0.50, 0.30], [-0.80, 0.20]])
BENCH_T = 50


def substream(seed: int, t: int, phase: int) -> np.random.Generator:
    """Deterministic Philox stream for one (seed, time step, phase) triple."""
    key = [int(seed) & _MASK64, (int(t) << 8 | int(phase)) & _MASK64]
    return np.random.Generator(np.random.Philox(key=key))


class StateSpaceModel:
    """Markov model: initial law, transition kernel and observation likelihood.

    The callables are vectorized over a leading particle axis:
      initial_sampler(rng, n)        -> (n, dim_x)
      transition_sampler(rng, x)     -> (n, dim_x) for x of shape (n, dim_x)
      observation_sampler(rng, x)    -> (n, dim_y)
      likelihood(y, x)               -> (n,) non-negative values g_t(y | x)
      log_likelihood(y, x)           -> (n,) optional, used when the direct
                                        weights underflow
    Instances are immutable by convention and safe to share across workers.
    """

    def __init__(
        self,
        dim_x: int,
        dim_y: int,
        initial_sampler: Callable,
        transition_sampler: Callable,
        likelihood: Callable,
        observation_sampler: Callable,
        log_likelihood: Optional[Callable] = None,
    ):
        if dim_x < 1 or dim_y < 1:
            raise ValueError("dimensions must be positive")
        self.dim_x = int(dim_x)
        self.dim_y = int(dim_y)
        self.initial_sampler = initial_sampler
        self.transition_sampler = transition_sampler
        self.likelihood = likelihood
        self.observation_sampler = observation_sampler
        self.log_likelihood = log_likelihood


def linear_gaussian_likelihood(y, x, B) -> np.ndarray:
    """N(y; Bx, I) evaluated for one observation against a batch of states."""
    y = np.asarray(y, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B = np.asarray(B, dtype=float)
    if y.shape != (B.shape[0],) or x.shape[1] != B.shape[1]:
        raise ValueError(
            f"dimension mismatch: y{y.shape}, x{x.shape}, B{B.shape}"
        )
    resid = y[None, :] - x @ B.T
    log_norm = -0.5 * B.shape[0] * np.log(2.0 * np.pi)
    return np.exp(log_norm - 0.5 * np.sum(resid * resid, axis=1))


def linear_gaussian_log_likelihood(y, x, B) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B = np.asarray(B, dtype=float)
    resid = y[None, :] - x @ B.T
    return -0.5 * B.shape[0] * np.log(2.0 * np.pi) - 0.5 * np.sum(resid * resid, axis=1)


class LinearGaussianModel(StateSpaceModel):
    """X_t = A X_{t-1} + U_t,  Y_t = B X_t + V_t with Gaussian noise.

    Noise covariances default to the identity; general SPD covariances are
    accepted and sampled through their Cholesky factors.
    """

    def __init__(self, A, B, process_cov=None, observation_cov=None,
                 prior_mean=None, prior_cov=None):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        dim_x = A.shape[0]
        if B.ndim != 2 or B.shape[1] != dim_x:
            raise ValueError("B must have dim_x columns")
        dim_y = B.shape[0]

        self.A = A
        self.B = B
        self.process_cov = np.eye(dim_x) if process_cov is None else np.asarray(process_cov, float)
        self.observation_cov = np.eye(dim_y) if observation_cov is None else np.asarray(observation_cov, float)
        self.prior_mean = np.zeros(dim_x) if prior_mean is None else np.asarray(prior_mean, float)
        self.prior_cov = np.eye(dim_x) if prior_cov is None else np.asarray(prior_cov, float)
        self._chol_q = np.linalg.cholesky(self.process_cov)
        self._chol_r = np.linalg.cholesky(self.observation_cov)
        self._chol_p0 = np.linalg.cholesky(self.prior_cov)
        identity_obs_noise = np.array_equal(self.observation_cov, np.eye(dim_y))

        def initial_sampler(rng, n):
            z = rng.standard_normal((n, dim_x))
            return self.prior_mean[None, :] + z @ self._chol_p0.T

        def transition_sampler(rng, x):
            z = rng.standard_normal(x.shape)
            return x @ A.T + z @ self._chol_q.T

        def observation_sampler(rng, x):
            z = rng.standard_normal((x.shape[0], dim_y))
            return x @ B.T + z @ self._chol_r.T

        if identity_obs_noise:
            likelihood = lambda y, x: linear_gaussian_likelihood(y, x, B)
            log_likelihood = lambda y, x: linear_gaussian_log_likelihood(y, x, B)
        else:
            r_inv = np.linalg.inv(self.observation_cov)
            _, logdet = np.linalg.slogdet(self.observation_cov)
            log_norm = -0.5 * (dim_y * np.log(2 * np.pi) + logdet)

            def log_likelihood(y, x):
                resid = np.asarray(y, float)[None, :] - np.atleast_2d(x) @ B.T
                return log_norm - 0.5 * np.einsum("ni,ij,nj->n", resid, r_inv, resid)

            likelihood = lambda y, x: np.exp(log_likelihood(y, x))

        super().__init__(dim_x, dim_y, initial_sampler, transition_sampler,
                         likelihood, observation_sampler, log_likelihood)


def benchmark_model() -> LinearGaussianModel:
    """The 2-d benchmark instance with identity noise and N(0, I) prior."""
    return LinearGaussianModel(BENCH_A, BENCH_B)


@dataclass(frozen=True)
class Trajectory:
    """One simulated run: states x_{0:T} and observations y_{1:T}."""

    states: np.ndarray        # (T+1, dim_x)
    observations: np.ndarray  # (T, dim_y)
    seed: int

    def __post_init__(self):
        if self.states.shape[0] != self.observations.shape[0] + 1:
            raise ValueError("need exactly T+1 states for T observations")


def simulate(model: StateSpaceModel, T: int, seed: int) -> Trajectory:
    """Ancestral sampling of x_{0:T} plus observations y_{1:T}."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = substream(seed, 0, PHASE_SIMULATE)
    states = np.empty((T + 1, model.dim_x))
    observations = np.empty((T, model.dim_y))
    states[0] = model.initial_sampler(rng, 1)[0]
    for t in range(1, T + 1):
        states[t] = model.transition_sampler(rng, states[t - 1 : t])[0]
        observations[t - 1] = model.observation_sampler(rng, states[t : t + 1])[0]
    states.setflags(write=False)
    observations.setflags(write=False)
    return Trajectory(states=states, observations=observations, seed=int(seed))


# --- key=value model configuration ----------------------------------------

_CONFIG_KEYS = {"A", "B", "T", "seed"}


@dataclass(frozen=True)
class ModelConfig:
    A: np.ndarray
    B: np.ndarray
    T: int = BENCH_T
    seed: int = 0

    def build(self) -> LinearGaussianModel:
        return LinearGaussianModel(self.A, self.B)


def default_config() -> ModelConfig:
    return ModelConfig(A=BENCH_A.copy(), B=BENCH_B.copy())


def parse_model_config(path) -> ModelConfig:
    """Read a UTF-8 key=value file with keys A, B (row-major), T, seed."""
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{line_no}: unknown key {key!r}")
            if key in raw:
                raise ValueError(f"{path}:{line_no}: duplicate key {key!r}")
            raw[key] = value.strip()
    if "A" not in raw or "B" not in raw:
        raise ValueError(f"{path}: keys A and B are required")

    a_flat = np.array([float(v) for v in raw["A"].split(",")])
    dim_x = int(round(np.sqrt(a_flat.size)))
    if dim_x * dim_x != a_flat.size:
        raise ValueError(f"{path}: A has {a_flat.size} entries, not a square matrix")
    A = a_flat.reshape(dim_x, dim_x)

    b_flat = np.array([float(v) for v in raw["B"].split(",")])
    if b_flat.size % dim_x != 0:
        raise ValueError(f"{path}: B has {b_flat.size} entries, not divisible by dim_x={dim_x}")
    B = b_flat.reshape(-1, dim_x)

    T = int(raw.get("T", BENCH_T))
    seed = int(raw.get("seed", 0))
    if T < 1:
        raise ValueError(f"{path}: T must be >= 1")
    return ModelConfig(A=A, B=B, T=T, seed=seed)
