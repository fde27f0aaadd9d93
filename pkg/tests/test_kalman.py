import math

import numpy as np
import pytest

from pfkde.kalman import (
    GaussianDensity,
    KalmanError,
    gaussian_entropy,
    gaussian_gradient,
    gaussian_pdf,
    gaussian_sample,
    kalman_step,
    run_kalman,
)
from pfkde.model import BENCH_A, BENCH_B


def std_normal(d=2):
    return GaussianDensity(mean=np.zeros(d), cov=np.eye(d))


class TestKalmanStep:
    def test_zero_dynamics_identity_observation(self):
        # predict gives N(0, I); identity-noise update halves toward y
        y = np.array([1.4, -0.6])
        post = kalman_step(std_normal(), y, np.zeros((2, 2)), np.eye(2))
        assert np.allclose(post.mean, y / 2, atol=1e-12)
        assert np.allclose(post.cov, np.eye(2) / 2, atol=1e-12)

    def test_scalar_closed_form(self):
        # d=1, A=B=1, prior N(0,1), y=3: predictive var 2, posterior mean 2, var 2/3
        prior = GaussianDensity(mean=np.zeros(1), cov=np.eye(1))
        post = kalman_step(prior, np.array([3.0]), np.eye(1), np.eye(1))
        assert post.mean[0] == pytest.approx(2.0, abs=1e-12)
        assert post.cov[0, 0] == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_fast_path_matches_general_path(self):
        rng = np.random.default_rng(3)
        prior = std_normal()
        for _ in range(5):
            y = rng.standard_normal(2)
            fast = kalman_step(prior, y, BENCH_A, BENCH_B)
            general = kalman_step(prior, y, BENCH_A, BENCH_B,
                                  process_cov=np.eye(2), observation_cov=np.eye(2))
            assert np.allclose(fast.mean, general.mean, atol=1e-12)
            assert np.allclose(fast.cov, general.cov, atol=1e-12)
            prior = fast

    def test_covariance_stays_spd_over_benchmark_run(self, model, trajectory):
        posteriors = run_kalman(model.A, model.B, trajectory.observations)
        assert len(posteriors) == 50
        for g in posteriors:
            assert np.all(np.linalg.eigvalsh(g.cov) > 0)

    def test_covariance_recursion_reaches_steady_state(self, model, trajectory):
        posteriors = run_kalman(model.A, model.B, trajectory.observations)
        diffs = [np.max(np.abs(a.cov - b.cov))
                 for a, b in zip(posteriors, posteriors[1:])]
        assert min(diffs) < 1e-10
        assert diffs[-1] < 1e-10
        steady = gaussian_entropy(posteriors[-1])
        assert abs(gaussian_entropy(posteriors[20]) - steady) < 1e-6


class TestGaussianDensity:
    def test_rejects_asymmetric_covariance(self):
        with pytest.raises(KalmanError, match="asymmetric"):
            GaussianDensity(mean=np.zeros(2),
                            cov=np.array([[1.0, 0.1], [0.2, 1.0]]))

    def test_rejects_indefinite_covariance(self):
        with pytest.raises(KalmanError, match="positive definite"):
            GaussianDensity(mean=np.zeros(2), cov=-np.eye(2))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(KalmanError):
            GaussianDensity(mean=np.zeros(3), cov=np.eye(2))


class TestPdf:
    def test_peak_value_2d(self):
        g = std_normal()
        assert gaussian_pdf(g, g.mean) == pytest.approx(1 / (2 * math.pi), abs=1e-15)

    def test_unit_offset_value(self):
        g = std_normal()
        want = math.exp(-0.5) / (2 * math.pi)
        assert gaussian_pdf(g, np.array([1.0, 0.0])) == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(0.096532, abs=5e-7)

    def test_mode_bound(self, posterior):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-5, 5, size=(500, 2))
        bound = 1.0 / math.sqrt((2 * math.pi) ** 2 * np.linalg.det(posterior.cov))
        assert np.all(gaussian_pdf(posterior, pts) <= bound + 1e-15)

    def test_integrates_to_one(self, posterior):
        sigma = math.sqrt(np.max(np.linalg.eigvalsh(posterior.cov)))
        n, half = 401, 6 * sigma
        axis = np.linspace(-half, half, n)
        step = axis[1] - axis[0]
        xx, yy = np.meshgrid(axis + posterior.mean[0], axis + posterior.mean[1],
                             indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
        total = gaussian_pdf(posterior, pts).sum() * step**2
        assert total == pytest.approx(1.0, abs=1e-3)


class TestGradient:
    def test_zero_at_mean(self, posterior):
        assert np.allclose(gaussian_gradient(posterior, posterior.mean), 0.0,
                           atol=1e-15)

    def test_unit_offset_closed_form(self):
        g = std_normal()
        grad = gaussian_gradient(g, np.array([1.0, 0.0]))
        want = -math.exp(-0.5) / (2 * math.pi)
        assert grad[0] == pytest.approx(want, rel=1e-12)
        assert grad[1] == pytest.approx(0.0, abs=1e-15)

    def test_matches_finite_differences(self, posterior):
        rng = np.random.default_rng(1)
        pts = gaussian_sample(posterior, rng, 100)
        h = 1e-5
        for x in pts:
            grad = gaussian_gradient(posterior, x)
            fd = np.empty(2)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd[i] = (gaussian_pdf(posterior, x + e)
                         - gaussian_pdf(posterior, x - e)) / (2 * h)
            denom = max(np.linalg.norm(fd), 1e-300)
            assert np.linalg.norm(grad - fd) / denom < 1e-6


class TestEntropy:
    def test_identity_covariance_2d(self):
        want = math.log(2 * math.pi * math.e)
        assert gaussian_entropy(std_normal()) == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(2.837877, abs=5e-7)

    def test_covariance_scaling_identity(self, posterior):
        for c in (0.5, 2.0, 7.3):
            scaled = GaussianDensity(mean=posterior.mean, cov=c * posterior.cov)
            shift = gaussian_entropy(scaled) - gaussian_entropy(posterior)
            assert shift == pytest.approx(posterior.dim / 2 * math.log(c), rel=1e-10)

    def test_benchmark_value_is_observation_independent(self, model):
        import pfkde
        for seed in (1, 2):
            traj = pfkde.simulate(model, 50, seed)
            h = gaussian_entropy(run_kalman(model.A, model.B, traj.observations)[-1])
            assert h == pytest.approx(2.5998, abs=1e-4)


def test_sampling_moments(posterior):
    rng = np.random.default_rng(2)
    draws = gaussian_sample(posterior, rng, 200_000)
    assert np.allclose(draws.mean(axis=0), posterior.mean, atol=0.02)
    assert np.allclose(np.cov(draws.T), posterior.cov, atol=0.02)


def test_singular_innovation_raises():
    # zero observation map with zero observation noise makes S singular
    prior = std_normal()
    with pytest.raises(KalmanError):
        kalman_step(prior, np.zeros(2), np.eye(2), np.zeros((2, 2)),
                    observation_cov=np.zeros((2, 2)))
