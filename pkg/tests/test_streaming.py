import math

import numpy as np
import pytest

from dpmean.bench import simulate_alg1
from dpmean.exceptions import ConfigurationError, NormViolationError, PreconditionError, SizeCapError, StreamExhaustedError
from dpmean.metrics import PrivacyBudget, frob_prefix, gaussian_scale
from dpmean.sensitivity import ParticipationPattern, sens_min_sep, sens_single
from dpmean.series import Kind, banded_inverse, dtoep_series, running_means_dense
from dpmean.streaming import (
    EstimatorConfig,
    StreamingMeanEstimator,
    default_bandwidth,
    noise_matrix,
    offline_recompose,
    predicted_mse,
)

BUDGET = PrivacyBudget(1.0, 1e-6)


def config(n=64, b=16, p=16, d=1, budget=BUDGET, **kw):
    return EstimatorConfig(budget, ParticipationPattern(n, b), p=p, d=d, **kw)


BERNOULLI_2D = PrivacyBudget(1.0, 1e-6, xi=math.sqrt(2))


class TestInit:
    def test_p1_is_input_perturbation(self):
        est = StreamingMeanEstimator(config(p=1))
        np.testing.assert_array_equal(est.g, [1.0])
        np.testing.assert_array_equal(est.c.coeffs, np.eye(1, 64)[0])

    def test_sigma_k1(self):
        n = 40
        est = StreamingMeanEstimator(config(n=n, b=n, p=n))
        assert math.isclose(est.sigma, 5.298802526850474 * sens_single(est.c), rel_tol=1e-12)
        assert math.isclose(est.sigma, gaussian_scale(1, 1e-6) * sens_single(dtoep_series(n)), rel_tol=1e-12)

    def test_sensitivity_uses_banded_inverse(self):
        est = StreamingMeanEstimator(config(n=100, b=10, p=7))
        ref = sens_min_sep(banded_inverse(dtoep_series(100), 7), ParticipationPattern(100, 10))
        assert math.isclose(est.sensitivity, ref, rel_tol=1e-14)

    def test_same_seed_same_noise(self):
        a = noise_matrix(StreamingMeanEstimator(config(seed=7)))
        b = noise_matrix(StreamingMeanEstimator(config(seed=7)))
        c = noise_matrix(StreamingMeanEstimator(config(seed=8)))
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c)

    @pytest.mark.parametrize("p", [0, 65])
    def test_bad_bandwidth(self, p):
        with pytest.raises(ConfigurationError):
            config(p=p)

    def test_bad_clip_mode(self):
        with pytest.raises(ConfigurationError):
            config(clip_mode="wrap")

    def test_default_bandwidth(self):
        assert default_bandwidth(Kind.SQRT_PREFIX, 129) == 8
        assert default_bandwidth(Kind.MEAN_AWARE, 129) == 129


class TestObserve:
    def test_noiseless_constant(self):
        est = StreamingMeanEstimator(config(d=3, sigma_override=0.0))
        x = np.array([0.1, -0.2, 0.3])
        for _ in range(64):
            np.testing.assert_allclose(est.observe(x), x, atol=1e-15)

    def test_exhausted(self):
        est = StreamingMeanEstimator(config(n=3, b=1, p=3, sigma_override=0.0))
        for _ in range(3):
            est.observe([0.0])
        with pytest.raises(StreamExhaustedError):
            est.observe([0.0])

    def test_reject(self):
        est = StreamingMeanEstimator(config(d=2))
        with pytest.raises(NormViolationError):
            est.observe([1.0, 1.0])

    def test_clip(self):
        cfg = EstimatorConfig(PrivacyBudget(0.5, 1e-6, xi=2.0), ParticipationPattern(4, 1), p=1, d=2,
                              clip_mode="clip", sigma_override=0.0)
        est = StreamingMeanEstimator(cfg)
        np.testing.assert_allclose(est.observe([3.0, 4.0]), [1.2, 1.6])

    def test_shape_checked(self):
        with pytest.raises(PreconditionError):
            StreamingMeanEstimator(config(d=2)).observe([0.1])

    def test_memory_bound(self):
        est = StreamingMeanEstimator(config(n=64, p=5))
        assert est._ring.shape[0] == 5
        for t in range(1, 12):
            est.observe([0.0])
            assert est.retained_noise == min(5, t)

    def test_deterministic(self):
        X = np.random.default_rng(0).uniform(-0.5, 0.5, (64, 1))
        a = StreamingMeanEstimator(config(seed=3)).run(X)
        b = StreamingMeanEstimator(config(seed=3)).run(X)
        np.testing.assert_array_equal(a, b)


class TestOffline:
    @pytest.mark.parametrize("n,d,p,b,kind", [(3, 1, 3, 1, "dtoep"), (256, 3, 32, 32, "dtoep"),
                                               (128, 2, 6, 20, "sqrt"), (100, 1, 10, 10, "identity")])
    def test_equivalence(self, n, d, p, b, kind):
        cfg = EstimatorConfig(BUDGET, ParticipationPattern(n, b), p=p, d=d, seed=5, kind=kind)
        est = StreamingMeanEstimator(cfg)
        X = np.random.default_rng(1).uniform(-0.5, 0.5, (n, d)) / math.sqrt(d)
        Z = noise_matrix(est)
        stream = est.run(X)
        assert np.abs(stream - offline_recompose(cfg, X, Z)).max() <= 1e-9

    def test_zero_noise_and_zero_data(self):
        cfg = config(n=20, b=4, p=4, d=2)
        X = np.random.default_rng(2).normal(size=(20, 2))
        A = running_means_dense(20)
        np.testing.assert_allclose(offline_recompose(cfg, X, np.zeros_like(X)), A @ X, atol=1e-14)
        Z = np.random.default_rng(3).normal(size=(20, 2))
        est = StreamingMeanEstimator(cfg)
        B = est.plan().b_matrix()
        np.testing.assert_allclose(offline_recompose(cfg, np.zeros_like(X), Z), B @ Z, atol=1e-12)

    def test_cap(self):
        cfg = EstimatorConfig(BUDGET, ParticipationPattern(5000, 50), p=4)
        with pytest.raises(SizeCapError):
            offline_recompose(cfg, np.zeros((5000, 1)), np.zeros((5000, 1)))


class TestCalibration:
    def test_monte_carlo_noise_mse(self):
        cfg = config(n=128, b=32, p=32, d=2, seed=2024, budget=BERNOULLI_2D)
        ts = [16, 64, 128]
        res = simulate_alg1(cfg, trials=10_000, data_seed=1, ts=ts)
        est = StreamingMeanEstimator(cfg)
        for t, emp in zip(res.t, res.noise_ramse**2):
            sigma = gaussian_scale(1.0, 1e-6) * math.sqrt(2) * est.sensitivity
            ref = 2 * sigma**2 * frob_prefix(est.plan(), int(t)) ** 2 / t
            assert abs(emp / ref - 1) < 0.03
            assert math.isclose(ref, predicted_mse(est, int(t)), rel_tol=1e-12)

    def test_noiseless_statistical_envelope(self):
        cfg = config(n=256, b=256, p=4, d=2, sigma_override=0.0, budget=BERNOULLI_2D)
        res = simulate_alg1(cfg, trials=4000, data_seed=9, ts=[4, 64, 256])
        envelope = np.sqrt(2 / (4 * res.t))
        np.testing.assert_allclose(res.rmse, envelope, rtol=0.05)
        assert np.all(res.noise_ramse == 0)
