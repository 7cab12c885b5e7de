import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from roadmtt import models


def default_sensor(uav=(0.0, 0.0, 150.0), r_std=1.0, ang_std_deg=1.0):
    ang = math.radians(ang_std_deg)
    R = np.diag([r_std ** 2, ang ** 2, ang ** 2])
    return models.SensorConfig(uav_pos=np.array(uav), R=R, p_d=0.95, p_g=0.99)


def random_state(rng, uav):
    # keep well away from the sensor vertical so geometry is non-degenerate
    ang = rng.uniform(-math.pi, math.pi)
    dist = rng.uniform(50.0, 1500.0)
    pos = np.array([uav[0] + dist * math.cos(ang), uav[1] + dist * math.sin(ang), 0.0])
    vel = rng.uniform(-25.0, 25.0, 3)
    vel[2] = 0.0
    return np.concatenate([pos, vel])


class TestPredict:
    def test_position_advances_by_velocity(self):
        cfg = models.MotionConfig(dt=1.0, Q=np.zeros((6, 6)))
        est = models.GaussianEstimate(np.array([0.0, 0, 0, 1, 2, 0]), np.eye(6))
        out = models.predict(est, cfg)
        assert np.allclose(out.mean, [1, 2, 0, 1, 2, 0])

    def test_zero_cov_becomes_process_noise(self):
        Q = np.diag([20.0, 20, 10, 20, 20, 4])
        cfg = models.MotionConfig(dt=1.0, Q=Q)
        out = models.predict(models.GaussianEstimate(np.zeros(6), np.zeros((6, 6))), cfg)
        assert np.array_equal(out.cov, Q)

    def test_zero_dt_only_adds_noise(self):
        Q = 0.1 * np.eye(6)
        cfg = models.MotionConfig(dt=0.0, Q=Q)
        est = models.GaussianEstimate(np.arange(6.0), np.eye(6))
        out = models.predict(est, cfg)
        assert np.array_equal(out.mean, est.mean)
        assert np.allclose(out.cov, np.eye(6) + Q)

    def test_cov_stays_symmetric_psd(self):
        rng = np.random.default_rng(3)
        cfg = models.MotionConfig(dt=1.0, Q=np.diag([20.0, 20, 10, 20, 20, 4]))
        for _ in range(20):
            A = rng.normal(size=(6, 6))
            est = models.GaussianEstimate(rng.normal(size=6), A @ A.T)
            out = models.predict(est, cfg)
            assert np.allclose(out.cov, out.cov.T)
            assert np.linalg.eigvalsh(out.cov).min() >= -1e-9 * np.trace(out.cov)


class TestMeasure:
    def test_reference_geometry(self):
        cfg = default_sensor()
        z = models.measure(np.array([100.0, 0, 0, 0, 0, 0]), cfg)
        r_oracle = math.sqrt(100.0 ** 2 + 150.0 ** 2)
        assert z.r == pytest.approx(r_oracle, abs=1e-12)
        assert z.r == pytest.approx(180.27756, abs=1e-5)
        assert z.theta == pytest.approx(math.acos(-150.0 / r_oracle), abs=1e-12)
        assert z.theta == pytest.approx(2.55359, abs=1e-5)
        assert z.xi == 0.0

    def test_directly_below_is_stable(self):
        z = models.measure(np.zeros(6), default_sensor())
        assert z.r == pytest.approx(150.0)
        assert z.theta == pytest.approx(math.pi)
        assert z.xi == 0.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            offset = rng.uniform(-1e5, 1e5, 3)
            x = random_state(rng, np.zeros(3))
            base = models.measure(x, default_sensor())
            shifted_cfg = default_sensor(uav=np.array([0.0, 0, 150]) + offset)
            x2 = x.copy()
            x2[:3] += offset
            moved = models.measure(x2, shifted_cfg)
            assert moved.r == pytest.approx(base.r, rel=1e-12)
            assert moved.theta == pytest.approx(base.theta, abs=1e-12)
            assert moved.xi == pytest.approx(base.xi, abs=1e-12)

    def test_invert_roundtrip(self):
        cfg = default_sensor()
        rng = np.random.default_rng(5)
        for _ in range(50):
            x = random_state(rng, cfg.uav_pos)
            z = models.measure(x, cfg)
            assert np.allclose(models.invert_measurement(z, cfg), x[:3], atol=1e-9)
            assert z.r > 0 and 0 <= z.theta <= math.pi and -math.pi < z.xi <= math.pi

    def test_zero_range_raises(self):
        cfg = default_sensor()
        with pytest.raises(models.DegenerateGeometry):
            models.measure(np.array([0.0, 0, 150, 0, 0, 0]), cfg)


def numeric_jacobian(x, cfg, h=1e-4):
    """Central finite differences of the measurement function."""
    H = np.zeros((3, 6))
    for c in range(6):
        xp, xm = x.copy(), x.copy()
        xp[c] += h
        xm[c] -= h
        zp = models.measure(xp, cfg).as_array()
        zm = models.measure(xm, cfg).as_array()
        d = zp - zm
        d[2] = models.wrap_angle(d[2])
        H[:, c] = d / (2 * h)
    return H


class TestJacobian:
    def test_matches_central_differences(self):
        cfg = default_sensor(uav=(-213224.699, 6209585.65, 150.0))
        rng = np.random.default_rng(17)
        for _ in range(100):
            x = random_state(rng, cfg.uav_pos)
            H = models.jacobian(x, cfg)
            Hn = numeric_jacobian(x, cfg)
            denom = np.maximum(np.abs(Hn), 1e-6)
            assert np.max(np.abs(H - Hn) / denom) < 1e-5

    def test_velocity_columns_zero(self):
        cfg = default_sensor()
        H = models.jacobian(np.array([300.0, -200, 0, 5, 5, 0]), cfg)
        assert np.array_equal(H[:, 3:], np.zeros((3, 3)))

    def test_on_vertical_raises(self):
        with pytest.raises(models.DegenerateGeometry):
            models.jacobian(np.zeros(6), default_sensor())


class TestInnovationStats:
    def make_pred(self, seed=0):
        cfg = default_sensor()
        rng = np.random.default_rng(seed)
        x = random_state(rng, cfg.uav_pos)
        A = rng.normal(size=(6, 6))
        est = models.GaussianEstimate(x, A @ A.T + 10 * np.eye(6))
        return est, models.measurement_prediction(est, cfg), cfg

    def test_innovation_covariance_definition(self):
        est, pred, cfg = self.make_pred()
        S = pred.H @ est.cov @ pred.H.T + cfg.R
        assert np.allclose(pred.S, S, atol=1e-12)
        assert np.allclose(pred.chol @ pred.chol.T, pred.S, atol=1e-9)
        assert pred.log_det == pytest.approx(np.linalg.slogdet(pred.S)[1], abs=1e-9)

    def test_likelihood_matches_scipy(self):
        est, pred, _ = self.make_pred(seed=2)
        rng = np.random.default_rng(9)
        for _ in range(20):
            z_arr = pred.z_pred + rng.normal(0, [3.0, 0.02, 0.02])
            z = models.Measurement(*z_arr)
            want = multivariate_normal.pdf(z_arr, mean=pred.z_pred, cov=pred.S)
            assert models.likelihood(pred, z) == pytest.approx(want, rel=1e-10)
            m2 = (z_arr - pred.z_pred) @ np.linalg.solve(pred.S, z_arr - pred.z_pred)
            assert models.mahalanobis2(pred, z) == pytest.approx(m2, rel=1e-9)

    def test_azimuth_wraps_in_innovation(self):
        est, pred, _ = self.make_pred(seed=4)
        z = models.Measurement(pred.z_pred[0], pred.z_pred[1],
                               models.wrap_angle(pred.z_pred[2] + 2 * math.pi))
        y = models.innovation(pred, z)
        assert np.allclose(y, 0.0, atol=1e-9)

    def test_singular_innovation_raises(self):
        cfg = models.SensorConfig(np.array([0.0, 0, 150]), np.zeros((3, 3)), 0.95, 0.99)
        est = models.GaussianEstimate(np.array([100.0, 0, 0, 0, 0, 0]), np.zeros((6, 6)))
        with pytest.raises(models.SingularInnovation):
            models.measurement_prediction(est, cfg)


class TestEkfUpdate:
    def test_matches_textbook_formula(self):
        cfg = default_sensor()
        rng = np.random.default_rng(21)
        for _ in range(20):
            x = random_state(rng, cfg.uav_pos)
            A = rng.normal(size=(6, 6))
            est = models.GaussianEstimate(x, A @ A.T + 5 * np.eye(6))
            pred = models.measurement_prediction(est, cfg)
            z_arr = pred.z_pred + rng.normal(0, [2.0, 0.01, 0.01])
            z = models.Measurement(*z_arr)
            out = models.ekf_update(est, pred, z)
            K = est.cov @ pred.H.T @ np.linalg.inv(pred.S)
            mean = est.mean + K @ (z_arr - pred.z_pred)
            cov = (np.eye(6) - K @ pred.H) @ est.cov
            assert np.allclose(out.mean, mean, atol=1e-8)
            assert np.allclose(out.cov, 0.5 * (cov + cov.T), atol=1e-8)

    def test_zero_innovation_keeps_mean(self):
        cfg = default_sensor()
        est = models.GaussianEstimate(np.array([400.0, 300, 0, 10, 0, 0]), 25 * np.eye(6))
        pred = models.measurement_prediction(est, cfg)
        z = models.Measurement(*pred.z_pred)
        out = models.ekf_update(est, pred, z)
        assert np.allclose(out.mean, est.mean, atol=1e-9)
        assert np.trace(out.cov) < np.trace(est.cov)
