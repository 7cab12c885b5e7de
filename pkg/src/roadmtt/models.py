"""Target dynamics and the UAV sensor model, with the EKF steps on top.

State is the stacked 6-vector [p_x, p_y, p_z, v_x, v_y, v_z] in map
coordinates.  Motion is constant-velocity with additive process noise.
The sensor is a hovering UAV returning range, elevation (angle from the
positive z axis) and azimuth; the measurement function is nonlinear, so
updates linearize around the predicted state with the analytic Jacobian.

Angles: elevation lives in [0, pi]; azimuth in (-pi, pi].  A target
directly below the UAV has an undefined azimuth, which is pinned to 0
(the atan2(0, 0) convention) so the map stays total away from the
zero-range point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

_LOG_2PI = math.log(2.0 * math.pi)


class DegenerateGeometry(ValueError):
    """Raised when the sensor geometry has no well-defined linearization."""


class SingularInnovation(ValueError):
    """Raised when the innovation covariance is not positive definite."""


@dataclass(slots=True)
class GaussianEstimate:
    mean: np.ndarray  # (6,)
    cov: np.ndarray   # (6, 6)

    def copy(self) -> "GaussianEstimate":
        return GaussianEstimate(self.mean.copy(), self.cov.copy())


@dataclass(slots=True)
class Measurement:
    r: float      # range (m), > 0
    theta: float  # elevation from +z (rad), in [0, pi]
    xi: float     # azimuth (rad), in (-pi, pi]
    idx: int = 0  # per-scan measurement index

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.theta, self.xi])


@dataclass
class SensorConfig:
    uav_pos: np.ndarray      # (3,) hovering sensor position (m)
    R: np.ndarray            # (3, 3) measurement noise covariance
    p_d: float               # detection probability
    p_g: float               # gate probability

    def __post_init__(self):
        self.uav_pos = np.asarray(self.uav_pos, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if not 0.0 < self.p_d <= 1.0:
            raise ValueError("p_d must be in (0, 1]")
        if not 0.0 < self.p_g < 1.0:
            raise ValueError("p_g must be in (0, 1)")
        if self.R.shape != (3, 3) or not np.allclose(self.R, self.R.T):
            raise ValueError("R must be a symmetric 3x3 matrix")


@dataclass
class MotionConfig:
    dt: float                # sampling period (s)
    Q: np.ndarray            # (6, 6) process noise covariance
    F: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dt < 0:
            raise ValueError("dt must be non-negative")
        self.Q = np.asarray(self.Q, dtype=float)
        if self.Q.shape != (6, 6):
            raise ValueError("Q must be 6x6")
        self.F = motion_matrix(self.dt)


def motion_matrix(dt: float) -> np.ndarray:
    F = np.eye(6)
    F[0, 3] = F[1, 4] = F[2, 5] = dt
    return F


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi] (used on angle differences)."""
    return math.atan2(math.sin(a), math.cos(a))


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def predict(est: GaussianEstimate, cfg: MotionConfig) -> GaussianEstimate:
    """Constant-velocity propagation of mean and covariance."""
    F = cfg.F
    mean = F @ est.mean
    cov = symmetrize(F @ est.cov @ F.T + cfg.Q)
    return GaussianEstimate(mean, cov)


def measure(x: np.ndarray, cfg: SensorConfig) -> Measurement:
    """Noise-free range/elevation/azimuth of a state as seen by the UAV."""
    dx = x[0] - cfg.uav_pos[0]
    dy = x[1] - cfg.uav_pos[1]
    dz = x[2] - cfg.uav_pos[2]
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    if r <= 1e-12:
        raise DegenerateGeometry("target coincides with the sensor")
    theta = math.acos(max(-1.0, min(1.0, dz / r)))
    xi = math.atan2(dy, dx)
    return Measurement(r=r, theta=theta, xi=xi)


def invert_measurement(z: Measurement, cfg: SensorConfig) -> np.ndarray:
    """Map a measurement back to the 3-D position that produces it."""
    st = math.sin(z.theta)
    return cfg.uav_pos + z.r * np.array(
        [st * math.cos(z.xi), st * math.sin(z.xi), math.cos(z.theta)]
    )


def jacobian(x: np.ndarray, cfg: SensorConfig) -> np.ndarray:
    """3x6 gradient of (r, theta, xi) at x; velocity columns are zero."""
    dx = x[0] - cfg.uav_pos[0]
    dy = x[1] - cfg.uav_pos[1]
    dz = x[2] - cfg.uav_pos[2]
    r2 = dx * dx + dy * dy + dz * dz
    r = math.sqrt(r2)
    rho2 = dx * dx + dy * dy
    rho = math.sqrt(rho2)
    if r <= 1e-6 or rho <= 1e-6:
        raise DegenerateGeometry("sensor Jacobian undefined at zero range or on the vertical")
    H = np.zeros((3, 6))
    H[0, 0] = dx / r
    H[0, 1] = dy / r
    H[0, 2] = dz / r
    H[1, 0] = dx * dz / (rho * r2)
    H[1, 1] = dy * dz / (rho * r2)
    H[1, 2] = -rho / r2
    H[2, 0] = -dy / rho2
    H[2, 1] = dx / rho2
    return H


@dataclass(slots=True)
class MeasurementPrediction:
    """Predicted measurement with the innovation statistics cached."""

    z_pred: np.ndarray   # (3,)
    H: np.ndarray        # (3, 6)
    S: np.ndarray        # (3, 3) innovation covariance
    chol: np.ndarray     # lower Cholesky factor of S
    log_det: float


def measurement_prediction(est: GaussianEstimate, cfg: SensorConfig) -> MeasurementPrediction:
    zp = measure(est.mean, cfg)
    H = jacobian(est.mean, cfg)
    S = symmetrize(H @ est.cov @ H.T + cfg.R)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(f"innovation covariance not positive definite: {exc}") from exc
    log_det = 2.0 * (math.log(L[0, 0]) + math.log(L[1, 1]) + math.log(L[2, 2]))
    return MeasurementPrediction(zp.as_array(), H, S, L, log_det)


def innovation(pred: MeasurementPrediction, z: Measurement) -> np.ndarray:
    y = z.as_array() - pred.z_pred
    y[2] = wrap_angle(y[2])
    return y


def mahalanobis2(pred: MeasurementPrediction, z: Measurement) -> float:
    w = solve_triangular(pred.chol, innovation(pred, z), lower=True, check_finite=False)
    return float(w @ w)


def log_likelihood(pred: MeasurementPrediction, z: Measurement) -> float:
    """Log Gaussian density of the innovation under N(0, S)."""
    return -0.5 * (mahalanobis2(pred, z) + pred.log_det + 3.0 * _LOG_2PI)


def likelihood(pred: MeasurementPrediction, z: Measurement) -> float:
    return math.exp(log_likelihood(pred, z))


def batch_innovation_stats(pred: MeasurementPrediction, Z: np.ndarray):
    """Squared Mahalanobis distances and log densities for stacked measurements.

    ``Z`` is (M, 3) with rows (r, theta, xi); azimuth differences are
    wrapped.  Returns (m2, loglik), each of shape (M,).
    """
    if len(Z) == 0:
        return np.zeros(0), np.zeros(0)
    Y = Z - pred.z_pred
    Y[:, 2] = np.arctan2(np.sin(Y[:, 2]), np.cos(Y[:, 2]))
    W = solve_triangular(pred.chol, Y.T, lower=True, check_finite=False)
    m2 = np.einsum("ij,ij->j", W, W)
    return m2, -0.5 * (m2 + pred.log_det + 3.0 * _LOG_2PI)


def ekf_update(est: GaussianEstimate, pred: MeasurementPrediction,
               z: Measurement) -> GaussianEstimate:
    """Measurement update linearized at the predicted mean."""
    y = innovation(pred, z)
    K = cho_solve((pred.chol, True), pred.H @ est.cov, check_finite=False).T
    mean = est.mean + K @ y
    cov = symmetrize(est.cov - K @ (pred.H @ est.cov))
    return GaussianEstimate(mean, cov)


def moment_match(weights, means, covs) -> GaussianEstimate:
    """Single Gaussian matching the mixture's first two moments.

    ``weights`` must be normalized; the covariance picks up the spread
    of the component means around the matched mean.
    """
    mean = np.zeros(6)
    for w, m in zip(weights, means):
        mean = mean + w * m
    cov = np.zeros((6, 6))
    for w, m, P in zip(weights, means, covs):
        dm = m - mean
        cov = cov + w * (P + np.outer(dm, dm))
    return GaussianEstimate(mean, symmetrize(cov))
