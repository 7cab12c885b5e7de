"""Track lifecycle: existence probability, status machine, and births.

Existence is the posterior probability that a track corresponds to a
real target.  It decays through a survival factor each scan, and the
association marginals update it: assignment to any measurement is full
evidence of existence, a miss discounts it, and an external-source
origin caps it by the clutter share of the local intensity.

Status machine: Tentative -> Confirmed or Terminated; Confirmed ->
Reappearing (held for a window after disappearing) or Terminated;
Reappearing -> Confirmed (reconfirmed) or Terminated at the deadline.
Held tracks keep associating (with an inflated gate covariance) but are
excluded from the output until reconfirmed.

Births: each road entry point carries a Gaussian prior; a measurement
unexplained by existing tracks starts a tentative track at the
max-posterior entry point with the external-origin existence value.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .jpda import MISS
from .models import (
    GaussianEstimate,
    Measurement,
    MeasurementPrediction,
    SensorConfig,
    batch_innovation_stats,
    jacobian,
    log_likelihood,
    measure,
    moment_match,
    symmetrize,
)
from .roadmap import RoadMap

logger = logging.getLogger("roadmtt.track_manager")


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    REAPPEARING = "reappearing"
    TERMINATED = "terminated"


_LEGAL = {
    TrackStatus.TENTATIVE: {TrackStatus.CONFIRMED, TrackStatus.TERMINATED},
    TrackStatus.CONFIRMED: {TrackStatus.REAPPEARING, TrackStatus.TERMINATED},
    TrackStatus.REAPPEARING: {TrackStatus.CONFIRMED, TrackStatus.TERMINATED},
    TrackStatus.TERMINATED: set(),
}


@dataclass
class TrackManagerConfig:
    p_e: float = 0.8            # confirmation threshold
    p_t: float = 0.2            # termination threshold
    p_s: float = 0.98           # survival probability per scan
    t_d_seconds: float = 20.0   # hold window for disappeared confirmed tracks
    p_r_diag: tuple = (120.0, 120.0, 50.0, 500.0, 500.0, 5.0)
    dt: float = 1.0
    P_r: np.ndarray = field(init=False, repr=False)
    t_d_scans: int = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.p_t < self.p_e < 1.0:
            raise ValueError("require 0 < p_t < p_e < 1")
        if not 0.0 < self.p_s <= 1.0:
            raise ValueError("p_s must be in (0, 1]")
        if self.t_d_seconds < 0.0:
            raise ValueError("t_d must be non-negative")
        self.P_r = np.diag(np.asarray(self.p_r_diag, dtype=float))
        self.t_d_scans = math.ceil(self.t_d_seconds / self.dt)


@dataclass
class Track:
    tid: int
    status: TrackStatus
    existence: float
    estimate: GaussianEstimate      # trusted output estimate
    road_index: int
    entry: str                      # which road end the track entered by
    born_scan: int
    hset: object | None = None      # constraint-hypothesis set (tracker layer)
    last_confirmed_scan: int | None = None
    reappear_deadline: int | None = None
    high_streak: int = 0            # consecutive scans at or above p_e


def transition(track: Track, new_status: TrackStatus) -> None:
    if new_status not in _LEGAL[track.status]:
        raise ValueError(f"illegal transition {track.status.name} -> {new_status.name}")
    track.status = new_status


def predict_existence(prob: float, cfg: TrackManagerConfig) -> float:
    """Survival decay of the existence probability."""
    return cfg.p_s * prob


def miss_existence(prior: float, p_d: float, p_g: float) -> float:
    """Posterior existence when the track is not detected this scan."""
    pdg = p_d * p_g
    return (1.0 - pdg) * prior / max(1.0 - pdg * prior, 1e-300)


def external_existence(lambda_f: float, lambda_e: float) -> float:
    """Existence of a track born from a measurement of external intensity."""
    if lambda_e <= 0.0:
        raise ValueError("external intensity must be positive")
    return max(0.0, 1.0 - lambda_f / lambda_e)


def update_existence(prior: float, beta: dict, p_d: float, p_g: float) -> float:
    """Mix the per-association existence values with the marginals.

    An assignment to any measurement counts as existence 1; the miss
    branch uses the discounted prior.
    """
    miss_val = miss_existence(prior, p_d, p_g)
    post = 0.0
    for j, b in beta.items():
        post += b * (miss_val if j is MISS else 1.0)
    return min(1.0, max(0.0, post))


def apply_status(track: Track, scan: int, cfg: TrackManagerConfig) -> TrackStatus:
    """Advance the status machine after the existence update.

    Returns the status the track held before this call, so callers can
    react to transitions (e.g. re-anchoring on reconfirmation).
    """
    before = track.status
    e = track.existence
    if track.status is TrackStatus.TENTATIVE:
        # confirmation wants existence held up on consecutive scans: a
        # stray return near an entry site pins existence to ~1 for one
        # scan, and the tracker vetoes pairs of hits whose displacement
        # does not look like road travel, so clutter rarely chains
        track.high_streak = track.high_streak + 1 if e >= cfg.p_e else 0
        if track.high_streak >= 2:
            transition(track, TrackStatus.CONFIRMED)
            track.last_confirmed_scan = scan
        elif e < cfg.p_t:
            transition(track, TrackStatus.TERMINATED)
    elif track.status is TrackStatus.CONFIRMED:
        if e < cfg.p_t:
            if cfg.t_d_scans > 0:
                transition(track, TrackStatus.REAPPEARING)
                track.reappear_deadline = scan + cfg.t_d_scans
                track.high_streak = 0
            else:
                transition(track, TrackStatus.TERMINATED)
        else:
            track.last_confirmed_scan = scan
    elif track.status is TrackStatus.REAPPEARING:
        track.high_streak = track.high_streak + 1 if e >= cfg.p_e else 0
        if track.high_streak >= 2:
            transition(track, TrackStatus.CONFIRMED)
            track.last_confirmed_scan = scan
            track.reappear_deadline = None
        elif scan >= track.reappear_deadline:
            transition(track, TrackStatus.TERMINATED)
    return before


def reappearance_gate_estimate(est: GaussianEstimate, cfg: TrackManagerConfig) -> GaussianEstimate:
    """Held-track gating estimate: predicted mean, covariance reset wide."""
    return GaussianEstimate(est.mean, cfg.P_r.copy())


@dataclass(slots=True)
class BirthSite:
    mean: np.ndarray                # (6,) zero-velocity prior at the entry
    cov: np.ndarray                 # (6, 6)
    lam_b: float                    # birth intensity at this entry
    road_index: int
    entry: str
    pred: MeasurementPrediction     # prior pushed through the sensor model


@dataclass
class ClutterBirthModel:
    """External-measurement intensity: clutter floor plus birth bumps."""

    lambda_f: float                 # clutter intensity in sensor space
    p_d: float
    sites: list[BirthSite]

    def site_densities(self, z: Measurement) -> np.ndarray:
        return np.array([math.exp(log_likelihood(s.pred, z)) for s in self.sites])

    def external_intensity(self, z: Measurement) -> float:
        dens = self.site_densities(z) if self.sites else np.zeros(0)
        acc = self.lambda_f
        for s, g in zip(self.sites, dens):
            acc += self.p_d * s.lam_b * g
        return acc

    def external_intensity_batch(self, Z: np.ndarray) -> np.ndarray:
        """Intensity for stacked measurement rows, one solve per site."""
        out = np.full(len(Z), self.lambda_f)
        for s in self.sites:
            _, ll = batch_innovation_stats(s.pred, Z)
            out += self.p_d * s.lam_b * np.exp(ll)
        return out


def build_birth_model(roadmap: RoadMap, sensor: SensorConfig,
                      lambda_f: float, lam_b: float) -> ClutterBirthModel:
    """Push every birth place's prior through the sensor linearization."""
    if lambda_f <= 0.0:
        raise ValueError("clutter intensity must be positive")
    sites = []
    for bp in roadmap.birth_places:
        zp = measure(bp.mean, sensor)
        H = jacobian(bp.mean, sensor)
        S = symmetrize(H @ bp.cov @ H.T + sensor.R)
        L = np.linalg.cholesky(S)
        log_det = 2.0 * (math.log(L[0, 0]) + math.log(L[1, 1]) + math.log(L[2, 2]))
        pred = MeasurementPrediction(zp.as_array(), H, S, L, log_det)
        sites.append(BirthSite(bp.mean.copy(), bp.cov.copy(), lam_b,
                               bp.road_index, bp.entry, pred))
    return ClutterBirthModel(lambda_f=lambda_f, p_d=sensor.p_d, sites=sites)


def birth_weights(z: Measurement, model: ClutterBirthModel) -> np.ndarray:
    """Posterior responsibility of each birth site for a measurement."""
    if not model.sites:
        return np.zeros(0)
    raw = np.array([model.p_d * s.lam_b for s in model.sites]) * model.site_densities(z)
    total = raw.sum()
    if total <= 0.0:
        return raw
    return raw / total


def birth_mixture(z: Measurement, model: ClutterBirthModel):
    """Site-weighted Gaussian mixture of the birth priors, moment matched.

    Kept alongside the max-posterior initialization for comparison; the
    tracker itself initializes at the single best site.
    """
    w = birth_weights(z, model)
    if w.sum() <= 0.0:
        return w, None
    est = moment_match(w, [s.mean for s in model.sites], [s.cov for s in model.sites])
    return w, est


def choose_birth_site(z: Measurement, model: ClutterBirthModel) -> int | None:
    """Max-posterior birth site; ties break to the lowest index."""
    w = birth_weights(z, model)
    if w.size == 0 or w.sum() <= 0.0:
        return None
    return int(np.argmax(w))


# a measurement inside this road-frame box around a live track is the
# track's business even when it slips the association gate: paired
# entry sites sit within cross-range noise of each other, and the tight
# range gate lets an offset return spawn a duplicate next door; the box
# is longer along the road because that is where the smear goes
BIRTH_STANDOFF = 25.0        # lateral half-width (m)
BIRTH_STANDOFF_ALONG = 60.0  # along-road half-length (m)


def init_birth_track(z: Measurement, model: ClutterBirthModel,
                     cfg: TrackManagerConfig, scan: int, tid: int) -> Track | None:
    """Tentative track from an unexplained measurement, or None.

    The new track takes the best site's prior (mean and covariance) and
    the external-origin existence value.  Measurements whose existence
    would start at or below the termination threshold are treated as
    clutter outright.
    """
    lam_e = model.external_intensity(z)
    e0 = external_existence(model.lambda_f, lam_e)
    if e0 <= cfg.p_t:
        return None
    site_idx = choose_birth_site(z, model)
    if site_idx is None:
        return None
    site = model.sites[site_idx]
    est = GaussianEstimate(site.mean.copy(), site.cov.copy())
    return Track(tid=tid, status=TrackStatus.TENTATIVE, existence=e0, estimate=est,
                 road_index=site.road_index, entry=site.entry, born_scan=scan,
                 high_streak=1 if e0 >= cfg.p_e else 0)
