"""Plain JPDA-EKF tracker built from the shared pieces.

No road constraints and no segment hypotheses: one estimate per track,
the same existence machinery, the same association and the same birth
model.  Serves as the unconstrained reference; the road tracker with a
singleton hypothesis set and no active constraints reproduces this
tracker's per-scan estimates bitwise.
"""

from __future__ import annotations

import numpy as np

from . import track_manager as tm
from .jpda import MISS, TrackInput, associate, normalized_association_weights
from .models import (
    Measurement,
    batch_innovation_stats,
    ekf_update,
    invert_measurement,
    measurement_prediction,
    predict,
)
from .track_manager import ClutterBirthModel, Track, TrackStatus
from .vsmm import (
    REAP_CONSISTENT,
    TENT_ALONG,
    TrackerConfig,
    TrackOutput,
    collapse_mixture,
)


class PlainTracker:
    """Unconstrained JPDA-EKF with the shared existence and birth logic."""

    def __init__(self, birth_model: ClutterBirthModel, cfg: TrackerConfig):
        self.birth_model = birth_model
        self.cfg = cfg
        self.tracks: dict[int, Track] = {}
        self.next_tid = 1
        self._last_hit: dict[int, tuple] = {}  # tid -> (scan, solid hit point)

    def step(self, measurements: list[Measurement], scan: int) -> list[TrackOutput]:
        cfg = self.cfg
        mgr = cfg.manager
        sensor = cfg.sensor
        Z = (np.array([z.as_array() for z in measurements])
             if measurements else np.zeros((0, 3)))

        # prediction, gating and densities
        work = {}
        for tid in sorted(self.tracks):
            tr = self.tracks[tid]
            e_pred = tm.predict_existence(tr.existence, mgr)
            est = predict(tr.estimate, cfg.motion)
            coast = est
            if tr.status is TrackStatus.REAPPEARING:
                est = tm.reappearance_gate_estimate(est, mgr)
            mp = measurement_prediction(est, sensor)
            m2, ll = batch_innovation_stats(mp, Z)
            union = sorted(np.flatnonzero(m2 <= cfg.gate).tolist())
            lam = np.exp(ll[union]) if union else np.zeros(0)
            work[tid] = (e_pred, est, mp, union, lam, coast)

        # joint association against the external intensity
        lam_e_all = (self.birth_model.external_intensity_batch(Z)
                     if len(Z) else np.zeros(0))
        inputs = {tid: TrackInput(w[0], tuple(w[3]),
                                  {j: float(w[4][k]) for k, j in enumerate(w[3])})
                  for tid, w in work.items()}
        lam_e = {j: float(lam_e_all[j]) for j in range(len(measurements))}
        assoc = associate(inputs, lam_e, sensor.p_d, sensor.p_g, cfg.cluster_cap)

        # existence update and mixture collapse
        collapsed = {}
        for tid, (e_pred, est, mp, union, _lam, _coast) in work.items():
            tr = self.tracks[tid]
            beta = assoc.beta[tid]
            tr.existence = tm.update_existence(e_pred, beta, sensor.p_d, sensor.p_g)
            _, weights = normalized_association_weights(beta, union)
            comps = [est] + [ekf_update(est, mp, measurements[j]) for j in union]
            collapsed[tid] = collapse_mixture(weights, comps)

        # births from measurements with non-track probability left;
        # anything inside a live track's gate is that track's business
        # (near a site the external share stays high regardless, and
        # every pass would otherwise spawn a duplicate of its owner)
        claimed = set()
        guard = []
        for tid, w in work.items():
            if self.tracks[tid].status is not TrackStatus.REAPPEARING:
                claimed.update(w[3])
                guard.append(w[1].mean[:2])
        cands: dict[tuple, tuple] = {}  # one birth per entry site per scan
        for j, z in enumerate(measurements):
            if j in claimed or assoc.external.get(j, 1.0) <= 0.5:
                continue
            p = invert_measurement(z, sensor)[:2]
            if any(float(np.hypot(*(g - p))) < tm.BIRTH_STANDOFF for g in guard):
                continue
            cand = tm.init_birth_track(z, self.birth_model, mgr, scan, 0)
            if cand is None:
                continue
            key = (cand.road_index, cand.entry)
            if key not in cands or cand.existence > cands[key][0].existence:
                cands[key] = (cand, p)
        for key in sorted(cands):
            t, p = cands[key]
            t.tid = self.next_tid
            self.next_tid += 1
            self.tracks[t.tid] = t
            self._last_hit[t.tid] = (scan, p)

        # status machine and output
        outputs: list[TrackOutput] = []
        for tid in sorted(self.tracks):
            tr = self.tracks[tid]
            est = collapsed.get(tid, tr.estimate)
            if tid in work and tr.status in (TrackStatus.TENTATIVE,
                                             TrackStatus.REAPPEARING):
                # pairs of consecutive solid hits must look like vehicle
                # motion before they may confirm anything; without a road
                # frame the tentative test is a displacement magnitude band
                jb, bb = None, 0.0
                for j, b in assoc.beta[tid].items():
                    if j is not MISS and b > bb:
                        jb, bb = j, b
                if jb is not None and bb > 0.5:
                    p = invert_measurement(measurements[jb], sensor)[:2]
                    prev = self._last_hit.get(tid)
                    if prev is not None and prev[0] == scan - 1:
                        gap = p - prev[1]
                        if tr.status is TrackStatus.REAPPEARING:
                            gap = gap - work[tid][5].mean[3:5] * cfg.motion.dt
                            ok = float(np.hypot(*gap)) <= REAP_CONSISTENT
                        else:
                            ok = TENT_ALONG[0] <= float(np.hypot(*gap)) <= 32.0
                        if not ok:
                            tr.high_streak = 0
                    self._last_hit[tid] = (scan, p)
            if tr.born_scan != scan:
                # newborns keep Tentative until the next scan has spoken
                tm.apply_status(tr, scan, mgr)
            if tr.status is TrackStatus.TERMINATED:
                del self.tracks[tid]
                self._last_hit.pop(tid, None)
                continue
            if tr.status is TrackStatus.REAPPEARING and tid in work:
                # held tracks coast blind; only reconfirmation adopts evidence
                est = work[tid][5]
            tr.estimate = est
            if tr.status is TrackStatus.CONFIRMED:
                outputs.append(TrackOutput(tid, est.mean.copy(), est.cov.copy(),
                                           tr.existence))
        return outputs
