"""Hypothesis-set operations and the full road tracker loop."""

import math

import numpy as np
import pytest

from roadmtt import models as md
from roadmtt import roadmap as rm
from roadmtt import track_manager as tm
from roadmtt.baseline import PlainTracker
from roadmtt.constraints import ConstraintCase
from roadmtt.jpda import MISS, normalized_association_weights
from roadmtt.vsmm import (
    HypothesisSet,
    RoadTracker,
    TrackerConfig,
    VsmmConfig,
    fresh_hypothesis_set,
    fuse_likelihoods,
    hypothesis_conditioned_marginals,
    maybe_advance_set,
    predict_hypothesis,
    update_hypothesis_posterior,
)


def arc_points(total_deg=40.0, length=800.0, n=400):
    """Polyline whose heading ramps linearly from 0 to total_deg."""
    s = np.linspace(0.0, length, n)
    head = np.deg2rad(total_deg) * s / s[-1]
    ds = np.diff(s)
    x = np.concatenate([[0.0], np.cumsum(np.cos(head[:-1]) * ds)])
    y = np.concatenate([[0.0], np.cumsum(np.sin(head[:-1]) * ds)])
    return np.c_[x, y]


def compile_map(pts, delta=3.0):
    doc = {"roads": [{"id": "r1", "points": pts.tolist()}],
           "birth": [{"road": "r1", "end": "start"}]}
    return rm.compile_road_map(doc, delta_m_deg=delta)


def default_sensor(p_d=0.95):
    return md.SensorConfig(uav_pos=[-150.0, -400.0, 150.0],
                           R=np.diag([1.0, (np.pi / 180) ** 2, (np.pi / 180) ** 2]),
                           p_d=p_d, p_g=0.99)


def default_config(sensor, case=ConstraintCase.HEADING_POSITION, t_d=20.0):
    motion = md.MotionConfig(dt=1.0, Q=np.diag([20.0, 20.0, 10.0, 20.0, 20.0, 4.0]))
    return TrackerConfig(sensor=sensor, motion=motion,
                         manager=tm.TrackManagerConfig(t_d_seconds=t_d),
                         constraint_case=case)


class PolylineWalker:
    """Arc-length position lookup along a polyline."""

    def __init__(self, pts):
        self.pts = np.asarray(pts, dtype=float)
        seg = np.linalg.norm(np.diff(self.pts, axis=0), axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.seg = seg

    def at(self, arc):
        arc = float(np.clip(arc, 0.0, self.cum[-1] - 1e-9))
        i = int(np.searchsorted(self.cum, arc, side="right")) - 1
        t = (arc - self.cum[i]) / self.seg[i]
        p = self.pts[i] * (1.0 - t) + self.pts[i + 1] * t
        return np.array([p[0], p[1], 0.0])


def noisy_measurement(rng, pos, sensor):
    z = md.measure(np.concatenate([pos, [0.0, 0.0, 0.0]]), sensor)
    n = rng.normal(size=3) * np.sqrt(np.diag(sensor.R))
    return md.Measurement(z.r + n[0], z.theta + n[1], z.xi + n[2])


class TestConfig:
    def test_transition_matrices(self):
        cfg = VsmmConfig()
        assert np.array_equal(cfg.transition_matrix(1), [[1.0]])
        assert np.allclose(cfg.transition_matrix(2),
                           [[0.95, 0.05], [0.05, 0.95]])
        assert np.array_equal(cfg.reset_probs(1), [1.0])
        assert np.allclose(cfg.reset_probs(2), [0.9, 0.1])

    @pytest.mark.parametrize("kw", [{"p_u": 0.0}, {"p_u": 1.0},
                                    {"pi_stay": 0.0}, {"reset_prob": 1.5}])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ValueError):
            VsmmConfig(**kw)

    def test_predict_hypothesis_row_mixing(self):
        pi = np.array([[0.95, 0.05], [0.05, 0.95]])
        out = predict_hypothesis(np.array([1.0, 0.0]), pi)
        assert np.allclose(out, [0.95, 0.05], atol=1e-15)
        # stationary split stays put
        assert np.allclose(predict_hypothesis(np.array([0.5, 0.5]), pi),
                           [0.5, 0.5], atol=1e-15)


class TestPosteriorUpdate:
    # worked two-hypothesis, one-measurement instance; weights chosen so
    # the posterior comes out in closed form
    PRIOR = np.array([0.6, 0.4])
    LAM = np.array([[2.0], [0.5]])
    BETA = {MISS: 0.3, 0: 0.7}

    def fused(self):
        return fuse_likelihoods(self.PRIOR, self.LAM)

    def test_fused_value(self):
        assert self.fused() == pytest.approx(0.6 * 2.0 + 0.4 * 0.5, rel=1e-15)

    def test_hand_posterior(self):
        post = update_hypothesis_posterior(self.PRIOR, self.LAM, self.fused(),
                                           self.BETA, [0])
        # u0 = .6*.3 + .6*(2/1.4)*.7 = .78 ; u1 = .4*.3 + .4*(.5/1.4)*.7 = .22
        assert post == pytest.approx([0.78, 0.22], abs=1e-12)

    def test_hand_conditioned_marginals(self):
        post = update_hypothesis_posterior(self.PRIOR, self.LAM, self.fused(),
                                           self.BETA, [0])
        keys, rows = hypothesis_conditioned_marginals(
            self.BETA, self.PRIOR, post, self.LAM, self.fused(), [0])
        assert keys == [MISS, 0]
        assert rows[0] == pytest.approx([3 / 13, 10 / 13], abs=1e-12)
        assert rows[1] == pytest.approx([6 / 11, 5 / 11], abs=1e-12)

    def test_zero_mass_keeps_prior(self, caplog):
        beta = {MISS: 0.0, 0: 0.0}
        with caplog.at_level("WARNING"):
            post = update_hypothesis_posterior(self.PRIOR, self.LAM, self.fused(),
                                               beta, [0])
        assert np.array_equal(post, self.PRIOR)
        assert "keeping prior" in caplog.text

    def test_random_instances_obey_total_probability(self):
        # mixing the conditioned marginals with the posterior recovers the
        # unconditioned marginals; every row is a proper distribution
        rng = np.random.default_rng(42)
        for _ in range(200):
            m = rng.integers(0, 4)
            union = list(range(m))
            prior = rng.dirichlet(np.ones(2))
            lam = rng.lognormal(mean=-2.0, sigma=2.0, size=(2, m))
            b = rng.dirichlet(np.ones(m + 1))
            beta = {MISS: b[0], **{j: b[1 + j] for j in union}}
            fused = fuse_likelihoods(prior, lam)
            post = update_hypothesis_posterior(prior, lam, fused, beta, union)
            assert post.sum() == pytest.approx(1.0, abs=1e-12)
            keys, rows = hypothesis_conditioned_marginals(beta, prior, post,
                                                          lam, fused, union)
            for row in rows:
                assert math.fsum(row) == pytest.approx(1.0, abs=1e-12)
            for k, key in enumerate(keys):
                mixed = sum(post[h] * rows[h][k] for h in range(2))
                assert mixed == pytest.approx(beta[key], abs=1e-9)

    def test_equal_hypotheses_reduce_to_plain_weights(self):
        # identical per-hypothesis densities: the hypothesis layer is inert
        rng = np.random.default_rng(5)
        union = [0, 1, 2]
        lam_row = rng.lognormal(size=3)
        lam = np.vstack([lam_row, lam_row])
        prior = np.array([0.7, 0.3])
        b = rng.dirichlet(np.ones(4))
        beta = {MISS: b[0], 0: b[1], 1: b[2], 2: b[3]}
        fused = fuse_likelihoods(prior, lam)
        post = update_hypothesis_posterior(prior, lam, fused, beta, union)
        assert post == pytest.approx(prior, abs=1e-12)
        _, rows = hypothesis_conditioned_marginals(beta, prior, post, lam,
                                                   fused, union)
        _, flat = normalized_association_weights(beta, union)
        for row in rows:
            assert row == pytest.approx(flat, abs=1e-12)


@pytest.fixture(scope="module")
def chain():
    return compile_map(arc_points()).oriented_chain(0, "start")


class TestSetAdvancement:
    def make_set(self, chain, base):
        est = md.GaussianEstimate(np.zeros(6), np.eye(6))
        return HypothesisSet(base, list(chain[base:base + 2]),
                             np.array([0.9, 0.1]), [est.copy(), est.copy()])

    def test_fresh_set_shapes(self, chain):
        rmap = compile_map(arc_points())
        est = md.GaussianEstimate(np.zeros(6), np.eye(6))
        hs = fresh_hypothesis_set(rmap, 0, "start", 0, est, VsmmConfig())
        assert len(hs) == 2 and hs.base_index == 0
        assert hs.segments[0] is rmap.oriented_chain(0, "start")[0]
        last = len(chain) - 1
        hs_end = fresh_hypothesis_set(rmap, 0, "start", last, est, VsmmConfig())
        assert len(hs_end) == 1 and np.array_equal(hs_end.probs, [1.0])
        hs_over = fresh_hypothesis_set(rmap, 0, "start", last + 5, est, VsmmConfig())
        assert hs_over.base_index == last

    def test_advances_when_lookahead_wins(self, chain):
        hs = self.make_set(chain, 0)
        moved = md.GaussianEstimate(np.full(6, 2.0), np.eye(6))
        out, advanced = maybe_advance_set(hs, np.array([0.3, 0.7]),
                                          [hs.estimates[0], moved], chain,
                                          VsmmConfig())
        assert advanced and out.base_index == 1
        assert out.segments[0] is chain[1] and out.segments[1] is chain[2]
        assert np.allclose(out.probs, [0.9, 0.1])
        for est in out.estimates:
            assert np.array_equal(est.mean, moved.mean)
        out.estimates[0].mean[0] = -1.0  # seeded copies are independent
        assert out.estimates[1].mean[0] == 2.0

    def test_threshold_is_strict(self, chain):
        hs = self.make_set(chain, 0)
        post = np.array([0.35, 0.65])
        collapsed = [e.copy() for e in hs.estimates]
        out, advanced = maybe_advance_set(hs, post, collapsed, chain, VsmmConfig())
        assert not advanced and out is hs and out.base_index == 0
        assert np.array_equal(out.probs, post)
        assert out.estimates == collapsed

    def test_shrinks_to_singleton_at_chain_end(self, chain):
        base = len(chain) - 2
        hs = self.make_set(chain, base)
        moved = md.GaussianEstimate(np.ones(6), np.eye(6))
        out, advanced = maybe_advance_set(hs, np.array([0.2, 0.8]),
                                          [hs.estimates[0], moved], chain,
                                          VsmmConfig())
        assert advanced and out.base_index == len(chain) - 1
        assert len(out) == 1 and np.array_equal(out.probs, [1.0])

    def test_singleton_never_advances(self, chain):
        est = md.GaussianEstimate(np.zeros(6), np.eye(6))
        hs = HypothesisSet(len(chain) - 1, [chain[-1]], np.array([1.0]), [est])
        out, advanced = maybe_advance_set(hs, np.array([1.0]), [est], chain,
                                          VsmmConfig())
        assert not advanced and out.base_index == len(chain) - 1


class TestTrackerLoop:
    def run_tracker(self, tracker, pts, sensor, scans, rng, detect=None,
                    clutter_mean=0.0, record=None):
        walker = PolylineWalker(pts)
        lo = pts.min(axis=0) - 200.0
        hi = pts.max(axis=0) + 200.0
        for scan in range(1, scans + 1):
            pos = walker.at((scan - 1) * 15.0)
            meas = []
            if detect is None or detect(scan):
                meas.append(noisy_measurement(rng, pos, sensor))
            if clutter_mean > 0.0:
                for _ in range(rng.poisson(clutter_mean)):
                    p = rng.uniform(lo, hi)
                    z = md.measure(np.array([p[0], p[1], 0, 0, 0, 0]), sensor)
                    meas.append(md.Measurement(z.r, z.theta, z.xi))
            outs = tracker.step(meas, scan)
            if record is not None:
                record(scan, pos, outs)
        return tracker

    def test_single_vehicle_confirm_and_follow(self):
        pts = arc_points(total_deg=0.1)  # effectively straight
        rmap = compile_map(pts)
        sensor = default_sensor()
        cfg = default_config(sensor)
        bm = tm.build_birth_model(rmap, sensor, lambda_f=0.2, lam_b=0.05)
        tracker = RoadTracker(rmap, bm, cfg)
        errs = {}

        def record(scan, pos, outs):
            for o in outs:
                errs.setdefault(o.tid, {})[scan] = float(
                    np.linalg.norm(o.mean[:2] - pos[:2]))

        self.run_tracker(tracker, pts, sensor, 30, np.random.default_rng(7),
                         record=record)
        assert errs, "no track was ever confirmed"
        tid, by_scan = max(errs.items(), key=lambda kv: len(kv[1]))
        assert min(by_scan) <= 4  # confirmed quickly
        late = [e for s, e in by_scan.items() if s >= 5]
        assert np.mean(late) < 6.0 and max(late) < 15.0
        assert tracker.tracks[tid].existence > 0.9

    def test_curved_road_advances_monotonically(self):
        pts = arc_points(total_deg=40.0)
        rmap = compile_map(pts, delta=5.0)
        sensor = default_sensor()
        cfg = default_config(sensor)
        bm = tm.build_birth_model(rmap, sensor, lambda_f=0.2, lam_b=0.05)
        tracker = RoadTracker(rmap, bm, cfg)
        self.run_tracker(tracker, pts, sensor, 50, np.random.default_rng(11))
        bases = [b for (_, tid, b) in tracker.advances if tid == 1]
        assert len(bases) >= 2
        assert bases == sorted(bases)
        assert all(tr.hset.base_index >= 0 for tr in tracker.tracks.values())

    def test_empty_scan_is_harmless(self):
        pts = arc_points(total_deg=0.1)
        rmap = compile_map(pts)
        sensor = default_sensor()
        bm = tm.build_birth_model(rmap, sensor, lambda_f=0.2, lam_b=0.05)
        tracker = RoadTracker(rmap, bm, default_config(sensor))
        assert tracker.step([], 1) == []
        assert tracker.tracks == {}

    def test_reappearance_hold_and_reconfirm(self):
        pts = arc_points(total_deg=0.1, length=1200.0, n=600)
        rmap = compile_map(pts)
        sensor = default_sensor()
        cfg = default_config(sensor, t_d=20.0)
        bm = tm.build_birth_model(rmap, sensor, lambda_f=0.2, lam_b=0.05)
        tracker = RoadTracker(rmap, bm, cfg)
        seen = {}

        def record(scan, pos, outs):
            seen[scan] = [o.tid for o in outs]

        blackout = range(13, 21)
        self.run_tracker(tracker, pts, sensor, 30, np.random.default_rng(3),
                         detect=lambda s: s not in blackout, record=record)
        tid = seen[10][0]
        held_scans = [s for s in blackout if tid not in seen[s]]
        assert held_scans, "track never left the output during the blackout"
        assert tid in tracker.tracks  # survived the hold window
        tr = tracker.tracks[tid]
        assert tr.status is tm.TrackStatus.CONFIRMED
        assert tr.reappear_deadline is None
        assert tid in seen[30]
        # existence collapses geometrically while held, so reconfirmation
        # takes several strong detections; must beat the hold deadline
        back = min(s for s in range(21, 31) if tid in seen[s])
        assert back <= 28

    def test_conventional_termination_without_hold(self):
        pts = arc_points(total_deg=0.1, length=1200.0, n=600)
        rmap = compile_map(pts)
        sensor = default_sensor()
        cfg = default_config(sensor, t_d=0.0)
        bm = tm.build_birth_model(rmap, sensor, lambda_f=0.2, lam_b=0.05)
        tracker = RoadTracker(rmap, bm, cfg)
        self.run_tracker(tracker, pts, sensor, 20, np.random.default_rng(3),
                         detect=lambda s: s <= 12)
        # without a hold window the dropped vehicle's track is deleted
        assert all(tr.status is not tm.TrackStatus.REAPPEARING
                   for tr in tracker.tracks.values())
        assert all(tr.born_scan > 12 or tr.existence >= 0.2
                   for tr in tracker.tracks.values())


class TestReductionToPlainJpda:
    def test_bitwise_match_on_singleton_sets(self):
        # one straight road compiled to a single segment, constraints off:
        # the hypothesis machinery must be numerically invisible
        pts = np.c_[np.linspace(0.0, 900.0, 31), np.zeros(31)]
        rmap = compile_map(pts, delta=60.0)
        assert len(rmap.roads[0].segments) == 1
        sensor = default_sensor(p_d=0.9)
        cfg = default_config(sensor, case=ConstraintCase.NONE)
        bm = tm.build_birth_model(rmap, sensor, lambda_f=0.2, lam_b=0.05)
        road = RoadTracker(rmap, bm, cfg)
        plain = PlainTracker(bm, cfg)

        walker = PolylineWalker(pts)
        rng = np.random.default_rng(2024)
        lo = pts.min(axis=0) - 200.0
        hi = pts.max(axis=0) + 200.0
        for scan in range(1, 31):
            meas = []
            pos = walker.at((scan - 1) * 15.0)
            if rng.random() < sensor.p_d:
                meas.append(noisy_measurement(rng, pos, sensor))
            for _ in range(rng.poisson(10.0)):
                p = rng.uniform(lo, hi)
                z = md.measure(np.array([p[0], p[1], 0, 0, 0, 0]), sensor)
                meas.append(md.Measurement(z.r, z.theta, z.xi))
            out_r = road.step(meas, scan)
            out_p = plain.step(meas, scan)
            assert [o.tid for o in out_r] == [o.tid for o in out_p]
            for a, b in zip(out_r, out_p):
                assert np.array_equal(a.mean, b.mean)
                assert np.array_equal(a.cov, b.cov)
                assert a.existence == b.existence
            assert set(road.tracks) == set(plain.tracks)
            for tid in road.tracks:
                ta, tb = road.tracks[tid], plain.tracks[tid]
                assert ta.status is tb.status
                assert ta.existence == tb.existence
                assert np.array_equal(ta.estimate.mean, tb.estimate.mean)
                assert np.array_equal(ta.estimate.cov, tb.estimate.cov)
        assert road.advances == []
