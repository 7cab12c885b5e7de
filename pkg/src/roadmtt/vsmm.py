"""Variable-structure constraint-hypothesis tracking on a road map.

Each track carries a small set of road-segment hypotheses (the segment
it is trusted to be on, plus a look-ahead neighbour).  A scan runs:
existence prediction, hypothesis-prior mixing, per-hypothesis EKF
prediction and gating, likelihood fusion across hypotheses, joint
association, existence and hypothesis-posterior updates, per-hypothesis
mixture collapse, birth processing, status bookkeeping, set advancement
and the road-constraint correction.  The trusted hypothesis of every
confirmed track is the output.

``baseline.PlainTracker`` is the unconstrained reference built from the
same shared pieces; with singleton sets and no active constraints this
tracker reduces to it bitwise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import track_manager as tm
from .constraints import ConstraintCase, CorrectionConfig, compose, correct, nearest_segment
from .jpda import MISS, TrackInput, associate, gate_threshold
from .models import (
    GaussianEstimate,
    Measurement,
    MotionConfig,
    SensorConfig,
    batch_innovation_stats,
    ekf_update,
    innovation,
    invert_measurement,
    measurement_prediction,
    moment_match,
    predict,
)
from .roadmap import RoadMap
from .track_manager import ClutterBirthModel, Track, TrackStatus

logger = logging.getLogger(__name__)

_TINY = 1e-300

# Road re-association: entry sites of parallel carriageways sit well
# inside the cross-range measurement noise, so a track sometimes commits
# to the wrong road (or the wrong segment), and the position constraint
# would then never let the evidence pull it back.  Each track keeps a
# short window of the ground points behind its solid hits; every chain is
# scored by its mean distance to that window, and the track re-anchors
# when a direction-compatible rival wins by a clear margin.  For parallel
# carriageways the per-point noise cancels in the score difference, so
# the test resolves lane-scale mistakes that per-scan innovations never
# could.
EVIDENCE_WINDOW = 6      # ground evidence points kept per track
EVIDENCE_MIN = 4         # points needed before a re-anchor may fire
ROAD_SWITCH_MARGIN = 1.0   # floor (m) on the rival advantage that takes the
                           # track; the working margin grows with the window
                           # fit level so noisy far-range windows need more
SEGMENT_SLIDE_MARGIN = 2.0  # advantage (m) another own-chain segment needs
REASSOC_COOLDOWN = 6       # scans between re-anchors of one track
REASSOC_CONTEST = 0.1      # other tracks' share of a measurement that taints it
ROAD_END_MARGIN = 30.0     # coasting distance past the chain end before giving up
REAP_CONSISTENT = 35.0     # consecutive hold hits must line up with the coast
                           # velocity this closely (m) to count as a return
TENT_ALONG = (5.0, 29.0)   # road-frame displacement (m per scan) a pair of
                           # tentative hits must show; the speed band plus
                           # along-road noise, which the range channel keeps
                           # to a few meters
TENT_CROSS = 50.0          # cross-road displacement cap for the same test
DUP_RADIUS = 20.0          # two tracks this close are shadowing one vehicle
DUP_SCANS = 4              # consecutive close scans before one is dropped;
                           # long enough for genuine crossing traffic to pass


def chain_distance(chain, point: np.ndarray) -> tuple:
    """(index, distance) of the chain segment nearest to a 2-D point."""
    best, best_d = 0, math.inf
    for i, seg in enumerate(chain):
        ab = seg.end - seg.start
        t = float(np.dot(point - seg.start, ab) / max(np.dot(ab, ab), 1e-12))
        t = min(1.0, max(0.0, t))
        proj = seg.start + t * ab
        d = float(np.hypot(point[0] - proj[0], point[1] - proj[1]))
        if d <= best_d:
            best, best_d = i, d
    return best, best_d


def chain_fit(chain, points) -> tuple:
    """(nearest index for the newest point, mean distance over all points).

    A chain that only grazes the track at its current position fits the
    newest point but not the older ones; averaging over a short history
    of evidence points separates it from the chain the vehicle actually
    drove.
    """
    total = 0.0
    k_last = 0
    for i, p in enumerate(points):
        k, d = chain_distance(chain, p)
        total += d
        if i == len(points) - 1:
            k_last = k
    return k_last, total / len(points)


def _in_birth_box(p: np.ndarray, pos: np.ndarray, d: np.ndarray) -> bool:
    """Whether a ground point sits in the road-frame box around a track."""
    rel = p - pos
    along = float(rel @ d)
    lat = float(rel[1] * d[0] - rel[0] * d[1])
    return abs(along) < tm.BIRTH_STANDOFF_ALONG and abs(lat) < tm.BIRTH_STANDOFF


@dataclass
class VsmmConfig:
    p_u: float = 0.65        # posterior mass needed to advance the set
    pi_stay: float = 0.95    # self-transition of the segment chain
    reset_prob: float = 0.9  # fresh-set mass on the trusted segment
    advance_slack: float = 45.0  # how far before the junction an advance may fire

    def __post_init__(self):
        if not 0.0 < self.p_u < 1.0:
            raise ValueError("p_u must be in (0, 1)")
        if not 0.0 < self.pi_stay <= 1.0:
            raise ValueError("pi_stay must be in (0, 1]")
        if not 0.0 < self.reset_prob <= 1.0:
            raise ValueError("reset_prob must be in (0, 1]")
        q = 1.0 - self.pi_stay
        self._pi1 = np.array([[1.0]])
        self._pi2 = np.array([[self.pi_stay, q], [q, self.pi_stay]])

    def transition_matrix(self, n_hyp: int) -> np.ndarray:
        return self._pi1 if n_hyp == 1 else self._pi2

    def reset_probs(self, n_hyp: int) -> np.ndarray:
        if n_hyp == 1:
            return np.array([1.0])
        return np.array([self.reset_prob, 1.0 - self.reset_prob])


@dataclass
class HypothesisSet:
    """Active segment hypotheses of one track, with their estimates."""

    base_index: int      # chain index of the trusted segment
    segments: list       # one or two consecutive segments of the chain
    probs: np.ndarray    # hypothesis probabilities, sums to one
    estimates: list      # GaussianEstimate per hypothesis

    def __len__(self) -> int:
        return len(self.segments)


def fresh_hypothesis_set(roadmap: RoadMap, road_index: int, entry: str,
                         base_index: int, est: GaussianEstimate,
                         cfg: VsmmConfig) -> HypothesisSet:
    """Reset set anchored at a chain index, seeded from one estimate."""
    chain = roadmap.oriented_chain(road_index, entry)
    base_index = min(base_index, len(chain) - 1)
    segs = list(chain[base_index:base_index + 2])
    return HypothesisSet(base_index, segs, cfg.reset_probs(len(segs)),
                         [est.copy() for _ in segs])


def predict_hypothesis(probs: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Prior hypothesis masses after the Markov transition."""
    return probs @ pi


def fuse_likelihoods(probs_prior: np.ndarray, lam_h: np.ndarray) -> np.ndarray:
    """Prior-weighted measurement densities, one per gated measurement."""
    return probs_prior @ lam_h


def update_hypothesis_posterior(probs_prior: np.ndarray, lam_h: np.ndarray,
                                fused: np.ndarray, beta: dict,
                                union: list) -> np.ndarray:
    """Posterior hypothesis masses given the association marginals.

    The miss branch carries a likelihood ratio of one by convention.
    If every branch ends up with zero mass the prior is kept and the
    condition logged.
    """
    u = probs_prior * beta.get(MISS, 0.0)
    for k, j in enumerate(union):
        u = u + probs_prior * (lam_h[:, k] / max(fused[k], _TINY)) * beta[j]
    s = u.sum()
    if s <= 0.0:
        logger.warning("degenerate hypothesis posterior; keeping prior")
        return np.array(probs_prior, copy=True)
    return u / s


def hypothesis_conditioned_marginals(beta: dict, probs_prior: np.ndarray,
                                     probs_post: np.ndarray, lam_h: np.ndarray,
                                     fused: np.ndarray, union: list):
    """Association weights conditioned on each hypothesis, renormalized.

    Returns (keys, rows): keys = [MISS, *union] and one weight row per
    hypothesis, each summing to one.  Denominators are floored to keep
    the divisions defined when masses underflow.
    """
    keys = [MISS, *union]
    miss_b = beta.get(MISS, 0.0)
    rows = []
    for h in range(len(probs_prior)):
        post = max(probs_post[h], _TINY)
        raw = [miss_b * (probs_prior[h] / post)]
        for k, j in enumerate(union):
            denom = max(post * fused[k], _TINY)
            raw.append(beta[j] * ((probs_prior[h] * lam_h[h, k]) / denom))
        s = math.fsum(raw)
        if s <= 0.0:
            row = np.array([1.0] + [0.0] * len(union))
        else:
            row = np.array(raw) / s
        rows.append(row)
    return keys, rows


def collapse_mixture(weights: np.ndarray, components: list) -> GaussianEstimate:
    """Moment-match association-conditioned components into one Gaussian."""
    return moment_match(weights, [c.mean for c in components],
                        [c.cov for c in components])


def maybe_advance_set(hs: HypothesisSet, probs_post: np.ndarray, collapsed: list,
                      chain, cfg: VsmmConfig):
    """Advance to the next segment pair when the look-ahead mass wins.

    Advancement needs strictly more than ``p_u`` posterior mass on the
    look-ahead hypothesis; both fresh hypotheses are then seeded from
    its collapsed estimate.  At the chain end the set shrinks to a
    singleton.  Without advancement the set keeps its segments and
    stores the posterior masses and collapsed estimates.  Returns
    (set, advanced).
    """
    if len(hs) == 2 and probs_post[1] > cfg.p_u:
        # far from the junction the two hypotheses predict nearly the same
        # measurement, so the posterior is noise around the mixed prior and
        # will cross p_u eventually; demand the estimate has nearly reached
        # the junction before believing it
        seg = hs.segments[0]
        ab = seg.end - seg.start
        length = float(np.hypot(ab[0], ab[1]))
        along = float(np.dot(collapsed[1].mean[:2] - seg.start, ab)) / max(length, 1e-9)
        if along >= length - cfg.advance_slack:
            base = hs.base_index + 1
            segs = list(chain[base:base + 2])
            ests = [collapsed[1].copy() for _ in segs]
            return HypothesisSet(base, segs, cfg.reset_probs(len(segs)), ests), True
    hs.probs = np.asarray(probs_post)
    hs.estimates = list(collapsed)
    return hs, False


@dataclass
class TrackerConfig:
    sensor: SensorConfig
    motion: MotionConfig
    manager: tm.TrackManagerConfig
    vsmm: VsmmConfig = field(default_factory=VsmmConfig)
    constraint_case: ConstraintCase = ConstraintCase.HEADING_POSITION
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    speed_band: tuple = (11.0, 23.0)
    cluster_cap: int = 12
    gate: float = field(init=False)

    def __post_init__(self):
        self.gate = gate_threshold(self.sensor.p_g)


@dataclass(slots=True)
class TrackOutput:
    tid: int
    mean: np.ndarray
    cov: np.ndarray
    existence: float


class _Work:
    """Per-track intermediates carried across the stages of one scan."""

    __slots__ = ("e_pred", "probs_prior", "hyp_ests", "coast", "preds", "union",
                 "lam_h", "fused", "probs_post", "collapsed")

    def __init__(self, e_pred, probs_prior, hyp_ests, coast, preds, union,
                 lam_h, fused):
        self.e_pred = e_pred
        self.probs_prior = probs_prior
        self.hyp_ests = hyp_ests
        self.coast = coast
        self.preds = preds
        self.union = union
        self.lam_h = lam_h
        self.fused = fused
        self.probs_post = None
        self.collapsed = None


class RoadTracker:
    """Constrained variable-structure JPDA tracker over a compiled map."""

    def __init__(self, roadmap: RoadMap, birth_model: ClutterBirthModel,
                 cfg: TrackerConfig):
        self.roadmap = roadmap
        self.birth_model = birth_model
        self.cfg = cfg
        self.tracks: dict[int, Track] = {}
        self.next_tid = 1
        self.advances: list[tuple] = []  # (scan, tid, new base index)
        self.reconfirmations: list[tuple] = []  # (scan, tid) hold -> confirmed
        self.reassociations: list[tuple] = []  # (scan, tid, new road index)
        self.prunes: list[tuple] = []  # (scan, tid) duplicates dropped
        self._overlap: dict[tuple, int] = {}  # (tid, tid) -> close-scan count
        self._evidence: dict[int, list] = {}  # tid -> recent ground hit points
        self._anchor_scan: dict[int, int] = {}  # tid -> scan of last re-anchor
        self._last_hit: dict[int, tuple] = {}  # tid -> (scan, solid hit point)

    def step(self, measurements: list[Measurement], scan: int) -> list[TrackOutput]:
        cfg = self.cfg
        mgr = cfg.manager
        sensor = cfg.sensor
        Z = (np.array([z.as_array() for z in measurements])
             if measurements else np.zeros((0, 3)))

        # prediction, gating and per-hypothesis densities
        work: dict[int, _Work] = {}
        for tid in sorted(self.tracks):
            tr = self.tracks[tid]
            hs: HypothesisSet = tr.hset
            e_pred = tm.predict_existence(tr.existence, mgr)
            probs_prior = predict_hypothesis(hs.probs, cfg.vsmm.transition_matrix(len(hs)))
            hyp_ests = [predict(est, cfg.motion) for est in hs.estimates]
            coast = hyp_ests
            if tr.status is TrackStatus.REAPPEARING:
                hyp_ests = [tm.reappearance_gate_estimate(e, mgr) for e in hyp_ests]
            preds = [measurement_prediction(e, sensor) for e in hyp_ests]
            union: set = set()
            lls = []
            for mp in preds:
                m2, ll = batch_innovation_stats(mp, Z)
                union.update(np.flatnonzero(m2 <= cfg.gate).tolist())
                lls.append(ll)
            union = sorted(union)
            if union:
                lam_h = np.exp(np.array(lls)[:, union])
            else:
                lam_h = np.zeros((len(preds), 0))
            fused = fuse_likelihoods(probs_prior, lam_h)
            work[tid] = _Work(e_pred, probs_prior, hyp_ests, coast, preds, union,
                              lam_h, fused)

        # joint association against the external intensity
        lam_e_all = (self.birth_model.external_intensity_batch(Z)
                     if len(Z) else np.zeros(0))
        inputs = {tid: TrackInput(w.e_pred, tuple(w.union),
                                  {j: float(w.fused[k]) for k, j in enumerate(w.union)})
                  for tid, w in work.items()}
        lam_e = {j: float(lam_e_all[j]) for j in range(len(measurements))}
        assoc = associate(inputs, lam_e, sensor.p_d, sensor.p_g, cfg.cluster_cap)

        # existence, hypothesis posterior and per-hypothesis collapse
        for tid, w in work.items():
            tr = self.tracks[tid]
            beta = assoc.beta[tid]
            tr.existence = tm.update_existence(w.e_pred, beta, sensor.p_d, sensor.p_g)
            w.probs_post = update_hypothesis_posterior(
                w.probs_prior, w.lam_h, w.fused, beta, w.union)
            _, rows = hypothesis_conditioned_marginals(
                beta, w.probs_prior, w.probs_post, w.lam_h, w.fused, w.union)
            w.collapsed = []
            for h, est in enumerate(w.hyp_ests):
                comps = [est] + [ekf_update(est, w.preds[h], measurements[j])
                                 for j in w.union]
                w.collapsed.append(collapse_mixture(rows[h], comps))

        # births from measurements with non-track probability left;
        # anything inside a live track's gate is that track's business
        # (near a site the external share stays high regardless, and
        # every pass would otherwise spawn a duplicate of its owner)
        claimed = set()
        guard = []
        for tid, w in work.items():
            tr = self.tracks[tid]
            if tr.status is not TrackStatus.REAPPEARING:
                claimed.update(w.union)
                guard.append((w.hyp_ests[0].mean[:2], tr.hset.segments[0]))
        cands: dict[tuple, tuple] = {}  # one birth per entry site per scan
        for j, z in enumerate(measurements):
            if j in claimed or assoc.external.get(j, 1.0) <= 0.5:
                continue
            p = invert_measurement(z, sensor)[:2]
            if any(_in_birth_box(p, g, seg.direction) for g, seg in guard):
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
            t.hset = fresh_hypothesis_set(
                self.roadmap, t.road_index, t.entry, 0, t.estimate, cfg.vsmm)
            self.tracks[t.tid] = t
            self._last_hit[t.tid] = (scan, p)

        # status machine, set advancement, constraint correction, output
        outputs: list[TrackOutput] = []
        for tid in sorted(self.tracks):
            tr = self.tracks[tid]
            hs = tr.hset
            w = work.get(tid)
            probs_post = w.probs_post if w is not None else hs.probs
            collapsed = w.collapsed if w is not None else hs.estimates
            chain = self.roadmap.oriented_chain(tr.road_index, tr.entry)
            if w is not None and tr.status in (TrackStatus.TENTATIVE,
                                               TrackStatus.REAPPEARING):
                # pairs of consecutive solid hits must look like road travel
                # before they may confirm anything: a held track checks them
                # against its coasting velocity, a tentative one against the
                # entry direction and the speed band; clutter pairs scattered
                # over a site bump or a grown search gate rarely line up
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
                            gap = gap - w.coast[0].mean[3:5] * cfg.motion.dt
                            ok = float(np.hypot(gap[0], gap[1])) <= REAP_CONSISTENT
                        else:
                            d = chain[0].direction
                            along = float(gap @ d)
                            cross = float(gap[1] * d[0] - gap[0] * d[1])
                            ok = (TENT_ALONG[0] <= along <= TENT_ALONG[1]
                                  and abs(cross) <= TENT_CROSS)
                        if not ok:
                            tr.high_streak = 0
                    self._last_hit[tid] = (scan, p)
                    if tr.status is TrackStatus.REAPPEARING:
                        # a track held because its road anchor is wrong sees
                        # real returns only through the hold gate; bank them
                        # or the audit never gets the points to prove it
                        pts = self._evidence.setdefault(tid, [])
                        pts.append(p)
                        del pts[:-EVIDENCE_WINDOW]
            if tr.born_scan == scan:
                # newborns keep Tentative until the next scan has spoken;
                # otherwise any near-site clutter confirms instantly
                before = tr.status
            else:
                before = tm.apply_status(tr, scan, mgr)
            if tr.status is TrackStatus.TERMINATED:
                del self.tracks[tid]
                self._evidence.pop(tid, None)
                self._anchor_scan.pop(tid, None)
                self._last_hit.pop(tid, None)
                continue
            if w is not None:
                # the stored estimates must advance in time every scan, or a
                # held track stands still while its target drives away; held
                # tracks bank the blind coast though, not the fused update,
                # so a stray clutter hit cannot drag the search center around
                # and chain into a false reconfirmation
                hs.probs = np.asarray(probs_post)
                if tr.status is TrackStatus.REAPPEARING:
                    hs.estimates = list(w.coast)
                else:
                    hs.estimates = list(collapsed)
            if tr.status is TrackStatus.REAPPEARING:
                # a held track that coasts off the end of its road is gone
                # for good; waiting out the deadline just feeds it clutter
                last = chain[-1]
                over = float((hs.estimates[0].mean[:2] - last.end) @ last.direction)
                if over > ROAD_END_MARGIN:
                    del self.tracks[tid]
                    self._evidence.pop(tid, None)
                    self._anchor_scan.pop(tid, None)
                    self._last_hit.pop(tid, None)
                    continue
            if before is TrackStatus.REAPPEARING and tr.status is TrackStatus.CONFIRMED:
                # reappeared: re-anchor at the nearest segment, never backwards
                self.reconfirmations.append((scan, tid))
                trusted = collapsed[0]
                base = max(hs.base_index, nearest_segment(chain, trusted.mean[:2]))
                hs = fresh_hypothesis_set(self.roadmap, tr.road_index, tr.entry,
                                          base, trusted, cfg.vsmm)
                tr.hset = hs
                self._last_hit.pop(tid, None)
                # the evidence window survives on purpose: when the road
                # anchor itself is wrong, the hold-recapture cycle repeats
                # and the accumulated points are what breaks it
            else:
                moved = False
                if (cfg.constraint_case is not ConstraintCase.NONE
                        and w is not None and tr.born_scan != scan
                        and tr.status in (TrackStatus.TENTATIVE, TrackStatus.CONFIRMED)):
                    hs, moved = self._maybe_reassociate(
                        tr, w, assoc.beta[tid], assoc.external, measurements,
                        collapsed, hs, scan)
                if not moved and tr.status is TrackStatus.CONFIRMED:
                    # tentative tracks sit on one or two noisy hits; letting
                    # them advance locks in clutter-driven segment choices
                    hs, advanced = maybe_advance_set(hs, probs_post, collapsed,
                                                     chain, cfg.vsmm)
                    tr.hset = hs
                    if advanced:
                        self.advances.append((scan, tid, hs.base_index))
            for h, seg in enumerate(hs.segments):
                spec = compose(cfg.constraint_case, seg,
                               hs.estimates[h].mean[3:6], cfg.speed_band)
                hs.estimates[h] = correct(hs.estimates[h], spec, cfg.correction)
            tr.estimate = hs.estimates[0]
        self._prune_duplicates(scan)
        for tid in sorted(self.tracks):
            tr = self.tracks[tid]
            if tr.status is TrackStatus.CONFIRMED:
                outputs.append(TrackOutput(tid, tr.estimate.mean.copy(),
                                           tr.estimate.cov.copy(), tr.existence))
        return outputs

    def _prune_duplicates(self, scan: int) -> None:
        """Settle pairs of tracks that shadow one vehicle.

        Twin entry roads sit within measurement noise of each other, so a
        clutter seed on the wrong twin can confirm off the real vehicle's
        returns and then starve the true track of association mass.  When
        two tracks stay within ``DUP_RADIUS`` for ``DUP_SCANS`` scans,
        keep the one whose own chain explains its recent hits better.
        """
        live = [(tid, tr) for tid, tr in sorted(self.tracks.items())
                if tr.status is not TrackStatus.REAPPEARING]
        close = set()
        for a in range(len(live)):
            for b in range(a + 1, len(live)):
                gap = live[a][1].estimate.mean[:2] - live[b][1].estimate.mean[:2]
                if float(np.hypot(gap[0], gap[1])) < DUP_RADIUS:
                    close.add((live[a][0], live[b][0]))
        self._overlap = {k: self._overlap.get(k, 0) + 1 for k in close}
        for (ia, ib), n in sorted(self._overlap.items()):
            if n < DUP_SCANS or ia not in self.tracks or ib not in self.tracks:
                continue
            loser = self._duplicate_loser(ia, ib)
            del self.tracks[loser]
            for d in (self._evidence, self._anchor_scan, self._last_hit):
                d.pop(loser, None)
            self.prunes.append((scan, loser))

    def _duplicate_loser(self, ia: int, ib: int) -> int:
        ta, tb = self.tracks[ia], self.tracks[ib]
        pa = self._evidence.get(ia, ())
        pb = self._evidence.get(ib, ())
        # judge both chains on one window: the starved twin has no hits of
        # its own (the shadow steals them), and those stolen hits are
        # exactly the testimony that places the vehicle on a road
        pts = pa if len(pa) >= len(pb) else pb
        if len(pts) >= 3:
            da = chain_fit(self.roadmap.oriented_chain(ta.road_index, ta.entry),
                           pts)[1]
            db = chain_fit(self.roadmap.oriented_chain(tb.road_index, tb.entry),
                           pts)[1]
            if abs(da - db) > 1.0:
                return ia if da > db else ib
        if ta.existence != tb.existence:
            return ia if ta.existence < tb.existence else ib
        return max(ia, ib)  # age breaks ties, the newcomer goes

    def _maybe_reassociate(self, tr: Track, w: _Work, beta: dict,
                           external: dict, measurements: list, collapsed: list,
                           hs: HypothesisSet, scan: int) -> tuple:
        """Re-anchor a track whose recent hits say it is badly placed.

        Two remedies, tried in order: move to a rival road's chain, or
        slide (either way) along the own chain.  Returns ``(hypothesis
        set, moved)``; on a move the set is fresh and must not be
        advanced again this scan.
        """
        mass = 0.0
        j_best, b_best = None, 0.0
        for j, bj in beta.items():
            if j is MISS or bj <= 0.0:
                continue
            mass += bj
            if bj > b_best:
                j_best, b_best = j, bj
        if j_best is not None:
            others = (1.0 - external.get(j_best, 1.0)) - b_best
            if others > REASSOC_CONTEST:
                # head-on pass: the hit blends two vehicles, and evidence
                # built from it would swap the track onto the oncoming
                # lane; sit the pass out
                return hs, False
        if b_best > 0.5:
            # only solid hits enter the window: a split posterior means the
            # best pick is as likely clutter or a neighbour, and one such
            # point drags every chain fit by tens of metres
            p_new = invert_measurement(measurements[j_best], self.cfg.sensor)[:2]
            pts = self._evidence.setdefault(tr.tid, [])
            pts.append(p_new)
            del pts[:-EVIDENCE_WINDOW]
        pts = self._evidence.get(tr.tid, ())
        if len(pts) < EVIDENCE_MIN or tr.status is not TrackStatus.CONFIRMED:
            # tentative tracks only collect: their windows are one part
            # clutter, and a move made on that seed chases the clutter
            return hs, False
        if scan - self._anchor_scan.get(tr.tid, -(10 ** 9)) < REASSOC_COOLDOWN:
            return hs, False
        vel = collapsed[0].mean[3:5]
        own = self.roadmap.oriented_chain(tr.road_index, tr.entry)
        k_own, d_own = chain_fit(own, pts)
        d_base = chain_fit(hs.segments[:1], pts)[1]
        rival = None
        for r in range(len(self.roadmap.roads)):
            for entry in ("start", "end"):
                if r == tr.road_index and entry == tr.entry:
                    continue
                cand = self.roadmap.oriented_chain(r, entry)
                k, d = chain_fit(cand, pts)
                if float(cand[k].direction @ vel) <= 0.0:
                    continue
                if rival is None or d < rival[0]:
                    rival = (d, r, entry, k)
        # the margin scales with the fit level: a window that no chain
        # explains well is mostly inversion noise, and the same absolute
        # advantage means far less there than it does on a tight window
        margin = max(ROAD_SWITCH_MARGIN, 0.35 * min(d_own, d_base))
        if rival is not None and rival[0] + margin < min(d_own, d_base):
            _, r, entry, k = rival
            tr.road_index, tr.entry = r, entry
        elif k_own != hs.base_index and d_own + SEGMENT_SLIDE_MARGIN < d_base:
            k = k_own
        else:
            return hs, False
        fresh = fresh_hypothesis_set(self.roadmap, tr.road_index, tr.entry, k,
                                     collapsed[0], self.cfg.vsmm)
        tr.hset = fresh
        self._evidence.pop(tr.tid, None)  # stale points argued the old anchor
        self._anchor_scan[tr.tid] = scan
        self.reassociations.append((scan, tr.tid, tr.road_index))
        return fresh, True
