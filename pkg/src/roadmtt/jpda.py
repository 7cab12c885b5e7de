"""Joint probabilistic data association over feasible assignment hypotheses.

Tracks sharing gated measurements are grouped into clusters; within a
cluster every feasible joint assignment (each track takes one gated
measurement or a miss, no measurement shared) is enumerated.  Hypothesis
weights combine the track existence prior, detection and gate
probabilities, the measurement likelihood and the external-source
intensity at the measurement:

    miss:    1 - P_D P_G p(exists)
    assign:  P_D P_G p(exists) * lik(i, j) / lambda_e(j)

Weights are accumulated in log space and normalized per cluster; the
per-track marginals beta and the per-measurement external (non-track)
probability come from summing hypothesis weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

MISS = None


class ClusterTooLarge(RuntimeError):
    """Raised when a cluster would enumerate too many hypotheses.

    Raise the gate probability threshold, lower clutter, or split the
    scene; the enumeration is exponential in cluster size by design.
    """


def gate_threshold(p_g: float, dof: int = 3) -> float:
    """Chi-square gate on the squared Mahalanobis innovation distance."""
    if not 0.0 < p_g < 1.0:
        raise ValueError("p_g must be in (0, 1)")
    return float(chi2.ppf(p_g, df=dof))


@dataclass(slots=True)
class TrackInput:
    """Per-track association input: existence prior and gated likelihoods."""

    existence: float                  # prior probability the track exists
    gated: tuple[int, ...]            # sorted measurement ids in the gate
    lik: dict                         # measurement id -> fused likelihood


@dataclass(slots=True)
class JointHypothesis:
    tracks: tuple[int, ...]           # cluster track ids, sorted
    assignment: tuple                 # per track: measurement id or MISS
    log_weight: float
    weight: float = 0.0               # filled after per-cluster normalization


@dataclass(slots=True)
class AssociationResult:
    beta: dict                        # track id -> {MISS: b0, j: bj}
    external: dict                    # measurement id -> non-track probability
    clusters: list = field(default_factory=list)


def cluster_tracks(gates: dict) -> list[list]:
    """Group track ids that share gated measurements (transitively)."""
    parent = {tid: tid for tid in gates}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    owner = {}
    for tid in sorted(gates):
        for j in gates[tid]:
            if j in owner:
                ra, rb = find(owner[j]), find(tid)
                if ra != rb:
                    parent[rb] = ra
            else:
                owner[j] = tid
    groups = {}
    for tid in sorted(gates):
        groups.setdefault(find(tid), []).append(tid)
    return [sorted(g) for g in sorted(groups.values())]


def enumerate_joint(inputs: dict, lambda_e: dict, p_d: float, p_g: float,
                    max_hypotheses: int = 200_000) -> list[JointHypothesis]:
    """All feasible joint assignments for one cluster, with log weights."""
    tids = sorted(inputs)
    bound = 1
    for tid in tids:
        bound *= 1 + len(inputs[tid].gated)
    if bound > max_hypotheses:
        raise ClusterTooLarge(
            f"cluster of {len(tids)} tracks could enumerate {bound} hypotheses"
        )
    pdg = p_d * p_g
    log_miss = {}
    log_assign = {}
    for tid in tids:
        ti = inputs[tid]
        e = min(max(ti.existence, 0.0), 1.0)
        log_miss[tid] = math.log(max(1.0 - pdg * e, 1e-300))
        base = math.log(max(pdg * e, 1e-300))
        log_assign[tid] = {
            j: base + math.log(max(ti.lik[j], 1e-300)) - math.log(lambda_e[j])
            for j in ti.gated
        }

    out: list[JointHypothesis] = []
    assignment: list = [MISS] * len(tids)
    used: set = set()

    def walk(i: int, logw: float):
        if i == len(tids):
            out.append(JointHypothesis(tuple(tids), tuple(assignment), logw))
            return
        tid = tids[i]
        assignment[i] = MISS
        walk(i + 1, logw + log_miss[tid])
        for j in inputs[tid].gated:
            if j in used:
                continue
            used.add(j)
            assignment[i] = j
            walk(i + 1, logw + log_assign[tid][j])
            used.remove(j)
        assignment[i] = MISS

    walk(0, 0.0)

    top = max(h.log_weight for h in out)
    total = sum(math.exp(h.log_weight - top) for h in out)
    for h in out:
        h.weight = math.exp(h.log_weight - top) / total
    return out


def marginalize(hypotheses: list[JointHypothesis], inputs: dict) -> dict:
    """Per-track marginal association probabilities from joint weights."""
    tids = hypotheses[0].tracks
    beta = {tid: {MISS: 0.0, **{j: 0.0 for j in inputs[tid].gated}} for tid in tids}
    for h in hypotheses:
        for tid, j in zip(h.tracks, h.assignment):
            beta[tid][j] += h.weight
    return beta


def normalized_association_weights(beta: dict, union: list):
    """Miss-first association weights rescaled to sum to exactly one.

    Marginals already sum to one up to rounding; trackers renormalize
    before collapsing so mixture weights are proper regardless.  Returns
    (keys, weights) with keys = [MISS, *union].
    """
    keys = [MISS, *union]
    vals = [beta.get(MISS, 0.0)] + [beta[j] for j in union]
    s = math.fsum(vals)
    if s <= 0.0:
        return keys, np.array([1.0] + [0.0] * len(union))
    return keys, np.array(vals) / s


def associate(inputs: dict, lambda_e: dict, p_d: float, p_g: float,
              cluster_cap: int = 12) -> AssociationResult:
    """Cluster, enumerate, and marginalize a full association problem.

    ``inputs`` maps track id -> TrackInput; ``lambda_e`` maps measurement
    id -> external intensity (must cover every gated measurement).
    Measurements outside every gate get external probability 1.
    """
    gates = {tid: inputs[tid].gated for tid in sorted(inputs)}
    clusters = cluster_tracks(gates)
    beta: dict = {}
    track_mass: dict = {}
    for cluster in clusters:
        if len(cluster) > cluster_cap:
            raise ClusterTooLarge(
                f"cluster {cluster} exceeds the {cluster_cap}-track cap; "
                "raise the gate threshold or thin the scene"
            )
        sub = {tid: inputs[tid] for tid in cluster}
        hyps = enumerate_joint(sub, lambda_e, p_d, p_g)
        beta.update(marginalize(hyps, sub))
    for tid, b in beta.items():
        for j, val in b.items():
            if j is not MISS:
                track_mass[j] = track_mass.get(j, 0.0) + val
    external = {j: min(1.0, max(0.0, 1.0 - track_mass.get(j, 0.0))) for j in lambda_e}
    return AssociationResult(beta=beta, external=external, clusters=clusters)
