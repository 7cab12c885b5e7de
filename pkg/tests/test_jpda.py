import itertools
from collections import defaultdict

import numpy as np
import pytest

from roadmtt import jpda
from roadmtt.jpda import MISS, TrackInput


def brute_marginals(inputs, lambda_e, p_d, p_g):
    """Global linear-space enumeration over all tracks at once (no clustering)."""
    tids = sorted(inputs)
    options = [[MISS] + list(inputs[t].gated) for t in tids]
    beta = {t: defaultdict(float) for t in tids}
    total = 0.0
    for combo in itertools.product(*options):
        taken = [j for j in combo if j is not MISS]
        if len(taken) != len(set(taken)):
            continue
        w = 1.0
        for t, j in zip(tids, combo):
            e = inputs[t].existence
            if j is MISS:
                w *= 1.0 - p_d * p_g * e
            else:
                w *= p_d * p_g * e * inputs[t].lik[j] / lambda_e[j]
        total += w
        for t, j in zip(tids, combo):
            beta[t][j] += w
    return {t: {j: v / total for j, v in b.items()} for t, b in beta.items()}


def random_instance(rng, max_tracks=3, max_meas=4):
    n_tracks = int(rng.integers(1, max_tracks + 1))
    n_meas = int(rng.integers(0, max_meas + 1))
    lambda_e = {j: float(rng.uniform(0.05, 2.0)) for j in range(n_meas)}
    inputs = {}
    for t in range(n_tracks):
        size = int(rng.integers(0, n_meas + 1)) if n_meas else 0
        gated = tuple(sorted(rng.choice(n_meas, size=size, replace=False))) if size else ()
        lik = {int(j): float(rng.uniform(1e-3, 5.0)) for j in gated}
        inputs[t] = TrackInput(float(rng.uniform(0.05, 0.99)), tuple(int(j) for j in gated), lik)
    return inputs, lambda_e


class TestGateThreshold:
    def test_reference_quantile(self):
        # 99% chi-square quantile with 3 degrees of freedom
        assert jpda.gate_threshold(0.99) == pytest.approx(11.344867, abs=1e-5)

    def test_monotone_in_pg(self):
        assert jpda.gate_threshold(0.999) > jpda.gate_threshold(0.99) > jpda.gate_threshold(0.9)

    def test_invalid_pg(self):
        with pytest.raises(ValueError):
            jpda.gate_threshold(1.0)


class TestClustering:
    def test_shared_measurement_joins(self):
        clusters = jpda.cluster_tracks({1: (0,), 2: (0, 1), 3: (2,)})
        assert clusters == [[1, 2], [3]]

    def test_transitive_chain(self):
        clusters = jpda.cluster_tracks({1: (0,), 2: (0, 1), 3: (1, 2), 4: (5,)})
        assert clusters == [[1, 2, 3], [4]]

    def test_empty_gates_are_singletons(self):
        clusters = jpda.cluster_tracks({1: (), 2: (), 3: (0,)})
        assert clusters == [[1], [2], [3]]


class TestEnumeration:
    def test_two_tracks_two_shared_measurements_has_seven_hypotheses(self):
        inputs = {
            1: TrackInput(0.9, (0, 1), {0: 1.0, 1: 0.5}),
            2: TrackInput(0.8, (0, 1), {0: 0.7, 1: 0.9}),
        }
        hyps = jpda.enumerate_joint(inputs, {0: 0.2, 1: 0.2}, 0.95, 0.99)
        assert len(hyps) == 7
        assert sum(h.weight for h in hyps) == pytest.approx(1.0, abs=1e-12)
        assignments = {h.assignment for h in hyps}
        assert (0, 0) not in assignments  # no sharing

    def test_cluster_too_large(self):
        gated = tuple(range(9))
        lik = {j: 1.0 for j in gated}
        inputs = {t: TrackInput(0.9, gated, lik) for t in range(8)}
        with pytest.raises(jpda.ClusterTooLarge):
            jpda.enumerate_joint(inputs, {j: 0.2 for j in gated}, 0.95, 0.99)


class TestMarginals:
    def test_matches_global_brute_force(self):
        rng = np.random.default_rng(77)
        for _ in range(200):
            inputs, lambda_e = random_instance(rng)
            res = jpda.associate(inputs, lambda_e, 0.95, 0.99)
            want = brute_marginals(inputs, lambda_e, 0.95, 0.99)
            for t, b in res.beta.items():
                for j, v in b.items():
                    assert v == pytest.approx(want[t][j], abs=1e-12)

    def test_sum_rules(self):
        rng = np.random.default_rng(78)
        for _ in range(100):
            inputs, lambda_e = random_instance(rng)
            res = jpda.associate(inputs, lambda_e, 0.95, 0.99)
            for t, b in res.beta.items():
                assert sum(b.values()) == pytest.approx(1.0, abs=1e-12)
            for j in lambda_e:
                mass = sum(b.get(j, 0.0) for b in res.beta.values())
                assert mass + res.external[j] == pytest.approx(1.0, abs=1e-12)
                assert 0.0 <= res.external[j] <= 1.0

    def test_empty_gate_track_is_certain_miss(self):
        res = jpda.associate({5: TrackInput(0.7, (), {})}, {0: 0.3}, 0.95, 0.99)
        assert res.beta[5][MISS] == 1.0
        assert res.external[0] == 1.0

    def test_ungated_measurement_fully_external(self):
        inputs = {1: TrackInput(0.9, (0,), {0: 2.0})}
        res = jpda.associate(inputs, {0: 0.2, 1: 0.2}, 0.95, 0.99)
        assert res.external[1] == 1.0
        assert res.external[0] < 1.0

    def test_higher_likelihood_wins_mass(self):
        inputs = {
            1: TrackInput(0.9, (0, 1), {0: 5.0, 1: 0.1}),
        }
        res = jpda.associate(inputs, {0: 0.2, 1: 0.2}, 0.95, 0.99)
        assert res.beta[1][0] > res.beta[1][1]

    def test_deterministic(self):
        rng = np.random.default_rng(79)
        inputs, lambda_e = random_instance(rng)
        a = jpda.associate(inputs, lambda_e, 0.95, 0.99)
        b = jpda.associate(inputs, lambda_e, 0.95, 0.99)
        assert a.beta == b.beta and a.external == b.external

    def test_cluster_cap_enforced(self):
        gated = (0,)
        inputs = {t: TrackInput(0.5, gated, {0: 1.0}) for t in range(13)}
        with pytest.raises(jpda.ClusterTooLarge, match="cap"):
            jpda.associate(inputs, {0: 0.5}, 0.95, 0.99)
