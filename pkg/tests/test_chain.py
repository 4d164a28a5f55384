"""Chain CRF: potentials, exact inference vs enumeration, training, storage."""

import math

import numpy as np
import pytest

import sar._chain_numpy as chain_numpy
from sar import _backend
from sar.chain import (
    BRUTE_FORCE_BUDGET,
    ChainExample,
    ChainMarginals,
    ChainPotentials,
    CrfParams,
    brute_force_dist,
    build_potentials,
    crf_objective_gradient,
    enumerate_sequences,
    forward_backward,
    load_crf,
    save_crf,
    train_crf,
    viterbi,
)
from sar.errors import NumericalError
from sar.features import FeatureVector
from sar.maxent import MaxentParams, SoftExample, objective as maxent_objective
from sar.optim import OptConfig
from sar.probs import LabelSet
from sar.trainer import one_hot

from oracles import chain_path_probs, enumerate_paths

LS2 = LabelSet(("p", "q"))


def random_potentials(rng, T, K, scale=1.0):
    return ChainPotentials(scale * rng.normal(size=(T, K)),
                           scale * rng.normal(size=(T - 1, K, K)))


def random_chain_example(rng, T, F, gold=None):
    feats = []
    for _ in range(T):
        n = int(rng.integers(1, 3))
        ids = rng.choice(F, size=n, replace=False)
        feats.append(FeatureVector(ids, rng.normal(size=n)))
    return ChainExample(tuple(feats), gold)


class TestBuildPotentials:
    def test_zero_params(self):
        params = CrfParams.zeros(LS2, 4, 1.0)
        rng = np.random.default_rng(0)
        pot = build_potentials(params, random_chain_example(rng, 3, 4))
        np.testing.assert_array_equal(pot.node, 0.0)
        np.testing.assert_array_equal(pot.edge, 0.0)

    def test_length_one_has_no_edges(self):
        params = CrfParams.zeros(LS2, 4, 1.0)
        pot = build_potentials(
            params, ChainExample((FeatureVector.from_dict({0: 1.0}),))
        )
        assert pot.edge.shape == (0, 2, 2)

    def test_path_score_matches_enumeration(self):
        rng = np.random.default_rng(1)
        params = CrfParams(LS2, rng.normal(size=(2, 5)),
                           rng.normal(size=(2, 2)), 1.0)
        x = random_chain_example(rng, 3, 5)
        pot = build_potentials(params, x)
        for path in enumerate_sequences(3, 2):
            direct = sum(
                float(params.emission[path[t]][x.features[t].ids]
                      @ x.features[t].values)
                for t in range(3)
            ) + sum(float(params.transition[path[t], path[t + 1]])
                    for t in range(2))
            scored = pot.node[0, path[0]] + sum(
                pot.edge[t - 1, path[t - 1], path[t]] + pot.node[t, path[t]]
                for t in range(1, 3)
            )
            assert scored == pytest.approx(direct, abs=1e-10)

    def test_unknown_feature(self):
        params = CrfParams.zeros(LS2, 3, 1.0)
        bad = ChainExample((FeatureVector.from_dict({9: 1.0}),))
        with pytest.raises(ValueError, match="unknown feature"):
            build_potentials(params, bad)


class TestForwardBackward:
    def test_uniform_case(self):
        pot = ChainPotentials(np.zeros((3, 2)), np.zeros((2, 2, 2)))
        marg = forward_backward(pot)
        np.testing.assert_allclose(marg.node, 0.5, atol=1e-12)
        np.testing.assert_allclose(marg.edge, 0.25, atol=1e-12)
        assert marg.log_partition == pytest.approx(3 * math.log(2.0), abs=1e-12)

    def test_log_partition_vs_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            T = int(rng.integers(1, 7))
            K = int(rng.integers(2, 5))
            pot = random_potentials(rng, T, K)
            marg = forward_backward(pot)
            scores = [pot.node[0, p[0]] + sum(
                pot.edge[t - 1, p[t - 1], p[t]] + pot.node[t, p[t]]
                for t in range(1, T)) for p in enumerate_sequences(T, K)]
            brute = float(np.logaddexp.reduce(scores))
            assert marg.log_partition == pytest.approx(brute, rel=1e-8)

    def test_marginals_vs_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            T = int(rng.integers(2, 7))
            K = int(rng.integers(2, 5))
            pot = random_potentials(rng, T, K)
            marg = forward_backward(pot)
            probs = chain_path_probs(pot.node, pot.edge)
            node = np.zeros((T, K))
            edge = np.zeros((T - 1, K, K))
            for i, path in enumerate(enumerate_paths(T, K)):
                for t in range(T):
                    node[t, path[t]] += probs[i]
                for t in range(T - 1):
                    edge[t, path[t], path[t + 1]] += probs[i]
            np.testing.assert_allclose(marg.node, node, atol=1e-8)
            np.testing.assert_allclose(marg.edge, edge, atol=1e-8)

    def test_marginal_consistency(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            T = int(rng.integers(2, 8))
            K = int(rng.integers(2, 5))
            marg = forward_backward(random_potentials(rng, T, K, scale=2.0))
            np.testing.assert_allclose(marg.node.sum(axis=1), 1.0, atol=1e-9)
            np.testing.assert_allclose(marg.edge.sum(axis=(1, 2)), 1.0, atol=1e-9)
            for t in range(T - 1):
                np.testing.assert_allclose(marg.edge[t].sum(axis=1),
                                           marg.node[t], atol=1e-8)
                np.testing.assert_allclose(marg.edge[t].sum(axis=0),
                                           marg.node[t + 1], atol=1e-8)

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        pot = random_potentials(rng, 4, 3)
        base = forward_backward(pot)
        shift = 7.25
        node = pot.node.copy()
        node[2] += shift
        shifted = forward_backward(ChainPotentials(node, pot.edge))
        assert shifted.log_partition == pytest.approx(
            base.log_partition + shift, abs=1e-9)
        np.testing.assert_allclose(shifted.node, base.node, atol=1e-9)
        np.testing.assert_allclose(shifted.edge, base.edge, atol=1e-9)

    def test_impossible_chain(self):
        node = np.array([[0.0, -np.inf], [-np.inf, -np.inf]])
        pot = ChainPotentials(node, np.zeros((1, 2, 2)))
        with pytest.raises(NumericalError, match="impossible chain"):
            forward_backward(pot)

    def test_backends_agree(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            T = int(rng.integers(1, 7))
            K = int(rng.integers(2, 5))
            pot = random_potentials(rng, T, K)
            n1, e1, z1 = chain_numpy.forward_backward(pot.node, pot.edge)
            n2, e2, z2 = _backend.forward_backward(pot.node, pot.edge)
            np.testing.assert_allclose(n1, n2, atol=1e-12)
            np.testing.assert_allclose(e1, e2, atol=1e-12)
            assert z1 == pytest.approx(z2, abs=1e-12)
            assert np.array_equal(chain_numpy.viterbi_path(pot.node, pot.edge),
                                  _backend.viterbi_path(pot.node, pot.edge))


class TestViterbi:
    def test_all_zero_ties_to_first_label(self):
        pot = ChainPotentials(np.zeros((4, 3)), np.zeros((3, 3, 3)))
        np.testing.assert_array_equal(viterbi(pot), np.zeros(4, dtype=np.int64))

    def test_dominant_path(self):
        rng = np.random.default_rng(7)
        T, K = 5, 3
        path = rng.integers(K, size=T)
        node = rng.normal(size=(T, K))
        node[np.arange(T), path] += 25.0
        pot = ChainPotentials(node, rng.normal(size=(T - 1, K, K)))
        np.testing.assert_array_equal(viterbi(pot), path)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            T = int(rng.integers(1, 7))
            K = int(rng.integers(2, 5))
            pot = random_potentials(rng, T, K)
            paths = list(enumerate_sequences(T, K))
            scores = [pot.node[0, p[0]] + sum(
                pot.edge[t - 1, p[t - 1], p[t]] + pot.node[t, p[t]]
                for t in range(1, T)) for p in paths]
            assert tuple(viterbi(pot)) == paths[int(np.argmax(scores))]


class TestBruteForceDist:
    def test_uniform(self):
        pot = ChainPotentials(np.zeros((3, 2)), np.zeros((2, 2, 2)))
        dist = brute_force_dist(pot)
        np.testing.assert_allclose(dist.probs, 1.0 / 8.0, atol=1e-12)

    def test_length_one_is_node_softmax(self):
        rng = np.random.default_rng(9)
        node = rng.normal(size=(1, 3))
        dist = brute_force_dist(ChainPotentials(node, np.zeros((0, 3, 3))))
        softmax = np.exp(node[0] - np.logaddexp.reduce(node[0]))
        np.testing.assert_allclose(dist.probs, softmax, atol=1e-12)

    def test_total_probability(self):
        rng = np.random.default_rng(10)
        dist = brute_force_dist(random_potentials(rng, 5, 3))
        assert dist.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_budget(self):
        pot = ChainPotentials(np.zeros((13, 2)), np.zeros((12, 2, 2)))
        assert 2**13 > BRUTE_FORCE_BUDGET
        with pytest.raises(ValueError, match="budget"):
            brute_force_dist(pot)


class TestObjectiveGradient:
    def test_matched_moments_zero_gradient(self):
        rng = np.random.default_rng(11)
        params = CrfParams(LS2, rng.normal(size=(2, 5)),
                           rng.normal(size=(2, 2)), 1e12)
        x = random_chain_example(rng, 4, 5)
        target = forward_backward(build_potentials(params, x))
        _, g_em, g_tr = crf_objective_gradient(params, [(x, target, 1.0)])
        np.testing.assert_allclose(g_em, 0.0, atol=1e-9)
        np.testing.assert_allclose(g_tr, 0.0, atol=1e-9)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        K, F = 2, 5
        params = CrfParams(LS2, rng.normal(size=(K, F)),
                           rng.normal(size=(K, K)), 3.0)
        soft_example = random_chain_example(rng, 3, F)
        soft_target = forward_backward(build_potentials(
            CrfParams(LS2, rng.normal(size=(K, F)), rng.normal(size=(K, K)), 3.0),
            soft_example))
        examples = [
            (soft_example, soft_target, 0.7),
            (random_chain_example(rng, 2, F, gold=("p", "q")), None, 0.5),
        ]
        value, g_em, g_tr = crf_objective_gradient(params, examples)
        theta0 = np.concatenate([params.emission.ravel(),
                                 params.transition.ravel()])
        n_em = K * F

        def f(theta):
            p = CrfParams(LS2, theta[:n_em].reshape(K, F),
                          theta[n_em:].reshape(K, K), 3.0)
            return crf_objective_gradient(p, examples)[0]

        g_flat = np.concatenate([g_em.ravel(), g_tr.ravel()])
        h = 1e-5
        for idx in rng.choice(theta0.size, size=min(60, theta0.size),
                              replace=False):
            xp = theta0.copy()
            xp[idx] += h
            xm = theta0.copy()
            xm[idx] -= h
            fd = (f(xp) - f(xm)) / (2 * h)
            assert abs(fd - g_flat[idx]) <= 1e-4 * max(1.0, abs(fd))

    def test_gold_labels_match_joint_enumeration(self):
        # T=2, K=2: the chain likelihood equals a 4-outcome maxent over
        # joint features, so the losses must agree exactly.
        rng = np.random.default_rng(13)
        K, F = 2, 4
        params = CrfParams(LS2, rng.normal(size=(K, F)),
                           rng.normal(size=(K, K)), 1e12)
        x = random_chain_example(rng, 2, F, gold=("q", "p"))
        value, _, _ = crf_objective_gradient(params, [(x, None, 1.0)])

        pot = build_potentials(params, x)
        scores = []
        for a in range(2):
            for b in range(2):
                scores.append(pot.node[0, a] + pot.edge[0, a, b] + pot.node[1, b])
        gold_idx = 2  # (q, p) in lexicographic order
        direct = -(scores[gold_idx] - np.logaddexp.reduce(scores))
        assert value == pytest.approx(float(direct), abs=1e-10)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(14)
        params = CrfParams.zeros(LS2, 4, 1.0)
        x = random_chain_example(rng, 3, 4)
        wrong = ChainMarginals(np.full((2, 2), 0.5), np.full((1, 2, 2), 0.25), 0.0)
        with pytest.raises(ValueError, match="length mismatch"):
            crf_objective_gradient(params, [(x, wrong, 1.0)])


class TestTrainCrf:
    def toy(self):
        # position-unique features make the gold sequences separable
        fid = {}
        golds = [("p", "q", "p"), ("q", "p", "q"), ("p", "p", "q"),
                 ("q", "q", "p"), ("p", "q", "q")]
        examples = []
        for i, tags in enumerate(golds):
            feats = []
            for t, tag in enumerate(tags):
                key = (i, t)
                fid.setdefault(key, len(fid))
                feats.append(FeatureVector.from_dict({fid[key]: 1.0}))
            examples.append(ChainExample(tuple(feats), tags))
        return examples, len(fid)

    def test_separable_toy_viterbi_reproduces_gold(self):
        examples, F = self.toy()
        result = train_crf([(ex, None, 1.0 / len(examples)) for ex in examples],
                           CrfParams.zeros(LS2, F, 10.0))
        for ex in examples:
            path = viterbi(build_potentials(result.params, ex))
            assert tuple(LS2.name(int(i)) for i in path) == ex.gold

    def test_deterministic_rerun(self):
        examples, F = self.toy()
        data = [(ex, None, 0.2) for ex in examples]
        r1 = train_crf(data, CrfParams.zeros(LS2, F, 10.0))
        r2 = train_crf(data, CrfParams.zeros(LS2, F, 10.0))
        assert np.array_equal(r1.params.emission, r2.params.emission)
        assert np.array_equal(r1.params.transition, r2.params.transition)

    def test_objective_not_worse_than_init(self):
        rng = np.random.default_rng(15)
        data = [(random_chain_example(rng, 3, 5,
                                      gold=tuple(rng.choice(["p", "q"], size=3))),
                 None, 0.5) for _ in range(4)]
        init = CrfParams(LS2, rng.normal(size=(2, 5)), rng.normal(size=(2, 2)), 2.0)
        result = train_crf(data, init)
        v_init, _, _ = crf_objective_gradient(init, data)
        v_final, _, _ = crf_objective_gradient(result.params, data)
        assert v_final <= v_init + 1e-12


class TestCrfSerialization:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(16)
        params = CrfParams(LS2, rng.normal(size=(2, 3)) * 100,
                           rng.normal(size=(2, 2)), 10.0)
        path = tmp_path / "c.model"
        save_crf(params, path)
        loaded = load_crf(path)
        assert loaded.label_set == params.label_set
        assert loaded.prior_variance == params.prior_variance
        assert np.array_equal(loaded.emission, params.emission)
        assert np.array_equal(loaded.transition, params.transition)
