import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fame.backbone import (
    FocalLossConfig,
    HashingFeaturizer,
    LinearClassifier,
    Schedule,
    TrainConfig,
    TrainingError,
    adapt_unsupervised,
    featurize,
    focal_loss,
    focal_loss_gradient,
    multiclass_focal_gradient,
    multiclass_focal_loss,
    score,
    sigmoid,
    train,
)

from . import oracles


class TestFeatures:
    def test_empty_text_is_zero(self):
        assert featurize("", dim=1024).nnz == 0

    def test_deterministic(self):
        a = featurize("kernel panic on node 12")
        b = featurize("kernel panic on node 12")
        assert (a != b).nnz == 0

    def test_unit_norm(self):
        x = featurize("disk sda failure detected", dim=4096)
        assert math.isclose(sp.linalg.norm(x), 1.0, rel_tol=1e-12)

    def test_shared_trigrams(self):
        # " abc " vs " abd ": trigrams " ab" and "abc"/"abd"..., the " ab" prefix is shared
        f = HashingFeaturizer(dim=2**20)
        a, b = f.ngram_buckets("abc"), f.ngram_buckets("abd")
        assert len(a["trigram"]) == len(b["trigram"]) == 3
        assert a["trigram"][0] == b["trigram"][0]
        assert set(a["trigram"][1:]).isdisjoint(b["trigram"][1:])
        assert a["unigram"] != b["unigram"]

    def test_counts_match_bucket_listing(self):
        f = HashingFeaturizer(dim=512, seed=3)
        text = "Alpha beta gamma beta"
        X = f.counts([text])
        buckets = f.ngram_buckets(text)
        expected = np.bincount(sum(buckets.values(), []), minlength=512)
        np.testing.assert_array_equal(X.toarray()[0], expected)

    def test_batch_equals_single(self):
        f = HashingFeaturizer(dim=1024)
        texts = ["a b", "", "ccc d e", "a"]
        X = f.transform(texts)
        for i, t in enumerate(texts):
            assert (X[i] != f.transform([t])).nnz == 0

    def test_seed_changes_buckets(self):
        assert (featurize("x y", seed=0) != featurize("x y", seed=1)).nnz > 0


class TestAdaptation:
    def test_small_pool_uses_all(self):
        st_ = adapt_unsupervised([f"l {i}" for i in range(10)], cap=200_000, dim=256)
        assert st_.n_adapt_lines == 10

    def test_cap(self):
        lines = [f"msg {i % 7}" for i in range(500)]
        assert adapt_unsupervised(lines, cap=100, dim=256).n_adapt_lines == 100

    def test_deterministic(self):
        lines = [f"msg {i % 7} x{i % 3}" for i in range(500)]
        a = adapt_unsupervised(lines, cap=100, dim=256, seed=4)
        b = adapt_unsupervised(lines, cap=100, dim=256, seed=4)
        np.testing.assert_array_equal(a.idf, b.idf)

    def test_rare_buckets_weigh_more(self):
        lines = ["common"] * 99 + ["rare"]
        s = adapt_unsupervised(lines, dim=4096)
        f = s.featurizer
        assert s.idf[f.ngram_buckets("rare")["unigram"][0]] > s.idf[f.ngram_buckets("common")["unigram"][0]]

    def test_empty_pool(self):
        with pytest.raises(ValueError):
            adapt_unsupervised([])


class TestFocalLoss:
    def test_positive_half(self):
        assert abs(focal_loss(0.5, 1) - 0.75 * 0.25 * math.log(2)) < 1e-12
        assert abs(focal_loss(0.5, 1) - 0.12997) < 1e-5

    def test_negative_half(self):
        assert abs(focal_loss(0.5, 0) - 0.25 * 0.25 * math.log(2)) < 1e-12
        assert abs(focal_loss(0.5, 0) - 0.04332) < 1e-5

    def test_perfect_prediction(self):
        assert focal_loss(1.0, 1) < 1e-12
        assert focal_loss(0.0, 0) < 1e-12

    def test_clamped(self):
        assert math.isfinite(focal_loss(0.0, 1))

    def test_gamma_zero_is_weighted_ce(self):
        cfg = FocalLossConfig(0.0, 0.5)
        assert math.isclose(focal_loss(0.3, 1, cfg), -0.5 * math.log(0.3))

    def test_gradient_ce_case(self):
        assert math.isclose(focal_loss_gradient(0.0, 1, FocalLossConfig(0.0, 0.5)), -0.25)

    def test_gradient_vanishes_when_confident(self):
        assert abs(focal_loss_gradient(30.0, 1)) < 1e-10

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FocalLossConfig(gamma=-1)
        with pytest.raises(ValueError):
            FocalLossConfig(alpha=1.0)

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(1e-4, 1 - 1e-4),
        st.sampled_from([0, 1]),
        st.sampled_from([0.0, 1.0, 2.0, 5.0]),
        st.sampled_from([0.25, 0.5, 0.75]),
    )
    def test_matches_oracle(self, p, y, g, a):
        assert math.isclose(focal_loss(p, y, FocalLossConfig(g, a)), oracles.focal_loss(p, y, g, a), rel_tol=1e-12)

    def test_multiclass_gradient(self):
        rng = np.random.default_rng(0)
        Z = rng.normal(size=(20, 4)) * 3
        y = rng.integers(0, 4, 20)
        for gamma in (0.0, 1.0, 2.0):
            G = multiclass_focal_gradient(Z, y, gamma)
            h = 1e-6
            for i in range(0, 20, 5):
                for j in range(4):
                    Zp, Zm = Z.copy(), Z.copy()
                    Zp[i, j] += h
                    Zm[i, j] -= h
                    num = (multiclass_focal_loss(Zp, y, gamma)[i] - multiclass_focal_loss(Zm, y, gamma)[i]) / (2 * h)
                    assert abs(num - G[i, j]) < 1e-6 * max(1.0, abs(num))


class TestLinear:
    def test_zero_weights(self):
        X = featurize("anything", dim=64)
        assert score(LinearClassifier.zeros(64), X)[0] == 0.5
        np.testing.assert_allclose(score(LinearClassifier.zeros(64, 3), X), [[1 / 3] * 3])

    def test_negation(self):
        rng = np.random.default_rng(1)
        w, b = rng.normal(size=(1, 64)), rng.normal(size=1)
        X = sp.random(10, 64, density=0.2, random_state=2, format="csr")
        s = score(LinearClassifier(w, b), X)
        s_neg = score(LinearClassifier(-w, -b), X)
        np.testing.assert_allclose(s + s_neg, 1.0, atol=1e-6)

    def test_range(self):
        X = sp.csr_matrix(np.array([[1e6], [-1e6], [0.0]]))
        s = score(LinearClassifier(np.ones((1, 1)), np.zeros(1)), X)
        assert np.all((s >= 0) & (s <= 1))

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            LinearClassifier.zeros(8).logits(sp.csr_matrix((1, 9)))

    def test_sigmoid_stable(self):
        assert sigmoid(-1000.0) == 0.0 and sigmoid(1000.0) == 1.0


class TestTraining:
    def test_separable_2d(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 2))
        y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
        X = X + np.where(y[:, None] == 1, 0.5, -0.5)
        model, log = train(sp.csr_matrix(X), y, config=TrainConfig(learning_rate=1.0, batch_size=32), schedule=Schedule(max_epochs=50))
        assert ((score(model, sp.csr_matrix(X)) >= 0.5) == y).all()
        assert log.epochs <= 50

    def test_constant_features_learn_prior(self):
        y = np.array([1] * 30 + [0] * 70)
        X = sp.csr_matrix(np.ones((100, 1)))
        cfg = TrainConfig(gamma=0.0, alpha=0.5, learning_rate=2.0, batch_size=100)
        model, _ = train(X, y, config=cfg, schedule=Schedule(max_epochs=2000))
        assert abs(score(model, X[:1])[0] - 0.3) < 1e-3

    def test_no_examples(self):
        with pytest.raises(TrainingError):
            train(sp.csr_matrix((0, 4)), np.array([], dtype=int))

    def test_single_class(self):
        with pytest.raises(TrainingError):
            train(sp.csr_matrix(np.ones((3, 2))), np.array([1, 1, 1]))

    def test_strong_anomaly_scores_high(self):
        f = HashingFeaturizer(dim=4096)
        pos = [f"fatal machine check {i}" for i in range(20)]
        neg = [f"job {i} finished ok" for i in range(200)]
        X = f.transform(pos + neg)
        y = np.array([1] * 20 + [0] * 200)
        model, _ = train(X, y, config=TrainConfig(learning_rate=16.0), schedule=Schedule(max_epochs=500))
        assert score(model, f.transform(["fatal machine check 3"]))[0] > 0.9

    def test_target_stops_early(self):
        rng = np.random.default_rng(2)
        X = sp.csr_matrix(rng.normal(size=(300, 3)))
        y = (X.toarray()[:, 0] > 0).astype(int)
        calls = []

        def val(m):
            calls.append(1)
            return 1.0

        _, log = train(X, y, schedule=Schedule(max_epochs=10, target=0.9), validate=val)
        assert log.stop_reason == "target" and log.epochs == 1 and len(calls) == 1

    def test_fixed_steps(self):
        rng = np.random.default_rng(3)
        X = sp.csr_matrix(rng.normal(size=(100, 3)))
        y = np.arange(100) % 2
        _, log = train(X, y, config=TrainConfig(batch_size=10), schedule=Schedule(max_epochs=None, max_steps=37))
        assert log.steps == 37

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        X = sp.csr_matrix(rng.normal(size=(150, 5)))
        y = np.arange(150) % 3
        a, _ = train(X, y, n_classes=3, schedule=Schedule(max_epochs=3))
        b, _ = train(X, y, n_classes=3, schedule=Schedule(max_epochs=3))
        np.testing.assert_array_equal(a.weights, b.weights)
