import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fame.backbone import HashingFeaturizer, LinearClassifier, TrainConfig
from fame.corpus import Corpus
from fame.partition import MIXED, UNIVERSAL, CertifiedPartition
from fame.router import (
    GATE_THRESHOLD,
    GateModel,
    RouterDataset,
    RouterError,
    SelectorModel,
    build_gate_dataset,
    build_selector_dataset,
    class_weights,
    route,
    route_line,
    route_scores,
    train_gate,
    train_selector,
    validation_mask,
)

from . import oracles

FEAT = HashingFeaturizer(dim=2**14)
CFG = TrainConfig(learning_rate=16.0)


def _partition(n_expert):
    names = (UNIVERSAL,) + tuple(f"D{i}" for i in range(1, n_expert + 1))
    pi = {"u": 0, **{f"e{i}": i for i in range(1, n_expert + 1)}}
    return CertifiedPartition(names, (None,) + (MIXED,) * n_expert, pi)


def _offline(counts):
    """counts: {event_id: lines}; lines interleaved round-robin."""
    eids, raws = [], []
    left = dict(counts)
    i = 0
    while any(left.values()):
        for e in counts:
            if left[e]:
                eids.append(e)
                raws.append(f"{e} token{e} word{e} {i}" if e != "u" else f"routine heartbeat ok {i}")
                left[e] -= 1
                i += 1
    return Corpus(raws, [0] * len(raws), event_ids=eids)


class TestClassWeights:
    def test_balanced(self):
        np.testing.assert_allclose(class_weights([50, 50]), [1.0, 1.0])

    def test_imbalanced(self):
        np.testing.assert_allclose(class_weights([75, 25]), [100 / 150, 2.0])

    def test_single(self):
        np.testing.assert_allclose(class_weights([10]), [1.0])

    def test_rejects_empty_domain(self):
        with pytest.raises(RouterError):
            class_weights([3, 0])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(1, 10_000), min_size=1, max_size=12))
    def test_identity(self, counts):
        w = class_weights(counts)
        np.testing.assert_allclose(w, oracles.class_weights(counts), rtol=1e-12)
        # every domain carries the same total weight N / C
        np.testing.assert_allclose(w * np.asarray(counts), sum(counts) / len(counts), rtol=1e-12)


class TestGateDataset:
    def test_subsamples_three_to_one(self):
        ds = build_gate_dataset(_offline({"e1": 100, "u": 10_000}), _partition(1))
        assert (ds.labels == 1).sum() == 100 and (ds.labels == 0).sum() == 300
        assert np.all(np.diff(ds.indices) > 0)

    def test_keeps_small_universal(self):
        ds = build_gate_dataset(_offline({"e1": 100, "u": 200}), _partition(1))
        assert (ds.labels == 0).sum() == 200

    def test_no_expert_lines(self):
        with pytest.raises(RouterError):
            build_gate_dataset(_offline({"u": 10}), _partition(1))

    def test_validation_mask_last_tenth_per_class(self):
        labels = np.array([0] * 30 + [1] * 20)
        m = validation_mask(labels, 0.1)
        assert m[27:30].all() and not m[:27].any()
        assert m[48:50].all() and not m[30:48].any()
        assert not validation_mask(np.array([0, 1, 1]), 0.1)[0]


class TestGate:
    def test_disjoint_vocab_reaches_full_recall(self):
        off = _offline({"e1": 200, "u": 2000})
        ds = build_gate_dataset(off, _partition(1))
        X = FEAT.transform([off.raws[i] for i in ds.indices])
        gate = train_gate(ds, X, CFG)
        assert gate.log["target_reached"]
        Xv = X[ds.val_mask & (ds.labels == 1)]
        assert np.mean(gate.score(Xv) >= 0.5) == 1.0
        assert gate.log["epochs"] <= 3

    def test_fixed_threshold(self):
        with pytest.raises(RouterError):
            GateModel(LinearClassifier.zeros(4), threshold=0.4)

    def test_empty_validation(self):
        ds = RouterDataset(np.arange(3), np.array([0, 1, 0]), np.zeros(3, bool))
        with pytest.raises(RouterError):
            train_gate(ds, FEAT.transform(["a", "b", "c"]))


class TestSelector:
    def test_three_disjoint_domains(self):
        off = _offline({"e1": 300, "e2": 200, "e3": 100, "u": 500})
        ds = build_selector_dataset(off, _partition(3))
        assert sorted(np.unique(ds.labels).tolist()) == [0, 1, 2]
        X = FEAT.transform([off.raws[i] for i in ds.indices])
        sel = train_selector(ds, X, 3, CFG)
        acc = np.mean(sel.predict(X[ds.val_mask]) - 1 == ds.labels[ds.val_mask])
        assert acc >= 0.99

    def test_single_domain_constant(self):
        off = _offline({"e1": 10, "u": 10})
        ds = build_selector_dataset(off, _partition(1))
        sel = train_selector(ds, FEAT.transform([off.raws[i] for i in ds.indices]), 1)
        assert sel.constant and sel.predict(FEAT.transform(["x", "y"])).tolist() == [1, 1]

    def test_argmax_ties_lowest(self):
        sel = SelectorModel(LinearClassifier.zeros(8, 3), 3, np.ones(3))
        assert sel.predict(HashingFeaturizer(dim=8).transform(["q"])).tolist() == [1]

    def test_peaked_distribution(self):
        W = np.zeros((3, 8))
        sel = SelectorModel(LinearClassifier(W, np.array([0.0, 5.0, 0.0])), 3, np.ones(3))
        gate = GateModel(LinearClassifier(np.zeros((1, 8)), np.array([2.2])))  # sigmoid(2.2) ~ 0.9
        dom, g = route(gate, sel, HashingFeaturizer(dim=8).transform(["x"]))
        assert dom.tolist() == [2] and g[0] > 0.89


class TestRouting:
    @pytest.mark.parametrize("g, expected", [(0.49, 0), (0.5, 3), (0.9, 3)])
    def test_boundary(self, g, expected):
        assert route_scores(np.array([g]), np.array([3])).tolist() == [expected]

    def test_no_selector_all_universal(self):
        assert route_scores(np.array([0.9, 0.1]), None).tolist() == [0, 0]

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(1, 6)), min_size=1, max_size=40))
    def test_total(self, rows):
        g = np.array([a for a, _ in rows])
        sel = np.array([b for _, b in rows])
        out = route_scores(g, sel)
        assert len(out) == len(rows)
        assert np.all((out == 0) == (g < GATE_THRESHOLD))
        assert np.all(out[g >= GATE_THRESHOLD] == sel[g >= GATE_THRESHOLD])

    def test_route_line(self):
        gate = GateModel(LinearClassifier(np.zeros((1, 16)), np.array([-1.0])))
        assert route_line(gate, None, HashingFeaturizer(dim=16), "msg") == 0
