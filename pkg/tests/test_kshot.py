import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fame.corpus import Corpus
from fame.kshot import (
    build_pu_pool,
    format_cost_table,
    label_count,
    labeling_cost_report,
    sample,
    train_size,
)


def _corpus(eids, labels):
    return Corpus([f"line {i}" for i in range(len(eids))], labels, event_ids=eids)


def test_most_recent_k_and_split():
    eids = ["B"] * 21
    for i in (1, 5, 9, 12, 20):
        eids[i] = "A"
    ks = sample(_corpus(eids, [0] * 21), 3)
    ev = ks.per_event["A"]
    assert ev.train.tolist() == [9, 12]
    assert ev.calib.tolist() == [20]
    assert sorted(ev.lines.tolist()) == [9, 12, 20]


@pytest.mark.parametrize("n, t", [(0, 0), (1, 1), (2, 1), (3, 2), (5, 4), (10, 8), (100, 80)])
def test_train_size(n, t):
    assert train_size(n) == t


def test_all_anomalous_event_flags():
    ks = sample(_corpus(["A"] * 4, [1] * 4), 10)
    ev = ks.per_event["A"]
    assert ev.has_anomaly and not ev.has_normal
    assert ev.rep_normal is None and ev.rep_anomaly == 3


def test_unlabeled_lines_not_sampled():
    c = _corpus(["A"] * 6, [0, -1, 1, -1, 0, -1])
    ks = sample(c, 10)
    assert sorted(ks.per_event["A"].lines.tolist()) == [0, 2, 4]
    assert ks.n_labels == 3


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        sample(_corpus(["A"], [0]), 0)


def test_pu_pool_examples():
    labels = [0] * 10
    labels[2] = labels[7] = 1
    c = _corpus(["A"] * 5 + ["B"] * 5, labels)
    ks = sample(c, 100)
    pool = build_pu_pool(c, ks)
    assert len(pool) == 8 and 2 not in pool and 7 not in pool
    clean = _corpus(["A"] * 10, [0] * 10)
    assert len(build_pu_pool(clean, sample(clean, 3))) == 10


def test_pool_keeps_unsampled_anomalies():
    # anomalies outside the K most recent stay in the pool (hidden positives)
    c = _corpus(["A"] * 6, [1, 0, 0, 0, 0, 0])
    assert 0 in build_pu_pool(c, sample(c, 2))


def test_cost_saturates():
    rng = np.random.default_rng(0)
    eids = [f"E{i}" for i in rng.integers(0, 20, 1000)]
    c = _corpus(eids, [0] * 1000)
    (row,) = labeling_cost_report(c, [10_000])
    assert row.labels == 1000 and row.reduction == 1.0


def test_cost_table_consistency():
    rng = np.random.default_rng(1)
    eids = [f"E{i}" for i in rng.zipf(1.5, 5000) % 300]
    c = _corpus(eids, [0] * 5000)
    rows = labeling_cost_report(c, [5, 10, 25, 100])
    for r in rows:
        assert r.labels == label_count(c, r.k) == sample(c, r.k).n_labels
        assert r.reduction == 5000 / r.labels
    text = format_cost_table(rows)
    assert text.splitlines()[0].split() == ["K", "Labels", "Reduction"]
    assert len(text.splitlines()) == 5


def test_sample_json(small_setup):
    doc = json.loads(small_setup.sample.to_json(small_setup.offline))
    assert doc["k"] == small_setup.sample.k


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.sampled_from([0, 1, -1])), min_size=1, max_size=80), st.integers(1, 12))
def test_sample_invariants(rows, k):
    c = _corpus([f"E{e}" for e, _ in rows], [y for _, y in rows])
    ks = sample(c, k)
    labels = c.labels
    for eid, ev in ks.per_event.items():
        mine = [i for i, e in enumerate(c.event_ids) if e == eid and labels[i] != -1]
        assert ev.lines.tolist() == mine[-k:]
        assert len(ev.train) == train_size(len(ev.lines))
        assert ev.has_anomaly == bool((labels[ev.lines] == 1).any())
    pool = build_pu_pool(c, ks)
    assert len(pool) + len(ks.anomaly_indices(c)) == len(c)
