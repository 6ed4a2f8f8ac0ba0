import numpy as np

from fame import plots

PNG = b"\x89PNG"


def _is_png(p):
    return p.exists() and p.read_bytes()[:4] == PNG


def test_k_sweep(tmp_path):
    summary = [
        {"k": 5, "precision_mean": 0.5, "recall_mean": 0.9, "f1_mean": 0.6, "precision_std": None,
         "recall_std": None, "f1_std": None},
        {"k": 10, "precision_mean": 0.6, "recall_mean": 0.9, "f1_mean": 0.7, "precision_std": 0.01,
         "recall_std": 0.02, "f1_std": 0.01},
    ]
    assert _is_png(plots.plot_k_sweep(summary, tmp_path / "a" / "k.png"))


def test_method_comparison(tmp_path):
    rows = [{"method": "fame", "precision": 0.9, "recall": 0.9, "f1": 0.9, "auroc": None},
            {"method": "global_linear", "precision": 0.5, "recall": 0.7, "f1": 0.6, "auroc": 0.8}]
    assert _is_png(plots.plot_method_comparison(rows, tmp_path / "m.png"))


def test_score_distributions(tmp_path):
    rng = np.random.default_rng(0)
    scores = rng.random(200)
    paths = rng.integers(0, 3, 200)
    scores[paths == 1] = np.nan
    p = plots.plot_score_distributions(scores, rng.integers(0, 2, 200), paths, ("universal", "pure", "mixed"), tmp_path / "s.png")
    assert _is_png(p)


def test_labeling_cost(tmp_path):
    cost = [{"k": 5, "labels": 50, "offline_lines": 5000, "reduction": 100.0},
            {"k": 10, "labels": 90, "offline_lines": 5000, "reduction": 5000 / 90}]
    assert _is_png(plots.plot_labeling_cost(cost, tmp_path / "c.png"))


def test_deterministic_bytes(tmp_path):
    rows = [{"method": "fame", "precision": 0.9, "recall": 0.9, "f1": 0.9, "auroc": 0.95}]
    a = plots.plot_method_comparison(rows, tmp_path / "a.png").read_bytes()
    b = plots.plot_method_comparison(rows, tmp_path / "b.png").read_bytes()
    assert a == b
