"""Independent reference implementations used by the tests.

Each oracle is written from the definitions by direct counting or brute
force, without calling into the package, so agreement between the two is
meaningful.
"""

from __future__ import annotations

import math

import numpy as np


def auroc_pairwise(scores, labels):
    """O(n^2) count: wins plus half the ties over all anomaly/normal pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    if not pos or not neg:
        return None
    total = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                total += 1.0
            elif a == b:
                total += 0.5
    return total / (len(pos) * len(neg))


def calibrate_exhaustive(scores, labels, recall_floor=0.9):
    """Try every unique score as a threshold under ``score >= t``.

    Among thresholds meeting the recall floor keep the best F1; with none
    meeting it, keep the best F1 among those with the highest recall.  Ties
    go to the smaller threshold.  Returns (threshold, f1, recall).
    """
    s_arr = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) == 1
    n_pos = int(pos.sum())
    rows = []
    for t in sorted(set(scores)):
        flagged = s_arr >= t
        tp = int((flagged & pos).sum())
        fp = int((flagged & ~pos).sum())
        fn = n_pos - tp
        f1 = 2 * tp / (2 * tp + fp + fn)
        rows.append((t, f1, tp / n_pos))
    feasible = [r for r in rows if r[2] >= recall_floor]
    if not feasible:
        top = max(r[2] for r in rows)
        feasible = [r for r in rows if r[2] == top]
    best = max(r[1] for r in feasible)
    return min((r for r in feasible if r[1] == best), key=lambda r: r[0])


def _logit(p, eps=1e-7, clip=16.0):
    p = min(max(p, eps), 1.0 - eps)
    return min(max(math.log(p / (1.0 - p)), -clip), clip)


def fuse(s_u, g, w):
    z = _logit(s_u) + w * _logit(g)
    return 1.0 / (1.0 + math.exp(-z))


def decide_line(g, c_star, pure, fused_u, s_c, tau_u, tau_c):
    """Three-path rule for one line: (anomaly, path, domain).

    path 0 is universal, 1 pure, 2 mixed.
    """
    if g < 0.5:
        return fused_u >= tau_u, 0, 0
    if pure:
        return True, 1, c_star
    return s_c >= tau_c, 2, c_star


def focal_loss(p, y, gamma, alpha):
    p_t = p if y == 1 else 1.0 - p
    a_t = alpha if y == 1 else 1.0 - alpha
    return -a_t * (1.0 - p_t) ** gamma * math.log(p_t)


def focal_loss_of_logit(z, y, gamma, alpha):
    # log-space form keeps the finite differences accurate at large |z|
    log_p = -math.log1p(math.exp(-z)) if z >= 0 else z - math.log1p(math.exp(z))
    log_q = log_p - z
    if y == 1:
        return -alpha * math.exp(gamma * log_q) * log_p
    return -(1.0 - alpha) * math.exp(gamma * log_p) * log_q


def seq_dist(template, tokens):
    """Share of positions with equal tokens; a wildcard matches only a wildcard."""
    return sum(a == b for a, b in zip(template, tokens)) / len(template)


def class_weights(counts):
    total = sum(counts)
    return [total / (len(counts) * c) for c in counts]


# Hand-traced Drain merge decisions.  Each entry: lines fed in order, parser
# settings, the cluster index each line joins, and the final templates.  The
# comment gives the deciding seqDist by hand (threshold 0.5 unless noted).
HAND_TRACES = [
    # 1/2 = 0.5 >= 0.5
    (["mount failed", "mount succeeded"], {}, [0, 0], ["mount <*>"]),
    # 0/3
    (["a b c", "x y z"], {}, [0, 1], ["a b c", "x y z"]),
    # 3/4
    (["a b c d", "a b c e"], {}, [0, 0], ["a b c <*>"]),
    # 1/4
    (["a b c d", "a x y z"], {}, [0, 1], ["a b c d", "a x y z"]),
    # 2/4 at the boundary
    (["a b c d", "a b x y"], {}, [0, 0], ["a b <*> <*>"]),
    # length 3 vs 4: different length buckets
    (["a b c", "a b c d"], {}, [0, 1], ["a b c", "a b c d"]),
    # digits masked before the tree: 3/3
    (["x 12 y", "x 34 y"], {}, [0, 0], ["x <*> y"]),
    # 3/4 but the first token picks a different leaf
    (["a b c d", "z b c d"], {}, [0, 1], ["a b c d", "z b c d"]),
    # both first tokens mask to <*>: 2/2
    (["node1 up", "node2 up"], {}, [0, 0], ["<*> up"]),
    # <*> vs b is a mismatch: 2/3, template unchanged
    (["a 1 c", "a b c"], {}, [0, 0], ["a <*> c"]),
    # 2/5 = 0.4
    (["a b c d e", "a b x y z"], {}, [0, 1], ["a b c d e", "a b x y z"]),
    # 3/6 at the boundary
    (["a b c d e f", "a b c x y z"], {}, [0, 0], ["a b c <*> <*> <*>"]),
    # identical lines
    (["err disk full", "err disk full"], {}, [0, 0], ["err disk full"]),
    # third line: 2/4 against cluster 0, 3/4 against cluster 1
    (["a b c d", "a x y z", "a b y z"], {}, [0, 1, 1], ["a b c d", "a <*> y z"]),
    # third line ties 2/4 vs 2/4; the template with more wildcards wins
    (["p q r s", "p 1 t u", "p q t v"], {}, [0, 1, 1], ["p q r s", "p <*> t <*>"]),
    # 3/4 below a 0.8 threshold
    (["a b c d", "a b c e"], {"similarity_threshold": 0.8}, [0, 1], ["a b c d", "a b c e"]),
    # single tokens on different leaves
    (["single", "other"], {}, [0, 1], ["single", "other"]),
    # masked first token takes the <*> branch, "x" gets its own
    (["42 a b", "x a b"], {}, [0, 1], ["<*> a b", "x a b"]),
    # a line matching the wildcard slot: 3/4 again, template stable
    (["a b c d", "a b c e", "a b c f"], {}, [0, 0, 0], ["a b c <*>"]),
    # 2/4 against "a b c <*>"
    (["a b c d", "a b c e", "a b x y"], {}, [0, 0, 0], ["a b <*> <*>"]),
    # max_children=2: "b" takes the last slot as <*>, "c" falls into it (1/2)
    (["a x", "b x", "c x"], {"max_children": 2}, [0, 1, 1], ["a x", "<*> x"]),
    # depth 5 descends on two tokens: a/b and a/c are different leaves
    (["a b c d", "a c c d"], {"tree_depth": 5}, [0, 1], ["a b c d", "a c c d"]),
]
