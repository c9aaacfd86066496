"""Independent reference computations shared by the unit and acceptance tests."""

from collections import Counter

import numpy as np


def label_pairs(counts):
    """Expand a confusion matrix into explicit (true, pred) pairs."""
    pairs = []
    for t, row in enumerate(counts):
        for p, n in enumerate(row):
            pairs.extend([(t, p)] * int(n))
    return pairs


def metrics_from_pairs(pairs, n_classes):
    """OA, AA, kappa and per-class precision/recall/f1 by plain counting."""
    total = len(pairs)
    agree = sum(1 for t, p in pairs if t == p)
    true_counts = Counter(t for t, _ in pairs)
    pred_counts = Counter(p for _, p in pairs)
    hits = Counter(t for t, p in pairs if t == p)
    p_o = agree / total
    p_e = sum(true_counts[k] * pred_counts[k] for k in range(n_classes)) / (total * total)
    if p_e == 1.0:
        kappa = 1.0 if p_o == 1.0 else 0.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    precision, recall, f1 = [], [], []
    for k in range(n_classes):
        pr = hits[k] / pred_counts[k] if pred_counts[k] else 0.0
        rc = hits[k] / true_counts[k] if true_counts[k] else 0.0
        precision.append(pr)
        recall.append(rc)
        f1.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
    present = [recall[k] for k in range(n_classes) if true_counts[k]]
    return {
        "overall_accuracy": p_o,
        "average_accuracy": sum(present) / len(present),
        "kappa": kappa,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


def random_confusion(rng, max_classes=16, max_count=20):
    k = int(rng.integers(1, max_classes + 1))
    counts = rng.integers(0, max_count + 1, size=(k, k))
    # vary sparsity and keep a strong diagonal sometimes
    counts = counts * (rng.random((k, k)) < rng.uniform(0.2, 1.0))
    if rng.random() < 0.5:
        counts += np.diag(rng.integers(0, 5 * max_count, size=k) * (rng.random(k) < 0.8))
    if counts.sum() == 0:
        counts[0, 0] = 1
    return counts


def max_metric_gap(report, oracle):
    gaps = [abs(getattr(report, key) - oracle[key]) for key in ("overall_accuracy", "average_accuracy", "kappa")]
    for key in ("precision", "recall", "f1"):
        gaps.extend(abs(a - b) for a, b in zip(getattr(report, key), oracle[key]))
    return max(gaps)
