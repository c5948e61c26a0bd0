"""Clustering evaluation: Hungarian-matched accuracy, NMI, purity, and
head/medium/tail group accuracy."""

import math
from dataclasses import dataclass, field

import numpy as np

_MAX_ASSIGNMENT_SIZE = 16


@dataclass
class ClusterMetrics:
    acc: float
    nmi: float
    purity: float
    group_acc: dict = field(default_factory=dict)


def _as_labels(a, name):
    out = np.asarray(a)
    if out.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    return out.astype(np.int64)


def _check_lengths(pred, truth):
    if len(pred) != len(truth):
        raise ValueError(
            f"label vectors differ in length: {len(pred)} vs {len(truth)}")


def hungarian(cost):
    """Minimum-cost perfect assignment of a square cost matrix.

    Returns perm with row i assigned to column perm[i]. Among equal-cost
    assignments the lexicographically smallest perm (lowest row-then-column
    index) is returned. Exact subset-DP; intended for the small matrices that
    arise when matching clusters to classes.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost must be finite")
    n = cost.shape[0]
    if n > _MAX_ASSIGNMENT_SIZE:
        raise ValueError(f"assignment limited to {_MAX_ASSIGNMENT_SIZE} "
                         f"classes, got {n}")
    # suffix[s] = min cost of assigning the last popcount(s) rows to the
    # column set s, filled in order of increasing popcount
    full = (1 << n) - 1
    suffix = np.full(1 << n, np.inf)
    suffix[0] = 0.0
    for s in range(1, 1 << n):
        row = n - bin(s).count("1")
        best = np.inf
        for j in range(n):
            bit = 1 << j
            if s & bit:
                v = cost[row, j] + suffix[s ^ bit]
                if v < best:
                    best = v
        suffix[s] = best
    # reconstruct forward, preferring the lowest column index at every tie
    perm = np.empty(n, dtype=np.int64)
    remaining = full
    for row in range(n):
        for j in range(n):
            bit = 1 << j
            if not remaining & bit:
                continue
            if math.isclose(cost[row, j] + suffix[remaining ^ bit],
                            suffix[remaining], rel_tol=0.0, abs_tol=1e-9):
                perm[row] = j
                remaining ^= bit
                break
        else:
            raise RuntimeError("assignment reconstruction failed")
    return perm


def _contingency(pred, truth):
    kp = int(pred.max()) + 1 if len(pred) else 0
    kt = int(truth.max()) + 1 if len(truth) else 0
    w = np.zeros((kp, kt), dtype=np.int64)
    for p, t in zip(pred, truth):
        w[p, t] += 1
    return w


def _best_mapping(pred, truth):
    """Hungarian map from predicted cluster ids to true class ids."""
    w = _contingency(pred, truth)
    size = max(w.shape)
    padded = np.zeros((size, size), dtype=np.float64)
    padded[: w.shape[0], : w.shape[1]] = w
    perm = hungarian(-padded)
    return perm, w


def accuracy(pred, truth):
    """Clustering accuracy: best fraction matched over cluster-class
    bijections."""
    pred = _as_labels(pred, "pred")
    truth = _as_labels(truth, "truth")
    _check_lengths(pred, truth)
    perm, w = _best_mapping(pred, truth)
    matched = sum(w[i, perm[i]] for i in range(w.shape[0])
                  if perm[i] < w.shape[1])
    return float(matched / len(pred))


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth):
    """Mutual information normalized by the geometric mean of entropies;
    0 by convention when either labeling has zero entropy."""
    pred = _as_labels(pred, "pred")
    truth = _as_labels(truth, "truth")
    _check_lengths(pred, truth)
    w = _contingency(pred, truth).astype(np.float64)
    n = w.sum()
    hp = _entropy(w.sum(axis=1))
    ht = _entropy(w.sum(axis=0))
    if hp == 0.0 or ht == 0.0:
        return 0.0
    pi = w.sum(axis=1) / n
    pj = w.sum(axis=0) / n
    mi = 0.0
    for i in range(w.shape[0]):
        for j in range(w.shape[1]):
            if w[i, j] > 0:
                pij = w[i, j] / n
                mi += pij * math.log(pij / (pi[i] * pj[j]))
    value = mi / math.sqrt(hp * ht)
    return float(min(max(value, 0.0), 1.0))


def purity(pred, truth):
    """Average majority-class fraction over predicted clusters."""
    pred = _as_labels(pred, "pred")
    truth = _as_labels(truth, "truth")
    _check_lengths(pred, truth)
    w = _contingency(pred, truth)
    return float(w.max(axis=1).sum() / len(pred))


def group_accuracy(pred, truth, class_counts=None):
    """Per-group accuracy for head/medium/tail classes.

    Classes are ranked by true count descending (ties by class id); the top
    ceil(K/3) form the head, the bottom ceil(K/3) the tail, the rest the
    medium group. Accuracy within a group reuses the global Hungarian
    cluster-to-class mapping restricted to that group's samples. Groups that
    end up empty are omitted from the result.
    """
    pred = _as_labels(pred, "pred")
    truth = _as_labels(truth, "truth")
    _check_lengths(pred, truth)
    if class_counts is None:
        class_counts = np.bincount(truth)
    class_counts = np.asarray(class_counts)
    k = len(class_counts)
    order = sorted(range(k), key=lambda cid: (-class_counts[cid], cid))
    head_n = math.ceil(k / 3)
    tail_n = min(head_n, k - head_n)
    groups = {
        "head": set(order[:head_n]),
        "medium": set(order[head_n: k - tail_n]),
        "tail": set(order[k - tail_n:]),
    }
    perm, w = _best_mapping(pred, truth)
    mapped = np.array([perm[p] if perm[p] < w.shape[1] else -1 for p in pred])
    out = {}
    for name, classes in groups.items():
        mask = np.isin(truth, list(classes))
        if not mask.any():
            continue
        out[name] = float(np.mean(mapped[mask] == truth[mask]))
    return out


def evaluate(pred, truth):
    """All clustering metrics at once."""
    return ClusterMetrics(acc=accuracy(pred, truth), nmi=nmi(pred, truth),
                          purity=purity(pred, truth),
                          group_acc=group_accuracy(pred, truth))
