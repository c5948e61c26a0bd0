import itertools
import math

import numpy as np
import pytest

from potmvc.metrics import (
    accuracy,
    evaluate,
    group_accuracy,
    hungarian,
    nmi,
    purity,
)


def brute_force_assignment_cost(cost):
    n = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(n))
               for p in itertools.permutations(range(n)))


def brute_force_accuracy(pred, truth):
    """Best matched fraction over all injective cluster-to-class maps."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    ids = sorted(set(pred) | set(truth))
    best = 0
    for p in itertools.permutations(ids):
        mapping = dict(zip(ids, p))
        best = max(best, sum(mapping[a] == b for a, b in zip(pred, truth)))
    return best / len(pred)


def direct_nmi(pred, truth):
    """Loop-based geometric-mean NMI straight from the definition."""
    pred = list(pred)
    truth = list(truth)
    n = len(pred)

    def entropy(labels):
        h = 0.0
        for v in set(labels):
            p = labels.count(v) / n
            h -= p * math.log(p)
        return h

    hp, ht = entropy(pred), entropy(truth)
    if hp == 0 or ht == 0:
        return 0.0
    mi = 0.0
    for a in set(pred):
        for b in set(truth):
            joint = sum(1 for x, y in zip(pred, truth)
                        if x == a and y == b) / n
            if joint > 0:
                pa = pred.count(a) / n
                pb = truth.count(b) / n
                mi += joint * math.log(joint / (pa * pb))
    return mi / math.sqrt(hp * ht)


def direct_purity(pred, truth):
    total = 0
    for c in set(pred):
        members = [t for p, t in zip(pred, truth) if p == c]
        total += max(members.count(v) for v in set(members))
    return total / len(pred)


class TestHungarian:
    def test_identity_favoring_cost(self):
        cost = np.ones((3, 3)) - np.eye(3)
        np.testing.assert_array_equal(hungarian(cost), [0, 1, 2])

    def test_swap(self):
        np.testing.assert_array_equal(
            hungarian(np.array([[1.0, 0.0], [0.0, 1.0]])), [1, 0])

    def test_matches_exhaustive_cost_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            n = int(rng.integers(2, 7))
            cost = rng.uniform(size=(n, n))
            perm = hungarian(cost)
            assert sorted(perm) == list(range(n))
            got = sum(cost[i, perm[i]] for i in range(n))
            assert got == pytest.approx(brute_force_assignment_cost(cost))

    def test_tie_break_prefers_low_indices(self):
        # every assignment costs 2, so the identity must come back
        np.testing.assert_array_equal(hungarian(np.ones((4, 4))),
                                      [0, 1, 2, 3])

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            hungarian(np.ones((2, 3)))


class TestAccuracy:
    def test_perfect(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(1)
        truth = rng.integers(0, 3, size=30)
        perm = np.array([2, 0, 1])
        assert accuracy(perm[truth], truth) == 1.0

    def test_two_thirds(self):
        assert accuracy([0, 1, 1], [0, 0, 1]) == pytest.approx(2 / 3)

    def test_matches_brute_force_exhaustively(self):
        for n in (4, 5, 6):
            for pred in itertools.product(range(3), repeat=n):
                truth = tuple((i + 1) % 3 for i in range(n))
                assert accuracy(pred, truth) == pytest.approx(
                    brute_force_accuracy(pred, truth))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            accuracy([0, 1], [0, 1, 2])


class TestNmi:
    def test_identical_nontrivial(self):
        assert nmi([0, 1, 0, 1], [0, 1, 0, 1]) == pytest.approx(1.0)

    def test_constant_prediction_is_zero(self):
        assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0

    def test_independent_labelings(self):
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0

    def test_matches_direct_formula_on_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            n = int(rng.integers(2, 9))
            pred = rng.integers(0, 3, size=n)
            truth = rng.integers(0, 3, size=n)
            assert nmi(pred, truth) == pytest.approx(
                min(max(direct_nmi(pred, truth), 0.0), 1.0), abs=1e-12)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(3)
        pred = rng.integers(0, 4, size=50)
        truth = rng.integers(0, 3, size=50)
        perm = np.array([3, 2, 0, 1])
        assert nmi(perm[pred], truth) == pytest.approx(nmi(pred, truth))


class TestPurity:
    def test_perfect(self):
        assert purity([1, 0, 2], [1, 0, 2]) == 1.0

    def test_direct_count(self):
        assert purity([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(0.75)

    def test_single_cluster_majority_fraction(self):
        assert purity([0, 0, 0, 0], [1, 1, 2, 1]) == pytest.approx(0.75)

    def test_matches_direct_formula_on_random_instances(self):
        rng = np.random.default_rng(4)
        for _ in range(40):
            n = int(rng.integers(2, 9))
            pred = rng.integers(0, 3, size=n)
            truth = rng.integers(0, 3, size=n)
            assert purity(pred, truth) == pytest.approx(
                direct_purity(pred, truth))


class TestExhaustiveSmallInstances:
    def test_all_labelings_up_to_six_samples(self):
        # full sweep over joint labelings of 4 samples over up to 3 classes
        for pred in itertools.product(range(3), repeat=4):
            for truth in itertools.product(range(2), repeat=4):
                assert accuracy(pred, truth) == pytest.approx(
                    brute_force_accuracy(pred, truth))
                assert nmi(pred, truth) == pytest.approx(
                    min(max(direct_nmi(pred, truth), 0.0), 1.0), abs=1e-12)
                assert purity(pred, truth) == pytest.approx(
                    direct_purity(pred, truth))


class TestGroupAccuracy:
    def test_perfect_prediction(self):
        truth = [0] * 6 + [1] * 3 + [2] * 1
        out = group_accuracy(truth, truth)
        assert out == {"head": 1.0, "medium": 1.0, "tail": 1.0}

    def test_three_classes_one_per_group(self):
        truth = np.array([0] * 5 + [1] * 3 + [2] * 2)
        pred = truth.copy()
        pred[-1] = 0  # break one tail sample
        out = group_accuracy(pred, truth)
        assert out["head"] == 1.0
        assert out["medium"] == 1.0
        assert out["tail"] == pytest.approx(0.5)

    def test_crafted_six_class_instance(self):
        counts = [10, 8, 6, 4, 3, 2]
        truth = np.repeat(np.arange(6), counts)
        pred = truth.copy()
        # corrupt one sample in class 1 (head) and all of class 5 (tail)
        pred[np.flatnonzero(truth == 1)[0]] = 0
        pred[truth == 5] = 0
        out = group_accuracy(pred, truth)
        assert out["head"] == pytest.approx(17 / 18)
        assert out["medium"] == 1.0
        assert out["tail"] == pytest.approx(3 / 5)

    def test_two_classes_head_tail_only(self):
        truth = np.array([0, 0, 0, 1, 1])
        out = group_accuracy(truth, truth)
        assert set(out) == {"head", "tail"}


class TestEvaluate:
    def test_bundles_all_metrics(self):
        rng = np.random.default_rng(5)
        truth = rng.integers(0, 3, size=30)
        pred = rng.integers(0, 3, size=30)
        m = evaluate(pred, truth)
        assert m.acc == pytest.approx(accuracy(pred, truth))
        assert m.nmi == pytest.approx(nmi(pred, truth))
        assert m.purity == pytest.approx(purity(pred, truth))
        assert 0.0 <= m.acc <= 1.0 and 0.0 <= m.nmi <= 1.0
        assert 0.0 <= m.purity <= 1.0
        for v in m.group_acc.values():
            assert 0.0 <= v <= 1.0
