import numpy as np
import pytest

from trialsent.corpus import REAL_CLASSES, GoldLabel, RaterAnnotation, SentimentLabel
from trialsent.evaluation import ConfusionMatrix, compare_rater, confusion, metrics

POS, NEG, NEU = REAL_CLASSES


def oracle_metrics(counts):
    """Direct textbook formulas, written independently of metrics()."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    acc = sum(counts[i][i] for i in range(3)) / n
    f1s = []
    for i in range(3):
        tp = counts[i][i]
        fp = counts[:, i].sum() - tp
        fn = counts[i, :].sum() - tp
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1s.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    return acc, f1s, sum(f1s) / 3


class TestConfusion:
    def test_all_correct_diagonal(self):
        pairs = [(c, c) for c in REAL_CLASSES for _ in range(2)]
        m = confusion(pairs)
        assert np.array_equal(m.counts, np.diag([2, 2, 2]))

    def test_empty_is_zero_matrix_then_metrics_error(self):
        m = confusion([])
        assert m.counts.sum() == 0
        with pytest.raises(ValueError):
            metrics(m)

    def test_unlabeled_rejected(self):
        with pytest.raises(ValueError):
            confusion([(POS, SentimentLabel.UNLABELED)])

    def test_random_pairs_match_tally_oracle(self):
        rng = np.random.default_rng(12)
        pairs = [(REAL_CLASSES[g], REAL_CLASSES[p])
                 for g, p in rng.integers(0, 3, size=(30, 2))]
        m = confusion(pairs)
        for gi in range(3):
            for pi in range(3):
                expected = sum(1 for g, p in pairs
                               if g is REAL_CLASSES[gi] and p is REAL_CLASSES[pi])
                assert m.counts[gi, pi] == expected
        assert m.counts.sum() == 30


class TestMetrics:
    def test_perfect_diagonal(self):
        report = metrics(ConfusionMatrix(np.diag([4, 4, 4])))
        assert report.accuracy == 1.0
        assert report.macro_f1 == 1.0

    def test_hand_computed_case(self):
        m = ConfusionMatrix(np.array([[5, 0, 0], [0, 0, 5], [0, 0, 5]]))
        report = metrics(m)
        assert report.accuracy == pytest.approx(10 / 15)
        assert report.per_class_f1[0] == pytest.approx(1.0)
        assert report.per_class_f1[1] == 0.0
        assert report.per_class_f1[2] == pytest.approx(2 / 3)
        assert report.macro_f1 == pytest.approx(5 / 9)

    def test_random_matrices_match_formula_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            counts = rng.integers(0, 20, size=(3, 3))
            if counts.sum() == 0:
                continue
            report = metrics(ConfusionMatrix(counts))
            acc, f1s, macro = oracle_metrics(counts)
            assert report.accuracy == pytest.approx(acc, abs=1e-9)
            assert report.per_class_f1 == pytest.approx(f1s, abs=1e-9)
            assert report.macro_f1 == pytest.approx(macro, abs=1e-9)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        pairs = [(REAL_CLASSES[g], REAL_CLASSES[p])
                 for g, p in rng.integers(0, 3, size=(40, 2))]
        a = metrics(confusion(pairs))
        shuffled = [pairs[i] for i in rng.permutation(len(pairs))]
        b = metrics(confusion(shuffled))
        assert a.accuracy == b.accuracy and a.macro_f1 == b.macro_f1


def gold_map(labels):
    return {p: GoldLabel(pmid=p, label=l, vote_counts={}, resolved=True)
            for p, l in labels.items()}


class TestCompareRater:
    def test_identical_rater_is_perfect(self):
        gold = gold_map({f"p{i}": REAL_CLASSES[i % 3] for i in range(9)})
        rater = [RaterAnnotation("r4", p, g.label) for p, g in gold.items()]
        assert compare_rater(rater, gold).accuracy == 1.0

    def test_62_of_100_agreement(self):
        gold = gold_map({f"p{i}": REAL_CLASSES[i % 3] for i in range(100)})
        rater = []
        for i, (p, g) in enumerate(sorted(gold.items())):
            if i < 62:
                rater.append(RaterAnnotation("r4", p, g.label))
            else:
                wrong = REAL_CLASSES[(REAL_CLASSES.index(g.label) + 1) % 3]
                rater.append(RaterAnnotation("r4", p, wrong))
        report = compare_rater(rater, gold)
        assert report.accuracy == pytest.approx(0.62)

    def test_report_is_complete(self):
        gold = gold_map({f"p{i}": REAL_CLASSES[i % 3] for i in range(6)})
        rater = [RaterAnnotation("r4", p, g.label) for p, g in gold.items()]
        report = compare_rater(rater, gold)
        assert report.matrix.counts.shape == (3, 3)
        assert len(report.per_class_f1) == 3
        assert 0.0 <= report.macro_f1 <= 1.0
        assert report.n == 6
        d = report.to_dict()
        assert set(d) >= {"matrix", "accuracy", "per_class_f1", "macro_f1", "n"}

    def test_missing_coverage_lists_gaps(self):
        gold = gold_map({"a": POS, "b": NEG})
        rater = [RaterAnnotation("r4", "a", POS)]
        with pytest.raises(ValueError, match="b"):
            compare_rater(rater, gold)
