import json

import numpy as np
import pytest

from cnnkit.errors import EvaluationError, LabelingError, ShapeError
from cnnkit.metrics import ConfusionMatrix, MetricsReport


def metrics_from_definition(m):
    """Straight-from-definition oracle, scalar loops only."""
    c = len(m)
    total = sum(sum(row) for row in m)
    correct = sum(m[i][i] for i in range(c))
    precision, recall, f1 = [], [], []
    for k in range(c):
        col = sum(m[i][k] for i in range(c))
        row = sum(m[k])
        p = m[k][k] / col if col else 0.0
        r = m[k][k] / row if row else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    return {
        "accuracy": correct / total,
        "macro_precision": sum(precision) / c,
        "macro_recall": sum(recall) / c,
        "macro_f1": sum(f1) / c,
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }


class TestUpdate:
    def test_diagonal(self):
        cm = ConfusionMatrix(2)
        cm.update([0, 1], [0, 1])
        assert np.array_equal(cm.m, [[1, 0], [0, 1]])

    def test_off_diagonal(self):
        cm = ConfusionMatrix(2)
        cm.update([0], [1])
        assert cm.m[0][1] == 1 and cm.total == 1

    def test_additivity(self):
        rng = np.random.default_rng(0)
        t = rng.integers(0, 3, 40)
        p = rng.integers(0, 3, 40)
        one = ConfusionMatrix(3)
        one.update(t, p)
        two = ConfusionMatrix(3)
        two.update(t[:17], p[:17])
        two.update(t[17:], p[17:])
        assert np.array_equal(one.m, two.m)

    def test_merge(self):
        a, b = ConfusionMatrix(2), ConfusionMatrix(2)
        a.update([0], [0])
        b.update([1], [0])
        a.merge(b)
        assert a.total == 2 and a.m[1][0] == 1

    def test_out_of_range_labels(self):
        cm = ConfusionMatrix(2)
        with pytest.raises(LabelingError):
            cm.update([0, 2], [0, 0])
        with pytest.raises(LabelingError):
            cm.update([0], [-1])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            ConfusionMatrix(2).update([0, 1], [0])


class TestCompute:
    def test_perfect_diagonal(self):
        cm = ConfusionMatrix(2)
        cm.m[...] = [[5, 0], [0, 5]]
        report = cm.compute()
        assert report.accuracy == 1.0 and report.macro_f1 == 1.0

    def test_hand_computed_case(self):
        cm = ConfusionMatrix(2)
        cm.m[...] = [[2, 1], [0, 3]]
        report = cm.compute()
        assert abs(report.accuracy - 5 / 6) < 1e-12
        assert abs(report.per_class_f1[0] - 0.8) < 1e-12
        assert abs(report.per_class_f1[1] - 6 / 7) < 1e-12
        assert abs(report.macro_f1 - (0.8 + 6 / 7) / 2) < 1e-12
        assert abs(report.macro_f1 - 0.8286) < 1e-4

    def test_sixty_four_of_sixty_eight(self):
        cm = ConfusionMatrix(2)
        cm.m[...] = [[30, 2], [2, 34]]
        report = cm.compute()
        assert cm.total == 68
        assert abs(report.accuracy - 64 / 68) < 1e-12
        assert abs(report.accuracy - 0.9412) < 5e-5

    def test_empty_matrix_rejected(self):
        with pytest.raises(EvaluationError):
            ConfusionMatrix(3).compute()

    def test_zero_support_class_contributes_zero(self):
        cm = ConfusionMatrix(3)
        cm.update([0, 1, 0, 1], [0, 1, 1, 1])
        report = cm.compute()
        assert report.per_class_f1[2] == 0.0
        assert report.support[2] == 0

    @pytest.mark.parametrize("chunk", range(4))
    def test_matches_definition_oracle(self, chunk):
        rng = np.random.default_rng(900 + chunk)
        for _ in range(50):
            c = int(rng.integers(2, 7))
            m = rng.integers(0, 51, (c, c))
            if m.sum() == 0:
                m[0, 0] = 1
            cm = ConfusionMatrix(c)
            cm.m[...] = m
            report = cm.compute()
            oracle = metrics_from_definition(m.tolist())
            assert abs(report.accuracy - oracle["accuracy"]) <= 1e-12
            assert abs(report.macro_precision - oracle["macro_precision"]) <= 1e-12
            assert abs(report.macro_recall - oracle["macro_recall"]) <= 1e-12
            assert abs(report.macro_f1 - oracle["macro_f1"]) <= 1e-12
            assert np.allclose(report.per_class_f1, oracle["f1"], atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(12)
        c = 5
        m = rng.integers(0, 30, (c, c))
        m[0, 0] += 1
        perm = rng.permutation(c)
        cm, cm_p = ConfusionMatrix(c), ConfusionMatrix(c)
        cm.m[...] = m
        cm_p.m[...] = m[np.ix_(perm, perm)]
        a, b = cm.compute(), cm_p.compute()
        assert abs(a.accuracy - b.accuracy) < 1e-12
        assert abs(a.macro_f1 - b.macro_f1) < 1e-12
        assert np.allclose(np.asarray(a.per_class_f1)[perm], b.per_class_f1)

    def test_bounds_and_macro_between_extremes(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            c = int(rng.integers(2, 6))
            cm = ConfusionMatrix(c)
            cm.m[...] = rng.integers(0, 40, (c, c))
            if cm.total == 0:
                cm.m[0, 0] = 1
            r = cm.compute()
            values = [r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1,
                      *r.per_class_f1]
            assert all(0.0 <= v <= 1.0 for v in values)
            assert min(r.per_class_f1) <= r.macro_f1 <= max(r.per_class_f1)

    def test_accuracy_equals_frequency_weighted_recall(self):
        rng = np.random.default_rng(14)
        cm = ConfusionMatrix(4)
        cm.update(rng.integers(0, 4, 200), rng.integers(0, 4, 200))
        r = cm.compute()
        weighted = sum(rec * sup for rec, sup in zip(r.per_class_recall, r.support)) / cm.total
        assert abs(r.accuracy - weighted) < 1e-12


class TestReportSerialization:
    def test_four_decimal_fixed_point(self, tmp_path):
        cm = ConfusionMatrix(2)
        cm.m[...] = [[30, 2], [2, 34]]
        path = tmp_path / "report.json"
        cm.compute().save(path, classes=["neg", "pos"])
        doc = json.loads(path.read_text())
        assert doc["accuracy"] == 0.9412
        assert doc["classes"] == ["neg", "pos"]
        assert all(len(str(v).split(".")[-1]) <= 4 for v in doc["per_class_f1"])

    def test_round_trip_values(self):
        report = MetricsReport(0.123456, 0.2, 0.3, 0.4, [0.1], [0.2], [0.3], [7])
        assert report.to_dict()["accuracy"] == 0.1235
