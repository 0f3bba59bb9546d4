import numpy as np
import pytest

from modules.metrics import MetricsError, class_report, confusion_matrix

CLASSES = ["flour", "sugar", "peas"]


def test_confusion_matrix_rows_are_true_classes():
    matrix = confusion_matrix([0, 0, 1, 2, 2], [0, 1, 1, 2, 0], 3)
    assert matrix.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 1]]


def test_class_report_by_hand():
    labels = [0, 0, 0, 1, 1, 2]
    predicted = [0, 0, 1, 1, 1, 0]
    report = class_report(labels, predicted, CLASSES)
    flour, sugar, peas = report.per_class
    assert flour.precision == pytest.approx(2 / 3)
    assert flour.recall == pytest.approx(2 / 3)
    assert sugar.precision == pytest.approx(2 / 3)
    assert sugar.recall == pytest.approx(1.0)
    assert sugar.f1 == pytest.approx(0.8)
    assert (peas.precision, peas.recall, peas.f1) == (0.0, 0.0, 0.0)
    assert report.macro.f1 == pytest.approx((2 / 3 + 0.8 + 0.0) / 3)
    assert report.weighted.f1 == pytest.approx((3 * 2 / 3 + 2 * 0.8) / 6)
    assert report.accuracy == pytest.approx(4 / 6)
    assert report.macro.support == 6


def test_perfect_report():
    labels = np.repeat(np.arange(3), 4)
    report = class_report(labels, labels, CLASSES)
    assert report.macro.f1 == 1.0
    assert report.accuracy == 1.0
    assert np.array_equal(report.confusion, 4 * np.eye(3, dtype=int))


def test_report_documents():
    report = class_report([0, 1, 2], [0, 1, 1], CLASSES)
    document = report.to_dict()
    assert document["schema"] == "class-report"
    assert set(document["classes"]) == set(CLASSES)
    assert document["confusion"] == [[1, 0, 0], [0, 1, 0], [0, 1, 0]]
    text = report.to_text()
    assert "macro avg" in text
    assert "weighted avg" in text
    assert text.splitlines()[0].split() == ["precision", "recall", "f1-score", "support"]


@pytest.mark.parametrize(
    "labels, predicted",
    [
        ([], []),
        ([0, 1], [0]),
        ([0, 3], [0, 1]),
        ([0, -1], [0, 1]),
    ],
)
def test_bad_reports(labels, predicted):
    with pytest.raises(MetricsError):
        class_report(labels, predicted, CLASSES)
