from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecnn import evaluation as ev
from ecnn.data import Dataset
from ecnn.errors import UsageError
from ecnn.netspec import CLASS_NAMES, build_model

TINY = "conv:2x3x3,pool|fc:4|input:8x8"


def test_hand_matrix():
    cm = ev.ConfusionMatrix.from_predictions([0, 0, 1, 2, 2, 2], [0, 1, 1, 2, 2, 0], 3)
    np.testing.assert_array_equal(cm.counts, [[1, 1, 0], [0, 1, 0], [1, 0, 2]])
    assert cm.accuracy_fraction() == Fraction(4, 6)
    assert cm.accuracy() == 4 / 6
    assert cm.most_confused() == (0, 1, 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=200))
def test_trace_equals_accuracy_and_rows_equal_counts(pairs):
    true = np.array([t for t, _ in pairs])
    pred = np.array([p for _, p in pairs])
    cm = ev.ConfusionMatrix.from_predictions(true, pred)
    assert cm.accuracy_fraction() == Fraction(int(np.sum(true == pred)), len(pairs))
    assert cm.accuracy() == np.sum(true == pred) / len(pairs)
    np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(true, minlength=7))
    assert cm.total == len(pairs)


def test_per_class_accuracy():
    cm = ev.ConfusionMatrix.from_predictions([0, 0, 1, 1, 1], [0, 1, 1, 1, 0])
    acc = ev.per_class_accuracy(cm)
    np.testing.assert_allclose(acc[:2], [0.5, 2 / 3])
    assert np.isnan(acc[2:]).all()


def test_csv_round_trip(tmp_path, rng):
    cm = ev.ConfusionMatrix.from_predictions(rng.integers(0, 7, 100), rng.integers(0, 7, 100))
    path = tmp_path / "cm.csv"
    ev.write_confusion_csv(cm, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 8
    assert lines[0] == "true\\pred," + ",".join(CLASS_NAMES)
    back = ev.read_confusion_csv(path)
    np.testing.assert_array_equal(back.counts, cm.counts)
    assert back.class_names == CLASS_NAMES


def test_predict_restores_mode(rng):
    m = build_model(TINY)
    x = rng.standard_normal((5, 1, 8, 8))
    pred = ev.predict(m, x, batch=2)
    assert pred.shape == (5,) and m.mode == "train"
    np.testing.assert_array_equal(pred, m.eval().forward(x)[0].argmax(axis=1))


def test_evaluate_matches_manual(rng):
    m = build_model(TINY, seed=3)
    d = Dataset(rng.standard_normal((30, 1, 8, 8)), rng.integers(0, 7, 30), "val")
    acc, cm = ev.evaluate(m, d)
    pred = m.eval().forward(d.images)[0].argmax(axis=1)
    assert acc == np.mean(pred == d.labels)
    assert cm.total == 30


def test_evaluate_hog_mismatch(rng):
    m = build_model(TINY)
    d = Dataset(rng.standard_normal((2, 1, 8, 8)), [0, 1], "val")
    with pytest.raises(UsageError):
        ev.evaluate(m, d, hog=np.zeros((2, 36)))


def test_export_report(tmp_path, capsys):
    cm = ev.ConfusionMatrix.from_predictions([0, 0, 1, 3, 3, 3], [0, 3, 1, 3, 3, 0])
    paths = ev.export_report(cm.accuracy(), cm, ev.per_class_accuracy(cm), tmp_path / "r.csv")
    assert [p.name for p in paths] == ["r.csv", "r_per_class.csv", "r_summary.txt"]
    per_class = (tmp_path / "r_per_class.csv").read_text().splitlines()
    assert per_class[1] == "Angry,2,1,0.5000"
    assert per_class[3].endswith("undefined")
    out = capsys.readouterr().out
    assert "accuracy 4/6 = 66.7%" in out
    assert "most confused: Angry -> Happy" in out
