import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markovgcn.ingest import EDGE_IIOT_CLASSES, LabelVector
from markovgcn.metrics import (
    confusion_matrix,
    emit_report,
    evaluate,
    format_table,
    load_report,
    precision_recall_f1,
    roc_curve,
    roc_micro,
)

from .oracles import mann_whitney_auc


def test_confusion_examples():
    assert confusion_matrix([0, 1, 1, 2], [0, 1, 1, 2], 3).tolist() == [[1, 0, 0], [0, 2, 0], [0, 0, 1]]
    assert confusion_matrix([0, 1, 2, 2], [0, 0, 0, 0], 3).tolist() == [[1, 0, 0], [1, 0, 0], [2, 0, 0]]
    # six points: one 0->1, one 2->0
    cm = confusion_matrix([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 0, 2], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 2, 0], [1, 0, 1]]


def test_confusion_errors():
    with pytest.raises(ValueError, match="range"):
        confusion_matrix([0, 3], [0, 0], 3)
    with pytest.raises(ValueError, match="length"):
        confusion_matrix([0], [0, 1], 2)


def test_prf_perfect_and_hand_example():
    prf = precision_recall_f1(np.diag([3, 4, 5]))
    assert all(s.precision == s.recall == s.f1 == 1.0 for s in prf.per_class)
    assert prf.macro == prf.weighted == {"precision": 1.0, "recall": 1.0, "f1": 1.0}
    cm = np.array([[1, 1, 0], [0, 2, 0], [1, 0, 1]])
    prf = precision_recall_f1(cm)
    assert [s.precision for s in prf.per_class] == [0.5, 2 / 3, 1.0]
    assert [s.recall for s in prf.per_class] == [0.5, 1.0, 0.5]
    assert prf.per_class[1].f1 == pytest.approx(0.8, abs=1e-15)
    assert [s.support for s in prf.per_class] == [2, 2, 2]


def test_prf_zero_division_flagged():
    cm = np.array([[2, 0], [1, 0]])
    prf = precision_recall_f1(cm, ["a", "b"])
    assert prf.per_class[1].precision == 0.0
    assert "precision[b]" in prf.zero_division
    with pytest.raises(ValueError):
        precision_recall_f1(np.zeros((2, 2), int))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.integers(1, 200))
def test_weighted_recall_equals_accuracy(seed, c, n):
    rng = np.random.default_rng(seed)
    true, pred = rng.integers(0, c, n), rng.integers(0, c, n)
    cm = confusion_matrix(true, pred, c)
    accuracy = float(np.mean(true == pred))
    assert np.trace(cm) / cm.sum() == pytest.approx(accuracy, abs=1e-15)
    assert cm.sum(axis=1).tolist() == np.bincount(true, minlength=c).tolist()
    assert abs(precision_recall_f1(cm).weighted["recall"] - accuracy) <= 1e-12


def test_roc_examples():
    pts, auc = roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert auc == 1.0 and pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    pts, auc = roc_curve([0.5] * 6, [1, 0, 1, 0, 0, 1])
    assert auc == 0.5
    assert pts == [(0.0, 0.0), (1.0, 1.0)]
    # four samples, one inversion: pairs (0.8>0.3) (0.8>0.6) (0.4>0.3) (0.4<0.6) -> 3/4
    scores, positive = [0.8, 0.6, 0.4, 0.3], [1, 0, 1, 0]
    assert roc_curve(scores, positive)[1] == mann_whitney_auc(scores, positive) == 0.75
    with pytest.raises(ValueError):
        roc_curve([0.1, 0.2], [1, 1])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 50), st.sampled_from([2, 5, 1000]))
def test_auc_matches_mann_whitney(seed, n, levels):
    rng = np.random.default_rng(seed)
    positive = rng.random(n) < 0.5
    positive[0], positive[1] = True, False
    # few distinct levels force many ties
    scores = rng.integers(0, levels, n) / levels
    pts, auc = roc_curve(scores, positive)
    assert abs(auc - mann_whitney_auc(scores, positive)) <= 1e-12
    assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    fpr, tpr = np.array(pts).T
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_roc_micro():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3]])
    pts, auc = roc_micro(probs, np.array([0, 1, 0]))
    positive = [True, False, False, True, True, False]
    assert auc == mann_whitney_auc(probs.ravel(), positive) == 1.0
    with pytest.raises(ValueError, match="single class"):
        roc_micro(probs, np.array([0, 0, 0]))


def test_auc_agrees_with_sklearn():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(7)
    probs = rng.dirichlet(np.ones(4), size=60)
    y = rng.integers(0, 4, 60)
    onehot = np.eye(4)[y]
    _, auc = roc_micro(probs, y)
    assert auc == pytest.approx(metrics.roc_auc_score(onehot, probs, average="micro"), abs=1e-12)


def sample_report(n_classes=3, seed=0):
    rng = np.random.default_rng(seed)
    n = 40
    y = rng.integers(0, n_classes, n)
    z = rng.normal(size=(n, n_classes)) + 2.0 * np.eye(n_classes)[y]
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    names = [f"c{k}" for k in range(n_classes)]
    return evaluate(logp, LabelVector(y, names), np.ones(n, bool), config={"seed": 11, "mode": "ssl"})


def test_evaluate_invariants():
    r = sample_report()
    cm = np.array(r.confusion)
    assert r.accuracy == np.trace(cm) / cm.sum()
    assert [s.support for s in r.per_class] == cm.sum(axis=1).tolist()
    assert set(r.roc) == {"c0", "c1", "c2", "micro"}
    for pts in r.roc.values():
        assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
        assert all(0 <= a <= 1 and 0 <= b <= 1 for a, b in pts)
    assert 0 <= r.auc_micro <= 1


def test_evaluate_skips_absent_class_roc():
    y = np.array([0, 0, 1, 1])
    logp = np.log(np.array([[0.7, 0.2, 0.1], [0.5, 0.3, 0.2], [0.1, 0.8, 0.1], [0.3, 0.6, 0.1]]))
    r = evaluate(logp, LabelVector(y, ["a", "b", "c"]), np.ones(4, bool))
    assert r.notes["roc_skipped_classes"] == ["c"]
    assert "c" not in r.roc and "micro" in r.roc


def test_report_roundtrip(tmp_path):
    r = sample_report()
    r.wall_clock_seconds = 1.25
    files = emit_report(r, tmp_path / "report")
    assert load_report(tmp_path / "report") == r
    doc = json.loads(files["json"].read_text())
    assert doc["schema_version"] == 1
    assert doc["config"]["seed"] == 11
    assert "wall_clock_seconds" not in doc
    rows = files["roc"].read_text().splitlines()
    assert rows[0] == "class,fpr,tpr"
    assert rows[1] == "c0,0.0,0.0"
    assert "micro avg" not in files["text"].read_text()
    assert "weighted avg" in files["text"].read_text()


def test_report_rejects_unknown_schema(tmp_path):
    emit_report(sample_report(), tmp_path / "r")
    doc = json.loads((tmp_path / "r.json").read_text())
    doc["schema_version"] = 99
    (tmp_path / "r.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="schema"):
        load_report(tmp_path / "r")


def test_table_lists_all_edge_iiot_classes():
    rng = np.random.default_rng(1)
    n = 150
    y = np.arange(n) % 15
    z = rng.normal(size=(n, 15)) + 3 * np.eye(15)[y]
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    names = sorted(EDGE_IIOT_CLASSES)
    table = format_table(evaluate(logp, LabelVector(y, names), np.ones(n, bool)))
    for name in names:
        assert any(line.startswith(name + " ") for line in table.splitlines())
    assert math.isfinite(float(table.split()[1]))
