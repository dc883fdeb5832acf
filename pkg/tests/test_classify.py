import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scisent.classify import (
    centroid_fit,
    centroid_predict,
    classification_eval,
    confusion_matrix,
    f1_micro,
    knn_fit,
    knn_predict,
    knn_predict_many,
    logreg_fit,
    logreg_loss_and_grad,
    per_label_scores,
    sqrt_neighbors,
)

from oracles import central_difference, relative_error


@pytest.mark.parametrize("n, k", [(1, 1), (2, 1), (3, 1), (4, 2), (100, 10), (20_000, 141)])
def test_sqrt_rule(n, k):
    assert sqrt_neighbors(n) == k


def test_knn_fit_sets_k_and_validates():
    assert knn_fit(np.zeros((100, 2)), ["A"] * 100).k == 10
    with pytest.raises(ValueError):
        knn_fit(np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        knn_fit(np.zeros((3, 2)), ["A"] * 3, k=4)


def test_knn_examples():
    m = knn_fit([(0, 0), (10, 10)], ["A", "B"])
    assert knn_predict(m, (1, 1)) == "A"
    assert knn_predict(m, (10, 10)) == "B"
    m = knn_fit([(0, 0), (0, 2), (0, 3)], ["A", "B", "B"], k=3)
    assert knn_predict(m, (0, 1)) == "B"  # A: 1, B: 1 + 1/2


def test_knn_zero_distance_overrides():
    m = knn_fit([(0, 0), (0, 0.001), (0, 0.002), (0, 0.003)], ["A", "B", "B", "B"], k=4)
    assert knn_predict(m, (0, 0)) == "A"


def test_knn_tie_lowest_training_index():
    m = knn_fit([(1, 0), (-1, 0)], ["B", "A"], k=2)
    assert knn_predict(m, (0, 0)) == "B"
    m = knn_fit([(0, 0), (0, 0)], ["B", "A"], k=2)
    assert knn_predict(m, (0, 0)) == "B"


def test_knn_dimension_mismatch():
    with pytest.raises(ValueError):
        knn_predict(knn_fit([(0, 0)], ["A"]), (0, 0, 0))


@given(st.integers(0, 10_000), st.floats(0.1, 100))
@settings(max_examples=40, deadline=None)
def test_knn_translation_and_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 3))
    y = rng.choice(["A", "B", "C"], size=30).tolist()
    q = rng.normal(size=(10, 3))
    shift = rng.normal(size=3) * 10
    base = knn_predict_many(knn_fit(x, y), q)
    assert knn_predict_many(knn_fit(x + shift, y), q + shift) == base
    assert knn_predict_many(knn_fit(x * scale, y), q * scale) == base


def test_knn_uniform_all_neighbours_majority():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(11, 2))
    y = ["A"] * 6 + ["B"] * 5
    m = knn_fit(x, y, weighting="uniform", k=11)
    assert set(knn_predict_many(m, rng.normal(size=(20, 2)) * 5)) == {"A"}


def test_centroid_one_point_per_label_is_1nn():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 2))
    labels = ["A", "B", "C", "D"]
    q = rng.normal(size=(30, 2))
    assert centroid_predict(centroid_fit(x, labels), q) == knn_predict_many(knn_fit(x, labels, k=1), q)


def test_centroid_bisector_and_tie():
    x = [(-2, 1), (-2, -1), (2, 1), (2, -1)]
    m = centroid_fit(x, ["left", "left", "right", "right"])
    assert centroid_predict(m, [(-0.01, 5), (0.01, -5)]) == ["left", "right"]
    assert centroid_predict(m, [(0, 3)]) == ["left"]
    m = centroid_fit([(1, 0), (-1, 0)], ["b", "a"])
    assert centroid_predict(m, [(0, 7)]) == ["a"]


def test_centroid_empty():
    with pytest.raises(ValueError):
        centroid_fit(np.zeros((0, 2)), [])


# ---------------------------------------------------------------------------
# logistic regression

def test_logreg_separable():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(size=(30, 2)) + (3, 3), rng.normal(size=(30, 2)) - (3, 3)])
    y = ["A"] * 30 + ["B"] * 30
    m = logreg_fit(x, y)
    assert m.predict(x) == y


def test_logreg_gradient_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, d, c = int(rng.integers(3, 10)), int(rng.integers(1, 5)), int(rng.integers(2, 5))
        x = rng.normal(size=(n, d))
        onehot = np.eye(c)[rng.integers(0, c, size=n)]
        w, b = rng.normal(size=(d, c)), rng.normal(size=c)
        l2 = float(rng.uniform(0, 0.5))
        _, gw, gb = logreg_loss_and_grad(w, b, x, onehot, l2)
        num_w = central_difference(lambda v: logreg_loss_and_grad(v, b, x, onehot, l2)[0], w)
        num_b = central_difference(lambda v: logreg_loss_and_grad(w, v, x, onehot, l2)[0], b)
        assert relative_error(gw, num_w) <= 1e-4
        assert relative_error(gb, num_b) <= 1e-4


def test_logreg_identical_inputs_uniform():
    m = logreg_fit(np.ones((6, 3)), ["A", "B", "C"] * 2)
    np.testing.assert_allclose(m.predict_proba(np.ones((2, 3))), 1 / 3, atol=1e-12)


def test_logreg_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    m = logreg_fit(rng.normal(size=(40, 4)), rng.choice(["A", "B", "C"], size=40).tolist())
    p = m.predict_proba(rng.normal(size=(100, 4)) * 50)
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-9)


def test_logreg_needs_two_labels():
    with pytest.raises(ValueError):
        logreg_fit(np.zeros((3, 2)), ["A"] * 3)


# ---------------------------------------------------------------------------
# metrics

def test_f1_examples():
    assert f1_micro(list("AABB"), list("AABB")) == 1.0
    assert f1_micro(list("AABB"), list("ABBB")) == 0.75
    with pytest.raises(ValueError):
        f1_micro(["A"], [])


def test_f1_equals_accuracy_and_confusion_consistency():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        t = rng.choice(list("ABCD"), size=n).tolist()
        p = rng.choice(list("ABCDE"), size=n).tolist()
        acc = sum(a == b for a, b in zip(t, p)) / n
        assert abs(f1_micro(t, p) - acc) <= 1e-12
        cm = confusion_matrix(t, p)
        assert cm.counts.sum() == n
        for i, lab in enumerate(cm.labels):
            assert cm.counts[i].sum() == t.count(lab)
        assert np.trace(cm.counts) / n == pytest.approx(f1_micro(t, p), abs=1e-12)


def test_confusion_tsv_and_per_label():
    cm = confusion_matrix(["A", "A", "B"], ["A", "B", "B"])
    assert cm.to_tsv() == "true\\pred\tA\tB\nA\t1\t1\nB\t0\t1\n"
    s = per_label_scores(cm)
    assert s["precision.A"] == 1.0 and s["recall.A"] == 0.5 and s["f1.B"] == pytest.approx(2 / 3)


def test_classification_eval_self():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(size=(20, 3)) + 8 * np.eye(3)[i] for i in range(3)])
    y = np.repeat(["A", "B", "C"], 20).tolist()
    for clf in ("knn", "centroid", "logreg"):
        report = classification_eval(x, y, x, y, classifier=clf)
        assert report.scaled()["f1_micro"] == 100.0
        assert report.extra["classifier"] == clf
    assert classification_eval(x, y, x, y).extra["k"] == 7


def test_classification_eval_errors():
    with pytest.raises(ValueError):
        classification_eval(np.zeros((2, 2)), ["A", "B"], np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        classification_eval(np.zeros((2, 2)), ["A", "B"], np.zeros((1, 2)), ["A"], classifier="svm")


def test_unseen_test_labels_counted_wrong(caplog):
    report = classification_eval([(0, 0), (5, 5)], ["A", "B"], [(0, 0), (5, 5)], ["A", "Z"])
    assert report.metrics["f1_micro"] == 0.5
    assert "absent" in caplog.text
