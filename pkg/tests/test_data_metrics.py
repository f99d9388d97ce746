import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggrnet.data import Dataset, generate_synthetic, load_dataset, load_manifest, save_dataset
from aggrnet.engine import agt1
from aggrnet.errors import DataError
from aggrnet.metrics import (
    accuracy, auc_macro_ovr, binary_auc, confusion_matrix, evaluate, mae, precision_recall_f1, qwk,
)
from aggrnet.model import ModelConfig, build_model
from aggrnet.train import load_checkpoint, save_checkpoint

from . import oracles


def random_instance(rng):
    k = int(rng.integers(2, 6))
    n = int(rng.integers(2, 51))
    true = rng.integers(0, k, size=n)
    pred = rng.integers(0, k, size=n)
    # coarse scores so ties are common
    scores = rng.integers(0, 4, size=(n, k)) / 4.0
    return k, true, pred, scores


# -- brute-force agreement -----------------------------------------------------

def test_metrics_match_brute_force_on_random_instances():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        k, true, pred, scores = random_instance(rng)
        t, p = true.tolist(), pred.tolist()
        cm = confusion_matrix(true, pred, k)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prf = precision_recall_f1(cm)
            kappa = qwk(true, pred, k)
        ref = oracles.per_class_prf(t, p, k)
        diffs = [
            accuracy(cm) - oracles.accuracy(t, p),
            kappa - oracles.qwk(t, p, k),
            mae(true, pred) - oracles.mae(t, p),
            prf["macro_precision"] - oracles.macro([(r[0], r[3]) for r in ref]),
            prf["macro_recall"] - oracles.macro([(r[1], r[3]) for r in ref]),
            prf["macro_f1"] - oracles.macro([(r[2], r[3]) for r in ref]),
        ]
        diffs += [a - r[0] for a, r in zip(prf["precision"], ref)]
        diffs += [a - r[1] for a, r in zip(prf["recall"], ref)]
        diffs += [a - r[2] for a, r in zip(prf["f1"], ref)]
        if len(set(t)) > 1:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                diffs.append(auc_macro_ovr(scores, true) - oracles.macro_auc(scores.tolist(), t, k))
        worst = max(worst, max(abs(d) for d in diffs))
    assert worst <= 1e-9


def test_qwk_and_auc_agree_with_sklearn():
    from sklearn.metrics import cohen_kappa_score, roc_auc_score

    rng = np.random.default_rng(7)
    for _ in range(50):
        true = rng.integers(0, 4, size=30)
        pred = rng.integers(0, 4, size=30)
        labels = list(range(4))
        assert qwk(true, pred, 4) == pytest.approx(
            cohen_kappa_score(true, pred, labels=labels, weights="quadratic"), abs=1e-9)
        scores = rng.normal(size=30)
        positive = true == 1
        assert binary_auc(scores, positive) == pytest.approx(roc_auc_score(positive, scores), abs=1e-12)


# -- hand cases ----------------------------------------------------------------

def test_perfect_confusion():
    cm = np.diag([3, 4, 5])
    prf = precision_recall_f1(cm)
    assert accuracy(cm) == 1.0
    assert prf["macro_precision"] == prf["macro_recall"] == prf["macro_f1"] == 1.0


def test_two_class_hand_confusion():
    prf = precision_recall_f1(np.array([[5, 5], [0, 10]]))
    assert prf["precision"] == pytest.approx([1.0, 2 / 3], abs=1e-15)
    assert prf["recall"] == pytest.approx([0.5, 1.0], abs=1e-15)
    assert prf["macro_f1"] == pytest.approx(11 / 15, abs=1e-15)


def test_single_present_class_excluded_with_warning():
    cm = confusion_matrix([1, 1, 1], [1, 1, 1], 3)
    assert accuracy(cm) == 1.0
    with pytest.warns(UserWarning):
        prf = precision_recall_f1(cm)
    assert prf["macro_f1"] == 1.0


def test_qwk_cases():
    assert qwk([0, 1, 2, 3], [0, 1, 2, 3], 4) == 1.0
    reversed_qwk = qwk([0, 1, 2, 3], [3, 2, 1, 0], 4)
    assert reversed_qwk == pytest.approx(oracles.qwk([0, 1, 2, 3], [3, 2, 1, 0], 4), abs=1e-12)
    assert reversed_qwk < -0.5
    true = [0, 1, 2, 3] * 3
    assert qwk(true, [1] * 12, 4) == pytest.approx(oracles.qwk(true, [1] * 12, 4), abs=1e-12)
    assert qwk(true, [1] * 12, 4) == pytest.approx(0.0, abs=1e-12)
    with pytest.warns(UserWarning):
        assert qwk([2, 2], [2, 2], 4) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5).flatmap(lambda k: st.tuples(
    st.just(k), st.lists(st.integers(0, k - 1), min_size=2, max_size=40).filter(lambda xs: len(set(xs)) > 1),
    st.lists(st.integers(0, k - 1), min_size=40, max_size=40))))
def test_qwk_properties(case):
    k, true, pred = case
    pred = pred[:len(true)]
    assert qwk(true, true, k) == pytest.approx(1.0, abs=1e-12)
    flipped = qwk([k - 1 - t for t in true], [k - 1 - p for p in pred], k)
    assert flipped == pytest.approx(qwk(true, pred, k), abs=1e-12)


def test_mae_cases():
    assert mae([0, 2, 3], [0, 2, 3]) == 0.0
    assert mae([0, 2, 3], [0, 1, 2]) == 2 / 3
    rng = np.random.default_rng(1)
    t, p = rng.integers(0, 5, 40), rng.integers(0, 5, 40)
    assert mae(t, p) == pytest.approx(oracles.mae(t.tolist(), p.tolist()), abs=1e-15)
    assert mae(t, p) <= 4


def test_auc_cases():
    true = np.array([0, 0, 1, 1, 2, 2])
    assert auc_macro_ovr(np.eye(3)[true], true) == 1.0
    assert auc_macro_ovr(np.zeros((6, 3)), true) == 0.5
    scores = np.array([0.1, 0.4, 0.35, 0.8, 0.4, 0.2])
    positive = np.array([0, 0, 1, 1, 1, 0], dtype=bool)
    assert binary_auc(scores, positive) == pytest.approx(oracles.pair_auc(scores, positive), abs=1e-15)
    with pytest.raises(ValueError):
        auc_macro_ovr(np.zeros((3, 2)), np.array([1, 1, 1]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-40, 40), min_size=4, max_size=30), st.data())
def test_auc_invariant_under_monotone_transform(scores, data):
    positive = data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores)))
    if all(positive) or not any(positive):
        return
    s = np.array(scores, dtype=np.float64)
    assert binary_auc(np.exp(s / 4) * 3 + 1, positive) == binary_auc(s, positive)


def test_macro_f1_permutation_invariant():
    rng = np.random.default_rng(3)
    true, pred = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
    perm = np.array([2, 0, 3, 1])
    a = precision_recall_f1(confusion_matrix(true, pred, 4))
    b = precision_recall_f1(confusion_matrix(perm[true], perm[pred], 4))
    assert a["macro_f1"] == pytest.approx(b["macro_f1"], abs=1e-15)
    np.testing.assert_allclose(np.array(b["f1"])[perm], a["f1"], atol=1e-15)


# -- evaluate ------------------------------------------------------------------

def test_constant_model_scores_chance(tmp_path):
    data = generate_synthetic(4, 5, seed=1)
    model = build_model(ModelConfig.toy())
    model.head.weight.data[:] = 0
    model.head.bias.data[:] = 0
    report = evaluate(model, data)
    assert report.accuracy == pytest.approx(0.25)
    assert np.sum(report.confusion, axis=1).tolist() == [5, 5, 5, 5]
    save_checkpoint(tmp_path / "c.ckpt", model)
    again = evaluate(load_checkpoint(tmp_path / "c.ckpt").build_model(), data)
    assert again.to_dict() == report.to_dict()


def test_evaluate_class_mismatch():
    with pytest.raises(ValueError):
        evaluate(build_model(ModelConfig.toy()), generate_synthetic(3, 2))


# -- synthetic data ------------------------------------------------------------

def test_synthetic_balanced_and_deterministic():
    a = generate_synthetic(4, 6, seed=11)
    b = generate_synthetic(4, 6, seed=11)
    assert a.images.tobytes() == b.images.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    assert np.bincount(a.labels).tolist() == [6] * 4
    assert a.images.min() >= 0 and a.images.max() <= 1


def test_synthetic_linearly_separable():
    data = generate_synthetic(4, 100, height=8, width=8, seed=5)
    x = np.hstack([data.images.reshape(len(data), -1).astype(np.float64), np.ones((len(data), 1))])
    assert x.shape[0] > x.shape[1]  # overdetermined, so a perfect fit is not automatic
    w, *_ = np.linalg.lstsq(x, np.eye(4)[data.labels], rcond=None)
    assert np.mean((x @ w).argmax(axis=1) == data.labels) == 1.0


# -- bundles and manifests -----------------------------------------------------

def test_bundle_round_trip(tmp_path):
    data = generate_synthetic(3, 2, seed=2)
    save_dataset(data, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back.images.tobytes() == data.images.tobytes()
    assert back.labels.tolist() == data.labels.tolist()
    assert back.class_names == data.class_names


def _write_manifest(root, text, n_images=2, shape=(3, 4, 4)):
    root.mkdir(parents=True, exist_ok=True)
    for i in range(n_images):
        agt1.save(root / f"{i}.agt", np.zeros(shape, dtype=np.float32))
    (root / "manifest.csv").write_text(text, encoding="utf-8")
    return root / "manifest.csv"


def test_manifest_comments_and_blank_lines(tmp_path):
    path = _write_manifest(tmp_path, "# header\n0.agt,1\n\n1.agt,2\n")
    ds = load_manifest(path, num_classes=3)
    assert ds.labels.tolist() == [1, 2]


@pytest.mark.parametrize("text,needle", [
    ("# nothing here\n", "no samples"),
    ("0.agt,1\n1.agt,3\n", ":2:"),
    ("0.agt,x\n", "not an integer"),
    ("missing.agt,0\n", "missing image"),
    ("0.agt\n", "expected"),
])
def test_manifest_errors_name_the_row(tmp_path, text, needle):
    path = _write_manifest(tmp_path, text)
    with pytest.raises(DataError, match=needle):
        load_manifest(path, num_classes=3)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 3, 4, 4)), np.array([0, 5]), ["a", "b"])
    with pytest.raises(DataError):
        Dataset(np.full((1, 3, 2, 2), np.nan), np.array([0]), ["a"])
    with pytest.raises(DataError):
        load_dataset("/definitely/not/here")
