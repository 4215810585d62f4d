"""Probe fitting, gradient correctness, evaluation, and PRB1 round-trips."""
import math

import numpy as np
import pytest

from infokit import (
    DimMismatch,
    DistanceVector,
    EmptyTable,
    ProbeConfig,
    class_prototypes,
    evaluate,
    fit_linear_probe,
    fit_nearest_prototype,
    load_probe,
    make_table,
    predict_logits,
    prototype_probabilities,
    save_probe,
)
from infokit.probe import _loss_and_grad

from conftest import random_table


def separable_table(n_classes=2, per_class=30, dim=4, gap=8.0, seed=0):
    rng = np.random.default_rng(seed)
    means = np.zeros((n_classes, dim))
    for c in range(n_classes):
        means[c, c % dim] = gap * (c + 1)
    labels = np.repeat(np.arange(n_classes, dtype=np.int32), per_class)
    feats = (means[labels] + 0.3 * rng.standard_normal((len(labels), dim))).astype(np.float32)
    return make_table(np.arange(len(labels)), labels, feats, n_classes)


# -- nearest prototype ----------------------------------------------------------


def test_nearest_prototype_separable_train_accuracy():
    t = separable_table()
    model = fit_nearest_prototype(t)
    assert evaluate(model, t) == 1.0


def test_nearest_prototype_single_points():
    t = make_table([0, 1], [0, 1], np.array([[0.0, 0.0], [10.0, 0.0]], dtype=np.float32), 2)
    model = fit_nearest_prototype(t)
    assert evaluate(model, t) == 1.0


def test_nearest_prototype_close_to_bayes_on_two_gaussians():
    # two 1-d-ish Gaussians, unit sigma, means 0 and delta: Bayes error = Phi(-delta/2)
    rng = np.random.default_rng(11)
    delta = 2.0
    n = 4000
    labels = np.repeat(np.array([0, 1], dtype=np.int32), n // 2)
    x = rng.standard_normal((n, 1))
    x[labels == 1] += delta
    pad = np.zeros((n, 1))
    train = make_table(np.arange(n), labels, np.hstack([x, pad]).astype(np.float32), 2)
    holdout_x = rng.standard_normal((n, 1))
    holdout_labels = np.repeat(np.array([0, 1], dtype=np.int32), n // 2)
    holdout_x[holdout_labels == 1] += delta
    holdout = make_table(np.arange(n), holdout_labels, np.hstack([holdout_x, pad]).astype(np.float32), 2)
    model = fit_nearest_prototype(train)
    accuracy = evaluate(model, holdout)
    bayes = 1.0 - 0.5 * math.erfc((delta / 2) / math.sqrt(2))
    assert abs(accuracy - bayes) < 0.03


def test_nearest_prototype_logits_match_prototype_probabilities(small_table):
    model = fit_nearest_prototype(small_table)
    logits = predict_logits(model, small_table)
    protos = class_prototypes(small_table)
    for i in range(0, small_table.n_samples, 7):
        d = DistanceVector(values=-logits[i])
        p_ref = prototype_probabilities(d).values
        z = logits[i] - logits[i].max()
        p = np.exp(z) / np.exp(z).sum()
        assert np.allclose(p, p_ref, atol=1e-9)


# -- linear probe ----------------------------------------------------------------


def test_zero_step_keeps_zero_weights():
    t = separable_table()
    model = fit_linear_probe(t, ProbeConfig(step_size=0.0, epochs=1, l2=0.0))
    assert np.all(model.weights == 0.0) and np.all(model.bias == 0.0)
    assert abs(model.loss_history[0] - math.log(t.n_classes)) < 1e-12
    logits = predict_logits(model, t)
    assert np.all(logits == 0.0)


def test_separable_reaches_full_train_accuracy():
    t = separable_table()
    model = fit_linear_probe(t, ProbeConfig(step_size=0.5, epochs=300, l2=0.0))
    assert model.train_accuracy == 1.0


def test_loss_history_non_increasing_at_default_step():
    t = random_table(n_classes=5, per_class=40, dim=8, seed=3)
    model = fit_linear_probe(t, ProbeConfig())
    h = np.array(model.loss_history)
    assert len(h) == model.config.epochs + 1
    assert np.all(np.diff(h) <= 1e-12)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(21)
    n, dim, k = 12, 4, 3
    x = rng.normal(size=(n, dim))
    y = np.zeros((n, k))
    y[np.arange(n), rng.integers(0, k, size=n)] = 1.0
    l2 = 1e-3
    eps = 1e-6
    for trial in range(20):
        w = rng.normal(scale=0.8, size=(k, dim))
        b = rng.normal(scale=0.5, size=k)
        _, gw, gb = _loss_and_grad(w, b, x, y, l2)
        for _ in range(3):  # a few random coordinates per point
            i, j = rng.integers(0, k), rng.integers(0, dim)
            wp, wm = w.copy(), w.copy()
            wp[i, j] += eps
            wm[i, j] -= eps
            lp, _, _ = _loss_and_grad(wp, b, x, y, l2)
            lm, _, _ = _loss_and_grad(wm, b, x, y, l2)
            fd = (lp - lm) / (2 * eps)
            assert abs(fd - gw[i, j]) <= 1e-5 * max(1.0, abs(fd))
        i = rng.integers(0, k)
        bp, bm = b.copy(), b.copy()
        bp[i] += eps
        bm[i] -= eps
        lp, _, _ = _loss_and_grad(w, bp, x, y, l2)
        lm, _, _ = _loss_and_grad(w, bm, x, y, l2)
        fd = (lp - lm) / (2 * eps)
        assert abs(fd - gb[i]) <= 1e-5 * max(1.0, abs(fd))


def test_fit_is_deterministic():
    t = random_table(n_classes=3, per_class=20, dim=6, seed=5)
    a = fit_linear_probe(t, ProbeConfig(epochs=50))
    b = fit_linear_probe(t, ProbeConfig(epochs=50))
    assert a.weights.tobytes() == b.weights.tobytes()
    assert a.bias.tobytes() == b.bias.tobytes()
    assert a.loss_history == b.loss_history


# -- prediction and evaluation -----------------------------------------------------


def test_predict_logits_matches_matmul_oracle(small_table):
    model = fit_linear_probe(small_table, ProbeConfig(epochs=20))
    logits = predict_logits(model, small_table)
    x = small_table.features.astype(np.float64)
    for i in range(0, small_table.n_samples, 5):
        for c in range(small_table.n_classes):
            expected = sum(model.weights[c, j] * x[i, j] for j in range(small_table.dim)) + model.bias[c]
            assert abs(logits[i, c] - expected) < 1e-6


def test_evaluate_constant_predictor():
    t_all_zero = make_table(np.arange(10), np.zeros(10, dtype=np.int32),
                            np.zeros((10, 2), dtype=np.float32), 2)
    model = fit_linear_probe(t_all_zero, ProbeConfig(step_size=0.0, epochs=1))
    # zero weights predict class 0 everywhere (argmax tie -> lowest index)
    assert evaluate(model, t_all_zero) == 1.0
    balanced = make_table(
        np.arange(10), np.tile(np.arange(2, dtype=np.int32), 5),
        np.zeros((10, 2), dtype=np.float32), 2,
    )
    assert evaluate(model, balanced) == 0.5


def test_evaluate_matches_counting_oracle(small_table):
    model = fit_linear_probe(small_table, ProbeConfig(epochs=30))
    logits = predict_logits(model, small_table)
    hits = 0
    for i in range(small_table.n_samples):
        best, best_c = -np.inf, None
        for c in range(small_table.n_classes):
            if logits[i, c] > best:
                best, best_c = logits[i, c], c
        hits += int(best_c == small_table.labels[i])
    assert evaluate(model, small_table) == hits / small_table.n_samples


def test_evaluate_invariant_under_row_permutation(small_table):
    model = fit_linear_probe(small_table, ProbeConfig(epochs=30))
    rng = np.random.default_rng(1)
    perm = rng.permutation(small_table.n_samples)
    shuffled = make_table(
        small_table.sample_ids[perm], small_table.labels[perm],
        small_table.features[perm], small_table.n_classes,
    )
    assert evaluate(model, shuffled) == evaluate(model, small_table)


def test_evaluate_empty_table_rejected(small_table):
    model = fit_nearest_prototype(small_table)
    from infokit import subset
    with pytest.raises(EmptyTable):
        evaluate(model, subset(small_table, []))


def test_predict_dim_mismatch(small_table):
    model = fit_nearest_prototype(small_table)
    other = make_table([0], [0], np.zeros((1, small_table.dim + 1), dtype=np.float32), small_table.n_classes)
    with pytest.raises(DimMismatch):
        predict_logits(model, other)


# -- serialization ------------------------------------------------------------------


def test_probe_roundtrip_linear(tmp_path, small_table):
    model = fit_linear_probe(small_table, ProbeConfig(epochs=25))
    path = tmp_path / "probe.prb1"
    save_probe(model, path)
    back = load_probe(path)
    assert back.kind == "linear"
    assert np.array_equal(back.weights, model.weights)
    assert np.array_equal(back.bias, model.bias)
    assert back.loss_history == model.loss_history
    assert back.config == model.config
    assert evaluate(back, small_table) == evaluate(model, small_table)


def test_probe_roundtrip_nearest(tmp_path, small_table):
    model = fit_nearest_prototype(small_table)
    path = tmp_path / "probe.prb1"
    save_probe(model, path)
    back = load_probe(path)
    assert back.kind == "nearest_prototype"
    assert np.array_equal(back.prototypes.vectors, model.prototypes.vectors)
    assert evaluate(back, small_table) == evaluate(model, small_table)


def test_probe_corruption_rejected(tmp_path, small_table):
    from infokit import ToolkitError
    model = fit_linear_probe(small_table, ProbeConfig(epochs=5))
    path = tmp_path / "probe.prb1"
    save_probe(model, path)
    data = bytearray(path.read_bytes())
    data[70] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ToolkitError):
        load_probe(path)
