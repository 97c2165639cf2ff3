import numpy as np
import pytest

from sectis import nn
from sectis.data import Dataset, make_blobs
from sectis.errors import ArchitectureMismatch, EmptyDataset, EmptyInput, NoSourceSamples, ShapeMismatch
from sectis.nn import Hyperparams, ModelWeights


def two_blob_data(seed=0, n=200):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(-2, 0.5, (n // 2, 3)), rng.normal(2, 0.5, (n // 2, 3))])
    y = np.repeat([0, 1], n // 2)
    return Dataset(x, y, ("a", "b"))


def forward64(w: ModelWeights, x):
    """Plain loop-free float64 forward pass written independently of nn._forward."""
    h = np.asarray(x, dtype=np.float64)
    layers = [(a.astype(np.float64), b.astype(np.float64)) for a, b in w.layers]
    for wm, b in layers[:-1]:
        h = np.where(h @ wm + b > 0, h @ wm + b, 0.0)
    z = h @ layers[-1][0] + layers[-1][1]
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_init_deterministic_and_seed_sensitive():
    a = nn.init_model(1, 8, 4)
    b = nn.init_model(1, 8, 4)
    c = nn.init_model(2, 8, 4)
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes() != c.to_bytes()
    assert a.dims == (8, 64, 32, 4)
    assert all(np.all(bias == 0) for _, bias in a.layers)


def test_zero_input_gives_uniform_softmax():
    w = nn.init_model(3, 8, 4)
    p = nn.predict_proba(w, np.zeros((2, 8)))
    np.testing.assert_allclose(p, 0.25, atol=1e-12)


def test_serialization_roundtrip_and_layout():
    w = nn.init_model(5, 3, 2)
    blob = w.to_bytes()
    back = ModelWeights.from_bytes(blob)
    assert back.to_bytes() == blob
    # header: count, dims; then first weight matrix row-major little-endian f32
    header = np.frombuffer(blob, dtype="<u4", count=5)
    assert header.tolist() == [4, 3, 64, 32, 2]
    first = np.frombuffer(blob, dtype="<f4", count=3 * 64, offset=20).reshape(3, 64)
    np.testing.assert_array_equal(first, w.layers[0][0])


def test_training_reduces_loss():
    data = two_blob_data()
    w = nn.init_model(0, 3, 2)
    before = nn.dataset_loss(w, data)
    after = nn.dataset_loss(nn.train_local(w, data, Hyperparams(local_epochs=5), seed=0), data)
    assert after <= before


def test_zero_lr_is_bit_identical():
    data = two_blob_data()
    w = nn.init_model(0, 3, 2)
    w2 = nn.train_local(w, data, Hyperparams(lr=0.0), seed=0)
    assert w2.to_bytes() == w.to_bytes()


def test_train_local_deterministic_and_pure():
    data = two_blob_data()
    w = nn.init_model(0, 3, 2)
    snapshot = w.to_bytes()
    a = nn.train_local(w, data, Hyperparams(local_epochs=2), seed=9)
    b = nn.train_local(w, data, Hyperparams(local_epochs=2), seed=9)
    assert a.to_bytes() == b.to_bytes()
    assert w.to_bytes() == snapshot


def test_train_local_errors():
    w = nn.init_model(0, 3, 2)
    with pytest.raises(EmptyDataset):
        nn.train_local(w, Dataset(np.zeros((0, 3)), np.zeros(0, int), ("a", "b")), Hyperparams(), 0)
    with pytest.raises(ShapeMismatch):
        nn.train_local(w, Dataset(np.zeros((4, 5)), np.zeros(4, int), ("a", "b")), Hyperparams(), 0)


def finite_difference_check(seed):
    """Max relative gradient error (per parameter array, L2) against central differences."""
    rng = np.random.default_rng(seed)
    w = nn.init_model(seed, 5, 3)
    params = [p.astype(np.float64) for layer in w.layers for p in layer]
    x = rng.normal(size=(4, 5))
    y = rng.integers(0, 3, size=4)
    _, grads = nn.loss_and_grads(params, x, y)
    eps = 1e-6
    worst = 0.0
    for p, g in zip(params, grads):
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            up, _ = nn.loss_and_grads(params, x, y)
            p[idx] = old - eps
            down, _ = nn.loss_and_grads(params, x, y)
            p[idx] = old
            num[idx] = (up - down) / (2 * eps)
        denom = max(np.linalg.norm(g), np.linalg.norm(num), 1e-12)
        worst = max(worst, np.linalg.norm(g - num) / denom)
    return worst


def test_gradient_matches_finite_differences():
    assert finite_difference_check(0) < 1e-3


def test_predict_proba_rows_and_oracle():
    w = nn.init_model(4, 8, 4)
    x = np.random.default_rng(0).normal(size=(50, 8))
    p = nn.predict_proba(w, x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-5)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_array_equal(p.argmax(axis=1), forward64(w, x).argmax(axis=1))
    same = nn.predict_proba(w, np.repeat(x[:1], 3, axis=0))
    assert np.all(same == same[0])
    with pytest.raises(ShapeMismatch):
        nn.predict_proba(w, np.zeros((2, 7)))


def test_fedavg_properties():
    rng = np.random.default_rng(0)
    ws = [nn.init_model(s, 4, 3) for s in range(3)]
    w = ws[0]
    assert nn.fedavg([w, w, w]).to_bytes() == w.to_bytes()
    neg = ModelWeights(tuple((-a, -b) for a, b in w.layers))
    assert np.all(nn.fedavg([w, neg]).flat() == 0)
    avg = nn.fedavg(ws)
    oracle = np.mean([m.flat().astype(np.float64) for m in ws], axis=0)
    np.testing.assert_allclose(avg.flat(), oracle, atol=1e-7)
    for _ in range(5):
        perm = rng.permutation(3)
        assert nn.fedavg([ws[i] for i in perm]).to_bytes() == avg.to_bytes()
    with pytest.raises(EmptyInput):
        nn.fedavg([])
    with pytest.raises(ArchitectureMismatch):
        nn.fedavg([w, nn.init_model(0, 5, 3)])


def brute_force_metrics(y_true, y_pred, n_classes, s, t):
    """Spreadsheet-style counting, no numpy."""
    f1s = []
    for c in range(n_classes):
        tp = sum(1 for a, b in zip(y_true, y_pred) if a == c and b == c)
        fp = sum(1 for a, b in zip(y_true, y_pred) if a != c and b == c)
        fn = sum(1 for a, b in zip(y_true, y_pred) if a == c and b != c)
        if tp + fp + fn == 0:
            continue
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    n_s = sum(1 for a in y_true if a == s)
    ctmr = 100 * sum(1 for a, b in zip(y_true, y_pred) if a == s and b == t) / n_s
    hit = sum(1 for a, b in zip(y_true, y_pred) if a == s and b == s)
    miss = sum(1 for a, b in zip(y_true, y_pred) if a == s and b != s)
    return sum(f1s) / len(f1s), ctmr, 100 * hit / (hit + miss)


def test_metrics_match_brute_force():
    y_true = [0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 3, 3, 3, 3, 3, 3, 1, 0]
    y_pred = [0, 0, 1, 0, 3, 1, 1, 3, 1, 2, 0, 2, 3, 1, 1, 3, 3, 2, 1, 0]
    cm = nn.confusion_matrix(y_true, y_pred, 4)
    m = nn.metrics_from_confusion(cm, 3, 1)
    f1, ctmr, rec = brute_force_metrics(y_true, y_pred, 4, 3, 1)
    assert m.f1_macro == pytest.approx(f1, abs=1e-12)
    assert m.ctmr == pytest.approx(ctmr, abs=1e-12)
    assert m.source_recall == pytest.approx(rec, abs=1e-12)
    assert cm.sum(axis=1).tolist() == [np.sum(np.array(y_true) == c) for c in range(4)]
    # recall plus every transition rate out of the source class is 100
    out_rates = sum(100 * cm[3, c] / cm[3].sum() for c in range(4) if c != 3)
    assert m.source_recall + out_rates == pytest.approx(100, abs=1e-9)


def test_metrics_extremes():
    y = [0, 1, 2, 3, 3, 1]
    m = nn.metrics_from_confusion(nn.confusion_matrix(y, y, 4), 3, 1)
    assert (m.f1_macro, m.ctmr, m.source_recall) == (1.0, 0.0, 100.0)
    pred = [0, 1, 2, 1, 1, 1]
    m = nn.metrics_from_confusion(nn.confusion_matrix(y, pred, 4), 3, 1)
    assert (m.ctmr, m.source_recall) == (100.0, 0.0)
    with pytest.raises(NoSourceSamples):
        nn.metrics_from_confusion(nn.confusion_matrix([0, 1], [0, 1], 4), 3, 1)


def test_evaluate_on_trained_model():
    data = make_blobs(0, total=1000)
    w = nn.train_local(nn.init_model(0, 8, 4), data, Hyperparams(local_epochs=3), 0)
    m = nn.evaluate(w, data, 3, 1)
    assert 0 <= m.f1_macro <= 1 and 0 <= m.ctmr <= 100 and 0 <= m.source_recall <= 100
