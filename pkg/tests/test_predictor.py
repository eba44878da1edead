import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multiplanar import (
    DivergenceError,
    LabelError,
    NoisyOracleConfig,
    PatchSoftmaxModel,
    Slice,
    ViewAxis,
    featurize,
    noisy_oracle_predict,
    oracle_predict,
    predict,
    train,
)
from multiplanar.predictor import softmax, weighted_cross_entropy

Z = ViewAxis.from_normal((0, 0, 1))


def _model(rng, channels=1, classes=3):
    f = 3 * channels
    return PatchSoftmaxModel(rng.normal(size=(f, classes)), rng.normal(size=classes))


# features


def test_constant_image_features():
    f = featurize(np.full((8, 8, 1), 2.5))
    np.testing.assert_allclose(f[..., 0], 2.5)
    np.testing.assert_allclose(f[..., 1], 2.5)
    np.testing.assert_allclose(f[..., 2], 0.0)


def test_ramp_gradient_is_one_inside():
    ramp = np.arange(10, dtype=float)[:, None] * np.ones((1, 10))
    f = featurize(ramp[..., None])
    np.testing.assert_allclose(f[1:-1, :, 2], 1.0)


def test_box_mean_matches_neighbourhood(rng):
    img = rng.normal(size=(9, 9, 2))
    f = featurize(img)
    assert f.shape == (9, 9, 6)
    for a, b in [(1, 1), (4, 5), (7, 7)]:
        np.testing.assert_allclose(f[a, b, 2:4], img[a - 1 : a + 2, b - 1 : b + 2].mean(axis=(0, 1)))


# oracles


def test_oracle_one_hot():
    labels = np.array([[0, 2], [3, 1]])
    p = oracle_predict(labels, 4)
    np.testing.assert_array_equal(p[0, 1], [0, 0, 1, 0])
    np.testing.assert_array_equal(p.sum(-1), 1)
    np.testing.assert_array_equal(p.argmax(-1), labels)


def test_oracle_rejects_out_of_range_label():
    with pytest.raises(LabelError):
        oracle_predict(np.array([[0, 4]]), 4)


def test_noisy_oracle_without_noise_is_oracle():
    labels = np.random.default_rng(0).integers(0, 3, size=(16, 16))
    np.testing.assert_array_equal(
        noisy_oracle_predict(labels, 3, NoisyOracleConfig(0.0, 0.0, 1), 0), oracle_predict(labels, 3)
    )


def test_noisy_oracle_flip_fraction_and_determinism():
    labels = np.random.default_rng(0).integers(0, 3, size=(100, 100))
    cfg = NoisyOracleConfig(0.2, 0.0, 42)
    p = noisy_oracle_predict(labels, 3, cfg, view_index=0)
    flipped = np.mean(p.argmax(-1) != labels)
    assert 0.185 <= flipped <= 0.215
    np.testing.assert_array_equal(p, noisy_oracle_predict(labels, 3, cfg, view_index=0))


def test_noisy_oracle_views_are_uncorrelated():
    labels = np.random.default_rng(1).integers(0, 3, size=(100, 100))
    cfg = NoisyOracleConfig(0.2, 0.0, 42)
    e0 = (noisy_oracle_predict(labels, 3, cfg, 0).argmax(-1) != labels).ravel().astype(float)
    e1 = (noisy_oracle_predict(labels, 3, cfg, 1).argmax(-1) != labels).ravel().astype(float)
    assert abs(np.corrcoef(e0, e1)[0, 1]) <= 0.05


def test_noisy_oracle_blur_stays_normalised():
    labels = np.random.default_rng(2).integers(0, 3, size=(20, 20))
    p = noisy_oracle_predict(labels, 3, NoisyOracleConfig(0.2, 1.5, 0), 0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
    assert p.min() >= 0


# softmax model


def test_zero_weights_predict_uniform():
    p = predict(PatchSoftmaxModel.zeros(1, 4), np.random.default_rng(0).normal(size=(8, 8, 1)))
    np.testing.assert_allclose(p, 0.25)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_sum_to_one(logits):
    p = softmax(logits)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-6)
    assert np.all(p >= 0)


def test_softmax_monotone_in_logit(rng):
    logits = rng.normal(size=4)
    bumped = logits.copy()
    bumped[2] += 0.5
    assert softmax(bumped)[2] > softmax(logits)[2]


def _instance(rng, n_slices=2, q=8, classes=3):
    feats = [featurize(rng.normal(size=(q, q, 1))) for _ in range(n_slices)]
    labels = [rng.integers(0, classes, size=(q, q)) for _ in range(n_slices)]
    return feats, labels


def _numeric_gradient(model, feats, labels, weights, h=1e-5):
    gw = np.zeros_like(model.weights)
    gb = np.zeros_like(model.bias)
    for arr, grad in ((model.weights, gw), (model.bias, gb)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = weighted_cross_entropy(model, feats, labels, weights)[0]
            arr[idx] = old - h
            down = weighted_cross_entropy(model, feats, labels, weights)[0]
            arr[idx] = old
            grad[idx] = (up - down) / (2 * h)
    return gw, gb


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    model = _model(rng)
    feats, labels = _instance(rng)
    weights = [1.0, 1.0 / 3.0]
    _, gw, gb = weighted_cross_entropy(model, feats, labels, weights)
    nw, nb = _numeric_gradient(model, feats, labels, weights)
    analytic = np.concatenate([gw.ravel(), gb.ravel()])
    numeric = np.concatenate([nw.ravel(), nb.ravel()])
    rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    assert rel <= 1e-4


def test_gradient_is_weighted_partial_sum(rng):
    model = _model(rng)
    feats, labels = _instance(rng)
    _, both_w, both_b = weighted_cross_entropy(model, feats, labels, [1.0, 1.0 / 3.0])
    _, first_w, first_b = weighted_cross_entropy(model, feats[:1], labels[:1], [1.0])
    _, second_w, second_b = weighted_cross_entropy(model, feats[1:], labels[1:], [1.0])
    np.testing.assert_allclose(both_w - first_w, second_w / 3.0, atol=1e-12)
    np.testing.assert_allclose(both_b - first_b, second_b / 3.0, atol=1e-12)


def test_zero_weight_slice_contributes_nothing(rng):
    model = _model(rng)
    feats, labels = _instance(rng)
    loss, gw, gb = weighted_cross_entropy(model, feats[:1], labels[:1], [0.0])
    assert loss == 0.0
    assert np.all(gw == 0) and np.all(gb == 0)


def _separable_slices(n=6, q=16, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        labels = (rng.random((q, q)) < 0.4).astype(int)
        image = labels * 2.0 + rng.normal(0, 0.2, size=(q, q))
        out.append(Slice(image[..., None], labels, Z, 0.0))
    return out


@pytest.mark.parametrize("standardize", [False, True])
def test_separable_training_reaches_high_accuracy(standardize):
    slices = _separable_slices()
    model, curve = train(PatchSoftmaxModel.zeros(1, 2), slices, 20, 0.1, np.random.default_rng(0), standardize)
    acc = np.mean([np.mean(predict(model, s.image).argmax(-1) == s.labels) for s in slices])
    assert acc >= 0.95
    half = len(curve) // 2
    assert np.mean(curve[half:]) <= np.mean(curve[:half])


def test_training_is_deterministic():
    slices = _separable_slices()
    a, ca = train(PatchSoftmaxModel.zeros(1, 2), slices, 5, 0.1, np.random.default_rng(3))
    b, cb = train(PatchSoftmaxModel.zeros(1, 2), slices, 5, 0.1, np.random.default_rng(3))
    np.testing.assert_array_equal(a.weights, b.weights)
    assert ca == cb


def test_overflowing_updates_raise_divergence():
    rng = np.random.default_rng(0)
    slices = [
        Slice(rng.normal(0, 1e200, size=(8, 8, 1)), rng.integers(0, 2, size=(8, 8)), Z, 0.0) for _ in range(3)
    ]
    with np.errstate(all="ignore"), pytest.raises(DivergenceError):
        train(PatchSoftmaxModel.zeros(1, 2), slices, 5, 1.0, np.random.default_rng(0))


def test_model_json_round_trip(tmp_path, rng):
    model = _model(rng)
    model.feature_mean = rng.normal(size=3)
    model.feature_scale = rng.uniform(0.5, 2, size=3)
    model.save(tmp_path / "m.json")
    back = PatchSoftmaxModel.load(tmp_path / "m.json")
    img = rng.normal(size=(8, 8, 1))
    np.testing.assert_array_equal(predict(back, img), predict(model, img))


def test_model_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        PatchSoftmaxModel.load(tmp_path / "missing.json")
