import numpy as np
import pytest

from multiplanar import AugmentPolicy, DisplacementField, Slice, ViewAxis, elastic_deform, make_displacement_field, maybe_augment
from multiplanar.augment import augment_slices, slice_rng
from multiplanar.errors import DataError

Z = ViewAxis.from_normal((0, 0, 1))


def _slice(q=32, seed=0, labels=True):
    rng = np.random.default_rng(seed)
    image = rng.normal(size=(q, q, 1))
    lab = rng.integers(0, 3, size=(q, q)) if labels else None
    return Slice(image, lab, Z, 0.5, 1.0, -2.0)


def test_zero_alpha_gives_zero_field():
    f = make_displacement_field(32, 25.0, 0.0, np.random.default_rng(0))
    assert np.all(f.dx == 0) and np.all(f.dy == 0)


def test_zero_field_is_bit_identical():
    s = _slice()
    f = make_displacement_field(32, 25.0, 0.0, np.random.default_rng(0))
    out = elastic_deform(s, f)
    np.testing.assert_array_equal(out.image, s.image)
    np.testing.assert_array_equal(out.labels, s.labels)
    assert out.view is s.view and out.offset_mm == s.offset_mm


def test_large_sigma_field_is_nearly_constant():
    # measured at seed 0: spread / alpha is about 1e-4 for dx and dy
    f = make_displacement_field(32, 64.0, 300.0, np.random.default_rng(0))
    assert np.ptp(f.dx) < 0.05 * 300.0
    assert np.ptp(f.dy) < 0.05 * 300.0


def test_field_peak_equals_alpha():
    f = make_displacement_field(40, 5.0, 123.0, np.random.default_rng(2))
    assert np.abs(f.dx).max() == pytest.approx(123.0)
    assert np.abs(f.dy).max() == pytest.approx(123.0)


def test_field_is_reproducible():
    a = make_displacement_field(32, 25.0, 300.0, np.random.default_rng(5))
    b = make_displacement_field(32, 25.0, 300.0, np.random.default_rng(5))
    np.testing.assert_array_equal(a.dx, b.dx)
    np.testing.assert_array_equal(a.dy, b.dy)


def test_constant_shift_on_ramp():
    q = 16
    a = np.arange(q, dtype=float)[:, None] * np.ones((1, q))
    s = Slice(a[..., None], None, Z, 0.0, 1.0, -1.0)
    field = DisplacementField(np.ones((q, q)), np.zeros((q, q)), 1.0, 1.0)
    out = elastic_deform(s, field).image[..., 0]
    np.testing.assert_allclose(out[: q - 1], a[: q - 1] + 1.0, atol=1e-12)
    assert np.all(out[q - 1] == -1.0)  # read past the edge


def test_warped_labels_stay_in_input_set():
    s = _slice(labels=True)
    for seed in range(5):
        f = make_displacement_field(32, 4.0, 10.0, np.random.default_rng(seed))
        out = elastic_deform(s, f)
        assert set(np.unique(out.labels)) <= set(np.unique(s.labels)) | {0}


def test_field_shape_mismatch():
    with pytest.raises(DataError):
        elastic_deform(_slice(q=32), make_displacement_field(16, 4.0, 1.0, np.random.default_rng(0)))


def test_probability_zero_and_one():
    s = _slice()
    never = maybe_augment(s, AugmentPolicy(probability=0.0), np.random.default_rng(0))
    assert never.loss_weight == 1.0
    np.testing.assert_array_equal(never.image, s.image)
    always = maybe_augment(s, AugmentPolicy(probability=1.0), np.random.default_rng(0))
    assert always.loss_weight == 1.0 / 3.0
    assert not np.array_equal(always.image, s.image)


def test_augmented_fraction_matches_probability():
    policy = AugmentPolicy()
    s = _slice(q=8, labels=False)
    n = 10_000
    weights = [maybe_augment(s, policy, slice_rng(7, i)).loss_weight for i in range(n)]
    frac = sum(w != 1.0 for w in weights) / n
    assert 0.31 <= frac <= 0.36
    assert {w for w in weights} == {1.0, 1.0 / 3.0}


def test_augment_slices_is_order_independent():
    slices = [_slice(q=16, seed=i) for i in range(6)]
    policy = AugmentPolicy(probability=0.5, seed=3)
    a = augment_slices(slices, policy, stream=1)
    b = augment_slices(slices, policy, stream=1)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.image, y.image)


def test_policy_defaults_and_violations():
    p = AugmentPolicy()
    assert p.probability == 1.0 / 3.0
    assert p.sigma_range == (20.0, 30.0)
    assert p.alpha_range == (100.0, 500.0)
    assert p.augmented_loss_weight == 1.0 / 3.0
    assert AugmentPolicy.from_dict(p.to_dict()) == p
    messages = AugmentPolicy(probability=1.5, sigma_range=(5.0, 1.0)).violations()
    assert any("probability" in m for m in messages)
    assert any("sigma_range" in m for m in messages)
