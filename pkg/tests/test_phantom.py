import json
import math
import warnings

import numpy as np
import pytest

from multiplanar import Ellipsoid, PhantomSpec, analytic_label_at, default_phantom_spec, make_phantom
from multiplanar.phantom import PhantomWarning, voxel_centers_mm

from conftest import sphere_spec


def test_sphere_voxel_count_matches_analytic_volume():
    _, labels = make_phantom(sphere_spec(10.0))
    analytic = 4.0 / 3.0 * math.pi * 10.0**3  # 4188.8 mm^3 at 1 mm^3 per voxel
    assert abs(np.sum(labels.labels == 1) - analytic) / analytic <= 0.02


def test_noise_free_intensity_equals_class_mean():
    spec = default_phantom_spec(shape=(32, 32, 32), noise_sigma=0.0)
    vol, lm = make_phantom(spec)
    for body in spec.bodies:
        assert np.all(vol.data[..., 0][lm.labels == body.label] == body.intensity)
    assert np.all(vol.data[..., 0][lm.labels == 0] == 0.0)


def test_inner_body_overwrites_outer():
    spec = default_phantom_spec(shape=(32, 32, 32))
    outer, inner = spec.bodies
    assert analytic_label_at(spec, inner.center) == 2
    _, lm = make_phantom(spec)
    pts = voxel_centers_mm(spec)
    both = outer.contains(pts) & inner.contains(pts)
    assert both.any() and np.all(lm.labels[both] == 2)


def test_analytic_label_rules():
    spec = sphere_spec(10.0)
    assert analytic_label_at(spec, (0, 0, 0)) == 1
    assert analytic_label_at(spec, (100, 0, 0)) == 0
    assert analytic_label_at(spec, (10.0, 0, 0)) == 1  # on the surface counts as inside


def test_analytic_labels_equal_voxel_grid():
    spec = default_phantom_spec(shape=(30, 34, 26), spacing=(1.0, 0.8, 1.3))
    _, lm = make_phantom(spec)
    np.testing.assert_array_equal(analytic_label_at(spec, voxel_centers_mm(spec)), lm.labels)


def test_grid_is_centred_on_origin():
    spec = default_phantom_spec(shape=(10, 12, 14), spacing=(2.0, 1.0, 0.5))
    pts = voxel_centers_mm(spec)
    np.testing.assert_allclose(pts.reshape(-1, 3).mean(axis=0), 0.0, atol=1e-12)


def test_seeded_noise_is_deterministic():
    spec = default_phantom_spec(shape=(16, 16, 16))
    a, _ = make_phantom(spec)
    b, _ = make_phantom(spec)
    c, _ = make_phantom(spec.with_seed(1))
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_body_outside_volume_warns():
    spec = PhantomSpec((16, 16, 16), (1.0, 1.0, 1.0), (Ellipsoid((0, 0, 0), (20, 3, 3), 1, 1.0),))
    with pytest.warns(PhantomWarning):
        make_phantom(spec)


def test_default_phantom_fits_without_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        make_phantom(default_phantom_spec())


def test_spec_json_round_trip(tmp_path):
    spec = default_phantom_spec(shape=(20, 20, 20), seed=3)
    (tmp_path / "s.json").write_text(json.dumps(spec.to_dict()))
    assert PhantomSpec.load(tmp_path / "s.json") == spec


def test_background_label_is_rejected():
    with pytest.raises(Exception):
        PhantomSpec(bodies=(Ellipsoid((0, 0, 0), (1, 1, 1), 0, 1.0),))
