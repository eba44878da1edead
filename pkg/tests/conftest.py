import numpy as np
import pytest

from multiplanar import Ellipsoid, PhantomSpec


def rotation_z(deg: float) -> np.ndarray:
    t = np.radians(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def sphere_spec(radius=10.0, shape=(64, 64, 64), spacing=(1.0, 1.0, 1.0), label=1, noise=0.0):
    return PhantomSpec(shape, spacing, (Ellipsoid((0.0, 0.0, 0.0), (radius,) * 3, label, 1.0),), noise, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
