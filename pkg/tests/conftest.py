import numpy as np
import pytest

from signmap.synthetic import SceneSpec, generate_scene


@pytest.fixture(scope="session")
def arc_scene():
    return generate_scene(SceneSpec(shape="arc", seed=3))


@pytest.fixture(scope="session")
def composite_scene():
    return generate_scene(SceneSpec(shape="composite", seed=4))


@pytest.fixture(scope="session")
def straight_scene():
    return generate_scene(SceneSpec(shape="straight", seed=5))


@pytest.fixture(scope="session")
def noisy_scene():
    return generate_scene(SceneSpec(shape="composite", seed=7, pixel_sigma=1.0, gps_sigma=0.1,
                                    depth_sigma=0.02))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
