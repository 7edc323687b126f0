import numpy as np
import pytest

from scribbleguide import (
    GuidanceConfig,
    WorldSpec,
    build_world,
    make_schedule,
)


@pytest.fixture(scope="session")
def tiny_world():
    """Three templates on a 16x16 canvas; cheap enough for chained FD checks."""
    spec = WorldSpec(
        resolution=16,
        classes=("dog",),
        orientations_deg=(0.0, 60.0, 120.0),
        centers=((8.0, 8.0),),
        axes=(3.0, 1.2),
    )
    return build_world(spec)


@pytest.fixture(scope="session")
def two_center_world():
    spec = WorldSpec(
        resolution=16,
        classes=("dog",),
        orientations_deg=(0.0, 90.0),
        centers=((5.0, 5.0), (11.0, 11.0)),
        axes=(3.0, 1.2),
    )
    return build_world(spec)


@pytest.fixture(scope="session")
def default_world():
    from scribbleguide import default_world_spec

    return build_world(default_world_spec())


@pytest.fixture(scope="session")
def schedule50():
    return make_schedule(1000, 1e-4, 0.02, 50)


@pytest.fixture(scope="session")
def schedule10():
    return make_schedule(1000, 1e-4, 0.02, 10)


@pytest.fixture
def quick_cfg():
    """Guidance config sized for 16x16 worlds."""
    return GuidanceConfig(agg_resolutions=(4, 8, 16), anchor_factor=2, k1=2, k2=4)


def finite_difference(fn, x, step=1e-4):
    """Central finite differences of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = fn(x)
        x[idx] = orig - step
        lo = fn(x)
        x[idx] = orig
        out[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    return out


def max_rel_error(analytic, numeric):
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale
