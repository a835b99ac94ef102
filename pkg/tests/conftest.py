import time

import numpy as np
import pytest
from scipy import ndimage


def textured(size=96, seed=0, sigma=1.5):
    """Smooth random RGB texture in [0, 1]."""
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.uniform(size=(size, size, 3)), (sigma, sigma, 0))
    img -= img.min()
    return img / img.max()


def shifted_pair(u, v, size=64, seed=0):
    """(src, dst) with dst(x + u, y + v) == src(x, y)."""
    big = textured(size + 32, seed)
    src = big[16:16 + size, 16:16 + size]
    dst = big[16 - v:16 - v + size, 16 - u:16 - u + size]
    return src, dst


@pytest.fixture
def texture():
    return textured


@pytest.fixture
def shift_pair():
    return shifted_pair


# -- shared long-running artifacts (trained once per session) -------------------------

@pytest.fixture(scope="session")
def static_w1_atlas():
    """Atlas trained with the default configuration on the static-scene W=1 fixture."""
    from deflicker.atlas import AtlasConfig, train_atlas
    from deflicker.fixtures import fixtures_root
    from deflicker.media_io import load_frame_sequence
    from deflicker.optical_flow import FlowProvider

    base = fixtures_root() / "flicker" / "static_w1"
    video = load_frame_sequence(base / "input")
    clean = load_frame_sequence(base / "clean")
    t0 = time.perf_counter()
    model = train_atlas(video, FlowProvider(video), AtlasConfig())
    model.trace.header["seconds"] = time.perf_counter() - t0
    return model, video, clean
