import numpy as np
import pytest
from hypothesis import settings

from asldld.data import PhantomSpec

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    """Coarse 4 mm grid: same anatomy as the default phantom, ~8x fewer voxels."""
    return PhantomSpec(dims=(46, 56, 46), voxel_mm=(4.0, 4.0, 4.0), seed=5)


def direct_conv(x, w, b, pad):
    """Quadruple-loop reference convolution (zero padding, cross-correlation)."""
    n_, c_, h_, w_ = x.shape
    o_, _, k, _ = w.shape
    out = np.zeros((n_, o_, h_, w_))
    for n in range(n_):
        for o in range(o_):
            for i in range(h_):
                for j in range(w_):
                    acc = b[o] if b is not None else 0.0
                    for c in range(c_):
                        for u in range(k):
                            ii = i + u - pad
                            if not 0 <= ii < h_:
                                continue
                            for v in range(k):
                                jj = j + v - pad
                                if 0 <= jj < w_:
                                    acc += x[n, c, ii, jj] * w[o, c, u, v]
                    out[n, o, i, j] = acc
    return out


TINY_CONFIG = """\
# small end-to-end run: coarse grid, narrow network
dims = 32,40,24
voxel_mm = 6,6,6
n_subjects = 5
n_test = 3
n_pairs = 12
slice_first = 6
slice_last = 18
num_layers = 3
filters = 4
bn_layers = 1,2
batch_size = 16
epochs = 2
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return path
