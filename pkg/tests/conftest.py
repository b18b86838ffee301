import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_grid(rng, gh, gw, depth, npar, image_h, image_w, align=True,
                dtype=np.float32, scale=1.0):
    from bpam.grid import BilateralGrid, GridGeometry
    geom = GridGeometry(gh, gw, depth, image_h, image_w, align_centers=align)
    cells = (scale * rng.standard_normal((gh, gw, depth, npar))).astype(dtype)
    return BilateralGrid(geom, cells)
