import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bpam import BpamEnhancer


@pytest.fixture
def pair(rng):
    x = rng.random((32, 32, 3)).astype(np.float32)
    y = np.clip(x + 0.05, 0, 1).astype(np.float32)
    return x, y


def test_get_params_roundtrip():
    est = BpamEnhancer(grid_ratio=16, iters=7)
    params = est.get_params()
    assert params["grid_ratio"] == 16 and params["iters"] == 7
    est2 = BpamEnhancer(**params)
    assert est2.get_params() == params


def test_clone():
    est = BpamEnhancer(iters=3, seed=9)
    c = clone(est)
    assert c.get_params() == est.get_params()


def test_set_params():
    est = BpamEnhancer()
    est.set_params(depth=4, mode="affine")
    assert est.depth == 4 and est.mode == "affine"


def test_transform_before_fit_raises(rng):
    with pytest.raises(NotFittedError):
        BpamEnhancer().transform(rng.random((16, 16, 3)))


def test_fit_transform_shapes(pair):
    x, y = pair
    est = BpamEnhancer(iters=5, grid_ratio=16)
    out = est.fit(x, y).transform(x)
    assert out.shape == x.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert len(est.loss_trace_) == 5


def test_predict_equals_transform(pair):
    x, y = pair
    est = BpamEnhancer(iters=3, grid_ratio=16).fit(x, y)
    assert np.array_equal(est.predict(x), est.transform(x))


def test_identity_pair_near_lossless(rng):
    x = rng.random((32, 32, 3)).astype(np.float32)
    est = BpamEnhancer(iters=2, grid_ratio=16).fit(x, x)
    assert est.score(x, x) > -1e-6


def test_fit_improves_score(pair):
    x, y = pair
    base = BpamEnhancer(iters=1, grid_ratio=16, lr_max=1e-9, lr_min=1e-10)
    trained = BpamEnhancer(iters=80, grid_ratio=16, lr_max=3e-3, lr_min=1e-4)
    assert trained.fit(x, y).score(x, y) > base.fit(x, y).score(x, y)


def test_deterministic_given_seed(pair):
    x, y = pair
    a = BpamEnhancer(iters=4, grid_ratio=16, seed=5).fit(x, y).transform(x)
    b = BpamEnhancer(iters=4, grid_ratio=16, seed=5).fit(x, y).transform(x)
    assert np.array_equal(a, b)


def test_affine_mode(pair):
    x, y = pair
    est = BpamEnhancer(mode="affine", iters=3, grid_ratio=16).fit(x, y)
    assert len(est.grids_) == 1
    assert est.transform(x).shape == x.shape


def test_bad_input_rejected():
    est = BpamEnhancer(iters=1)
    with pytest.raises(ValueError):
        est.fit(np.zeros((16, 16)), np.zeros((16, 16)))
