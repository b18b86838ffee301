import numpy as np
import pytest

import oracles
from bpam import guidance as gd


def test_init_outputs_half(rng):
    net = gd.init_guidance_net(3, 4, rng=0)
    out = gd.guidance_forward(net, rng.random((6, 6, 3)).astype(np.float32))
    assert np.allclose(out, 0.5, atol=1e-7)


def test_forward_matches_scalar_oracle(rng):
    net = gd.init_guidance_net(3, 4, rng=1)
    net.w2 = (0.5 * rng.standard_normal(net.w2.shape)).astype(np.float32)
    net.b2 = (0.2 * rng.standard_normal(net.b2.shape)).astype(np.float32)
    inp = rng.random((7, 5, 3)).astype(np.float32)
    out = gd.guidance_forward(net, inp)
    ref = oracles.pointwise_net_oracle(inp.astype(np.float64),
                                       net.w1.astype(np.float64), net.b1,
                                       net.w2.astype(np.float64), net.b2)
    assert np.abs(out - ref).max() < 1e-6


def test_fast_and_cached_paths_agree(rng):
    net = gd.init_guidance_net(8, 9, rng=2)
    net.w2 = (0.3 * rng.standard_normal(net.w2.shape)).astype(np.float32)
    inp = rng.random((10, 10, 8)).astype(np.float32)
    fast = gd.guidance_forward(net, inp)
    cached, _ = gd.guidance_forward_cached(net, inp)
    assert np.abs(fast - cached).max() < 1e-6


def test_output_range(rng):
    net = gd.init_guidance_net(3, 1, rng=3)
    net.w2 = (10.0 * rng.standard_normal(net.w2.shape)).astype(np.float32)
    net.b2 = (10.0 * rng.standard_normal(net.b2.shape)).astype(np.float32)
    out = gd.guidance_forward(net, rng.random((8, 8, 3)).astype(np.float32))
    assert out.min() > 0.0 and out.max() < 1.0


def test_backward_matches_finite_differences(rng):
    net = gd.init_guidance_net(3, 2, hidden=4, rng=4).astype(np.float64)
    net.w2 = 0.5 * rng.standard_normal(net.w2.shape)
    net.b1 = 0.1 * rng.standard_normal(net.b1.shape)
    inp = 0.1 + 0.8 * rng.random((4, 4, 3))
    up = rng.standard_normal((4, 4, 2))
    _, cache = gd.guidance_forward_cached(net, inp)
    grads, grad_inp = gd.guidance_backward(net, cache, up)
    h = 1e-6

    def loss():
        return float((gd.guidance_forward_cached(net, inp)[0] * up).sum())

    for name in ("w1", "b1", "w2", "b2"):
        arr = getattr(net, name)
        flat = arr.reshape(-1)
        ana = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss()
            flat[i] = orig - h
            lm = loss()
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            assert abs(ana[i] - num) / max(abs(num), 1e-6) < 1e-4, name

    for idx in [(0, 0, 0), (2, 3, 1), (3, 1, 2)]:
        orig = inp[idx]
        inp[idx] = orig + h
        lp = loss()
        inp[idx] = orig - h
        lm = loss()
        inp[idx] = orig
        num = (lp - lm) / (2 * h)
        assert abs(grad_inp[idx] - num) / max(abs(num), 1e-6) < 1e-4


def test_channel_mismatch(rng):
    net = gd.init_guidance_net(3, 4, rng=5)
    with pytest.raises(ValueError):
        gd.guidance_forward(net, rng.random((4, 4, 8)).astype(np.float32))
    with pytest.raises(ValueError):
        gd.guidance_forward_cached(net, rng.random((4, 4, 8)))


def test_params_naming():
    net = gd.init_guidance_net(3, 4, rng=6)
    assert set(net.params("gnet1")) == {"gnet1.w1", "gnet1.b1",
                                        "gnet1.w2", "gnet1.b2"}
