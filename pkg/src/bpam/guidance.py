"""Pointwise guidance networks emitting multi-channel maps in (0, 1).

A guidance net is a per-pixel 2-layer net C -> hidden -> K with ReLU then
sigmoid. Stage 1 reads the input image (C=3), stage 2 reads the hidden MLP
activations (C=8). K is the number of subgrids it steers (4/9 decomposed,
1 monolithic, 3 for decomposed affine).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass
class GuidanceNet:
    w1: np.ndarray  # (hidden, in_channels)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (out_channels, hidden)
    b2: np.ndarray  # (out_channels,)

    @property
    def in_channels(self):
        return self.w1.shape[1]

    @property
    def out_channels(self):
        return self.w2.shape[0]

    def params(self, prefix):
        return {f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
                f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2}

    def astype(self, dtype):
        return GuidanceNet(*(a.astype(dtype) for a in
                             (self.w1, self.b1, self.w2, self.b2)))


def init_guidance_net(in_channels, out_channels, hidden=16, rng=None,
                      dtype=np.float32):
    """Small random first layer, zero second layer: initial output is
    uniformly 0.5 (grid mid-depth) regardless of input."""
    rng = np.random.default_rng(rng)
    w1 = (0.1 * rng.standard_normal((hidden, in_channels))).astype(dtype)
    return GuidanceNet(
        w1=w1,
        b1=np.zeros(hidden, dtype=dtype),
        w2=np.zeros((out_channels, hidden), dtype=dtype),
        b2=np.zeros(out_channels, dtype=dtype),
    )


def guidance_forward(net, inp):
    """Fast per-pixel forward; returns an (H, W, K) map in (0, 1)."""
    inp = np.asarray(inp)
    if inp.shape[2] != net.in_channels:
        raise ValueError(
            f"guidance input has {inp.shape[2]} channels, net expects {net.in_channels}")
    dt = inp.dtype
    out = np.empty(inp.shape[:2] + (net.out_channels,), dtype=dt)
    kernels.pointwise_net_kernel(
        inp, net.w1.astype(dt, copy=False), net.b1.astype(dt, copy=False),
        net.w2.astype(dt, copy=False), net.b2.astype(dt, copy=False), out)
    return out


def guidance_forward_cached(net, inp):
    """Vectorized forward that also returns the cache needed for backward."""
    inp = np.asarray(inp)
    if inp.shape[2] != net.in_channels:
        raise ValueError(
            f"guidance input has {inp.shape[2]} channels, net expects {net.in_channels}")
    a1 = inp @ net.w1.T + net.b1
    hid = np.maximum(a1, 0.0)
    s = hid @ net.w2.T + net.b2
    g = _sigmoid(s)
    return g, (inp, a1, hid, g)


def guidance_backward(net, cache, upstream):
    """Reverse-mode through sigmoid/linear/ReLU/linear.

    Returns (param grads dict keyed w1/b1/w2/b2, grad_input).
    """
    inp, a1, hid, g = cache
    upstream = np.asarray(upstream)
    if upstream.shape != g.shape:
        raise ValueError(f"upstream shape {upstream.shape} != {g.shape}")
    ds = upstream * g * (1.0 - g)
    grad_w2 = np.einsum("hwk,hwj->kj", ds, hid)
    grad_b2 = ds.sum(axis=(0, 1))
    da1 = (ds @ net.w2) * (a1 > 0)
    grad_w1 = np.einsum("hwj,hwc->jc", da1, inp)
    grad_b1 = da1.sum(axis=(0, 1))
    grad_input = da1 @ net.w1
    grads = {"w1": grad_w1, "b1": grad_b1, "w2": grad_w2, "b2": grad_b2}
    return grads, grad_input


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out
