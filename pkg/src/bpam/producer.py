"""Sources of bilateral grids: identity construction and a small trainable
convolutional producer.

The producer is a plain conv stack (default two 3x3 stride-2 ReLU layers,
width 16) followed by pixel-unshuffle(4) and two pointwise heads emitting
depth*32 and depth*27 channels, which unroll into the stage-1/stage-2
grids. Head weights start at zero with biases encoding the identity MLP,
so an untrained producer yields the identity enhancement.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import transform
from .grid import BilateralGrid, unroll_backward, unroll_grid
from .imaging import pixel_shuffle, pixel_unshuffle

UNSHUFFLE_FACTOR = 4


def identity_stage1_params(dtype=np.float64):
    """32-slot vector: W1 = identity over zeros, b1 = 0."""
    w1 = np.zeros((transform.HIDDEN, 3))
    w1[:3, :3] = np.eye(3)
    return transform.pack_stage1(w1, np.zeros(transform.HIDDEN)).astype(dtype)


def identity_stage2_params(dtype=np.float64):
    """27-slot vector: W2 = [I3 | 0], b2 = 0."""
    w2 = np.zeros((3, transform.HIDDEN))
    w2[:3, :3] = np.eye(3)
    return transform.pack_stage2(w2, np.zeros(3)).astype(dtype)


def identity_affine_params(dtype=np.float64):
    """12-slot vector: alpha = I3, beta = 0."""
    return transform.pack_affine(np.eye(3), np.zeros(3)).astype(dtype)


def init_identity_grids(geom, dtype=np.float32):
    """Constant grids whose sliced MLP is the identity map everywhere."""
    shape = (geom.grid_h, geom.grid_w, geom.depth)
    g1 = np.broadcast_to(identity_stage1_params(dtype), shape + (32,)).copy()
    g2 = np.broadcast_to(identity_stage2_params(dtype), shape + (27,)).copy()
    return BilateralGrid(geom, g1), BilateralGrid(geom, g2)


def init_identity_affine_grid(geom, dtype=np.float32):
    shape = (geom.grid_h, geom.grid_w, geom.depth)
    cells = np.broadcast_to(identity_affine_params(dtype), shape + (12,)).copy()
    return BilateralGrid(geom, cells)


@dataclass
class ProducerNet:
    conv_w: list  # each (Cout, 3, 3, Cin)
    conv_b: list
    head1_w: np.ndarray  # (depth*32, Cfeat)
    head1_b: np.ndarray
    head2_w: np.ndarray  # (depth*27, Cfeat)
    head2_b: np.ndarray
    depth: int

    def params(self, prefix="producer"):
        out = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out[f"{prefix}.conv{i}.w"] = w
            out[f"{prefix}.conv{i}.b"] = b
        out[f"{prefix}.head1.w"] = self.head1_w
        out[f"{prefix}.head1.b"] = self.head1_b
        out[f"{prefix}.head2.w"] = self.head2_w
        out[f"{prefix}.head2.b"] = self.head2_b
        return out

    def astype(self, dtype):
        return ProducerNet(
            [w.astype(dtype) for w in self.conv_w],
            [b.astype(dtype) for b in self.conv_b],
            self.head1_w.astype(dtype), self.head1_b.astype(dtype),
            self.head2_w.astype(dtype), self.head2_b.astype(dtype),
            self.depth)


def init_producer_net(depth, in_channels=3, width=16, n_convs=2, rng=None,
                      dtype=np.float32):
    rng = np.random.default_rng(rng)
    conv_w, conv_b = [], []
    cin = in_channels
    for _ in range(n_convs):
        fan_in = 9 * cin
        conv_w.append((rng.standard_normal((width, 3, 3, cin))
                       * np.sqrt(2.0 / fan_in)).astype(dtype))
        conv_b.append(np.zeros(width, dtype=dtype))
        cin = width
    cfeat = cin * UNSHUFFLE_FACTOR ** 2
    # Identity head biases: bias[depth*p + z] = identity parameter p.
    h1b = np.repeat(identity_stage1_params(dtype), depth)
    h2b = np.repeat(identity_stage2_params(dtype), depth)
    return ProducerNet(
        conv_w, conv_b,
        head1_w=np.zeros((depth * 32, cfeat), dtype=dtype), head1_b=h1b,
        head2_w=np.zeros((depth * 27, cfeat), dtype=dtype), head2_b=h2b,
        depth=depth)


def conv2d_forward(x, w, b, stride=2):
    """3x3 zero-padded strided convolution on an (H, W, Cin) map."""
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(0, 1))[::stride, ::stride]
    return np.einsum("hwcij,kijc->hwk", win, w) + b


def conv2d_backward(x, w, grad_out, stride=2):
    """Gradients (grad_x, grad_w, grad_b) of conv2d_forward."""
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(0, 1))[::stride, ::stride]
    grad_w = np.einsum("hwcij,hwk->kijc", win, grad_out)
    grad_b = grad_out.sum(axis=(0, 1))
    grad_xp = np.zeros_like(xp)
    ho, wo = grad_out.shape[:2]
    for i in range(3):
        for j in range(3):
            grad_xp[i:i + ho * stride:stride, j:j + wo * stride:stride] += \
                np.einsum("hwk,kc->hwc", grad_out, w[:, i, j, :])
    return grad_xp[1:-1, 1:-1], grad_w, grad_b


def _forward_trace(net, lowres, geom):
    """Run the producer, keeping pre-activations for backward."""
    x = np.asarray(lowres)
    pre_acts, inputs = [], []
    for w, b in zip(net.conv_w, net.conv_b):
        inputs.append(x)
        a = conv2d_forward(x, w, b)
        pre_acts.append(a)
        x = np.maximum(a, 0.0)
    feat = pixel_unshuffle(x, UNSHUFFLE_FACTOR)
    if feat.shape[:2] != (geom.grid_h, geom.grid_w):
        raise ValueError(
            f"producer output {feat.shape[:2]} does not match grid dims "
            f"({geom.grid_h}, {geom.grid_w}); lowres was {np.asarray(lowres).shape[:2]}")
    h1 = feat @ net.head1_w.T + net.head1_b
    h2 = feat @ net.head2_w.T + net.head2_b
    return inputs, pre_acts, feat, h1, h2


def produce_grids(net, lowres, geom):
    """Producer forward: lowres image -> (stage-1 grid, stage-2 grid)."""
    _, _, _, h1, h2 = _forward_trace(net, lowres, geom)
    return (unroll_grid(h1, net.depth, 32, geom),
            unroll_grid(h2, net.depth, 27, geom))


def producer_backward(net, lowres, geom, grad_grid1, grad_grid2):
    """Reverse-mode through unroll, heads, unshuffle, and the conv stack.

    grad_grid1/grad_grid2 are cell-gradient arrays matching the two grids.
    Returns a flat dict keyed like net.params().
    """
    inputs, pre_acts, feat, _, _ = _forward_trace(net, lowres, geom)
    gh1 = unroll_backward(np.asarray(grad_grid1), net.depth, 32)
    gh2 = unroll_backward(np.asarray(grad_grid2), net.depth, 27)
    grads = {
        "producer.head1.w": np.einsum("hwk,hwc->kc", gh1, feat),
        "producer.head1.b": gh1.sum(axis=(0, 1)),
        "producer.head2.w": np.einsum("hwk,hwc->kc", gh2, feat),
        "producer.head2.b": gh2.sum(axis=(0, 1)),
    }
    grad_feat = gh1 @ net.head1_w + gh2 @ net.head2_w
    grad_x = pixel_shuffle(grad_feat, UNSHUFFLE_FACTOR)
    for i in reversed(range(len(net.conv_w))):
        grad_a = grad_x * (pre_acts[i] > 0)
        grad_x, gw, gb = conv2d_backward(inputs[i], net.conv_w[i], grad_a)
        grads[f"producer.conv{i}.w"] = gw
        grads[f"producer.conv{i}.b"] = gb
    return grads
