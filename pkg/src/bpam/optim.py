"""Losses (MSE + SSIM), Adam with cosine annealing, gradient checking, and
the toy trainer.

The SSIM term uses the standard 11x11 Gaussian window (sigma 1.5,
C1=0.01^2, C2=0.03^2 on unit range), computed per channel over windows
that fit entirely inside the image, with a hand-derived analytic gradient.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from . import grid as bg
from . import guidance as gd
from . import producer as pr
from . import transform
from .imaging import downsample

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class ConfigurationError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class LossWeights:
    w_mse: float = 1.0
    w_ssim: float = 0.5
    w_per: float = 0.0  # needs an external perceptual hook; none shipped

    def __post_init__(self):
        if min(self.w_mse, self.w_ssim, self.w_per) < 0:
            raise ValueError(f"loss weights must be non-negative: {self}")


def mse_loss(out, target):
    """Mean squared error and its gradient w.r.t. out."""
    out = np.asarray(out)
    target = np.asarray(target)
    if out.shape != target.shape:
        raise ValueError(f"shape mismatch {out.shape} vs {target.shape}")
    diff = out.astype(np.float64) - target
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(out.dtype)


def _gauss_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filt_valid(x, win):
    """Separable correlation keeping only fully-covered windows."""
    r = len(win) // 2
    y = correlate1d(x, win, axis=0, mode="constant")
    y = correlate1d(y, win, axis=1, mode="constant")
    return y[r:-r, r:-r]


def _filt_adjoint(g, win, shape):
    """Adjoint of _filt_valid: zero-embed then correlate (window is symmetric)."""
    r = len(win) // 2
    out = np.zeros(shape, dtype=g.dtype)
    out[r:-r, r:-r] = g
    out = correlate1d(out, win, axis=0, mode="constant")
    return correlate1d(out, win, axis=1, mode="constant")


def ssim_map(a, b):
    """Per-channel SSIM over valid windows; returns (Hv, Wv, C) map."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WIN:
        raise ValueError(f"image {a.shape[:2]} smaller than SSIM window {SSIM_WIN}")
    win = _gauss_window()
    maps = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mx, my = _filt_valid(x, win), _filt_valid(y, win)
        sxx = _filt_valid(x * x, win) - mx * mx
        syy = _filt_valid(y * y, win) - my * my
        sxy = _filt_valid(x * y, win) - mx * my
        s = (((2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2))
             / ((mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)))
        maps.append(s)
    return np.stack(maps, axis=-1)


def ssim_loss(out, target):
    """1 - mean SSIM, with analytic gradient w.r.t. out."""
    out = np.asarray(out)
    target = np.asarray(target)
    if out.shape != target.shape:
        raise ValueError(f"shape mismatch {out.shape} vs {target.shape}")
    if min(out.shape[0], out.shape[1]) < SSIM_WIN:
        raise ValueError(f"image {out.shape[:2]} smaller than SSIM window {SSIM_WIN}")
    win = _gauss_window()
    a = out.astype(np.float64)
    b = target.astype(np.float64)
    nchan = a.shape[2]
    grad = np.empty_like(a)
    total = 0.0
    for c in range(nchan):
        x, y = a[:, :, c], b[:, :, c]
        mx, my = _filt_valid(x, win), _filt_valid(y, win)
        wxx = _filt_valid(x * x, win)
        wyy = _filt_valid(y * y, win)
        wxy = _filt_valid(x * y, win)
        a1 = 2 * mx * my + SSIM_C1
        a2 = 2 * (wxy - mx * my) + SSIM_C2
        b1 = mx * mx + my * my + SSIM_C1
        b2 = (wxx - mx * mx) + (wyy - my * my) + SSIM_C2
        bb = b1 * b2
        s = a1 * a2 / bb
        total += s.mean()
        # Partials of S w.r.t. the filtered statistics.
        d_mu = 2 * my * (a2 - a1) / bb - 2 * mx * s * (b2 - b1) / bb
        d_wxx = -s / b2
        d_wxy = 2 * a1 / bb
        coeff = -1.0 / (nchan * s.size)
        grad[:, :, c] = coeff * (_filt_adjoint(d_mu, win, x.shape)
                                 + 2 * x * _filt_adjoint(d_wxx, win, x.shape)
                                 + y * _filt_adjoint(d_wxy, win, x.shape))
    loss = 1.0 - total / nchan
    return float(loss), grad.astype(out.dtype)


def total_loss(out, target, weights=None, perceptual_hook=None):
    """w_mse * L2 + w_ssim * L_ssim (+ w_per * hook), with gradient."""
    weights = weights or LossWeights()
    l_mse, g_mse = mse_loss(out, target)
    l_ssim, g_ssim = ssim_loss(out, target)
    loss = weights.w_mse * l_mse + weights.w_ssim * l_ssim
    grad = weights.w_mse * g_mse + weights.w_ssim * g_ssim
    if weights.w_per > 0:
        if perceptual_hook is None:
            raise ConfigurationError("w_per > 0 but no perceptual hook registered")
        l_per, g_per = perceptual_hook(out, target)
        loss += weights.w_per * l_per
        grad = grad + weights.w_per * g_per
    return float(loss), grad, {"mse": l_mse, "ssim": l_ssim}


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state, params, grads, lr):
    """One Adam update, applied to the parameter arrays in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p, dtype=np.float64)
            state.m[name] = m
            state.v[name] = np.zeros_like(p, dtype=np.float64)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g, dtype=np.float64)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)


@dataclass
class Schedule:
    lr_max: float = 3e-4
    lr_min: float = 4e-6
    total_steps: int = 2000

    def __post_init__(self):
        if not (self.lr_max >= self.lr_min > 0):
            raise ValueError(f"need lr_max >= lr_min > 0: {self}")


def cosine_lr(sched, t):
    """Cosine annealing from lr_max (t=0) to lr_min (t=T); clamped past T."""
    if t >= sched.total_steps:
        return sched.lr_min
    span = sched.lr_max - sched.lr_min
    return sched.lr_min + span * (1.0 + math.cos(math.pi * t / sched.total_steps)) / 2.0


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    per_param: dict
    failures: list

    @property
    def ok(self):
        return not self.failures and math.isfinite(self.max_rel_err)


def gradcheck(fn, params, h=1e-4, max_probes=64, seed=0):
    """Central-difference check of fn's analytic gradients.

    fn(params) must return (loss, grads dict). Large tensors are probed at
    `max_probes` seeded random positions. Parameters should be float64.
    """
    rng = np.random.default_rng(seed)
    _, analytic = fn(params)
    per_param = {}
    failures = []
    worst, worst_name = 0.0, ""
    for name, p in params.items():
        flat = p.reshape(-1)
        n = flat.size
        if n <= max_probes:
            idxs = np.arange(n)
        else:
            idxs = rng.choice(n, size=max_probes, replace=False)
        a_flat = np.asarray(analytic[name]).reshape(-1)
        p_max = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = fn(params)
            flat[i] = orig - h
            lm, _ = fn(params)
            flat[i] = orig
            num = (lp - lm) / (2.0 * h)
            ana = a_flat[i]
            if not (math.isfinite(num) and math.isfinite(ana)):
                failures.append(f"{name}[{i}]: non-finite (analytic {ana}, numeric {num})")
                continue
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if rel > p_max:
                p_max = rel
            if rel > worst:
                worst, worst_name = rel, f"{name}[{i}]"
        per_param[name] = p_max
    return GradCheckReport(worst, worst_name, per_param, failures)


@dataclass
class TrainResult:
    params: dict
    grids: tuple  # final (grid1, grid2) BilateralGrids
    gnets: tuple
    producer_net: object
    trace: list  # rows of (step, lr, mse, ssim, total)
    output: np.ndarray


def _make_geometry(cfg, shape):
    h, w = shape[:2]
    return bg.GridGeometry(max(h // cfg.grid_ratio, 1), max(w // cfg.grid_ratio, 1),
                           cfg.depth, h, w, align_centers=cfg.align_centers)


def init_pipeline_params(cfg, geom, seed=0, dtype=np.float32):
    """Identity grids and default guidance nets for the given config."""
    k1, k2 = cfg.guidance_channels()
    ss = np.random.SeedSequence(seed)
    s1, s2 = ss.spawn(2)
    gnet1 = gd.init_guidance_net(3, k1, rng=s1, dtype=dtype)
    if cfg.mode == "affine":
        grid1 = pr.init_identity_affine_grid(geom, dtype)
        return (grid1,), (gnet1,)
    grid1, grid2 = pr.init_identity_grids(geom, dtype)
    gnet2 = gd.init_guidance_net(transform.HIDDEN, k2, rng=s2, dtype=dtype)
    return (grid1, grid2), (gnet1, gnet2)


def train_toy(input_img, target_img, cfg, mode="direct-grids", sched=None,
              weights=None, seed=0, n_steps=None, callback=None):
    """Single-pair trainer: minimize total_loss(enhance(input), target).

    mode "direct-grids" optimizes grid cells + guidance nets as free
    parameters; mode "producer" optimizes a ProducerNet + guidance nets.
    Deterministic given the seed.
    """
    input_img = np.asarray(input_img, dtype=np.float32)
    target_img = np.asarray(target_img, dtype=np.float32)
    if input_img.shape != target_img.shape:
        raise ValueError("input and target must have the same shape")
    sched = sched or Schedule()
    weights = weights or LossWeights()
    n_steps = sched.total_steps if n_steps is None else n_steps
    geom = _make_geometry(cfg, input_img.shape)
    grids, gnets = init_pipeline_params(cfg, geom, seed=seed)

    params = {}
    prod = None
    if mode == "direct-grids":
        for i, g in enumerate(grids, start=1):
            params[f"grid{i}"] = g.cells
    elif mode == "producer":
        if cfg.mode == "affine":
            raise ConfigurationError("producer mode drives the MLP pipeline only")
        prod = _make_producer(cfg, seed)
        params.update(prod.params())
        lowres = downsample(input_img, cfg.downsample_factor)
    else:
        raise ValueError(f"unknown training mode {mode!r}")
    for i, net in enumerate(gnets, start=1):
        params.update(net.params(f"gnet{i}"))

    state = AdamState()
    trace = []
    out = None
    for step in range(n_steps):
        if mode == "producer":
            grids = pr.produce_grids(prod, lowres, geom)
        out, cache = transform.forward_with_cache(input_img, grids, gnets, cfg)
        loss, grad_out, parts = total_loss(out, target_img, weights)
        if not math.isfinite(loss):
            raise TrainingError(f"loss diverged at step {step}")
        lr = cosine_lr(sched, step)
        trace.append((step, lr, parts["mse"], parts["ssim"], loss))
        if callback is not None:
            callback(step, loss)
        grads = transform.pipeline_backward(cache, grad_out)
        if mode == "producer":
            pg = grads.pop("grid1"), grads.pop("grid2")
            grads.update(pr.producer_backward(prod, lowres, geom, *pg))
        adam_step(state, params, grads, lr)

    if mode == "producer":
        grids = pr.produce_grids(prod, lowres, geom)
    out, _ = transform.forward_with_cache(input_img, grids, gnets, cfg)
    return TrainResult(params, tuple(grids), tuple(gnets), prod, trace, out)


def _make_producer(cfg, seed):
    return pr.init_producer_net(cfg.depth, rng=np.random.SeedSequence(seed).spawn(3)[2])
