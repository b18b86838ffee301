"""End-to-end gradient checking harness for the whole pipeline.

Builds small seeded instances (default 8x8 image over 2x2x4 grids) and
compares every analytic gradient against central finite differences at
64-bit. The forward under test is piecewise smooth: ReLU pre-activations
and intensity-bin fractions sit at kinks where one-sided derivatives
differ, so candidate instances are resampled until every such margin
exceeds KINK_MARGIN. The output clamp is straight-through by design and
is disabled during checking.
"""

from dataclasses import dataclass

import numpy as np

from . import grid as bg
from . import guidance as gd
from . import optim
from . import producer as pr
from . import transform

# FD probes (h=1e-4) shift any pre-activation by at most ~h * |input| <= 1e-4,
# so this margin guarantees no probe crosses a kink while keeping the
# rejection rate of sampled instances workable.
KINK_MARGIN = 2e-4
DEFAULT_TOL = 1e-4


@dataclass
class CheckInstance:
    cfg: transform.PipelineConfig
    geom: bg.GridGeometry
    img: np.ndarray
    target: np.ndarray
    grids: tuple
    gnets: tuple
    producer_net: object = None
    lowres: np.ndarray = None


def _kink_margins(cache, extra=()):
    """Smallest distance to a ReLU zero or an intensity-bin boundary."""
    margins = [np.abs(cache.a1).min()] if cache.a1 is not None else []
    margins.extend(np.abs(a).min() for a in extra)
    for gc in (cache.gcache1, cache.gcache2):
        if gc is not None:
            margins.append(np.abs(gc[1]).min())
    depth = cache.grids[0].geometry.depth
    for guid in (cache.guid1, cache.guid2):
        if guid is None or depth == 1:
            continue
        r = np.clip(guid, 0.0, 1.0) * (depth - 1)
        frac = r - np.floor(r)
        margins.append(min(frac.min(), (1.0 - frac).min()))
    return min(margins)


def _perturbed_nets(cfg, rng, scale=0.2):
    k1, k2 = cfg.guidance_channels()
    nets = [gd.init_guidance_net(3, k1, rng=rng, dtype=np.float64)]
    if cfg.mode == "mlp":
        nets.append(gd.init_guidance_net(transform.HIDDEN, k2, rng=rng,
                                         dtype=np.float64))
    for n in nets:
        n.w2 += scale * rng.standard_normal(n.w2.shape)
        n.b2 += scale * rng.standard_normal(n.b2.shape)
        n.b1 += 0.05 * rng.standard_normal(n.b1.shape)
    return tuple(nets)


def build_instance(seed=0, image_size=8, grid_size=2, depth=4, mode="mlp",
                   decomposed=True, use_producer=False, max_tries=200):
    """Sample a well-conditioned check instance (all kink margins clear)."""
    cfg = transform.PipelineConfig(
        mode=mode, decomposed=decomposed,
        grid_ratio=image_size // grid_size, depth=depth)
    geom = bg.GridGeometry(grid_size, grid_size, depth, image_size, image_size)
    for attempt in range(max_tries):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        img = rng.random((image_size, image_size, 3))
        target = rng.random((image_size, image_size, 3))
        gnets = _perturbed_nets(cfg, rng)
        prod = lowres = None
        if use_producer:
            prod = pr.init_producer_net(depth, rng=rng, dtype=np.float64)
            prod.head1_w += 0.02 * rng.standard_normal(prod.head1_w.shape)
            prod.head2_w += 0.02 * rng.standard_normal(prod.head2_w.shape)
            lowres = rng.random((grid_size * 16, grid_size * 16, 3))
            grids = pr.produce_grids(prod, lowres, geom)
        elif mode == "affine":
            g = pr.init_identity_affine_grid(geom, np.float64)
            g.cells += 0.3 * rng.standard_normal(g.cells.shape)
            grids = (g,)
        else:
            g1, g2 = pr.init_identity_grids(geom, np.float64)
            g1.cells += 0.3 * rng.standard_normal(g1.cells.shape)
            g2.cells += 0.3 * rng.standard_normal(g2.cells.shape)
            grids = (g1, g2)
        _, cache = transform.forward_with_cache(img, grids, gnets, cfg, clamp=False)
        conv_pre = pr._forward_trace(prod, lowres, geom)[1] if use_producer else ()
        if _kink_margins(cache, conv_pre) > KINK_MARGIN:
            return CheckInstance(cfg, geom, img, target, grids, gnets, prod, lowres)
    raise RuntimeError(f"no well-conditioned instance found in {max_tries} tries")


def _instance_fn(inst):
    """Loss-and-gradients closure over the instance's parameter arrays."""
    def fn(_params):
        grids = inst.grids
        if inst.producer_net is not None:
            grids = pr.produce_grids(inst.producer_net, inst.lowres, inst.geom)
        out, cache = transform.forward_with_cache(inst.img, grids, inst.gnets,
                                                  inst.cfg, clamp=False)
        loss, grad = optim.mse_loss(out, inst.target)
        grads = transform.pipeline_backward(cache, grad)
        if inst.producer_net is not None:
            pg1 = grads.pop("grid1")
            pg2 = grads.pop("grid2")
            grads.update(pr.producer_backward(inst.producer_net, inst.lowres,
                                              inst.geom, pg1, pg2))
        return loss, grads
    return fn


def instance_params(inst):
    params = {}
    if inst.producer_net is not None:
        params.update(inst.producer_net.params())
    else:
        for i, g in enumerate(inst.grids, start=1):
            params[f"grid{i}"] = g.cells
    for i, net in enumerate(inst.gnets, start=1):
        params.update(net.params(f"gnet{i}"))
    return params


def check_pipeline_gradients(seed=0, tol=DEFAULT_TOL, max_probes=64,
                             corrupt=False, verbose=False):
    """Run gradcheck over all five parameter groups: grid1, grid2, gnet1,
    gnet2 (direct-grid instance) and producer.* (producer instance).

    `corrupt` deliberately biases one gradient; used as a negative control.
    Returns (ok, per-group max relative error dict).
    """
    results = {}
    worst = {}
    for use_producer in (False, True):
        inst = build_instance(seed=seed, use_producer=use_producer)
        fn = _instance_fn(inst)
        if corrupt:
            base_fn = fn

            def fn(params, _f=base_fn):
                loss, grads = _f(params)
                key = next(iter(grads))
                grads[key] = grads[key] + 0.05
                return loss, grads
        params = instance_params(inst)
        if use_producer:
            params = {k: v for k, v in params.items() if k.startswith("producer.")}
        rep = optim.gradcheck(fn, params, max_probes=max_probes, seed=seed)
        for name, err in rep.per_param.items():
            group = name.split(".")[0]
            worst[group] = max(worst.get(group, 0.0), err)
        results[("producer" if use_producer else "direct")] = rep
        if verbose:
            for name, err in sorted(rep.per_param.items()):
                print(f"  {name:22s} max rel err {err:.3e}")
    ok = all(rep.ok and rep.max_rel_err < tol for rep in results.values())
    return ok, worst
