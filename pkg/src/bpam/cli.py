"""Command-line interface: enhance, bench, gradcheck, train, eval.

Options come from flags with an optional JSON config file (--config);
explicit flags override file values. Thread count falls back to the
BPAM_THREADS environment variable, then to hardware parallelism. Every
command is deterministic given (seed, threads, precision).
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import check, grid as bg, guidance as gd, io_formats, kernels, metrics
from . import optim, producer as pr, transform
from .imaging import load_image, save_image
from .io_formats import _atomic_write

BENCH_RESOLUTIONS = ((1920, 1080), (3840, 2160))

DEFAULTS = {
    "mode": "mlp", "decomposed": "on", "grid_ratio": 8, "depth": 8,
    "align_centers": "on", "threads": 0, "seed": None, "iters": None,
    "lr_max": 3e-4, "lr_min": 4e-6, "precision": 32,
    "input": None, "target": None, "out": None, "grids": None, "weights": None,
}


def _merge_config(args):
    """flags > config file > defaults."""
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config) as f:
            cfg.update(json.load(f))
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _flag(v):
    return str(v).lower() in ("on", "true", "1", "yes")


def _pipeline_config(cfg):
    return transform.PipelineConfig(
        mode=cfg["mode"], decomposed=_flag(cfg["decomposed"]),
        grid_ratio=int(cfg["grid_ratio"]), depth=int(cfg["depth"]),
        align_centers=_flag(cfg["align_centers"]))


def _setup_threads(cfg):
    n = int(cfg["threads"]) or int(os.environ.get("BPAM_THREADS", "0")) or None
    kernels.set_threads(n)


def _load_gnets(cfg, pcfg, dtype=np.float32):
    k1, k2 = pcfg.guidance_channels()
    seed = cfg["seed"] if cfg["seed"] is not None else 0
    ss = np.random.SeedSequence(int(seed)).spawn(2)
    nets = [gd.init_guidance_net(3, k1, rng=ss[0], dtype=dtype)]
    if pcfg.mode == "mlp":
        nets.append(gd.init_guidance_net(transform.HIDDEN, k2, rng=ss[1], dtype=dtype))
    if cfg["weights"]:
        if not os.path.exists(cfg["weights"]):
            raise FileNotFoundError(cfg["weights"])
        tensors = io_formats.load_tensors(cfg["weights"])
        for i, net in enumerate(nets, start=1):
            for field in ("w1", "b1", "w2", "b2"):
                key = f"gnet{i}.{field}"
                if key in tensors:
                    setattr(net, field, tensors[key].astype(dtype))
    return tuple(nets)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    payload = ("\n".join(lines) + "\n").encode()
    if path:
        _atomic_write(path, payload)
    else:
        sys.stdout.write(payload.decode())


def cmd_enhance(cfg):
    for key in ("input", "out", "grids"):
        if not cfg[key]:
            print(f"enhance: --{key} is required", file=sys.stderr)
            return 2
    if not os.path.exists(cfg["grids"]):
        print(f"enhance: grid file not found: {cfg['grids']}", file=sys.stderr)
        return 2
    pcfg = _pipeline_config(cfg)
    img = load_image(cfg["input"])
    grids = io_formats.load_grids(cfg["grids"])
    gnets = _load_gnets(cfg, pcfg)
    timings = {}
    try:
        out = transform.enhance(img, tuple(grids), gnets, pcfg, timings=timings)
    except ValueError as e:
        print(f"enhance: {e}", file=sys.stderr)
        return 1
    save_image(out, cfg["out"], bit_depth=8)
    for stage in ("guidance", "slice1", "mlp1", "slice2", "mlp2"):
        if stage in timings:
            print(f"{stage:10s} {timings[stage]:8.2f} ms")
    print(f"{'total':10s} {sum(timings.values()):8.2f} ms")
    return 0


def _bench_instance(width, height, pcfg, rng):
    geom = bg.GridGeometry(height // pcfg.grid_ratio, width // pcfg.grid_ratio,
                           pcfg.depth, height, width,
                           align_centers=pcfg.align_centers)
    img = rng.random((height, width, 3), dtype=np.float32)
    g1 = bg.BilateralGrid(geom, rng.standard_normal(
        (geom.grid_h, geom.grid_w, geom.depth, 32)).astype(np.float32) * 0.1)
    g2 = bg.BilateralGrid(geom, rng.standard_normal(
        (geom.grid_h, geom.grid_w, geom.depth, 27)).astype(np.float32) * 0.1)
    return img, (g1, g2)


def cmd_bench(cfg):
    pcfg = _pipeline_config(cfg)
    iters = int(cfg["iters"]) if cfg["iters"] else 100
    warmup = 5
    seed = int(cfg["seed"]) if cfg["seed"] is not None else 0
    rows = []
    for width, height in BENCH_RESOLUTIONS:
        rng = np.random.default_rng(seed)
        img, grids = _bench_instance(width, height, pcfg, rng)
        gnets = _load_gnets(cfg, pcfg)
        stage_times = {}
        totals = []
        for it in range(warmup + iters):
            timings = {}
            t0 = time.perf_counter()
            transform.enhance(img, grids, gnets, pcfg, timings=timings)
            total = (time.perf_counter() - t0) * 1e3
            if it < warmup:
                continue
            totals.append(total)
            for k, v in timings.items():
                stage_times.setdefault(k, []).append(v)
        res = f"{width}x{height}"
        for stage in ("guidance", "slice1", "mlp1", "slice2", "mlp2"):
            ts = stage_times.get(stage, [])
            if ts:
                rows.append((res, stage, round(np.mean(ts), 3),
                             round(np.min(ts), 3), round(1000.0 / np.mean(ts), 2)))
        core = [sum(stage_times[s][i] for s in ("slice1", "mlp1", "slice2", "mlp2"))
                for i in range(iters)]
        rows.append((res, "core", round(np.mean(core), 3), round(np.min(core), 3),
                     round(1000.0 / np.mean(core), 2)))
        rows.append((res, "total", round(np.mean(totals), 3), round(np.min(totals), 3),
                     round(1000.0 / np.mean(totals), 2)))
    _write_csv(cfg["out"], ("resolution", "stage", "mean_ms", "min_ms", "fps"), rows)
    return 0


def cmd_gradcheck(cfg, corrupt=False):
    seed = int(cfg["seed"]) if cfg["seed"] is not None else 0
    ok, worst = check.check_pipeline_gradients(seed=seed, corrupt=corrupt,
                                               verbose=True)
    for group in sorted(worst):
        print(f"group {group:10s} max rel err {worst[group]:.3e}")
    print("gradcheck", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_train(cfg):
    if cfg["seed"] is None:
        print("train: --seed is required for reproducible training", file=sys.stderr)
        return 2
    for key in ("input", "target", "out"):
        if not cfg[key]:
            print(f"train: --{key} is required", file=sys.stderr)
            return 2
    pcfg = _pipeline_config(cfg)
    img = load_image(cfg["input"])
    target = load_image(cfg["target"])
    sched = optim.Schedule(float(cfg["lr_max"]), float(cfg["lr_min"]),
                           int(cfg["iters"]) if cfg["iters"] else 2000)
    mode = cfg.get("train_mode", "direct-grids")
    try:
        result = optim.train_toy(img, target, pcfg, mode=mode, sched=sched,
                                 seed=int(cfg["seed"]))
    except optim.TrainingError as e:
        print(f"train: {e}", file=sys.stderr)
        return 1
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    io_formats.save_grids(os.path.join(out_dir, "grids.bpg"), list(result.grids))
    tensors = {}
    for i, net in enumerate(result.gnets, start=1):
        tensors.update(net.params(f"gnet{i}"))
    if result.producer_net is not None:
        tensors.update(result.producer_net.params())
    io_formats.save_tensors(os.path.join(out_dir, "weights.bpt"), tensors)
    _write_csv(os.path.join(out_dir, "loss.csv"),
               ("step", "lr", "mse", "ssim", "total"), result.trace)
    print(f"final loss {result.trace[-1][4]:.6g} after {len(result.trace)} steps")
    return 0


def cmd_eval(cfg):
    for key in ("input", "target"):
        if not cfg[key]:
            print(f"eval: --{key} is required", file=sys.stderr)
            return 2
    a = load_image(cfg["input"])
    b = load_image(cfg["target"])
    rep = metrics.report(a, b)
    _write_csv(cfg["out"], ("psnr", "ssim", "delta_e"),
               [(round(rep.psnr, 4), round(rep.ssim, 6), round(rep.delta_e, 4))])
    if cfg["out"]:
        print(f"psnr {rep.psnr:.4f}  ssim {rep.ssim:.6f}  delta_e {rep.delta_e:.4f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="bpam",
                                description="Bilateral-grid pixel-adaptive MLP enhancement")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("enhance", "bench", "gradcheck", "train", "eval"):
        sp = sub.add_parser(name)
        sp.add_argument("--input")
        sp.add_argument("--target")
        sp.add_argument("--out")
        sp.add_argument("--grids")
        sp.add_argument("--weights")
        sp.add_argument("--mode", choices=("affine", "mlp"))
        sp.add_argument("--decomposed", choices=("on", "off"))
        sp.add_argument("--grid-ratio", dest="grid_ratio", type=int)
        sp.add_argument("--depth", type=int)
        sp.add_argument("--align-centers", dest="align_centers", choices=("on", "off"))
        sp.add_argument("--threads", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--iters", type=int)
        sp.add_argument("--lr-max", dest="lr_max", type=float)
        sp.add_argument("--lr-min", dest="lr_min", type=float)
        sp.add_argument("--precision", type=int, choices=(32, 64))
        sp.add_argument("--config")
        if name == "train":
            sp.add_argument("--train-mode", dest="train_mode",
                            choices=("direct-grids", "producer"))
        if name == "gradcheck":
            sp.add_argument("--self-test-corrupt", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = _merge_config(args)
    if getattr(args, "train_mode", None):
        cfg["train_mode"] = args.train_mode
    _setup_threads(cfg)
    try:
        if args.command == "enhance":
            return cmd_enhance(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, corrupt=getattr(args, "self_test_corrupt", False))
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
    except FileNotFoundError as e:
        print(f"{args.command}: file not found: {e}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
