import math

import numpy as np
import pytest

import oracles
from bpam import optim
from bpam import transform as tf


class TestMse:
    def test_zero_on_equal(self, rng):
        img = rng.random((8, 8, 3))
        loss, grad = optim.mse_loss(img, img)
        assert loss == 0.0 and not grad.any()

    def test_value_and_gradient(self, rng):
        out = rng.random((6, 6, 3))
        tgt = rng.random((6, 6, 3))
        loss, grad = optim.mse_loss(out, tgt)
        assert loss == pytest.approx(((out - tgt) ** 2).mean())
        assert np.allclose(grad, 2 * (out - tgt) / out.size)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            optim.mse_loss(rng.random((4, 4, 3)), rng.random((4, 5, 3)))


class TestSsim:
    def test_identical_images_score_one(self, rng):
        img = rng.random((16, 16, 3))
        assert optim.ssim_map(img, img).min() > 1.0 - 1e-9
        loss, _ = optim.ssim_loss(img, img)
        assert abs(loss) < 1e-9

    def test_matches_scalar_oracle(self, rng):
        a = rng.random((14, 15, 2))
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
        mine = float(optim.ssim_map(a, b).mean())
        ref = oracles.ssim_scalar_oracle(a, b)
        assert abs(mine - ref) < 1e-10

    def test_matches_skimage(self, rng):
        skimage = pytest.importorskip("skimage.metrics")
        a = rng.random((24, 24, 3))
        b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)
        ref = np.mean([skimage.structural_similarity(
            a[:, :, c], b[:, :, c], data_range=1.0, gaussian_weights=True,
            sigma=1.5, use_sample_covariance=False) for c in range(3)])
        mine = float(optim.ssim_map(a, b).mean())
        assert abs(mine - ref) < 1e-4

    def test_gradient_matches_finite_differences(self, rng):
        a = rng.random((13, 13, 2))
        b = rng.random((13, 13, 2))
        _, grad = optim.ssim_loss(a, b)
        h = 1e-6
        for idx in [(0, 0, 0), (6, 6, 1), (12, 3, 0), (2, 11, 1), (6, 7, 0)]:
            orig = a[idx]
            a[idx] = orig + h
            lp, _ = optim.ssim_loss(a, b)
            a[idx] = orig - h
            lm, _ = optim.ssim_loss(a, b)
            a[idx] = orig
            num = (lp - lm) / (2 * h)
            # floor the denominator: FD noise dominates near-zero entries
            assert abs(grad[idx] - num) / max(abs(num), 1e-5) < 1e-5

    def test_too_small_image(self, rng):
        with pytest.raises(ValueError):
            optim.ssim_loss(rng.random((8, 8, 3)), rng.random((8, 8, 3)))

    def test_penalizes_structure_change(self, rng):
        img = rng.random((32, 32, 1))
        blurred = img.copy()
        blurred[1:-1, 1:-1] = 0.25 * (img[:-2, 1:-1] + img[2:, 1:-1]
                                      + img[1:-1, :-2] + img[1:-1, 2:])
        l_blur, _ = optim.ssim_loss(blurred, img)
        assert l_blur > 0.01


class TestTotalLoss:
    def test_combination(self, rng):
        out = rng.random((16, 16, 3))
        tgt = rng.random((16, 16, 3))
        w = optim.LossWeights(w_mse=1.0, w_ssim=0.5)
        loss, grad, parts = optim.total_loss(out, tgt, w)
        assert loss == pytest.approx(parts["mse"] + 0.5 * parts["ssim"])
        l_m, g_m = optim.mse_loss(out, tgt)
        l_s, g_s = optim.ssim_loss(out, tgt)
        assert np.allclose(grad, g_m + 0.5 * g_s)

    def test_perceptual_hook_required(self, rng):
        out = rng.random((16, 16, 3))
        with pytest.raises(optim.ConfigurationError):
            optim.total_loss(out, out, optim.LossWeights(w_per=0.1))

    def test_perceptual_hook_used(self, rng):
        out = rng.random((16, 16, 3))
        hook = lambda o, t: (1.0, np.zeros_like(o))
        loss, _, _ = optim.total_loss(out, out, optim.LossWeights(w_per=2.0),
                                      perceptual_hook=hook)
        assert loss == pytest.approx(2.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            optim.LossWeights(w_mse=-1.0)


class TestAdam:
    def test_matches_reference_trajectory(self, rng):
        # quadratic bowl: grad = 2 (x - c)
        c = rng.standard_normal(5)
        x0 = rng.standard_normal(5)
        ref = oracles.adam_reference(lambda x: 2 * (x - c), x0, 0.05, 40)
        x = x0.copy()
        state = optim.AdamState()
        for _ in range(40):
            optim.adam_step(state, {"x": x}, {"x": 2 * (x - c)}, 0.05)
        assert np.abs(x - ref).max() < 1e-12

    def test_converges_on_quadratic(self, rng):
        c = rng.standard_normal(8)
        x = np.zeros(8)
        state = optim.AdamState()
        for _ in range(2000):
            optim.adam_step(state, {"x": x}, {"x": 2 * (x - c)}, 0.01)
        assert np.abs(x - c).max() < 1e-4

    def test_rejects_nonfinite_gradient(self):
        x = np.zeros(3)
        with pytest.raises(optim.TrainingError):
            optim.adam_step(optim.AdamState(), {"x": x},
                            {"x": np.array([1.0, np.nan, 0.0])}, 0.01)

    def test_updates_in_place(self):
        x = np.ones(3, dtype=np.float32)
        xid = id(x)
        optim.adam_step(optim.AdamState(), {"x": x}, {"x": np.ones(3)}, 0.1)
        assert id(x) == xid and x[0] != 1.0


class TestSchedule:
    def test_endpoints(self):
        s = optim.Schedule(3e-4, 4e-6, 2000)
        assert optim.cosine_lr(s, 0) == pytest.approx(3e-4)
        assert optim.cosine_lr(s, 2000) == pytest.approx(4e-6)
        assert optim.cosine_lr(s, 5000) == pytest.approx(4e-6)

    def test_midpoint(self):
        s = optim.Schedule(1e-3, 0.5e-3, 100)
        assert optim.cosine_lr(s, 50) == pytest.approx(0.75e-3)

    def test_monotone_decreasing(self):
        s = optim.Schedule()
        lrs = [optim.cosine_lr(s, t) for t in range(0, 2001, 50)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_bad_range(self):
        with pytest.raises(ValueError):
            optim.Schedule(lr_max=1e-6, lr_min=1e-4)


class TestGradcheck:
    def test_accepts_correct_gradient(self):
        def fn(p):
            x = p["x"]
            return float((x ** 3).sum()), {"x": 3 * x ** 2}
        rep = optim.gradcheck(fn, {"x": np.array([0.5, -1.2, 2.0])})
        assert rep.ok and rep.max_rel_err < 1e-6

    def test_rejects_wrong_gradient(self):
        def fn(p):
            x = p["x"]
            return float((x ** 2).sum()), {"x": 3 * x}
        rep = optim.gradcheck(fn, {"x": np.array([0.7, 1.1])})
        assert rep.max_rel_err > 0.1

    def test_flags_nonfinite(self):
        def fn(p):
            return float(p["x"].sum()), {"x": np.full_like(p["x"], np.nan)}
        rep = optim.gradcheck(fn, {"x": np.ones(2)})
        assert not rep.ok and rep.failures

    def test_probe_subsampling(self):
        calls = []

        def fn(p):
            calls.append(1)
            return float((p["x"] ** 2).sum()), {"x": 2 * p["x"]}
        optim.gradcheck(fn, {"x": np.arange(1000, dtype=np.float64)},
                        max_probes=8)
        # 1 analytic + 2 per probe
        assert len(calls) == 1 + 16


class TestTrainToy:
    def test_identity_target_stays_put(self, rng):
        img = rng.random((32, 32, 3)).astype(np.float32)
        cfg = tf.PipelineConfig(grid_ratio=16)
        res = optim.train_toy(img, img, cfg, n_steps=5, seed=0)
        assert res.trace[0][4] < 1e-6
        assert res.trace[-1][4] <= res.trace[0][4] + 1e-8

    def test_loss_decreases_on_offset_target(self, rng):
        img = rng.random((32, 32, 3)).astype(np.float32)
        tgt = np.clip(img + 0.1, 0, 1).astype(np.float32)
        cfg = tf.PipelineConfig(grid_ratio=16)
        res = optim.train_toy(img, tgt, cfg, n_steps=60, seed=0,
                              sched=optim.Schedule(3e-3, 1e-4, 60))
        assert res.trace[-1][4] < 0.5 * res.trace[0][4]

    def test_deterministic(self, rng):
        img = rng.random((16, 16, 3)).astype(np.float32)
        tgt = rng.random((16, 16, 3)).astype(np.float32)
        cfg = tf.PipelineConfig(grid_ratio=8)
        r1 = optim.train_toy(img, tgt, cfg, n_steps=5, seed=3)
        r2 = optim.train_toy(img, tgt, cfg, n_steps=5, seed=3)
        assert r1.trace == r2.trace
        assert np.array_equal(r1.output, r2.output)

    def test_producer_mode_runs(self, rng):
        img = rng.random((64, 64, 3)).astype(np.float32)
        tgt = np.clip(1.0 - img, 0, 1).astype(np.float32)
        cfg = tf.PipelineConfig(grid_ratio=32)
        res = optim.train_toy(img, tgt, cfg, mode="producer", n_steps=5, seed=0)
        assert res.producer_net is not None
        assert len(res.trace) == 5
        assert all(math.isfinite(row[4]) for row in res.trace)

    def test_producer_affine_rejected(self, rng):
        img = rng.random((64, 64, 3)).astype(np.float32)
        with pytest.raises(optim.ConfigurationError):
            optim.train_toy(img, img, tf.PipelineConfig(mode="affine", grid_ratio=32),
                            mode="producer", n_steps=1)

    def test_unknown_mode(self, rng):
        img = rng.random((16, 16, 3)).astype(np.float32)
        with pytest.raises(ValueError):
            optim.train_toy(img, img, tf.PipelineConfig(grid_ratio=8),
                            mode="sgd", n_steps=1)

    def test_callback_invoked(self, rng):
        img = rng.random((16, 16, 3)).astype(np.float32)
        steps = []
        optim.train_toy(img, img, tf.PipelineConfig(grid_ratio=8), n_steps=3,
                        callback=lambda s, l: steps.append(s))
        assert steps == [0, 1, 2]
