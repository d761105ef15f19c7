import numpy as np
import pytest
from fractions import Fraction

from splitmixer import layers, mixers, models, verify
from splitmixer.tensor import Tape, Tensor4

from conftest import leaf


class TestNumericGradient:
    def test_quadratic(self):
        params = {"w": np.full((1, 1, 1, 1), 3.0)}

        def f():
            return float(params["w"].reshape(()) ** 2)

        grads, kinks = verify.numeric_gradient(f, params, eps_scale=1e-3)
        assert grads["w"].reshape(()) == pytest.approx(6.0, abs=1e-6)
        assert not kinks["w"].any()

    def test_kink_detection_at_abs_zero(self):
        params = {"w": np.zeros((1, 1, 1, 1))}

        def f():
            return float(abs(params["w"].reshape(())))

        _, kinks = verify.numeric_gradient(f, params)
        assert kinks["w"].all()

    def test_smooth_point_of_abs_not_flagged(self):
        params = {"w": np.full((1, 1, 1, 1), 0.5)}

        def f():
            return float(abs(params["w"].reshape(())))

        grads, kinks = verify.numeric_gradient(f, params)
        assert not kinks["w"].any()
        assert grads["w"].reshape(()) == pytest.approx(1.0, abs=1e-8)


class TestConvBruteforce:
    def test_identity_kernel_reproduces_input(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 2, 4, 4))
        w = np.zeros((2, 1, 3, 3))
        w[:, 0, 1, 1] = 1.0
        out = verify.conv_bruteforce(x, w, np.zeros(2), padding=1, groups=2)
        np.testing.assert_allclose(out, x, atol=1e-12)

    def test_stride_shapes(self):
        x = np.ones((1, 3, 8, 8))
        w = np.ones((4, 3, 2, 2))
        out = verify.conv_bruteforce(x, w, np.zeros(4), stride=2)
        assert out.shape == (1, 4, 4, 4)
        np.testing.assert_allclose(out, 12.0)


def _rand(shape, rng, scale=1.0):
    return (rng.standard_normal(shape) * scale).astype(np.float32)


class TestOptimizedPathsMatchOracle:
    N_INSTANCES = 5  # acceptance suite runs 20 per path

    def test_patch_embed(self):
        rng = np.random.default_rng(1)
        for i in range(self.N_INSTANCES):
            c, h, p = rng.integers(1, 4), rng.integers(1, 6), rng.choice([2, 4])
            x = _rand((2, c, 8, 8), rng)
            w = _rand((h, c, p, p), rng, 1 / np.sqrt(c * p * p))
            b = _rand((h,), rng)
            t = Tape()
            out = layers.patch_embed(leaf(t, x), leaf(t, w),
                                     leaf(t, b.reshape(1, h, 1, 1)), int(p))
            ref = verify.conv_bruteforce(x, w, b, stride=int(p))
            assert np.abs(out.data - ref).max() < 1e-6

    def test_depthwise1d_both_axes(self):
        rng = np.random.default_rng(2)
        for i in range(self.N_INSTANCES):
            c = int(rng.integers(1, 8))
            k = int(rng.choice([3, 5, 7]))
            x = _rand((2, c, 6, 7), rng)
            b = _rand((c,), rng)
            for axis in ("width", "height"):
                shape = (c, 1, 1, k) if axis == "width" else (c, 1, k, 1)
                w = _rand(shape, rng, 1 / np.sqrt(k))
                t = Tape()
                out = layers.depthwise1d(leaf(t, x), leaf(t, w),
                                         leaf(t, b.reshape(1, c, 1, 1)), axis)
                pad = ((0, (k - 1) // 2) if axis == "width"
                       else ((k - 1) // 2, 0))
                ref = verify.conv_bruteforce(x, w.reshape(c, 1, shape[2], shape[3]),
                                             b, padding=pad, groups=c)
                assert np.abs(out.data - ref).max() < 1e-6

    def test_depthwise2d(self):
        rng = np.random.default_rng(3)
        for i in range(self.N_INSTANCES):
            c = int(rng.integers(1, 6))
            k = int(rng.choice([3, 5]))
            x = _rand((1, c, 7, 6), rng)
            w = _rand((c, 1, k, k), rng, 1 / k)
            b = _rand((c,), rng)
            t = Tape()
            out = layers.depthwise2d(leaf(t, x), leaf(t, w),
                                     leaf(t, b.reshape(1, c, 1, 1)))
            ref = verify.conv_bruteforce(x, w, b, padding=(k - 1) // 2, groups=c)
            assert np.abs(out.data - ref).max() < 1e-6

    def test_pointwise_slice(self):
        rng = np.random.default_rng(4)
        for i in range(self.N_INSTANCES):
            c = int(rng.integers(4, 16))
            a = int(rng.integers(0, c - 1))
            b_hi = int(rng.integers(a + 1, c + 1))
            m = b_hi - a
            x = _rand((2, c, 4, 4), rng)
            w = _rand((m, m, 1, 1), rng, 1 / np.sqrt(m))
            bias = _rand((m,), rng)
            t = Tape()
            out = layers.pointwise_slice(leaf(t, x), leaf(t, w),
                                         leaf(t, bias.reshape(1, m, 1, 1)), a, b_hi)
            ref = x.astype(np.float64).copy()
            ref[:, a:b_hi] = verify.conv_bruteforce(
                x[:, a:b_hi], w.reshape(m, m, 1, 1), bias)
            assert np.abs(out.data - ref).max() < 1e-6

    def test_strided_3d(self):
        rng = np.random.default_rng(5)
        for i in range(self.N_INSTANCES):
            s = int(rng.choice([2, 3]))
            d = int(rng.integers(2, 5))
            c = s * d
            x = _rand((2, c, 3, 3), rng)
            w = _rand((d, d), rng, 1 / np.sqrt(d))
            bias = _rand((d,), rng)
            t = Tape()
            out = layers.channel_conv3d(leaf(t, x), leaf(t, w.reshape(d, d, 1, 1)),
                                        leaf(t, bias.reshape(1, d, 1, 1)), s)
            ref = verify.conv3d_channel_bruteforce(x, w, bias, s)
            assert np.abs(out.data - ref).max() < 1e-6


class TestEquivalences:
    @pytest.mark.parametrize("h,s", [(8, 2), (16, 4), (256, 2), (256, 4), (256, 8)])
    def test_III_equiv_3d_grid(self, h, s):
        assert verify.check_III_equiv_3d(h, s, seed=h + s) < 1e-6

    def test_III_equiv_identity_weights_exact(self):
        h, s, d = 8, 2, 4
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, h, 3, 3)).astype(np.float32)
        t = Tape()
        eye = leaf(t, np.eye(d, dtype=np.float32).reshape(d, d, 1, 1))
        zb = leaf(t, np.zeros((1, d, 1, 1), dtype=np.float32))
        y3 = mixers.mixer_III(leaf(t, x), mixers.MixerSpec("III", h, s=s),
                              {"mix": (eye, zb)})
        yc = mixers.mixer_3d(leaf(t, x), mixers.MixerSpec("Conv3D", h, s=s),
                             {"mix": (eye, zb)})
        perm = mixers.interleave_permutation(h, s)
        assert np.abs(y3.data[:, perm] - yc.data).max() == 0.0

    def test_III_equiv_negative_control(self):
        # skipping the interleave permutation must show a visible gap
        h, s = 8, 2
        rng = np.random.default_rng(1)
        d = h // s
        x = rng.standard_normal((1, h, 4, 4)).astype(np.float32)
        w = rng.standard_normal((d, d, 1, 1)).astype(np.float32)
        b = rng.standard_normal((1, d, 1, 1)).astype(np.float32)
        t = Tape()
        wn, bn = leaf(t, w), leaf(t, b)
        y3 = mixers.mixer_III(leaf(t, x), mixers.MixerSpec("III", h, s=s),
                              {"mix": (wn, bn)})
        yc = mixers.mixer_3d(leaf(t, x), mixers.MixerSpec("Conv3D", h, s=s),
                             {"mix": (wn, bn)})
        assert np.abs(y3.data - yc.data).max() > 0.1

    @pytest.mark.parametrize("k", [3, 5, 7])
    def test_separable_rank1_equivalence(self, k):
        assert verify.check_separable(k, 4, seed=k) < 1e-5

    def test_separable_onehot_center_reduces_to_1d(self):
        k, h = 5, 3
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, h, 6, 6)).astype(np.float32)
        u = rng.standard_normal((h, 1, 1, k)).astype(np.float32)
        v = np.zeros((h, 1, k, 1), dtype=np.float32)
        v[:, 0, k // 2, 0] = 1.0  # onehot center: height conv is identity
        zb = np.zeros((1, h, 1, 1), dtype=np.float32)
        t = Tape()
        zn = leaf(t, zb)
        yw = layers.depthwise1d(leaf(t, x), leaf(t, u), zn, "width")
        y1 = layers.depthwise1d(yw, leaf(t, v), zn, "height")
        assert np.abs(y1.data - yw.data).max() < 1e-6

    def test_separable_negative_control_full_rank_kernel(self):
        # a generic k x k kernel is not rank-1; best 1D pair stays far away
        k, h = 3, 1
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, h, 8, 8)).astype(np.float32)
        k2 = rng.standard_normal((h, 1, k, k)).astype(np.float32)
        zb = np.zeros((1, h, 1, 1), dtype=np.float32)
        t = Tape()
        y2 = layers.depthwise2d(leaf(t, x), leaf(t, k2), leaf(t, zb))
        diffs = []
        for trial in range(10):
            u = rng.standard_normal((h, 1, 1, k)).astype(np.float32)
            v = rng.standard_normal((h, 1, k, 1)).astype(np.float32)
            t2 = Tape()
            zn = leaf(t2, zb)
            y1 = layers.depthwise1d(
                layers.depthwise1d(leaf(t2, x), leaf(t2, u), zn, "width"),
                leaf(t2, v), zn, "height")
            diffs.append(np.abs(y1.data - y2.data).max())
        assert min(diffs) > 0.05


class TestGradcheckModel:
    def test_small_variant_I_passes(self):
        cfg = models.ModelConfig(variant="I", h=8, b=2, p=2, k=3,
                                 alpha=Fraction(2, 3), classes=4)
        report = verify.gradcheck_model(cfg, seed=0)
        assert report.passed, report.summary()
        assert report.max_rel_err < 1e-4

    def test_report_csv_shape(self):
        cfg = models.ModelConfig(variant="II", h=8, b=2, p=2, k=3, s=2,
                                 classes=4)
        report = verify.gradcheck_model(cfg, seed=1)
        lines = report.csv_text().strip().split("\n")
        assert lines[0].startswith("param,max_rel_err")
        assert len(lines) == 1 + len(report.rows)
        assert report.passed
