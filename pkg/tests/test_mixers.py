import numpy as np
import pytest
from fractions import Fraction

from splitmixer import mixers, verify
from splitmixer.errors import ConfigError
from splitmixer.tensor import Tape, Tensor4

from conftest import leaf


def _set(tape, m, seed, identity=False):
    if identity:
        w = np.eye(m).reshape(m, m, 1, 1)
        b = np.zeros((1, m, 1, 1))
    else:
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((m, m, 1, 1)) / np.sqrt(m)
        b = rng.standard_normal((1, m, 1, 1)) * 0.1
    return leaf(tape, w), leaf(tape, b)


class TestSegmentBounds:
    def test_paper_footnote_256_3(self):
        assert mixers.segment_bounds(256, 3) == [(0, 85), (85, 170), (170, 256)]

    def test_even_split(self):
        assert mixers.segment_bounds(256, 2) == [(0, 128), (128, 256)]

    def test_floor_rule_7_3(self):
        assert mixers.segment_bounds(7, 3) == [(0, 2), (2, 4), (4, 7)]

    def test_errors(self):
        with pytest.raises(ConfigError):
            mixers.segment_bounds(4, 5)
        with pytest.raises(ConfigError):
            mixers.segment_bounds(8, 1)


class TestOverlap:
    def test_m_truncation(self):
        assert mixers.overlap_m(256, Fraction(2, 3)) == 170
        assert mixers.overlap_m(8, Fraction(2, 3)) == 5
        assert mixers.overlap_m(256, Fraction(4, 7)) == 146

    def test_ranges(self):
        assert mixers.overlap_ranges(256, Fraction(2, 3)) == [(0, 170), (86, 256)]

    def test_alpha_bounds_rejected(self):
        with pytest.raises(ConfigError):
            mixers.overlap_m(256, Fraction(1, 2))
        with pytest.raises(ConfigError):
            mixers.overlap_m(256, 1)
        with pytest.raises(ConfigError):
            # floor(0.51 * 8) = 4 does not overlap
            mixers.overlap_m(8, Fraction(51, 100))


class TestMixerI:
    def test_identity_weights_passthrough(self, tape):
        x = leaf(tape, np.random.default_rng(0).standard_normal((1, 4, 2, 2)))
        spec = mixers.MixerSpec("I", 4, alpha=Fraction(3, 4), block_index=0)
        out = mixers.mixer_I(x, spec, {"mix": _set(tape, 3, 0, identity=True)})
        np.testing.assert_array_equal(out.data, x.data)

    def test_parity_selects_segment(self, tape):
        # h=256, alpha=2/3: block 0 updates [0,170), block 1 updates [86,256)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 256, 2, 2)).astype(np.float32)
        xs = leaf(tape, x)
        sets = {"mix": _set(tape, 170, 2)}
        even = mixers.mixer_I(xs, mixers.MixerSpec("I", 256, alpha=Fraction(2, 3),
                                                   block_index=0), sets)
        odd = mixers.mixer_I(xs, mixers.MixerSpec("I", 256, alpha=Fraction(2, 3),
                                                  block_index=1), sets)
        assert (even.data[:, 170:] == x[:, 170:]).all()
        assert np.abs(even.data[:, :170] - x[:, :170]).max() > 1e-3
        assert (odd.data[:, :86] == x[:, :86]).all()
        assert np.abs(odd.data[:, 86:] - x[:, 86:]).max() > 1e-3

    def test_two_set_params_unused_side_ignored(self, tape):
        rng = np.random.default_rng(3)
        x = leaf(tape, rng.standard_normal((1, 8, 2, 2)))
        spec = mixers.MixerSpec("I", 8, alpha=Fraction(2, 3), block_index=0)
        left = _set(tape, 5, 4)
        zero_right = _set(tape, 5, 5)
        out_both = mixers.mixer_I(x, spec, {"left": left, "right": zero_right})
        out_single = mixers.mixer_I(x, spec, {"mix": left})
        np.testing.assert_array_equal(out_both.data, out_single.data)

    def test_alpha_half_rejected(self):
        with pytest.raises(ConfigError):
            mixers.MixerSpec("I", 8, alpha=Fraction(1, 2))


class TestMixerII:
    def test_rotation(self, tape):
        # h=256, s=3, block 4 -> segment index 1, range [85, 170)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 256, 2, 2)).astype(np.float32)
        spec = mixers.MixerSpec("II", 256, s=3, block_index=4)
        out = mixers.mixer_II(leaf(tape, x), spec, {"mix": _set(tape, 85, 7)})
        assert (out.data[:, :85] == x[:, :85]).all()
        assert (out.data[:, 170:] == x[:, 170:]).all()
        assert np.abs(out.data[:, 85:170] - x[:, 85:170]).max() > 1e-3

    def test_identity_weights(self, tape):
        x = leaf(tape, np.random.default_rng(8).standard_normal((2, 6, 2, 2)))
        spec = mixers.MixerSpec("II", 6, s=3, block_index=0)
        out = mixers.mixer_II(x, spec, {"mix": _set(tape, 2, 0, identity=True)})
        np.testing.assert_array_equal(out.data, x.data)

    def test_single_segment_rejected(self):
        with pytest.raises(ConfigError):
            mixers.MixerSpec("II", 8, s=1)

    def test_coverage_over_cycle(self):
        # every channel is updated at least once in any s consecutive blocks
        h, s = 7, 3
        for start in range(6):
            touched = np.zeros(h, dtype=bool)
            for i in range(start, start + s):
                a, b = mixers.segment_bounds(h, s)[i % s]
                touched[a:b] = True
            assert touched.all()

    def test_variant_I_coverage_two_blocks(self):
        h = 16
        ranges = mixers.overlap_ranges(h, Fraction(2, 3))
        for start in range(4):
            touched = np.zeros(h, dtype=bool)
            overlap_hits = np.zeros(h, dtype=int)
            for i in range(start, start + 2):
                a, b = ranges[i % 2]
                touched[a:b] = True
                overlap_hits[a:b] += 1
            assert touched.all()
            m = mixers.overlap_m(h, Fraction(2, 3))
            assert (overlap_hits[h - m:m] == 2).all()


class TestMixerIIIandConv3D:
    def test_identity_shared_weights(self, tape):
        x = leaf(tape, np.random.default_rng(9).standard_normal((1, 8, 3, 3)))
        spec = mixers.MixerSpec("III", 8, s=2)
        out = mixers.mixer_III(x, spec, {"mix": _set(tape, 4, 0, identity=True)})
        np.testing.assert_array_equal(out.data, x.data)

    def test_segment_permutation_equivariance(self, tape):
        # shared weights: permuting input segments == permuting output segments
        rng = np.random.default_rng(10)
        x = rng.standard_normal((1, 8, 2, 2))
        spec = mixers.MixerSpec("III", 8, s=2)
        sets = {"mix": _set(tape, 4, 11)}
        y = mixers.mixer_III(leaf(tape, x), spec, sets).data
        xsw = np.concatenate([x[:, 4:], x[:, :4]], axis=1)
        ysw = mixers.mixer_III(leaf(tape, xsw), spec, sets).data
        np.testing.assert_array_equal(ysw, np.concatenate([y[:, 4:], y[:, :4]], axis=1))

    def test_equiv_3d_after_interleave(self):
        assert verify.check_III_equiv_3d(8, 2, seed=0) < 1e-6

    def test_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            mixers.MixerSpec("III", 10, s=3)
        with pytest.raises(ConfigError):
            mixers.MixerSpec("Conv3D", 10, s=4)

    def test_3d_identity_selecting_kernels_permute(self, tape):
        # h=4, s=2, kernel j = onehot(j): out[j*2+i] = x[i*2+j]
        x = np.arange(4.0).reshape(1, 4, 1, 1)
        spec = mixers.MixerSpec("Conv3D", 4, s=2)
        out = mixers.mixer_3d(leaf(tape, x), spec,
                              {"mix": _set(tape, 2, 0, identity=True)})
        np.testing.assert_array_equal(out.data.ravel(), [0.0, 2.0, 1.0, 3.0])

    def test_3d_constant_input_constant_maps(self, tape):
        x = np.full((1, 8, 3, 3), 2.0)
        spec = mixers.MixerSpec("Conv3D", 8, s=4)
        w, _ = _set(tape, 2, 12)
        zb = leaf(tape, np.zeros((1, 2, 1, 1)))
        out = mixers.mixer_3d(leaf(tape, x), spec, {"mix": (w, zb)})
        spread = out.data.max(axis=(2, 3)) - out.data.min(axis=(2, 3))
        assert np.abs(spread).max() < 1e-12

    def test_3d_matches_bruteforce(self, tape):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 6, 3, 3)).astype(np.float32)
        w = rng.standard_normal((3, 3)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        spec = mixers.MixerSpec("Conv3D", 6, s=2)
        out = mixers.mixer_3d(leaf(tape, x), spec,
                              {"mix": (leaf(tape, w.reshape(3, 3, 1, 1)),
                                       leaf(tape, b.reshape(1, 3, 1, 1)))})
        ref = verify.conv3d_channel_bruteforce(x, w, b, segments=2)
        assert np.abs(out.data - ref).max() < 1e-6


class TestMixerIV:
    def test_all_identity(self, tape):
        x = leaf(tape, np.random.default_rng(14).standard_normal((1, 7, 2, 2)))
        spec = mixers.MixerSpec("IV", 7, s=3)
        params = {f"mix{i}": _set(tape, b - a, 0, identity=True)
                  for i, (a, b) in enumerate(mixers.segment_bounds(7, 3))}
        np.testing.assert_array_equal(mixers.mixer_IV(x, spec, params).data, x.data)

    def test_parameter_count_h256_s3(self):
        spec = mixers.MixerSpec("IV", 256, s=3)
        shapes = mixers.param_shapes(spec)
        total = sum(w[0] * w[1] + b[1] for w, b in shapes.values())
        assert total == 85 * 85 + 85 + 85 * 85 + 85 + 86 * 86 + 86 == 22102

    def test_zeroed_segment_isolated(self, tape):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((1, 8, 2, 2))
        spec = mixers.MixerSpec("IV", 8, s=2)
        p0 = _set(tape, 4, 16)
        zero = (leaf(tape, np.zeros((4, 4, 1, 1))), leaf(tape, np.zeros((1, 4, 1, 1))))
        out = mixers.mixer_IV(leaf(tape, x), spec, {"mix0": p0, "mix1": zero})
        assert (out.data[:, 4:] == 0).all()
        assert np.abs(out.data[:, :4]).max() > 1e-3


class TestMixerV:
    def test_both_identities(self, tape):
        x = leaf(tape, np.random.default_rng(17).standard_normal((1, 4, 2, 2)))
        spec = mixers.MixerSpec("V", 4, alpha=Fraction(3, 4))
        eye = _set(tape, 3, 0, identity=True)
        out = mixers.mixer_V(x, spec, {"mixL": eye, "mixR": eye})
        np.testing.assert_array_equal(out.data, x.data)

    def test_hand_composition_overlap(self, tape):
        # h=4, alpha=3/4 -> m=3; left [0,3), right [1,4); sequential compose.
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
        rng = np.random.default_rng(18)
        wl = rng.standard_normal((3, 3))
        wr = rng.standard_normal((3, 3))
        bl = rng.standard_normal(3)
        br = rng.standard_normal(3)
        t = Tape()
        spec = mixers.MixerSpec("V", 4, alpha=Fraction(3, 4))
        out = mixers.mixer_V(
            t.leaf(Tensor4(x)), spec,
            {"mixL": (t.leaf(Tensor4(wl.reshape(3, 3, 1, 1))),
                      t.leaf(Tensor4(bl.reshape(1, 3, 1, 1)))),
             "mixR": (t.leaf(Tensor4(wr.reshape(3, 3, 1, 1))),
                      t.leaf(Tensor4(br.reshape(1, 3, 1, 1))))})
        v = x.ravel().copy()
        v[0:3] = wl @ v[0:3] + bl
        v[1:4] = wr @ v[1:4] + br
        np.testing.assert_allclose(out.data.ravel(), v, atol=1e-12)

    def test_identity_right_reduces_to_mixer_I_even(self, tape):
        rng = np.random.default_rng(19)
        x = rng.standard_normal((1, 8, 2, 2))
        left = _set(tape, 5, 20)
        eye = _set(tape, 5, 0, identity=True)
        spec_v = mixers.MixerSpec("V", 8, alpha=Fraction(2, 3))
        spec_i = mixers.MixerSpec("I", 8, alpha=Fraction(2, 3), block_index=0)
        out_v = mixers.mixer_V(leaf(tape, x), spec_v, {"mixL": left, "mixR": eye})
        out_i = mixers.mixer_I(leaf(tape, x), spec_i, {"mix": left})
        np.testing.assert_array_equal(out_v.data, out_i.data)


class TestParamCountIdentities:
    @pytest.mark.parametrize("h,alpha", [(256, Fraction(2, 3)), (64, Fraction(3, 5))])
    def test_variant_I_and_V_weight_counts(self, h, alpha):
        m = mixers.overlap_m(h, alpha)
        wI = mixers.param_shapes(mixers.MixerSpec("I", h, alpha=alpha))
        assert sum(w[0] * w[1] for w, _ in wI.values()) == m * m
        wV = mixers.param_shapes(mixers.MixerSpec("V", h, alpha=alpha))
        assert sum(w[0] * w[1] for w, _ in wV.values()) == 2 * m * m

    @pytest.mark.parametrize("h,s", [(256, 3), (256, 4), (60, 7)])
    def test_variant_II_III_IV_weight_counts(self, h, s):
        bounds = mixers.segment_bounds(h, s)
        for i in range(s):
            wII = mixers.param_shapes(mixers.MixerSpec("II", h, s=s, block_index=i))
            a, b = bounds[i]
            assert sum(w[0] * w[1] for w, _ in wII.values()) == (b - a) ** 2
        wIV = mixers.param_shapes(mixers.MixerSpec("IV", h, s=s))
        assert (sum(w[0] * w[1] for w, _ in wIV.values())
                == sum((b - a) ** 2 for a, b in bounds))
        if h % s == 0:
            wIII = mixers.param_shapes(mixers.MixerSpec("III", h, s=s))
            assert sum(w[0] * w[1] for w, _ in wIII.values()) == (h // s) ** 2


class TestInterleavePermutation:
    def test_round_trip(self):
        perm = mixers.interleave_permutation(12, 3)
        assert sorted(perm.tolist()) == list(range(12))
        d = 4
        for j in range(d):
            for i in range(3):
                assert perm[j * 3 + i] == i * d + j
