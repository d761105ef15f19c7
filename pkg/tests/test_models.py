import numpy as np
import pytest
from fractions import Fraction
from pathlib import Path

from splitmixer import costs, models
from splitmixer.errors import ConfigError, ParseError

ALPHAS = [Fraction(i, 2 * i - 1) for i in range(2, 7)]


class TestParseName:
    def test_splitmixer_name(self):
        assert models.parse_name("SplitMixer-I-256/8") == {
            "variant": "I", "h": 256, "b": 8}

    def test_convmixer_name(self):
        assert models.parse_name("ConvMixer-256/8") == {
            "variant": "ConvMixer", "h": 256, "b": 8}

    @pytest.mark.parametrize("bad", ["SplitMixer-256", "SplitMixer-Q-256/8",
                                     "ConvMixer-256", "SplitMixer-I-256x8", ""])
    def test_malformed_names(self, bad):
        with pytest.raises(ParseError) as e:
            models.parse_name(bad)
        assert "SplitMixer-<A>-<h>/<b>" in str(e.value)

    def test_3d_alias(self):
        assert models.parse_name("SplitMixer-3D-64/4")["variant"] == "Conv3D"

    def test_round_trip_name(self):
        cfg = models.config_from_name("SplitMixer-IV-64/4", s=3)
        assert cfg.name() == "SplitMixer-IV-64/4"


class TestConfigValidation:
    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            models.ModelConfig(variant="I", alpha=Fraction(2, 3), k=4)

    def test_missing_knob_rejected(self):
        with pytest.raises(ConfigError):
            models.ModelConfig(variant="I")
        with pytest.raises(ConfigError):
            models.ModelConfig(variant="II")

    def test_wrong_knob_rejected(self):
        with pytest.raises(ConfigError):
            models.ModelConfig(variant="I", alpha=Fraction(2, 3), s=2)
        with pytest.raises(ConfigError):
            models.ModelConfig(variant="ConvMixer", alpha=Fraction(2, 3))

    def test_divisibility_for_III(self):
        with pytest.raises(ConfigError):
            models.ModelConfig(variant="III", s=3, h=256)

    def test_split_without_mixing_variant_rejected(self):
        with pytest.raises(ConfigError):
            models.ModelConfig(variant="ConvMixer", channel_mode="split")


class TestForward:
    def test_cifar_logits_shape(self):
        cfg = models.ModelConfig(variant="I", h=32, b=2, alpha=Fraction(2, 3))
        m = models.build(cfg, seed=0)
        x = np.random.default_rng(0).uniform(0, 1, (4, 3, 32, 32)).astype(np.float32)
        _, logits = m.forward(x)
        assert logits.shape == (4, 10, 1, 1)
        assert m.predict(x).shape == (4, 10)

    def test_zero_params_give_flat_logits(self):
        cfg = models.ModelConfig(variant="I", h=16, b=1, alpha=Fraction(2, 3),
                                 classes=5)
        m = models.build(cfg, seed=0)
        for arr in m.params.values():
            arr[...] = 0.0
        x = np.random.default_rng(1).uniform(0, 1, (2, 3, 8, 8)).astype(np.float32)
        logits = m.predict(x)
        assert np.abs(logits - logits[:, :1]).max() == 0.0

    def test_eval_forward_deterministic(self):
        cfg = models.ModelConfig(variant="II", h=16, b=2, s=2, classes=4)
        m = models.build(cfg, seed=3)
        x = np.random.default_rng(2).uniform(0, 1, (3, 3, 16, 16)).astype(np.float32)
        assert m.predict(x).tobytes() == m.predict(x).tobytes()

    def test_batch_permutation_equivariance(self):
        cfg = models.ModelConfig(variant="I", h=16, b=2, alpha=Fraction(2, 3))
        m = models.build(cfg, seed=4)
        x = np.random.default_rng(3).uniform(0, 1, (5, 3, 8, 8)).astype(np.float32)
        perm = np.array([3, 0, 4, 1, 2])
        np.testing.assert_array_equal(m.predict(x)[perm], m.predict(x[perm]))

    def test_same_seed_same_model(self):
        cfg = models.ModelConfig(variant="V", h=16, b=2, alpha=Fraction(2, 3))
        a = models.build(cfg, seed=9)
        b = models.build(cfg, seed=9)
        for name in a.params:
            assert a.params[name].tobytes() == b.params[name].tobytes()

    def test_train_mode_updates_running_stats(self):
        cfg = models.ModelConfig(variant="I", h=16, b=1, alpha=Fraction(2, 3))
        m = models.build(cfg, seed=0)
        before = m.state["patch_norm.running_mean"].copy()
        x = np.random.default_rng(5).uniform(0, 1, (2, 3, 8, 8)).astype(np.float32)
        m.forward(x, train=True)
        assert (m.state["patch_norm.running_mean"] != before).any()
        m2 = models.build(cfg, seed=0)
        m2.forward(x, train=True, update_stats=False)
        assert (m2.state["patch_norm.running_mean"] == before).all()


def _grid_configs():
    base = dict(h=256, b=8, p=2, k=5, classes=10)
    for variant in ("I", "V"):
        for alpha in ALPHAS:
            yield models.ModelConfig(variant=variant, alpha=alpha, **base)
    for variant in ("II", "IV"):
        for s in range(2, 9):
            yield models.ModelConfig(variant=variant, s=s, **base)
    for variant in ("III", "Conv3D"):
        for s in (2, 4, 8):
            yield models.ModelConfig(variant=variant, s=s, **base)
    yield models.ModelConfig(variant="Full", **base)
    yield models.ModelConfig(variant="ConvMixer", **base)


@pytest.mark.parametrize("cfg", list(_grid_configs()),
                         ids=lambda c: f"{c.variant}-a{c.alpha}-s{c.s}")
def test_enumerated_counts_match_closed_form_on_grid(cfg):
    # build() itself asserts enumeration == closed form; do it explicitly too
    m = models.build(cfg, seed=0)
    assert m.trainable_count() == costs.count_params(cfg).trainable_params


class TestAblations:
    BASE = dict(variant="I", h=32, b=2, alpha=Fraction(2, 3), classes=4)

    def test_residual_toggles_change_output_not_shape_or_params(self):
        x = np.random.default_rng(7).uniform(0, 1, (2, 3, 16, 16)).astype(np.float32)
        outs = {}
        counts = {}
        for res in models.RESIDUALS:
            cfg = models.ModelConfig(residual=res, **self.BASE)
            m = models.build(cfg, seed=1)
            outs[res] = m.predict(x)
            counts[res] = m.trainable_count()
        assert len({v.shape for v in outs.values()}) == 1
        assert len(set(counts.values())) == 1
        assert np.abs(outs["after_spatial"] - outs["none"]).max() > 1e-6
        assert np.abs(outs["after_spatial"] - outs["after_channel"]).max() > 1e-6

    def test_spatial_only_drops_mixer_params(self):
        full = models.build(models.ModelConfig(**self.BASE), seed=0)
        spatial_only = models.build(
            models.ModelConfig(channel_mode="none", **self.BASE), seed=0)
        assert spatial_only.trainable_count() < full.trainable_count()
        assert not any(".mix" in k for k in spatial_only.params)

    def test_channel_only_uses_2d_spatial_conv(self):
        # Table-2 "channel only" keeps a k x k depthwise conv (appendix code)
        channel_only = models.build(
            models.ModelConfig(spatial_mode="full2d", **self.BASE), seed=0)
        assert any(".dw.weight" in k for k in channel_only.params)
        assert any(".mix." in k for k in channel_only.params)

    def test_pure_channel_mixing_builds_too(self):
        m = models.build(models.ModelConfig(spatial_mode="none", **self.BASE), seed=0)
        assert not any(".dw" in k for k in m.params)
        x = np.random.default_rng(8).uniform(0, 1, (2, 3, 8, 8)).astype(np.float32)
        assert m.predict(x).shape == (2, 4)

    def test_layernorm_has_no_running_stats(self):
        m = models.build(models.ModelConfig(norm="layer", **self.BASE), seed=0)
        assert not m.state
        x = np.random.default_rng(9).uniform(0, 1, (2, 3, 8, 8)).astype(np.float32)
        assert np.isfinite(m.predict(x)).all()


class TestDumpFeatures:
    def test_map_counts_and_dimensions(self, tmp_path):
        cfg = models.ModelConfig(variant="I", h=8, b=2, alpha=Fraction(2, 3))
        m = models.build(cfg, seed=0)
        img = np.random.default_rng(0).uniform(0, 1, (3, 32, 32)).astype(np.float32)
        written = models.dump_features(m, img, tmp_path)
        # one map per channel per tap point: (1 + b) taps
        assert len(written) == (1 + 2) * 8
        head = (tmp_path / "tap0_ch0.pgm").read_bytes()[:15]
        assert head.startswith(b"P5\n16 16\n255\n")

    def test_constant_zero_image_zero_bias_constant_maps(self, tmp_path):
        cfg = models.ModelConfig(variant="I", h=8, b=1, alpha=Fraction(2, 3))
        m = models.build(cfg, seed=0)
        img = np.zeros((3, 8, 8), dtype=np.float32)
        written = models.dump_features(m, img, tmp_path)
        for path in written:
            raw = path.read_bytes()
            pixels = raw.split(b"\n", 3)[3]
            assert len(set(pixels)) == 1  # constant map -> constant bytes
