"""Model configs, network assembly and forward execution.

A built model is a flat registry of named parameter arrays plus the running
statistics of its batch norms. Forward passes bind the registry onto a fresh
tape, so gradients come straight out of ``tape.backward``.
"""

import re
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import costs, layers, mixers, tensor
from .errors import ConfigError, ParseError, ShapeError
from .tensor import Tape, Tensor4

VARIANTS = mixers.ALL_VARIANTS + ("ConvMixer",)
ACTIVATIONS = ("gelu", "relu")
NORMS = ("batch", "layer")
RESIDUALS = ("after_spatial", "after_channel", "none")
SPATIAL_MODES = ("separable1d", "full2d", "none")
CHANNEL_MODES = ("split", "full", "none")

NAME_GRAMMAR = ("model names are 'SplitMixer-<A>-<h>/<b>' with "
                "A in {I,II,III,IV,V,3D,Conv3D,Full}, or 'ConvMixer-<h>/<b>'")

_SPLIT_RE = re.compile(r"^SplitMixer-([A-Za-z0-9]+)-(\d+)/(\d+)$")
_CONV_RE = re.compile(r"^ConvMixer-(\d+)/(\d+)$")


def parse_name(text):
    """Extract {variant, h, b} from a model name; raises ParseError otherwise."""
    m = _SPLIT_RE.match(text.strip())
    if m:
        variant = {"3D": "Conv3D"}.get(m.group(1), m.group(1))
        if variant not in mixers.ALL_VARIANTS:
            raise ParseError(f"unknown SplitMixer type {m.group(1)!r}; {NAME_GRAMMAR}")
        return {"variant": variant, "h": int(m.group(2)), "b": int(m.group(3))}
    m = _CONV_RE.match(text.strip())
    if m:
        return {"variant": "ConvMixer", "h": int(m.group(1)), "b": int(m.group(2))}
    raise ParseError(f"cannot parse model name {text!r}; {NAME_GRAMMAR}")


@dataclass
class ModelConfig:
    """Architecture plus the ablation toggles of the experiment grid."""

    variant: str = "I"
    h: int = 256
    b: int = 8
    p: int = 2
    k: int = 5
    alpha: Fraction | None = None
    s: int | None = None
    classes: int = 10
    in_channels: int = 3
    activation: str = "gelu"
    norm: str = "batch"
    residual: str = "after_spatial"
    spatial_mode: str | None = None
    channel_mode: str | None = None
    dtype: str = "f32"

    def __post_init__(self):
        if self.alpha is not None:
            self.alpha = Fraction(self.alpha)
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r} (have {VARIANTS})")
        if self.h < 8:
            raise ConfigError(f"h must be >= 8, got {self.h}")
        if self.b < 1 or self.p < 1:
            raise ConfigError("b and p must be >= 1")
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"k must be odd and >= 1, got {self.k}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}")
        if self.residual not in RESIDUALS:
            raise ConfigError(f"residual must be one of {RESIDUALS}")
        if self.spatial_mode is not None and self.spatial_mode not in SPATIAL_MODES:
            raise ConfigError(f"spatial_mode must be one of {SPATIAL_MODES}")
        if self.channel_mode is not None and self.channel_mode not in CHANNEL_MODES:
            raise ConfigError(f"channel_mode must be one of {CHANNEL_MODES}")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError("dtype must be f32 or f64")

        needs_alpha = self.variant in mixers.OVERLAP_VARIANTS
        needs_s = self.variant in mixers.SEGMENT_VARIANTS
        if needs_alpha:
            if self.alpha is None:
                raise ConfigError(f"variant {self.variant} requires alpha")
            if self.s is not None:
                raise ConfigError(f"variant {self.variant} takes alpha, not segments")
            mixers.overlap_m(self.h, self.alpha)
        elif needs_s:
            if self.s is None:
                raise ConfigError(f"variant {self.variant} requires segments")
            if self.alpha is not None:
                raise ConfigError(f"variant {self.variant} takes segments, not alpha")
            # MixerSpec enforces divisibility / range rules.
            mixers.MixerSpec(self.variant, self.h, s=self.s)
        else:
            if self.alpha is not None or self.s is not None:
                raise ConfigError(f"variant {self.variant} takes neither alpha nor segments")
        if self.resolved_channel() == "split" and self.variant in ("Full", "ConvMixer"):
            raise ConfigError(f"variant {self.variant} has no split channel mixing")

    def resolved_spatial(self):
        if self.spatial_mode is not None:
            return self.spatial_mode
        return "full2d" if self.variant == "ConvMixer" else "separable1d"

    def resolved_channel(self):
        if self.channel_mode is not None:
            return self.channel_mode
        return "full" if self.variant in ("Full", "ConvMixer") else "split"

    def channel_variant(self):
        """Mixer variant actually built per block, or None when ablated away."""
        mode = self.resolved_channel()
        if mode == "none":
            return None
        if mode == "full":
            return "Full"
        return self.variant

    def mixer_spec(self, block_index):
        variant = self.channel_variant()
        if variant is None:
            return None
        if variant in mixers.OVERLAP_VARIANTS:
            return mixers.MixerSpec(variant, self.h, alpha=self.alpha,
                                    block_index=block_index)
        if variant in mixers.SEGMENT_VARIANTS:
            return mixers.MixerSpec(variant, self.h, s=self.s,
                                    block_index=block_index)
        return mixers.MixerSpec("Full", self.h, block_index=block_index)

    def name(self):
        if self.variant == "ConvMixer":
            return f"ConvMixer-{self.h}/{self.b}"
        return f"SplitMixer-{self.variant}-{self.h}/{self.b}"


def config_to_dict(config):
    """JSON-safe dict form (alpha rendered as 'num/den')."""
    out = {}
    for f in config.__dataclass_fields__:
        v = getattr(config, f)
        if isinstance(v, Fraction):
            v = f"{v.numerator}/{v.denominator}"
        out[f] = v
    return out


def config_from_dict(d):
    d = dict(d)
    if d.get("alpha") is not None:
        d["alpha"] = Fraction(d["alpha"])
    return ModelConfig(**d)


def config_from_name(text, **overrides):
    """Build a ModelConfig from a paper-style name plus keyword overrides."""
    fields = parse_name(text)
    fields.update(overrides)
    variant = fields["variant"]
    if variant in mixers.OVERLAP_VARIANTS:
        fields.setdefault("alpha", Fraction(2, 3))
    elif variant in mixers.SEGMENT_VARIANTS:
        fields.setdefault("s", 2)
    return ModelConfig(**fields)


def _norm_names(prefix):
    return (f"{prefix}.gamma", f"{prefix}.beta")


class Model:
    """A built network: config, parameter registry and norm running stats."""

    def __init__(self, config, seed=0):
        config.validate()
        self.config = config
        self.params = {}
        self.state = {}
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self._build_registry()
        del self._rng
        expected = costs.count_params(config).trainable_params
        got = self.trainable_count()
        if got != expected:
            raise ConfigError(
                f"built parameter count {got} disagrees with cost model {expected}")

    # -- construction ------------------------------------------------------

    def _weight(self, name, shape, fan_in):
        self.params[name] = tensor.kaiming_fill(self._rng, shape, fan_in,
                                                self.config.dtype)

    def _zeros(self, name, c):
        self.params[name] = np.zeros((1, c, 1, 1), dtype=tensor.DTYPES[self.config.dtype])

    def _norm_params(self, prefix, c):
        dt = tensor.DTYPES[self.config.dtype]
        gamma, beta = _norm_names(prefix)
        self.params[gamma] = np.ones((1, c, 1, 1), dtype=dt)
        self.params[beta] = np.zeros((1, c, 1, 1), dtype=dt)
        if self.config.norm == "batch":
            self.state[f"{prefix}.running_mean"] = np.zeros((1, c, 1, 1), dtype=dt)
            self.state[f"{prefix}.running_var"] = np.ones((1, c, 1, 1), dtype=dt)

    def _build_registry(self):
        cfg = self.config
        h, c, p, k = cfg.h, cfg.in_channels, cfg.p, cfg.k
        self._weight("patch.weight", (h, c, p, p), c * p * p)
        self._zeros("patch.bias", h)
        self._norm_params("patch_norm", h)
        for i in range(cfg.b):
            sp = cfg.resolved_spatial()
            if sp == "separable1d":
                self._weight(f"block{i}.dww.weight", (h, 1, 1, k), k)
                self._zeros(f"block{i}.dww.bias", h)
                self._norm_params(f"block{i}.norm1", h)
                self._weight(f"block{i}.dwh.weight", (h, 1, k, 1), k)
                self._zeros(f"block{i}.dwh.bias", h)
                self._norm_params(f"block{i}.norm2", h)
            elif sp == "full2d":
                self._weight(f"block{i}.dw.weight", (h, 1, k, k), k * k)
                self._zeros(f"block{i}.dw.bias", h)
                self._norm_params(f"block{i}.norm1", h)
            spec = cfg.mixer_spec(i)
            if spec is not None:
                for set_name, (wshape, bshape) in mixers.param_shapes(spec).items():
                    self._weight(f"block{i}.{set_name}.weight", wshape, wshape[1])
                    self._zeros(f"block{i}.{set_name}.bias", bshape[1])
                self._norm_params(f"block{i}.normc", h)
        self._weight("head.weight", (cfg.classes, h, 1, 1), h)
        self._zeros("head.bias", cfg.classes)

    # -- execution ---------------------------------------------------------

    def forward(self, x, train=False, update_stats=None, taps=None, grad=None):
        """Run the network; returns (tape, logits node).

        ``taps``, if a list, receives a copy of the activation after the patch
        embedding and after every block (the feature-dump tap points). ``grad``
        defaults to ``train``; with grad off the tape retains nothing, so
        inference does not hold every intermediate activation alive.
        """
        cfg = self.config
        if isinstance(x, Tensor4):
            x = x.data
        x = np.ascontiguousarray(x, dtype=tensor.DTYPES[cfg.dtype])
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"input must be (n,{cfg.in_channels},H,W), got {x.shape}")
        t = Tape(grad=train if grad is None else grad)
        nodes = {name: t.param(name, Tensor4(arr)) for name, arr in self.params.items()}

        def norm(z, prefix):
            gamma, beta = (nodes[n] for n in _norm_names(prefix))
            if cfg.norm == "batch":
                return layers.batchnorm(
                    z, gamma, beta,
                    self.state[f"{prefix}.running_mean"],
                    self.state[f"{prefix}.running_var"],
                    train=train, update_stats=update_stats)
            return layers.layernorm(z, gamma, beta)

        def act_norm(z, prefix):
            return norm(layers.activation(z, cfg.activation), prefix)

        xn = t.leaf(Tensor4(x), "input")
        z = act_norm(layers.patch_embed(xn, nodes["patch.weight"],
                                        nodes["patch.bias"], cfg.p), "patch_norm")
        if taps is not None:
            taps.append(z.data.copy())

        sp = cfg.resolved_spatial()
        for i in range(cfg.b):
            zin = z
            if sp == "separable1d":
                u = act_norm(layers.depthwise1d(z, nodes[f"block{i}.dww.weight"],
                                                nodes[f"block{i}.dww.bias"], "width"),
                             f"block{i}.norm1")
                u = act_norm(layers.depthwise1d(u, nodes[f"block{i}.dwh.weight"],
                                                nodes[f"block{i}.dwh.bias"], "height"),
                             f"block{i}.norm2")
            elif sp == "full2d":
                u = act_norm(layers.depthwise2d(z, nodes[f"block{i}.dw.weight"],
                                                nodes[f"block{i}.dw.bias"]),
                             f"block{i}.norm1")
            else:
                u = z
            if cfg.residual == "after_spatial" and sp != "none":
                u = tensor.add(u, zin)

            spec = cfg.mixer_spec(i)
            if spec is not None:
                params = {}
                for set_name in mixers.param_shapes(spec):
                    params[set_name] = (nodes[f"block{i}.{set_name}.weight"],
                                        nodes[f"block{i}.{set_name}.bias"])
                y = act_norm(mixers.apply_mixer(u, spec, params), f"block{i}.normc")
                if cfg.residual == "after_channel":
                    y = tensor.add(y, u)
            else:
                y = u
            z = y
            if taps is not None:
                taps.append(z.data.copy())

        pooled = layers.global_avg_pool(z)
        logits = layers.linear(pooled, nodes["head.weight"], nodes["head.bias"])
        return t, logits

    def loss(self, x, labels, train=False, update_stats=None):
        """Forward plus cross-entropy; returns (tape, loss node, logits node)."""
        t, logits = self.forward(x, train=train, update_stats=update_stats)
        return t, layers.cross_entropy(logits, labels), logits

    def predict(self, x, batch_size=None):
        """Eval-mode logits as an (n, classes) array."""
        n = x.shape[0]
        if batch_size is None or batch_size >= n:
            _, logits = self.forward(x, train=False)
            return logits.data.reshape(n, self.config.classes)
        outs = []
        for lo in range(0, n, batch_size):
            _, logits = self.forward(x[lo:lo + batch_size], train=False)
            outs.append(logits.data.reshape(-1, self.config.classes))
        return np.concatenate(outs, axis=0)

    # -- bookkeeping -------------------------------------------------------

    def trainable_count(self):
        return sum(arr.size for arr in self.params.values())

    def clone(self):
        out = Model.__new__(Model)
        out.config = replace(self.config)
        out.params = {k: v.copy() for k, v in self.params.items()}
        out.state = {k: v.copy() for k, v in self.state.items()}
        return out

    def load_arrays(self, params, state):
        """Overwrite registry contents in place (shapes must match)."""
        for name, arr in params.items():
            if name not in self.params:
                raise ConfigError(f"unknown parameter {name!r}")
            if self.params[name].shape != arr.shape:
                raise ShapeError(f"shape mismatch for {name}: "
                                 f"{self.params[name].shape} vs {arr.shape}")
            self.params[name][...] = arr
        for name, arr in state.items():
            if name not in self.state:
                raise ConfigError(f"unknown state entry {name!r}")
            self.state[name][...] = arr


def build(config, seed=0):
    return Model(config, seed=seed)


def _write_pgm(path, arr):
    """Binary PGM (P5), 8-bit, from a (H, W) uint8 array."""
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def dump_features(model, image, out_dir):
    """Write per-channel grayscale maps after patch embedding and each block.

    Files are named ``tap<t>_ch<c>.pgm`` with tap 0 the patch embedding and
    tap l the output of block l. Each map is min-max normalized on its own.
    """
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[None]
    if img.shape[0] != 1:
        raise ShapeError(f"dump_features takes a single image, got batch {img.shape[0]}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    taps = []
    model.forward(img, train=False, taps=taps)
    written = []
    for t, fmap in enumerate(taps):
        maps = fmap[0]
        for ch in range(maps.shape[0]):
            m = maps[ch]
            lo, hi = float(m.min()), float(m.max())
            if hi > lo:
                scaled = np.round((m - lo) / (hi - lo) * 255.0)
            else:
                scaled = np.zeros_like(m)
            path = out_dir / f"tap{t}_ch{ch}.pgm"
            _write_pgm(path, scaled.astype(np.uint8))
            written.append(path)
    return written
