"""Closed-form parameter and MAC accounting, independent of the tensor runtime.

FLOPs are reported as multiply-accumulates (one MAC = 1), with one extra add
per output element for the bias; normalization, activation, residual and
pooling costs are excluded. Parameter rows separate conv/linear weights,
biases and norm affine pairs; batch-norm running statistics are state, not
trainable parameters, and never appear here.
"""

import warnings
from dataclasses import dataclass, replace
from fractions import Fraction

from . import mixers
from .errors import ConfigError

CSV_HEADER = "name,weights,biases,norm,macs"

ALPHA_GRID = tuple(Fraction(i, 2 * i - 1) for i in range(2, 7))  # 2/3 .. 6/11
SEGMENT_GRID = tuple(range(2, 9))


@dataclass(frozen=True)
class LayerCost:
    name: str
    weights: int
    biases: int
    norm: int
    macs: int

    @property
    def trainable(self):
        return self.weights + self.biases + self.norm


@dataclass
class CostReport:
    config: object
    rows: list
    input_hw: int | None = None
    analytic_params_saving: Fraction | None = None

    @property
    def total_weights(self):
        return sum(r.weights for r in self.rows)

    @property
    def total_biases(self):
        return sum(r.biases for r in self.rows)

    @property
    def total_norm(self):
        return sum(r.norm for r in self.rows)

    @property
    def trainable_params(self):
        return sum(r.trainable for r in self.rows)

    @property
    def total_macs(self):
        return sum(r.macs for r in self.rows)

    def totals_row(self):
        return LayerCost("total", self.total_weights, self.total_biases,
                         self.total_norm, self.total_macs)

    def csv_text(self):
        lines = [CSV_HEADER]
        for r in self.rows + [self.totals_row()]:
            lines.append(f"{r.name},{r.weights},{r.biases},{r.norm},{r.macs}")
        return "\n".join(lines) + "\n"

    def table(self):
        widths = (32, 10, 8, 8, 14)
        cols = CSV_HEADER.split(",")
        out = ["".join(c.ljust(w) for c, w in zip(cols, widths))]
        for r in self.rows + [self.totals_row()]:
            vals = (r.name, r.weights, r.biases, r.norm, r.macs)
            out.append("".join(str(v).ljust(w) for v, w in zip(vals, widths)))
        return "\n".join(out)


def _mixer_counts(spec):
    """(weights, biases) allocated by one block's channel mixer."""
    weights = biases = 0
    for wshape, bshape in mixers.param_shapes(spec).values():
        weights += wshape[0] * wshape[1]
        biases += bshape[1]
    return weights, biases


def _mixer_macs(spec, grid):
    """MACs (incl. bias adds) of one block's channel mixer on a grid of positions."""
    h = spec.h
    if spec.variant == "I":
        m = mixers.overlap_m(h, spec.alpha)
        return grid * m * (m + 1)
    if spec.variant == "V":
        m = mixers.overlap_m(h, spec.alpha)
        return 2 * grid * m * (m + 1)
    if spec.variant == "II":
        a, b = mixers.segment_bounds(h, spec.s)[spec.block_index % spec.s]
        w = b - a
        return grid * w * (w + 1)
    if spec.variant in ("III", "Conv3D"):
        d = h // spec.s
        return grid * h * (d + 1)
    if spec.variant == "IV":
        return grid * sum((b - a) * (b - a + 1)
                          for a, b in mixers.segment_bounds(h, spec.s))
    if spec.variant == "Full":
        return grid * h * (h + 1)
    raise ConfigError(f"unknown variant {spec.variant!r}")


def _rows(config, grid):
    """Per-layer cost rows; grid = number of post-patch spatial positions
    (0 to skip MAC accounting)."""
    config.validate()
    h, c, p, k = config.h, config.in_channels, config.p, config.k
    rows = [LayerCost("patch_embed", c * p * p * h, h, 2 * h,
                      grid * h * (c * p * p + 1))]
    sp = config.resolved_spatial()
    for i in range(config.b):
        if sp == "separable1d":
            rows.append(LayerCost(f"block{i}.dw_width", k * h, h, 2 * h,
                                  grid * h * (k + 1)))
            rows.append(LayerCost(f"block{i}.dw_height", k * h, h, 2 * h,
                                  grid * h * (k + 1)))
        elif sp == "full2d":
            rows.append(LayerCost(f"block{i}.dw2d", k * k * h, h, 2 * h,
                                  grid * h * (k * k + 1)))
        spec = config.mixer_spec(i)
        if spec is not None:
            w, b = _mixer_counts(spec)
            rows.append(LayerCost(f"block{i}.mix", w, b, 2 * h,
                                  _mixer_macs(spec, grid)))
    rows.append(LayerCost("head", h * config.classes, config.classes, 0,
                          config.classes * (h + 1)))
    return rows


def _saving_or_none(config):
    variant = config.channel_variant()
    if variant in (None, "Full"):
        return None
    return analytic_saving(variant, alpha=config.alpha, s=config.s)


def count_params(config):
    """Exact trainable parameter counts per layer (MACs left at zero)."""
    return CostReport(config, _rows(config, 0),
                      analytic_params_saving=_saving_or_none(config))


def count_flops(config, input_hw):
    """Per-layer MAC counts for a square input of side input_hw."""
    if input_hw % config.p:
        raise ConfigError(f"input size {input_hw} not divisible by patch size {config.p}")
    grid = (input_hw // config.p) ** 2
    return CostReport(config, _rows(config, grid), input_hw=input_hw,
                      analytic_params_saving=_saving_or_none(config))


def analytic_saving(variant, alpha=None, s=None, kind="params"):
    """Per-block channel-mix reduction vs dense h^2 mixing, as an exact fraction.

    Parameter savings: I -> 1-a^2, II/III/Conv3D -> 1-1/s^2, IV -> 1-1/s,
    V -> 1-2a^2 (negative above a = 1/sqrt(2); a warning is emitted). FLOP
    savings coincide except for III/Conv3D where every segment is computed,
    giving 1 - 1/s.
    """
    if kind not in ("params", "flops"):
        raise ConfigError(f"kind must be 'params' or 'flops', got {kind!r}")
    if variant in mixers.OVERLAP_VARIANTS:
        if alpha is None:
            raise ConfigError(f"variant {variant} needs alpha")
        a = Fraction(alpha)
        if not Fraction(1, 2) < a < 1:
            raise ConfigError(f"alpha must lie in (1/2, 1), got {a}")
        if variant == "I":
            return 1 - a * a
        saving = 1 - 2 * a * a
        if saving <= 0:
            warnings.warn(
                f"variant V with alpha={a} saves nothing (1-2a^2 = {saving})",
                RuntimeWarning, stacklevel=2)
        return saving
    if variant in mixers.SEGMENT_VARIANTS:
        if s is None or s < 2:
            raise ConfigError(f"variant {variant} needs segments >= 2")
        if variant == "IV":
            return 1 - Fraction(1, s)
        if variant in ("III", "Conv3D") and kind == "flops":
            return 1 - Fraction(1, s)
        return 1 - Fraction(1, s * s)
    if variant == "Full":
        return Fraction(0)
    raise ConfigError(f"no analytic saving for variant {variant!r}")


def enumerated_block_saving(config):
    """Measured mean per-block channel-mix weight saving vs dense h^2."""
    per_block = [_mixer_counts(config.mixer_spec(i))[0] for i in range(config.b)]
    if not per_block:
        raise ConfigError("model has no channel mixing to measure")
    mean_w = sum(per_block) / len(per_block)
    return 1 - mean_w / (config.h * config.h)


def baseline_config(config):
    """The ConvMixer of the same h/b/p/k/classes used for comparison ratios."""
    return replace(config, variant="ConvMixer", alpha=None, s=None,
                   spatial_mode=None, channel_mode=None)


def compare_to_baseline(config, input_hw):
    """Whole-model params/MACs of config relative to its ConvMixer baseline."""
    ours = count_flops(config, input_hw)
    base = count_flops(baseline_config(config), input_hw)
    return {
        "params": ours.trainable_params,
        "baseline_params": base.trainable_params,
        "params_ratio": ours.trainable_params / base.trainable_params,
        "macs": ours.total_macs,
        "baseline_macs": base.total_macs,
        "macs_ratio": ours.total_macs / base.total_macs,
    }


def sweep(config, knob=None, grid=None, input_hw=32):
    """Cost table over a knob grid (alpha for I/V, segments for II/III/IV/3D).

    Returns rows of dicts: knob value, trainable params, MACs, analytic saving.
    """
    variant = config.variant
    if knob is None:
        knob = "alpha" if variant in mixers.OVERLAP_VARIANTS else "segments"
    if knob == "alpha":
        if variant not in mixers.OVERLAP_VARIANTS:
            raise ConfigError(f"variant {variant} has no alpha knob")
        values = list(grid) if grid is not None else list(ALPHA_GRID)
        cfgs = [replace(config, alpha=Fraction(v)) for v in values]
    elif knob == "segments":
        if variant not in mixers.SEGMENT_VARIANTS:
            raise ConfigError(f"variant {variant} has no segments knob")
        values = list(grid) if grid is not None else [
            s for s in SEGMENT_GRID
            if variant in ("II", "IV") or config.h % s == 0]
        cfgs = [replace(config, s=int(v)) for v in values]
    else:
        raise ConfigError(f"unknown sweep knob {knob!r}")
    rows = []
    for value, cfg in zip(values, cfgs):
        rep = count_flops(cfg, input_hw)
        rows.append({
            "knob": knob,
            "value": Fraction(value) if knob == "alpha" else int(value),
            "params": rep.trainable_params,
            "macs": rep.total_macs,
            "saving": analytic_saving(cfg.channel_variant(),
                                      alpha=cfg.alpha, s=cfg.s),
        })
    return rows
