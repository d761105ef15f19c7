"""Channel-mixing strategies over channel segments.

Variants:
    I       two overlapping segments, one mixed per block (parity-selected)
    II      s non-overlapping segments, one mixed per block (rotating)
    III     s equal segments, all mixed with one shared matrix
    IV      s non-overlapping segments, all mixed, unshared parameters
    V       two overlapping segments, both mixed sequentially
    Conv3D  channel-strided 3D convolution (interleaved output ordering)
    Full    ordinary 1x1 mixing across all channels (ConvMixer style)

Block index 0 is even and mixes the LEFT segment for variant I; variant II
rotates through segments with block_index mod s.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import layers
from .errors import ConfigError
from .tensor import Node

SEGMENT_VARIANTS = ("II", "III", "IV", "Conv3D")
OVERLAP_VARIANTS = ("I", "V")
ALL_VARIANTS = OVERLAP_VARIANTS + SEGMENT_VARIANTS + ("Full",)


@dataclass(frozen=True)
class MixerSpec:
    """One block's channel-mixing configuration."""

    variant: str
    h: int
    alpha: Fraction | None = None
    s: int | None = None
    block_index: int = 0

    def __post_init__(self):
        if self.variant not in ALL_VARIANTS:
            raise ConfigError(f"unknown mixer variant {self.variant!r}")
        if self.block_index < 0:
            raise ConfigError("block_index must be >= 0")
        if self.variant in OVERLAP_VARIANTS:
            if self.alpha is None or self.s is not None:
                raise ConfigError(f"variant {self.variant} takes alpha, not segments")
            overlap_m(self.h, self.alpha)
        elif self.variant in SEGMENT_VARIANTS:
            if self.s is None or self.alpha is not None:
                raise ConfigError(f"variant {self.variant} takes segments, not alpha")
            if self.s < 2:
                raise ConfigError(f"variant {self.variant} needs s >= 2, got {self.s}")
            if self.variant in ("III", "Conv3D") and self.h % self.s:
                raise ConfigError(
                    f"variant {self.variant} needs h divisible by s "
                    f"(h={self.h}, s={self.s})")
            segment_bounds(self.h, self.s)


def overlap_m(h, alpha):
    """Segment width m = floor(alpha*h); the two segments must overlap."""
    alpha = Fraction(alpha)
    if not Fraction(1, 2) < alpha < 1:
        raise ConfigError(f"alpha must lie in (1/2, 1), got {alpha}")
    m = int(alpha * h)
    if 2 * m <= h:
        raise ConfigError(f"floor(alpha*h)={m} does not overlap for h={h}")
    return m


def segment_bounds(h, s):
    """Partition [0,h) into s ranges; the last absorbs the remainder."""
    if s < 2:
        raise ConfigError(f"need at least 2 segments, got {s}")
    if s > h:
        raise ConfigError(f"more segments ({s}) than channels ({h})")
    w = h // s
    bounds = [(i * w, (i + 1) * w) for i in range(s - 1)]
    bounds.append(((s - 1) * w, h))
    return bounds


def overlap_ranges(h, alpha):
    """The two segment ranges of variants I/V: [0,m) and [h-m,h)."""
    m = overlap_m(h, alpha)
    return [(0, m), (h - m, h)]


def param_shapes(spec):
    """Parameter set shapes this block allocates: {set name: (weight, bias)}.

    Only the set a block actually uses is listed (variant I allocates one of
    the two per-parity sets; variant II one rotating set).
    """
    h = spec.h
    if spec.variant == "I":
        m = overlap_m(h, spec.alpha)
        return {"mix": ((m, m, 1, 1), (1, m, 1, 1))}
    if spec.variant == "V":
        m = overlap_m(h, spec.alpha)
        return {"mixL": ((m, m, 1, 1), (1, m, 1, 1)),
                "mixR": ((m, m, 1, 1), (1, m, 1, 1))}
    if spec.variant == "II":
        a, b = segment_bounds(h, spec.s)[spec.block_index % spec.s]
        w = b - a
        return {"mix": ((w, w, 1, 1), (1, w, 1, 1))}
    if spec.variant in ("III", "Conv3D"):
        d = h // spec.s
        return {"mix": ((d, d, 1, 1), (1, d, 1, 1))}
    if spec.variant == "IV":
        out = {}
        for i, (a, b) in enumerate(segment_bounds(h, spec.s)):
            w = b - a
            out[f"mix{i}"] = ((w, w, 1, 1), (1, w, 1, 1))
        return out
    if spec.variant == "Full":
        return {"mix": ((h, h, 1, 1), (1, h, 1, 1))}
    raise ConfigError(f"unknown variant {spec.variant!r}")


def _set(params, name):
    try:
        return params[name]
    except KeyError:
        raise ConfigError(f"mixer parameter set {name!r} missing") from None


def mixer_I(x, spec, params):
    """Mix [0,m) on even blocks with the left set, [h-m,h) on odd with the right."""
    left, right = overlap_ranges(spec.h, spec.alpha)
    if spec.block_index % 2 == 0:
        (a, b), key = left, "left"
    else:
        (a, b), key = right, "right"
    # A single-set params dict serves a built block; two-set dicts are allowed
    # (the inactive one is simply unused).
    w, bias = params[key] if key in params else _set(params, "mix")
    return layers.pointwise_slice(x, w, bias, a, b)


def mixer_II(x, spec, params):
    """Mix segment (block_index mod s) with its own parameters."""
    a, b = segment_bounds(spec.h, spec.s)[spec.block_index % spec.s]
    w, bias = _set(params, "mix")
    return layers.pointwise_slice(x, w, bias, a, b)


def mixer_III(x, spec, params):
    """Mix every segment with one shared (h/s)^2 matrix."""
    w, bias = _set(params, "mix")
    out = x
    for a, b in segment_bounds(spec.h, spec.s):
        out = layers.pointwise_slice(out, w, bias, a, b)
    return out


def mixer_IV(x, spec, params):
    """Mix every segment, each with its own parameters."""
    out = x
    for i, (a, b) in enumerate(segment_bounds(spec.h, spec.s)):
        w, bias = _set(params, f"mix{i}")
        out = layers.pointwise_slice(out, w, bias, a, b)
    return out


def mixer_V(x, spec, params):
    """Mix [0,m) first, then [h-m,h) on the result (overlap mixed twice)."""
    left, right = overlap_ranges(spec.h, spec.alpha)
    wl, bl = _set(params, "mixL")
    wr, br = _set(params, "mixR")
    out = layers.pointwise_slice(x, wl, bl, left[0], left[1])
    return layers.pointwise_slice(out, wr, br, right[0], right[1])


def mixer_3d(x, spec, params):
    """Channel mixing as a strided 3D convolution; output is interleaved."""
    w, bias = _set(params, "mix")
    return layers.channel_conv3d(x, w, bias, spec.s)


def mixer_full(x, spec, params):
    w, bias = _set(params, "mix")
    return layers.pointwise_slice(x, w, bias, 0, spec.h)


_DISPATCH = {
    "I": mixer_I,
    "II": mixer_II,
    "III": mixer_III,
    "IV": mixer_IV,
    "V": mixer_V,
    "Conv3D": mixer_3d,
    "Full": mixer_full,
}


def apply_mixer(x: Node, spec: MixerSpec, params) -> Node:
    return _DISPATCH[spec.variant](x, spec, params)


def interleave_permutation(h, s):
    """perm such that segment-major channels reordered by perm give the
    kernel-major (3D convolution) ordering: perm[j*s + i] = i*d + j."""
    if h % s:
        raise ConfigError(f"h={h} not divisible by s={s}")
    d = h // s
    perm = np.empty(h, dtype=np.int64)
    for j in range(d):
        for i in range(s):
            perm[j * s + i] = i * d + j
    return perm
