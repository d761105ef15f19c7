"""Layer vocabulary: patch embedding, depthwise convs, pointwise slice mixing,
norms, activations, pooling, classifier head and loss.

Every op takes tape nodes, validates shapes, computes the forward value (hot
paths go through the kernel backend or BLAS matmuls) and registers the
backward rule. Weight layouts:

    patch embed   (h, c, p, p)         bias (1, h, 1, 1)
    dw 1D width   (h, 1, 1, k)         dw 1D height (h, 1, k, 1)
    dw 2D         (h, 1, k, k)
    pointwise     (m, m, 1, 1)  over a channel slice [a, b), m = b - a
    channel 3D    (d, d, 1, 1)  d kernels of channel extent d, stride d
    linear        (classes, h, 1, 1)   bias (1, classes, 1, 1)
"""

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LN_EPS = 1e-5


def _chan_vec(node, c, what):
    if node.shape != (1, c, 1, 1):
        raise ShapeError(f"{what} must have shape (1,{c},1,1), got {node.shape}")
    return node.data.reshape(c)


def patch_embed(x, weight, bias, p):
    """Non-overlapping p-strided conv c -> h (Eq.-1-style patch embedding)."""
    n, c, height, width = x.shape
    if height % p or width % p:
        raise ShapeError(f"spatial dims {height}x{width} not divisible by patch size {p}")
    h = weight.shape[0]
    if weight.shape != (h, c, p, p):
        raise ShapeError(f"patch weight must be ({h},{c},{p},{p}), got {weight.shape}")
    bvec = _chan_vec(bias, h, "patch bias")
    gh, gw = height // p, width // p

    cols = (x.data.reshape(n, c, gh, p, gw, p)
            .transpose(0, 2, 4, 1, 3, 5)
            .reshape(n * gh * gw, c * p * p))
    wmat = weight.data.reshape(h, c * p * p)
    y2 = cols @ wmat.T + bvec
    y = np.ascontiguousarray(y2.reshape(n, gh, gw, h).transpose(0, 3, 1, 2))

    def bwd(gy):
        gy2 = gy.transpose(0, 2, 3, 1).reshape(n * gh * gw, h)
        gw_ = (gy2.T @ cols).reshape(h, c, p, p)
        gb = gy2.sum(axis=0).reshape(1, h, 1, 1)
        gcols = gy2 @ wmat
        gx = np.ascontiguousarray(
            gcols.reshape(n, gh, gw, c, p, p)
            .transpose(0, 3, 1, 4, 2, 5)
            .reshape(n, c, height, width))
        return gx, gw_, gb

    return x.tape.record(y, (x, weight, bias), bwd, "patch_embed")


def depthwise1d(x, weight, bias, axis):
    """Same-padded depthwise 1D conv along 'width' or 'height'; odd k only."""
    n, c, height, width = x.shape
    if axis == "width":
        ax, kshape = 3, (c, 1, 1, None)
    elif axis == "height":
        ax, kshape = 2, (c, 1, None, 1)
    else:
        raise ConfigError(f"axis must be 'width' or 'height', got {axis!r}")
    k = weight.shape[2] if ax == 2 else weight.shape[3]
    expect = tuple(k if d is None else d for d in kshape)
    if weight.shape != expect:
        raise ShapeError(f"dw1d({axis}) weight must be {expect}, got {weight.shape}")
    if k % 2 == 0:
        raise ConfigError(f"dw1d kernel size must be odd, got {k}")
    bvec = _chan_vec(bias, c, "dw1d bias")

    w2 = weight.data.reshape(c, k)
    xd = x.data
    y = kernels.dwconv1d_fwd(xd, w2, bvec, ax)

    def bwd(gy):
        gx, gw, gb = kernels.dwconv1d_bwd(xd, w2, np.ascontiguousarray(gy), ax)
        return gx, gw.reshape(expect), gb.reshape(1, c, 1, 1)

    return x.tape.record(y, (x, weight, bias), bwd, f"dw1d_{axis}")


def depthwise2d(x, weight, bias):
    """Same-padded depthwise k x k conv (ConvMixer-style spatial mixing)."""
    n, c, height, width = x.shape
    if weight.shape[0] != c or weight.shape[1] != 1:
        raise ShapeError(f"dw2d weight must be ({c},1,k,k), got {weight.shape}")
    kh, kw = weight.shape[2], weight.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"dw2d kernel sizes must be odd, got {kh}x{kw}")
    bvec = _chan_vec(bias, c, "dw2d bias")

    w3 = weight.data.reshape(c, kh, kw)
    xd = x.data
    y = kernels.dwconv2d_fwd(xd, w3, bvec)

    def bwd(gy):
        gx, gw, gb = kernels.dwconv2d_bwd(xd, w3, np.ascontiguousarray(gy))
        return gx, gw.reshape(c, 1, kh, kw), gb.reshape(1, c, 1, 1)

    return x.tape.record(y, (x, weight, bias), bwd, "dw2d")


def pointwise_slice(x, weight, bias, a, b):
    """Mix channels [a, b) with an (b-a)^2 matrix; others pass through bit-exactly."""
    n, c, height, width = x.shape
    if not (0 <= a < b <= c):
        raise ShapeError(f"slice [{a},{b}) out of range for {c} channels")
    m = b - a
    if weight.shape != (m, m, 1, 1):
        raise ShapeError(f"pointwise weight must be ({m},{m},1,1), got {weight.shape}")
    bvec = _chan_vec(bias, m, "pointwise bias")

    hw = height * width
    wmat = weight.data.reshape(m, m)
    xs = np.ascontiguousarray(x.data[:, a:b].reshape(n, m, hw))
    y = x.data.copy()
    y[:, a:b] = (np.matmul(wmat, xs) + bvec[None, :, None]).reshape(n, m, height, width)

    def bwd(gy):
        gys = gy[:, a:b].reshape(n, m, hw)
        gx = gy.copy()
        gx[:, a:b] = np.matmul(wmat.T, gys).reshape(n, m, height, width)
        gw = np.matmul(gys, xs.transpose(0, 2, 1)).sum(axis=0).reshape(m, m, 1, 1)
        gb = gys.sum(axis=(0, 2)).reshape(1, m, 1, 1)
        return gx, gw, gb

    return x.tape.record(y, (x, weight, bias), bwd, f"pointwise[{a}:{b}]")


def channel_conv3d(x, weight, bias, segments):
    """Strided 1x1xd 3D convolution across channels (d = h/segments kernels).

    Output channel j*segments + i is kernel j applied to segment i, i.e. the
    interleaved ordering native to channel-strided 3D convolution.
    """
    n, c, height, width = x.shape
    if c % segments:
        raise ConfigError(f"channels {c} not divisible by segments {segments}")
    d = c // segments
    if weight.shape != (d, d, 1, 1):
        raise ShapeError(f"3D-mix weight must be ({d},{d},1,1), got {weight.shape}")
    bvec = _chan_vec(bias, d, "3D-mix bias")

    kmat = weight.data.reshape(d, d)
    xseg = x.data.reshape(n, segments, d, height, width)
    out = np.einsum("jt,nsthw->njshw", kmat, xseg, optimize=True)
    out += bvec[None, :, None, None, None]
    y = np.ascontiguousarray(out.reshape(n, c, height, width))

    def bwd(gy):
        go = gy.reshape(n, d, segments, height, width)
        gk = np.einsum("njshw,nsthw->jt", go, xseg, optimize=True)
        gx = np.einsum("jt,njshw->nsthw", kmat, go, optimize=True)
        gb = go.sum(axis=(0, 2, 3, 4))
        return (np.ascontiguousarray(gx.reshape(n, c, height, width)),
                gk.reshape(d, d, 1, 1), gb.reshape(1, d, 1, 1))

    return x.tape.record(y, (x, weight, bias), bwd, f"conv3d[s={segments}]")


def permute_channels(x, perm):
    """Reorder channels by perm (new index -> old index); backward inverts it."""
    n, c = x.shape[0], x.shape[1]
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(c)):
        raise ShapeError(f"perm must be a permutation of 0..{c - 1}")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(c)

    def bwd(gy):
        return (np.ascontiguousarray(gy[:, inv]),)

    return x.tape.record(np.ascontiguousarray(x.data[:, perm]), (x,), bwd, "permute")


def batchnorm(x, gamma, beta, running_mean, running_var, train,
              update_stats=None, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel batch normalization.

    Train mode normalizes with biased batch statistics and (optionally)
    updates the running buffers in place with momentum, the unbiased variance
    entering the running average. Eval mode uses only the running buffers.
    """
    n, c, height, width = x.shape
    g = _chan_vec(gamma, c, "batchnorm gamma")
    bt = _chan_vec(beta, c, "batchnorm beta")
    if update_stats is None:
        update_stats = train
    count = n * height * width
    xd = x.data

    if train:
        if count < 2:
            raise ShapeError("batchnorm train mode needs batch*H*W >= 2 per channel")
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        if update_stats:
            unbiased = var * (count / (count - 1))
            running_mean *= (1.0 - momentum)
            running_mean += momentum * mean.reshape(running_mean.shape)
            running_var *= (1.0 - momentum)
            running_var += momentum * unbiased.reshape(running_var.shape)
    else:
        mean = running_mean.reshape(c).astype(xd.dtype)
        var = running_var.reshape(c).astype(xd.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    # fused y = x*(g*inv) + (beta - mean*g*inv); xhat is rebuilt in backward
    scale = g * inv
    y = xd * scale[None, :, None, None] + (bt - mean * scale)[None, :, None, None]

    if train:
        def bwd(gy):
            xhat = (xd - mean[None, :, None, None]) * inv[None, :, None, None]
            sg = (gy * xhat).sum(axis=(0, 2, 3))
            sb = gy.sum(axis=(0, 2, 3))
            gx = scale[None, :, None, None] / count * (
                count * gy
                - sb[None, :, None, None]
                - xhat * sg[None, :, None, None])
            return gx, sg.reshape(1, c, 1, 1), sb.reshape(1, c, 1, 1)
    else:
        def bwd(gy):
            xhat = (xd - mean[None, :, None, None]) * inv[None, :, None, None]
            sg = (gy * xhat).sum(axis=(0, 2, 3))
            sb = gy.sum(axis=(0, 2, 3))
            gx = gy * scale[None, :, None, None]
            return gx, sg.reshape(1, c, 1, 1), sb.reshape(1, c, 1, 1)

    return x.tape.record(y, (x, gamma, beta), bwd, "batchnorm")


def layernorm(x, gamma, beta, eps=LN_EPS):
    """Normalize across channels at each spatial position; per-channel affine."""
    n, c, height, width = x.shape
    g = _chan_vec(gamma, c, "layernorm gamma")
    bt = _chan_vec(beta, c, "layernorm beta")
    xd = x.data
    mean = xd.mean(axis=1, keepdims=True)
    var = xd.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean) * inv
    y = xhat * g[None, :, None, None] + bt[None, :, None, None]

    def bwd(gy):
        gyg = gy * g[None, :, None, None]
        s1 = gyg.sum(axis=1, keepdims=True)
        s2 = (gyg * xhat).sum(axis=1, keepdims=True)
        gx = inv / c * (c * gyg - s1 - xhat * s2)
        sg = (gy * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        sb = gy.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        return gx, sg, sb

    return x.tape.record(y, (x, gamma, beta), bwd, "layernorm")


def gelu(x):
    xd = x.data
    y = kernels.gelu_fwd(xd)

    def bwd(gy):
        return (kernels.gelu_bwd(xd, np.ascontiguousarray(gy)),)

    return x.tape.record(y, (x,), bwd, "gelu")


def relu(x):
    xd = x.data
    mask = xd > 0

    def bwd(gy):
        return (gy * mask,)

    return x.tape.record(np.maximum(xd, 0), (x,), bwd, "relu")


def activation(x, kind):
    if kind == "gelu":
        return gelu(x)
    if kind == "relu":
        return relu(x)
    raise ConfigError(f"unknown activation {kind!r}")


def global_avg_pool(x):
    n, c, height, width = x.shape
    scale = 1.0 / (height * width)
    y = x.data.mean(axis=(2, 3), keepdims=True)

    def bwd(gy):
        return (np.broadcast_to(gy * scale, x.shape).astype(gy.dtype, copy=True),)

    return x.tape.record(y, (x,), bwd, "gap")


def linear(x, weight, bias):
    """Affine head on pooled features: (n,h,1,1) -> (n,classes,1,1)."""
    n, h = x.shape[0], x.shape[1]
    if x.shape[2] != 1 or x.shape[3] != 1:
        raise ShapeError(f"linear expects pooled (n,h,1,1) input, got {x.shape}")
    classes = weight.shape[0]
    if weight.shape != (classes, h, 1, 1):
        raise ShapeError(f"linear weight must be ({classes},{h},1,1), got {weight.shape}")
    bvec = _chan_vec(bias, classes, "linear bias")

    x2 = x.data.reshape(n, h)
    wmat = weight.data.reshape(classes, h)
    y = (x2 @ wmat.T + bvec).reshape(n, classes, 1, 1)

    def bwd(gy):
        gy2 = gy.reshape(n, classes)
        gw = (gy2.T @ x2).reshape(classes, h, 1, 1)
        gx = (gy2 @ wmat).reshape(n, h, 1, 1)
        gb = gy2.sum(axis=0).reshape(1, classes, 1, 1)
        return gx, gw, gb

    return x.tape.record(y, (x, weight, bias), bwd, "linear")


def cross_entropy(logits, labels):
    """Mean negative log softmax at the true label, max-stabilized."""
    n, classes = logits.shape[0], logits.shape[1]
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= classes:
        raise DataError(f"labels must lie in [0,{classes}), got range "
                        f"[{labels.min()},{labels.max()}]")
    z = logits.data.reshape(n, classes)
    zs = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - lse
    loss = -logp[np.arange(n), labels].mean(dtype=np.float64)
    dtype = logits.value.dtype

    def bwd(gy):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        g = (float(gy.reshape(())) / n) * p
        return (g.reshape(logits.shape).astype(dtype),)

    out = np.full((1, 1, 1, 1), loss, dtype=dtype)
    return logits.tape.record(out, (logits,), bwd, "cross_entropy")
