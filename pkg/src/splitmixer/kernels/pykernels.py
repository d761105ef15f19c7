"""NumPy fallback implementations of the hot kernels.

Same call surface as the compiled extension (``_ckernels``). All arrays are
contiguous float32 or float64; depthwise weights are laid out (channels, taps).
Accumulation order matches the compiled kernels (bias first, then ascending
tap index) so the two backends agree to rounding.
"""

import numpy as np
from scipy.special import erf

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def dwconv1d_fwd(x, w, b, axis):
    """Depthwise same-padded 1D convolution along axis 3 (width) or 2 (height)."""
    if axis == 2:
        return dwconv1d_fwd(np.ascontiguousarray(x.swapaxes(2, 3)), w, b, 3).swapaxes(2, 3)
    k = w.shape[1]
    pad = (k - 1) // 2
    width = x.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (pad, pad)))
    y = np.empty_like(x)
    y[:] = b[None, :, None, None]
    for j in range(k):
        y += w[None, :, j, None, None] * xp[:, :, :, j:j + width]
    return y


def dwconv1d_bwd(x, w, gy, axis):
    """Gradients (gx, gw, gb) of dwconv1d_fwd."""
    if axis == 2:
        gx, gw, gb = dwconv1d_bwd(
            np.ascontiguousarray(x.swapaxes(2, 3)), w,
            np.ascontiguousarray(gy.swapaxes(2, 3)), 3)
        return np.ascontiguousarray(gx.swapaxes(2, 3)), gw, gb
    k = w.shape[1]
    pad = (k - 1) // 2
    width = x.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (pad, pad)))
    gyp = np.pad(gy, ((0, 0), (0, 0), (0, 0), (pad, pad)))
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for j in range(k):
        gx += w[None, :, k - 1 - j, None, None] * gyp[:, :, :, j:j + width]
        gw[:, j] = (gy * xp[:, :, :, j:j + width]).sum(axis=(0, 2, 3))
    gb = gy.sum(axis=(0, 2, 3))
    return gx, gw, gb


def dwconv2d_fwd(x, w, b):
    """Depthwise same-padded 2D convolution; w is (channels, kh, kw)."""
    kh, kw = w.shape[1], w.shape[2]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    height, width = x.shape[2], x.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    y = np.empty_like(x)
    y[:] = b[None, :, None, None]
    for a in range(kh):
        for c in range(kw):
            y += w[None, :, a, c, None, None] * xp[:, :, a:a + height, c:c + width]
    return y


def dwconv2d_bwd(x, w, gy):
    kh, kw = w.shape[1], w.shape[2]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    height, width = x.shape[2], x.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    gyp = np.pad(gy, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for a in range(kh):
        for c in range(kw):
            gx += w[None, :, kh - 1 - a, kw - 1 - c, None, None] * gyp[:, :, a:a + height, c:c + width]
            gw[:, a, c] = (gy * xp[:, :, a:a + height, c:c + width]).sum(axis=(0, 2, 3))
    gb = gy.sum(axis=(0, 2, 3))
    return gx, gw, gb


def gelu_fwd(x):
    """x * Phi(x) with Phi the standard normal CDF (erf formulation)."""
    cdf = 0.5 * (1.0 + erf(x / SQRT2))
    return x * cdf


def gelu_bwd(x, gy):
    cdf = 0.5 * (1.0 + erf(x / SQRT2))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return gy * (cdf + x * pdf)
