"""Independent oracles: finite-difference gradients, brute-force convolutions,
and the structural equivalence checks (III vs strided 3D conv, separable 1D
pair vs rank-1 2D kernel).

Oracles run in float64 and nested loops on purpose; they must not share code
with the optimized paths they validate.
"""

from dataclasses import dataclass

import numpy as np

from . import layers, mixers, models, tensor
from .errors import NumericsError
from .tensor import Tape, Tensor4

GRAD_EPS_SCALE = 1e-4
GRAD_THRESHOLD = 1e-4
FWD_TOL = 1e-6


def rel_err(a, b):
    """|a-b| / max(|a|,|b|,1e-8), the near-zero-safe relative error."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def numeric_gradient(f, params, eps_scale=GRAD_EPS_SCALE, detect_kinks=True):
    """Central-difference gradient of scalar f(params) per coordinate.

    params is {name: float64 array}, perturbed in place and restored. Returns
    (grads, kinks) where kinks maps names to boolean masks of coordinates
    flagged as non-smooth (second difference of order the step size); those
    coordinates carry the central estimate but should be skipped by callers.
    """
    f0 = float(f()) if detect_kinks else 0.0
    grads = {}
    kinks = {}
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise NumericsError(f"numeric_gradient needs float64 params ({name})")
        flat = arr.reshape(-1)
        g = np.zeros_like(flat)
        kk = np.zeros(flat.shape, dtype=bool)
        for i in range(flat.size):
            orig = flat[i]
            eps = eps_scale * max(1.0, abs(orig))
            flat[i] = orig + eps
            fp = float(f())
            flat[i] = orig - eps
            fm = float(f())
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericsError(f"non-finite oracle value near {name}[{i}]")
            g[i] = (fp - fm) / (2.0 * eps)
            if detect_kinks:
                curvature = abs(fp + fm - 2.0 * f0) / eps
                if curvature > 1e-2 * max(1.0, abs(f0)):
                    kk[i] = True
        grads[name] = g.reshape(arr.shape)
        kinks[name] = kk.reshape(arr.shape)
    return grads, kinks


def conv_bruteforce(x, weight, bias, stride=1, padding=0, groups=1):
    """Definitionally correct 2D cross-correlation in float64, nested loops.

    x (n, cin, H, W); weight (cout, cin/groups, kh, kw); bias (cout,).
    padding is symmetric zero padding (ph, pw) or a single int.
    """
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    ph, pw = (padding, padding) if np.isscalar(padding) else padding
    n, cin, height, width = x.shape
    cout, cin_g, kh, kw = weight.shape
    assert cin % groups == 0 and cout % groups == 0 and cin_g == cin // groups
    oh = (height + 2 * ph - kh) // stride + 1
    ow = (width + 2 * pw - kw) // stride + 1
    xp = np.zeros((n, cin, height + 2 * ph, width + 2 * pw))
    xp[:, :, ph:ph + height, pw:pw + width] = x
    y = np.zeros((n, cout, oh, ow))
    out_per_group = cout // groups
    for b in range(n):
        for oc in range(cout):
            gidx = oc // out_per_group
            ic0 = gidx * cin_g
            for oy in range(oh):
                for ox in range(ow):
                    acc = bias[oc]
                    for ic in range(cin_g):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (weight[oc, ic, ky, kx]
                                        * xp[b, ic0 + ic, oy * stride + ky,
                                             ox * stride + kx])
                    y[b, oc, oy, ox] = acc
    return y


def conv3d_channel_bruteforce(x, kernels, bias, segments):
    """Naive channel-strided 3D convolution: d kernels of extent d, stride d.

    Output channel j*segments + i = kernel j applied to channels
    [i*d, (i+1)*d) at the same position.
    """
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    n, c, height, width = x.shape
    d = c // segments
    assert kernels.shape == (d, d) and c % segments == 0
    y = np.zeros_like(x)
    for b in range(n):
        for j in range(d):
            for i in range(segments):
                for yy in range(height):
                    for xx in range(width):
                        acc = bias[j]
                        for t in range(d):
                            acc += kernels[j, t] * x[b, i * d + t, yy, xx]
                        y[b, j * segments + i, yy, xx] = acc
    return y


def _leafs(tape, arrays):
    return [tape.leaf(Tensor4(a)) for a in arrays]


def check_III_equiv_3d(h, s, seed, spatial=(4, 4), n=1):
    """Max abs diff between mixer_III and mixer_3d sharing one matrix, after
    reordering mixer_III's segment-major output with the interleave permutation."""
    rng = np.random.default_rng(seed)
    d = h // s
    x = rng.standard_normal((n, h) + spatial).astype(np.float32)
    w = (rng.standard_normal((d, d, 1, 1)) / np.sqrt(d)).astype(np.float32)
    bias = rng.standard_normal((1, d, 1, 1)).astype(np.float32)

    t = Tape()
    xn, wn, bn = _leafs(t, [x, w, bias])
    spec = mixers.MixerSpec("III", h, s=s)
    y3 = mixers.mixer_III(xn, spec, {"mix": (wn, bn)})
    yc = mixers.mixer_3d(xn, mixers.MixerSpec("Conv3D", h, s=s), {"mix": (wn, bn)})
    perm = mixers.interleave_permutation(h, s)
    return float(np.abs(y3.data[:, perm] - yc.data).max())


def check_separable(k, h, seed, spatial=(8, 8), n=2):
    """Max abs diff between dw1d(width,u) o dw1d(height,v) and one 2D depthwise
    conv with the rank-1 kernel outer(v, u), activations/norms bypassed."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, h) + spatial).astype(np.float32)
    u = rng.standard_normal((h, 1, 1, k)).astype(np.float32)
    v = rng.standard_normal((h, 1, k, 1)).astype(np.float32)
    zb = np.zeros((1, h, 1, 1), dtype=np.float32)

    t = Tape()
    xn, un, vn, zn = _leafs(t, [x, u, v, zb])
    yw = layers.depthwise1d(xn, un, zn, "width")
    y1 = layers.depthwise1d(yw, vn, zn, "height")

    k2 = (v.reshape(h, k, 1) * u.reshape(h, 1, k)).reshape(h, 1, k, k)
    t2 = Tape()
    xn2, kn, zn2 = _leafs(t2, [x, k2, zb])
    y2 = layers.depthwise2d(xn2, kn, zn2)
    return float(np.abs(y1.data - y2.data).max())


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    mean_rel_err: float
    worst_index: tuple
    skipped: int


@dataclass
class GradCheckReport:
    model_name: str
    seed: int
    threshold: float
    rows: list

    @property
    def max_rel_err(self):
        return max((r.max_rel_err for r in self.rows), default=0.0)

    @property
    def passed(self):
        return self.max_rel_err < self.threshold

    def worst(self):
        return max(self.rows, key=lambda r: r.max_rel_err)

    def summary(self):
        state = "PASS" if self.passed else "FAIL"
        w = self.worst()
        return (f"{state} {self.model_name} seed={self.seed} "
                f"max_rel_err={self.max_rel_err:.3e} (threshold {self.threshold:g}, "
                f"worst {w.name}{list(w.worst_index)})")

    def csv_text(self):
        lines = ["param,max_rel_err,mean_rel_err,worst_index,skipped"]
        for r in self.rows:
            idx = "x".join(str(i) for i in r.worst_index)
            lines.append(f"{r.name},{r.max_rel_err:.6e},{r.mean_rel_err:.6e},"
                         f"{idx},{r.skipped}")
        return "\n".join(lines) + "\n"


def gradcheck_model(config, seed, batch=2, image_hw=8, threshold=GRAD_THRESHOLD):
    """Full-model finite-difference check of every parameter gradient.

    Builds the model in float64, compares tape gradients of the training loss
    (train-mode statistics, running buffers untouched) against central
    differences.
    """
    from dataclasses import replace
    cfg = replace(config, dtype="f64")
    model = models.build(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.uniform(0.0, 1.0, (batch, cfg.in_channels, image_hw, image_hw))
    labels = rng.integers(0, cfg.classes, size=batch)

    t, loss, _ = model.loss(x, labels, train=True, update_stats=False)
    analytic = t.backward(loss)

    def f():
        _, l, _ = model.loss(x, labels, train=True, update_stats=False)
        return float(l.data.reshape(()))

    numeric, kinks = numeric_gradient(f, model.params)
    rows = []
    for name in model.params:
        errs = rel_err(analytic[name], numeric[name])
        mask = kinks[name]
        skipped = int(mask.sum())
        if skipped:
            errs = np.where(mask, 0.0, errs)
        worst = np.unravel_index(int(np.argmax(errs)), errs.shape)
        rows.append(ParamCheck(name, float(errs.max()), float(errs.mean()),
                               worst, skipped))
    return GradCheckReport(cfg.name(), seed, threshold, rows)
