"""Rank-4 tensors and the reverse-mode autodiff tape.

Everything that flows through a model is a :class:`Tensor4`: a contiguous
(batch, channels, rows, cols) float32/float64 array. Forward ops append
records to a :class:`Tape`; ``Tape.backward`` replays them in reverse and
returns one gradient per registered parameter.
"""

import os

import numpy as np

from .errors import ContractError, NumericsError, ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}

# Optional NaN/Inf guard after every op (slow); off unless SPMX_DEBUG is set.
DEBUG_CHECKS = os.environ.get("SPMX_DEBUG", "") not in ("", "0")


def _as_dtype(dtype):
    if dtype in DTYPES:
        return DTYPES[dtype]
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise ShapeError(f"unsupported dtype {dtype!r}; use f32 or f64")
    return dt


class Tensor4:
    """Dense rank-4 array, row-major with the last axis fastest."""

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.ascontiguousarray(data)
        if data.ndim != 4:
            raise ShapeError(f"Tensor4 needs 4 dims, got shape {data.shape}")
        if any(d < 1 for d in data.shape):
            raise ShapeError(f"all dims must be >= 1, got {data.shape}")
        if data.dtype not in (np.float32, np.float64):
            raise ShapeError(f"dtype must be float32/float64, got {data.dtype}")
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor4(shape={self.shape}, dtype={self.data.dtype})"


def _check_dims(shape):
    if len(shape) != 4 or any(int(d) < 1 for d in shape):
        raise ShapeError(f"shape must be 4 dims, all >= 1; got {tuple(shape)}")


def full(shape, value, dtype="f32"):
    _check_dims(shape)
    return Tensor4(np.full(shape, value, dtype=_as_dtype(dtype)))


def zeros(shape, dtype="f32"):
    return full(shape, 0.0, dtype)


def uniform(shape, seed, low=-1.0, high=1.0, dtype="f32"):
    """Seeded uniform fill; same seed gives a bit-identical buffer."""
    _check_dims(shape)
    rng = np.random.Generator(np.random.PCG64(seed))
    return Tensor4(rng.uniform(low, high, size=shape).astype(_as_dtype(dtype)))


def kaiming_uniform(shape, fan_in, seed, dtype="f32"):
    """Kaiming-uniform fan-in init: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    if fan_in < 1:
        raise ShapeError(f"fan_in must be >= 1, got {fan_in}")
    bound = np.sqrt(6.0 / fan_in)
    return uniform(shape, seed, -bound, bound, dtype)


def kaiming_fill(rng, shape, fan_in, dtype="f32"):
    """Kaiming-uniform draw from an existing generator (model init path)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(_as_dtype(dtype))


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values in {what}")


class Node:
    """A value on the tape plus the rule to push gradients to its parents."""

    __slots__ = ("tape", "value", "parents", "bwd", "idx", "name")

    def __init__(self, tape, value, parents, bwd, idx, name):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.bwd = bwd
        self.idx = idx
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def data(self):
        return self.value.data

    def __repr__(self):
        return f"Node#{self.idx}({self.name or 'op'}, shape={self.shape})"


class Tape:
    """Append-only op record in execution order plus a parameter registry.

    With ``grad=False`` the tape keeps no records and drops backward rules as
    they are handed in, so forward-only passes hold nothing but the live
    activation (inference on wide models would otherwise retain every
    intermediate tensor).
    """

    def __init__(self, grad=True):
        self.grad = grad
        self.nodes = []
        self.params = {}

    def record(self, value, parents=(), bwd=None, name=""):
        if not isinstance(value, Tensor4):
            value = Tensor4(value)
        if DEBUG_CHECKS:
            _check_finite(value.data, f"forward output of {name or 'op'}")
        if not self.grad:
            return Node(self, value, (), None, -1, name)
        node = Node(self, value, tuple(parents), bwd, len(self.nodes), name)
        self.nodes.append(node)
        return node

    def leaf(self, value, name=""):
        return self.record(value, (), None, name or "leaf")

    def param(self, name, value):
        """Register a named parameter leaf; gradients are collected per name."""
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        node = self.leaf(value, name)
        self.params[name] = node
        return node

    def backward(self, loss):
        """Reverse sweep from a scalar loss; returns {param name: gradient}."""
        if not self.grad:
            raise ContractError("tape was created with grad=False")
        if loss.tape is not self:
            raise ContractError("loss node belongs to a different tape")
        if loss.shape != (1, 1, 1, 1):
            raise ContractError(f"loss must be scalar (1,1,1,1), got {loss.shape}")
        if not np.isfinite(loss.data).all():
            raise NumericsError("loss is not finite")
        grads = {loss.idx: np.ones((1, 1, 1, 1), dtype=loss.value.dtype)}
        for node in reversed(self.nodes[: loss.idx + 1]):
            if node.bwd is None:
                continue  # leaf: keep any accumulated grad for collection
            g = grads.pop(node.idx, None)
            if g is None:
                continue
            parent_grads = node.bwd(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if DEBUG_CHECKS:
                    _check_finite(pg, f"gradient from {node.name or 'op'}")
                acc = grads.get(parent.idx)
                if acc is None:
                    # Copy when the rule handed back the upstream buffer or a
                    # view; stored buffers must be safe to accumulate into.
                    grads[parent.idx] = pg.copy() if (pg is g or pg.base is not None) else pg
                else:
                    acc += pg
        out = {}
        for name, node in self.params.items():
            g = grads.get(node.idx)
            out[name] = g if g is not None else np.zeros_like(node.data)
        return out


def _binary_shapes(a, b, opname):
    """Validate elementwise operand shapes; returns True if b channel-broadcasts."""
    if a.shape == b.shape:
        return False
    n, c, h, w = a.shape
    if b.shape == (1, c, 1, 1):
        return True
    raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} are incompatible")


def _reduce_to_channel(g):
    return g.sum(axis=(0, 2, 3), keepdims=True)


def add(a, b):
    broadcast = _binary_shapes(a, b, "add")

    def bwd(gy):
        return gy, _reduce_to_channel(gy) if broadcast else gy

    return a.tape.record(a.data + b.data, (a, b), bwd, "add")


def sub(a, b):
    broadcast = _binary_shapes(a, b, "sub")

    def bwd(gy):
        return gy, -(_reduce_to_channel(gy) if broadcast else gy)

    return a.tape.record(a.data - b.data, (a, b), bwd, "sub")


def mul(a, b):
    broadcast = _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bwd(gy):
        ga = gy * bd
        gb = gy * ad
        return ga, _reduce_to_channel(gb) if broadcast else gb

    return a.tape.record(ad * bd, (a, b), bwd, "mul")


def scale(a, s):
    s = float(s)

    def bwd(gy):
        return (gy * s,)

    return a.tape.record(a.data * s, (a,), bwd, "scale")


def reduce_sum(a):
    """Sum of all entries as a (1,1,1,1) scalar node."""
    shape = a.shape
    dtype = a.value.dtype

    def bwd(gy):
        return (np.broadcast_to(gy.astype(dtype), shape).copy(),)

    total = a.data.sum(dtype=np.float64)
    return a.tape.record(
        np.full((1, 1, 1, 1), total, dtype=dtype), (a,), bwd, "sum")
