"""Checkpoint container: "SPMX" magic, version, JSON header with the config
echo and a named tensor manifest, then raw little-endian blobs in manifest
order. Parameters, norm running statistics and (optionally) optimizer moment
buffers all round trip bit-exactly; counters ride in the header.

Layout:
    bytes 0:4    magic b"SPMX"
    bytes 4:8    format version, uint32 LE
    bytes 8:12   header length L, uint32 LE
    bytes 12:12+L   UTF-8 JSON {config, manifest, extra}
    bytes 12+L:     payload; manifest offsets are relative to payload start
"""

import json
import struct
from pathlib import Path

import numpy as np

from . import models
from .errors import FormatError

MAGIC = b"SPMX"
VERSION = 1

_DTYPE_TAGS = {"f32": "<f4", "f64": "<f8", "i64": "<i8"}
_TAG_OF = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64",
           np.dtype(np.int64): "i64"}


def _manifest_entry(name, arr, offset):
    tag = _TAG_OF.get(arr.dtype)
    if tag is None:
        raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
    nbytes = arr.size * arr.dtype.itemsize
    return ({"name": name, "dtype": tag, "shape": list(arr.shape),
             "offset": offset, "nbytes": nbytes}, nbytes)


def save_checkpoint(model, path, optimizer=None, extra=None):
    """Serialize model (and optionally optimizer buffers) to path.

    Saving the same model twice produces byte-identical files.
    """
    tensors = []
    for name, arr in model.params.items():
        tensors.append((name, arr))
    for name, arr in model.state.items():
        tensors.append((f"state.{name}", arr))
    header_extra = dict(extra or {})
    if optimizer is not None:
        for name, arr in optimizer.m.items():
            tensors.append((f"optim.m.{name}", arr))
        for name, arr in optimizer.v.items():
            tensors.append((f"optim.v.{name}", arr))
        header_extra["optim_step"] = optimizer.step_count

    manifest = []
    offset = 0
    blobs = []
    for name, arr in tensors:
        entry, nbytes = _manifest_entry(name, arr, offset)
        manifest.append(entry)
        blob = np.ascontiguousarray(arr).astype(_DTYPE_TAGS[entry["dtype"]],
                                                copy=False)
        blobs.append(blob.tobytes())
        offset += nbytes
    header = {
        "config": models.config_to_dict(model.config),
        "manifest": manifest,
        "extra": header_extra,
    }
    hjson = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hjson)))
        fh.write(hjson)
        for blob in blobs:
            fh.write(blob)
    return Path(path)


def read_header(path):
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise FormatError(f"bad magic in {path}: expected {MAGIC!r}")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(raw) < 12 + hlen:
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt checkpoint header: {e}") from e
    for key in ("config", "manifest", "extra"):
        if key not in header:
            raise FormatError(f"checkpoint header missing field {key!r}")
    return header, raw[12 + hlen:]


def _validate_manifest(manifest, payload_len):
    prev_end = 0
    for entry in manifest:
        for key in ("name", "dtype", "shape", "offset", "nbytes"):
            if key not in entry:
                raise FormatError(f"manifest entry missing field {key!r}")
        if entry["dtype"] not in _DTYPE_TAGS:
            raise FormatError(f"manifest dtype {entry['dtype']!r} unknown")
        if entry["offset"] != prev_end:
            raise FormatError(
                f"manifest offsets must be contiguous and increasing; "
                f"{entry['name']} starts at {entry['offset']}, expected {prev_end}")
        itemsize = int(_DTYPE_TAGS[entry["dtype"]][2])
        count = 1
        for d in entry["shape"]:
            count *= d
        if entry["nbytes"] != count * itemsize:
            raise FormatError(f"manifest nbytes wrong for {entry['name']}")
        prev_end = entry["offset"] + entry["nbytes"]
    if prev_end != payload_len:
        raise FormatError(
            f"payload length {payload_len} does not match manifest total {prev_end}")


def load_checkpoint(path, expect_config=None):
    """Rebuild the model from a checkpoint; returns (model, aux).

    aux carries {"optim_m": ..., "optim_v": ..., "optim_step": ..., "extra": ...}
    when optimizer buffers were saved. With expect_config set, any differing
    config field raises FormatError before anything is built.
    """
    header, payload = read_header(path)
    config = models.config_from_dict(header["config"])
    if expect_config is not None:
        diffs = []
        for f in config.__dataclass_fields__:
            a, b = getattr(config, f), getattr(expect_config, f)
            if a != b:
                diffs.append(f"{f}: checkpoint={a!r} expected={b!r}")
        if diffs:
            raise FormatError("config mismatch: " + "; ".join(diffs))
    _validate_manifest(header["manifest"], len(payload))

    arrays = {}
    for entry in header["manifest"]:
        buf = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(buf, dtype=_DTYPE_TAGS[entry["dtype"]])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()

    model = models.build(config, seed=0)
    params = {k: v for k, v in arrays.items()
              if not k.startswith(("state.", "optim."))}
    state = {k[len("state."):]: v for k, v in arrays.items() if k.startswith("state.")}
    missing = set(model.params) - set(params)
    if missing:
        raise FormatError(f"checkpoint missing parameters: {sorted(missing)[:4]}...")
    model.load_arrays(params, state)

    aux = {"extra": header["extra"]}
    optim_m = {k[len("optim.m."):]: v for k, v in arrays.items()
               if k.startswith("optim.m.")}
    optim_v = {k[len("optim.v."):]: v for k, v in arrays.items()
               if k.startswith("optim.v.")}
    if optim_m:
        aux["optim_m"] = optim_m
        aux["optim_v"] = optim_v
        aux["optim_step"] = header["extra"].get("optim_step", 0)
    return model, aux
