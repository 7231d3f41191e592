"""Model parameter files.

A versioned little-endian binary blob holds the dimension, the bilinear
diagonals, the combination-network weights and (for the joint model) the
coherence diagonal plus damping and layer count.  A JSON sidecar at
``<path>.json`` records the hyperparameters human-readably.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .attention import FNet, LocalParams
from .crf import GlobalParams
from .errors import ValidationError

_MAGIC = b"EDML"
_VERSION = 1
_KIND_LOCAL = 0
_KIND_GLOBAL = 1


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(arr.astype("<f8").tobytes())


def _read_array(fh, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape))
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValidationError("truncated model file")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def save_model(path: str, params: LocalParams | GlobalParams,
               extra: dict | None = None) -> None:
    is_global = isinstance(params, GlobalParams)
    local = params.local if is_global else params
    fnet = local.fnet
    hidden = fnet.hidden
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HB", _VERSION, _KIND_GLOBAL if is_global else _KIND_LOCAL))
        fh.write(struct.pack("<IIII", local.a.shape[0], hidden, local.k, local.r))
        if is_global:
            fh.write(struct.pack("<dI", params.delta, params.t))
        _write_array(fh, local.a)
        _write_array(fh, local.b)
        if is_global:
            _write_array(fh, params.c)
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            _write_array(fh, getattr(fnet, name))
    sidecar = {
        "kind": "global" if is_global else "local",
        "dim": int(local.a.shape[0]),
        "hidden": int(hidden),
        "k": int(local.k),
        "r": int(local.r),
    }
    if is_global:
        sidecar["delta"] = float(params.delta)
        sidecar["t"] = int(params.t)
    if extra:
        sidecar.update(extra)
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> LocalParams | GlobalParams:
    with open(path, "rb") as fh:
        head = fh.read(7)
        if len(head) != 7 or head[:4] != _MAGIC:
            raise ValidationError(f"{path}: not a model file")
        version, kind = struct.unpack("<HB", head[4:])
        if version != _VERSION:
            raise ValidationError(f"{path}: unsupported model version {version}")
        if kind not in (_KIND_LOCAL, _KIND_GLOBAL):
            raise ValidationError(f"{path}: unknown model kind {kind}")
        dim, hidden, k, r = struct.unpack("<IIII", fh.read(16))
        delta, t = 0.5, 10
        if kind == _KIND_GLOBAL:
            delta, t = struct.unpack("<dI", fh.read(12))
        a = _read_array(fh, (dim,))
        b = _read_array(fh, (dim,))
        c = _read_array(fh, (dim,)) if kind == _KIND_GLOBAL else None
        fnet = FNet(
            w1=_read_array(fh, (hidden, 2)),
            b1=_read_array(fh, (hidden,)),
            w2=_read_array(fh, (hidden, hidden)),
            b2=_read_array(fh, (hidden,)),
            w3=_read_array(fh, (1, hidden)),
            b3=_read_array(fh, (1,)),
        )
    local = LocalParams(a=a, b=b, fnet=fnet, k=k, r=r)
    if kind == _KIND_LOCAL:
        return local
    return GlobalParams(local=local, c=c, delta=delta, t=t)
