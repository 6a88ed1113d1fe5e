"""Deterministic checkpoint container.

A stored zip holding ``header.json`` (all non-tensor data) and one ``.npy``
blob per tensor.  Entry order, timestamps and attributes are fixed, so the
same payload always serializes to the same bytes (``torch.save`` embeds a
random id and cannot guarantee that).
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np
import torch

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _encode(obj, blobs: dict):
    if isinstance(obj, torch.Tensor):
        name = f"tensors/{len(blobs):05d}.npy"
        blobs[name] = obj.detach().cpu().contiguous()
        return {"__tensor__": name}
    if isinstance(obj, dict):
        if all(isinstance(k, str) for k in obj):
            return {k: _encode(obj[k], blobs) for k in sorted(obj)}
        return {"__items__": [[_encode(k, blobs), _encode(v, blobs)] for k, v in obj.items()]}
    if isinstance(obj, tuple):
        return {"__tuple__": [_encode(v, blobs) for v in obj]}
    if isinstance(obj, list):
        return [_encode(v, blobs) for v in obj]
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _decode(obj, archive: zipfile.ZipFile):
    if isinstance(obj, list):
        return [_decode(v, archive) for v in obj]
    if not isinstance(obj, dict):
        return obj
    if "__tensor__" in obj:
        arr = np.load(io.BytesIO(archive.read(obj["__tensor__"])), allow_pickle=False)
        return torch.from_numpy(arr.copy())
    if "__tuple__" in obj:
        return tuple(_decode(v, archive) for v in obj["__tuple__"])
    if "__items__" in obj:
        return {_decode(k, archive): _decode(v, archive) for k, v in obj["__items__"]}
    return {k: _decode(v, archive) for k, v in obj.items()}


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def dumps(payload: dict) -> bytes:
    blobs: dict[str, torch.Tensor] = {}
    header = json.dumps(_encode(payload, blobs), sort_keys=True, indent=1).encode()
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as archive:
        archive.writestr(_entry("header.json"), header)
        for name, tensor in blobs.items():
            arr = io.BytesIO()
            np.save(arr, tensor.numpy(), allow_pickle=False)
            archive.writestr(_entry(name), arr.getvalue())
    return buf.getvalue()


def loads(data: bytes) -> dict:
    with zipfile.ZipFile(io.BytesIO(data)) as archive:
        return _decode(json.loads(archive.read("header.json")), archive)
