"""Model documents stored as .npz archives: arrays natively, everything else as JSON."""

from __future__ import annotations

import json

import numpy as np

from .errors import SchemaError

_META = "__document__"


def _split(obj, arrays, path):
    if isinstance(obj, np.ndarray):
        key = f"a{len(arrays)}"
        arrays[key] = obj
        return {"__array__": key}
    if isinstance(obj, dict):
        return {k: _split(v, arrays, f"{path}/{k}") for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_split(v, arrays, path) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _join(obj, arrays):
    if isinstance(obj, dict):
        if set(obj) == {"__array__"}:
            return arrays[obj["__array__"]]
        return {k: _join(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_join(v, arrays) for v in obj]
    return obj


def save_document(doc: dict, path):
    arrays = {}
    meta = _split(doc, arrays, "")
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **{_META: np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)},
                            **arrays)


def load_document(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        if _META not in z.files:
            raise SchemaError(f"{path} is not a model document")
        meta = json.loads(bytes(z[_META]).decode())
        arrays = {k: z[k] for k in z.files if k != _META}
    return _join(meta, arrays)
