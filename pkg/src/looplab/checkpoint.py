"""Bit-exact tensor checkpoints: manifest.json + one raw little-endian
binary per checkpoint directory."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST_SCHEMA = "looplab.checkpoint.v1"
_DTYPES = {"f32": "<f4", "f64": "<f8"}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


class CheckpointError(Exception):
    pass


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray],
                 meta: dict | None = None) -> None:
    """Write tensors (sorted by name) into path/tensors.bin with a
    manifest; identical state always produces identical bytes."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries: dict[str, dict] = {}
    offset = 0
    blobs: list[bytes] = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _DTYPE_NAMES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for '{name}'")
        dt = _DTYPE_NAMES[arr.dtype]
        blob = arr.astype(_DTYPES[dt], copy=False).tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": dt,
                         "file": "tensors.bin", "offset": offset,
                         "nbytes": len(blob)}
        blobs.append(blob)
        offset += len(blob)
    manifest = {"schema": MANIFEST_SCHEMA, "tensors": entries}
    if meta is not None:
        manifest["meta"] = meta
    (path / "tensors.bin").write_bytes(b"".join(blobs))
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (tensors, meta); raises CheckpointError on corruption."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest.json under {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt manifest: {e}") from e
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise CheckpointError(f"unsupported checkpoint schema {manifest.get('schema')!r}")
    tensors: dict[str, np.ndarray] = {}
    data_cache: dict[str, bytes] = {}
    for name, ent in manifest["tensors"].items():
        fname = ent["file"]
        if fname not in data_cache:
            fpath = path / fname
            if not fpath.exists():
                raise CheckpointError(f"missing tensor file {fname}")
            data_cache[fname] = fpath.read_bytes()
        blob = data_cache[fname][ent["offset"]:ent["offset"] + ent["nbytes"]]
        if len(blob) != ent["nbytes"]:
            raise CheckpointError(f"tensor file truncated at '{name}'")
        arr = np.frombuffer(blob, dtype=_DTYPES[ent["dtype"]]).reshape(ent["shape"])
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return tensors, manifest.get("meta", {})
