"""Manifest + flat little-endian binary array storage.

Used for checkpoints (``manifest.json`` + ``params.bin``) and prepared
datasets (``dataset.json`` + ``dataset.bin``). Arrays are written row-major
in manifest order with no padding between them.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

_DTYPES = {"float32": "<f4", "int64": "<i8", "int32": "<i4"}


class BlobFormatError(ValueError):
    pass


def write_blob(
    directory: str | Path,
    arrays: Mapping[str, np.ndarray],
    extra: Mapping[str, Any] | None = None,
    manifest_name: str = "manifest.json",
    data_name: str = "params.bin",
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    with open(directory / data_name, "wb") as fh:
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            dtype = arr.dtype.name
            if dtype not in _DTYPES:
                raise BlobFormatError(f"unsupported dtype {dtype} for array {name!r}")
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
    manifest = {"arrays": entries}
    if extra:
        manifest.update(extra)
    with open(directory / manifest_name, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_blob(
    directory: str | Path,
    manifest_name: str = "manifest.json",
    data_name: str = "params.bin",
) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    directory = Path(directory)
    manifest_path = directory / manifest_name
    if not manifest_path.exists():
        raise BlobFormatError(f"missing manifest: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    raw = (directory / data_name).read_bytes()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["arrays"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(raw):
            raise BlobFormatError(f"{data_name} truncated at array {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
        offset += nbytes
    if offset != len(raw):
        raise BlobFormatError(f"{data_name} has {len(raw) - offset} trailing bytes")
    extra = {k: v for k, v in manifest.items() if k != "arrays"}
    return arrays, extra
