"""Binary container used for network checkpoints and datasets.

Layout, bit-exact:
  - magic bytes ``ECMT1\\n``
  - 8-byte little-endian unsigned header length
  - UTF-8 JSON header; must include a ``manifest`` list of [name, shape]
  - raw little-endian float64 arrays concatenated in manifest order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"ECMT1\n"


def write_container(path, header: dict, arrays: list[np.ndarray]) -> None:
    manifest = header.get("manifest")
    if manifest is None or len(manifest) != len(arrays):
        raise ValueError("header manifest must list one (name, shape) per array")
    for (name, shape), arr in zip(manifest, arrays):
        if tuple(shape) != arr.shape:
            raise ValueError(f"manifest shape {shape} != array shape {arr.shape} for {name!r}")
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_container(path) -> tuple[dict, list[np.ndarray]]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a container file")
    (header_len,) = struct.unpack("<Q", data[len(MAGIC) : len(MAGIC) + 8])
    body_start = len(MAGIC) + 8
    if len(data) < body_start + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[body_start : body_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt JSON header: {exc}") from exc
    manifest = header.get("manifest")
    if not isinstance(manifest, list):
        raise FormatError(f"{path}: header lacks a manifest")
    offset = body_start + header_len
    arrays = []
    for name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if len(data) < offset + nbytes:
            raise FormatError(f"{path}: truncated payload for array {name!r}")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arrays.append(arr.reshape(shape).astype(np.float64))
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after payload")
    return header, arrays
