"""Binary container: JSON header + row-major float64 blocks.

One format backs projection models and training checkpoints. Bytes are
deterministic for identical content (sorted header keys, little-endian
float64), which is what makes byte-identical reruns checkable.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigError

MAGIC = b"MKGB"
FORMAT_VERSION = 1


def save_bundle(path, kind: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_bundle(path, expect_kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigError(f"{path}: not a mkglearn bundle")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len))
        if expect_kind is not None and header["kind"] != expect_kind:
            raise ConfigError(f"{path}: bundle kind {header['kind']!r}, expected {expect_kind!r}")
        arrays = {}
        for spec in header["arrays"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8")
            arrays[spec["name"]] = data.reshape(spec["shape"]).astype(np.float64)
    return header["meta"], arrays
