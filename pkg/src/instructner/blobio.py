"""Self-describing binary container: one JSON header line, then raw arrays.

Byte output is a pure function of (header, arrays), which the determinism
checks on checkpoints and indexes rely on.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = "instructner-blob"
FORMAT_VERSION = 1


def write_blob(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    specs = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype = arr.dtype.newbyteorder("<")
        data = arr.astype(dtype, copy=False).tobytes(order="C")
        specs.append(
            {"name": name, "dtype": dtype.str, "shape": list(arr.shape),
             "offset": offset, "nbytes": len(data)}
        )
        chunks.append(data)
        offset += len(data)
    meta = {"magic": MAGIC, "format_version": FORMAT_VERSION,
            "header": header, "arrays": specs}
    line = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(line + b"\n")
        for chunk in chunks:
            fh.write(chunk)


def read_blob(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    try:
        meta = json.loads(raw[:nl].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ParseError(f"not an instructner blob: {exc}", path) from exc
    if meta.get("magic") != MAGIC:
        raise ParseError("not an instructner blob (bad magic)", path)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unsupported blob format {meta.get('format_version')}", path)
    body = memoryview(raw)[nl + 1:]
    arrays = {}
    for spec in meta["arrays"]:
        buf = body[spec["offset"]: spec["offset"] + spec["nbytes"]]
        arrays[spec["name"]] = (
            np.frombuffer(buf, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"]).copy()
        )
    return meta["header"], arrays
