"""Tiny self-describing container: JSON header plus raw float64 arrays.

Layout: magic ``DETECT\\x00\\x01``, 8-byte little-endian header length, UTF-8
JSON header, then each array's bytes (little-endian float64, C order) in
header order.  Writing is deterministic, so equal inputs give equal files.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import IngestionError

MAGIC = b"DETECT\x00\x01"


def write(path, meta, arrays):
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read(path):
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise IngestionError("not a DETECT binary artifact", path)
    (length,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + length].decode("utf-8"))
    offset = start + length
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(raw):
            raise IngestionError(f"truncated array {entry['name']!r}", path)
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
    return header["meta"], arrays
