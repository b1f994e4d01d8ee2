"""Binary tag files and truth sidecars.

Layout (little endian)::

    magic     4 bytes  b"SPTG"
    version   uint16   1
    tdc_res   uint32   TDC resolution in ps
    count     uint64   number of tags
    tags      count x uint64 timestamps in ps, ascending
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .engine import LABEL_NAMES, TagStream, TruthCounters

MAGIC = b"SPTG"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHIQ")


class TagFormatError(ValueError):
    pass


def write_tags(path, stream: TagStream) -> None:
    tags = np.ascontiguousarray(stream.tags, dtype="<u8")
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, int(stream.tdc_resolution_ps), tags.size))
        f.write(tags.tobytes())


def read_tags(path, duration_ps: int = 0) -> TagStream:
    """Load a tag file.  The format carries no duration; pass it if known."""
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise TagFormatError(f"{path}: truncated header")
    magic, version, res, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TagFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TagFormatError(f"{path}: unsupported format version {version}")
    body = data[HEADER.size:]
    if len(body) != 8 * count:
        raise TagFormatError(f"{path}: header declares {count} tags, body holds {len(body) / 8:g}")
    tags = np.frombuffer(body, dtype="<u8").astype(np.uint64)
    if tags.size and np.any(tags[1:] < tags[:-1]):
        raise TagFormatError(f"{path}: timestamps are not ascending")
    if res and tags.size and np.any(tags % np.uint64(res)):
        raise TagFormatError(f"{path}: timestamps off the {res} ps TDC grid")
    return TagStream(tags=tags, truth=TruthCounters(), duration_ps=int(duration_ps),
                     tdc_resolution_ps=int(res))


def write_truth(path, stream: TagStream) -> None:
    if stream.labels is None:
        raise ValueError("stream carries no truth labels")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i, code in enumerate(stream.labels):
            f.write(f"{i},{LABEL_NAMES[code]}\n")


def read_truth(path) -> np.ndarray:
    codes = {name: i for i, name in enumerate(LABEL_NAMES)}
    labels = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            index, _, name = line.strip().partition(",")
            if int(index) != lineno - 1 or name not in codes:
                raise TagFormatError(f"{path}:{lineno}: malformed truth record {line.strip()!r}")
            labels.append(codes[name])
    return np.array(labels, dtype=np.uint8)
