"""Checkpoint files: a text manifest followed by little-endian float64 data.

Layout::

    ocvqa-checkpoint 1
    meta <key> <value>          (zero or more, value runs to end of line)
    array <name> <shape> <byte offset>
    ...
    end
    <raw little-endian float64 payload, arrays concatenated in manifest order>

``shape`` is comma separated extents, or ``-`` for a 0-d array.  Offsets are
relative to the first payload byte.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = "ocvqa-checkpoint 1"
_LE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def _fmt_shape(shape) -> str:
    return ",".join(str(n) for n in shape) if shape else "-"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "-" else tuple(int(n) for n in text.split(","))


def dumps(arrays: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> bytes:
    lines = [MAGIC]
    for key, value in (meta or {}).items():
        if " " in key or "\n" in str(value):
            raise CheckpointError(f"bad meta entry {key!r}")
        lines.append(f"meta {key} {value}")
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"array name may not contain whitespace: {name!r}")
        arr = np.array(arr, dtype=_LE, order="C")  # ascontiguousarray would lift 0-d to 1-d
        lines.append(f"array {name} {_fmt_shape(arr.shape)} {offset}")
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("ascii") + b"".join(blobs)


def loads(raw: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    pos = 0
    entries = []
    first = True
    while True:
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise CheckpointError("manifest not terminated by 'end'")
        line = raw[pos:nl].decode("ascii")
        pos = nl + 1
        if first:
            if line != MAGIC:
                raise CheckpointError(f"not a checkpoint file (header {line!r})")
            first = False
            continue
        if line == "end":
            break
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "array":
            name, shape, off = rest.split(" ")
            entries.append((name, _parse_shape(shape), int(off)))
        else:
            raise CheckpointError(f"unknown manifest line {line!r}")
    payload = raw[pos:]
    for name, shape, off in entries:
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(payload):
            raise CheckpointError(f"array {name!r} runs past end of payload")
        arrays[name] = np.frombuffer(payload[off:end], dtype=_LE).astype(np.float64).reshape(shape)
    return arrays, meta


def save(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(arrays, meta))
    tmp.replace(path)


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return loads(Path(path).read_bytes())
