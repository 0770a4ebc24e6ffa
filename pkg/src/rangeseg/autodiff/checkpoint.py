"""Binary checkpoint container.

Layout::

    RSEGCKPT <version>
    config <key> = <value>          (zero or more)
    tensor <name> <dtype> <shape>   (shape as 4x3x3, "-" for scalars)
    END
    <raw little-endian payload of every tensor, in manifest order>
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from ..errors import BadMagic, FormatError

MAGIC = "RSEGCKPT"
VERSION = 1
_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8"}


def _code(dtype: np.dtype) -> str:
    for code, spec in _DTYPES.items():
        if np.dtype(spec) == np.dtype(dtype).newbyteorder("<"):
            return code
    raise FormatError(f"unsupported checkpoint dtype {dtype}")


def dumps(tensors: dict[str, np.ndarray], config: dict[str, str] | None = None) -> bytes:
    lines = [f"{MAGIC} {VERSION}"]
    for key, value in (config or {}).items():
        lines.append(f"config {key} = {value}")
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise FormatError(f"tensor name may not contain whitespace: {name!r}")
        shape = "x".join(str(n) for n in arr.shape) if arr.ndim else "-"
        lines.append(f"tensor {name} {_code(arr.dtype)} {shape}")
    lines.append("END")
    buf = io.BytesIO()
    buf.write(("\n".join(lines) + "\n").encode("utf-8"))
    for arr in tensors.values():
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[_code(arr.dtype)]).tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    end = blob.find(b"\nEND\n")
    if not blob.startswith(MAGIC.encode()) or end < 0:
        raise BadMagic("not a rangeseg checkpoint")
    header = blob[:end].decode("utf-8").split("\n")
    version = header[0].split()[1] if len(header[0].split()) > 1 else ""
    if version != str(VERSION):
        raise FormatError(f"unsupported checkpoint version {version!r}")
    config: dict[str, str] = {}
    manifest = []
    for line in header[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            key, _, value = rest.partition(" = ")
            config[key] = value
        elif kind == "tensor":
            name, code, shape = rest.split(" ")
            dims = () if shape == "-" else tuple(int(s) for s in shape.split("x"))
            manifest.append((name, _DTYPES[code], dims))
        else:
            raise FormatError(f"bad checkpoint header line: {line!r}")
    offset = end + len(b"\nEND\n")
    tensors = {}
    for name, spec, dims in manifest:
        dtype = np.dtype(spec)
        count = int(np.prod(dims, dtype=np.int64))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(blob):
            raise FormatError(f"truncated payload at tensor {name}")
        tensors[name] = np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(dims).copy()
        offset += nbytes
    if offset != len(blob):
        raise FormatError("trailing bytes after checkpoint payload")
    return tensors, config


def save(path, tensors: dict[str, np.ndarray], config: dict[str, str] | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, config))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return loads(Path(path).read_bytes())
