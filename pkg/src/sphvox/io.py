"""File formats: the binary tensor container and plain-text XYZ point files.

Tensor container layout (little-endian)::

    b"PRTN" | u16 version | u16 count
    repeated count times:
        u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 data (row-major)
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .geometry import PointCloud

MAGIC = b"PRTN"
VERSION = 1


def _file_mode() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


class TensorFormatError(ValueError):
    pass


class XyzFormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary sibling file and rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, _file_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# tensor container


def encode_tensors(tensors) -> bytes:
    """Serialize ``{name: array}`` (or a sequence of pairs) in the given order."""
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    if len(items) > 0xFFFF:
        raise TensorFormatError("too many tensors")
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise TensorFormatError("duplicate tensor names")
    out = [MAGIC, struct.pack("<HH", VERSION, len(items))]
    for name, arr in items:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if len(raw) > 0xFFFF or arr.ndim > 0xFF or any(d > 0xFFFFFFFF for d in arr.shape):
            raise TensorFormatError(f"tensor {name!r} exceeds container limits")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def decode_tensors(data: bytes) -> dict[str, np.ndarray]:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise TensorFormatError("truncated tensor file")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise TensorFormatError("bad magic bytes")
    version, count = struct.unpack("<HH", take(4))
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(n)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TensorFormatError("tensor name is not UTF-8") from exc
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = math.prod(dims)
        arr = np.frombuffer(bytes(take(4 * size)), dtype="<f4").reshape(dims)
        if name in tensors:
            raise TensorFormatError(f"duplicate tensor {name!r}")
        tensors[name] = arr
    if pos != len(view):
        raise TensorFormatError("trailing bytes after the last tensor")
    return tensors


def write_tensors(path, tensors) -> None:
    atomic_write(path, encode_tensors(tensors))


def read_tensors(path) -> dict[str, np.ndarray]:
    return decode_tensors(Path(path).read_bytes())


def text_tensor(text: str) -> np.ndarray:
    """Store text (e.g. JSON) as one float per UTF-8 byte."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def tensor_text(arr: np.ndarray) -> str:
    codes = np.asarray(arr).reshape(-1)
    if np.any(codes != np.round(codes)) or codes.min(initial=0) < 0 or codes.max(initial=0) > 255:
        raise TensorFormatError("tensor does not hold byte codes")
    return codes.astype(np.uint8).tobytes().decode("utf-8")


# ---------------------------------------------------------------------------
# XYZ text


def parse_xyz(text: str) -> PointCloud:
    """One point per line, three reals plus an optional integer label.

    Lines starting with ``#`` and blank lines are skipped. Every data row
    must have the same column count.
    """
    rows, labels, width = [], [], None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(" ")
        if len(fields) not in (3, 4) or "" in fields:
            raise XyzFormatError(f"line {lineno}: expected 3 or 4 space-separated fields")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise XyzFormatError(f"line {lineno}: ragged row")
        try:
            xyz = [float(f) for f in fields[:3]]
        except ValueError as exc:
            raise XyzFormatError(f"line {lineno}: {exc}") from exc
        if not all(math.isfinite(v) for v in xyz):
            raise XyzFormatError(f"line {lineno}: non-finite coordinate")
        rows.append(xyz)
        if width == 4:
            try:
                labels.append(int(fields[3]))
            except ValueError as exc:
                raise XyzFormatError(f"line {lineno}: label must be an integer") from exc
    if not rows:
        raise XyzFormatError("no points")
    return PointCloud(np.array(rows), np.array(labels) if width == 4 else None)


def read_xyz(path) -> PointCloud:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise XyzFormatError("file is not UTF-8") from exc
    return parse_xyz(text)


def format_xyz(cloud: PointCloud) -> str:
    lines = []
    for i, p in enumerate(cloud.points):
        row = " ".join(repr(float(v)) for v in p)
        if cloud.labels is not None:
            row += f" {int(cloud.labels[i])}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def write_xyz(path, cloud: PointCloud) -> None:
    atomic_write(path, format_xyz(cloud))
