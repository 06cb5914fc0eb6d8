"""Minimal PLY reader/writer for x/y/z point clouds.

Supports format ascii 1.0 and binary_little_endian 1.0. Only the vertex
element is materialized; trailing elements (faces etc.) are ignored.
Written files use double precision so write/read round trips are
bit-identical.
"""

from __future__ import annotations

import numpy as np


class PlyError(ValueError):
    """Malformed PLY header or payload."""


_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_header(blob: bytes):
    """Returns (format, elements, payload offset).

    elements is a list of (name, count, [(prop_name, np_type | None)]),
    None marking list properties (only tolerated after vertex data).
    """
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise PlyError("not a PLY file (missing ply/end_header)")
    offset = end + len(b"end_header\n")
    fmt = None
    elements = []
    for raw in blob[:end].decode("ascii", "replace").splitlines()[1:]:
        parts = raw.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii",
                                                  "binary_little_endian"):
                raise PlyError(f"unsupported format line {raw!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyError(f"bad element line {raw!r}")
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise PlyError("property before any element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], None))
            elif parts[1] in _TYPES:
                elements[-1][2].append((parts[2], "<" + _TYPES[parts[1]]))
            else:
                raise PlyError(f"unknown property type {parts[1]!r}")
        elif parts[0] == "end_header":
            break
        else:
            raise PlyError(f"unrecognized header line {raw!r}")
    if fmt is None:
        raise PlyError("missing format line")
    return fmt, elements, offset


def read_ply(path) -> np.ndarray:
    """Vertex coordinates (N, 3) float64 from an ascii or binary-LE PLY."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fmt, elements, offset = _parse_header(blob)
    for pos, (name, count, props) in enumerate(elements):
        if name == "vertex":
            break
    else:
        raise PlyError("no vertex element")
    if pos != 0:
        raise PlyError("vertex must be the first element")
    names = [p for p, _ in props]
    if any(t is None for _, t in props):
        raise PlyError("list property inside vertex element")
    for ax in ("x", "y", "z"):
        if ax not in names:
            raise PlyError(f"vertex element lacks property {ax!r}")

    if fmt == "ascii":
        rows = blob[offset:].decode("ascii", "replace").split("\n")
        rows = [r for r in rows[:count] if r.strip()]
        if len(rows) < count:
            raise PlyError(f"ascii payload has {len(rows)} of {count} rows")
        try:
            table = np.array([r.split()[:len(props)] for r in rows],
                             dtype=np.float64)
        except ValueError as exc:
            raise PlyError(f"bad ascii vertex row: {exc}") from None
        if table.shape != (count, len(props)):
            raise PlyError("ragged ascii vertex rows")
        cols = {n: table[:, i] for i, (n, _) in enumerate(props)}
    else:
        dtype = np.dtype([(n, t) for n, t in props])
        need = count * dtype.itemsize
        have = len(blob) - offset
        if have < need:
            raise PlyError(
                f"binary payload truncated: need {need} bytes, "
                f"have {have} ({need - have} missing)")
        table = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        cols = {n: table[n].astype(np.float64) for n, _ in props}
    return np.column_stack([cols["x"], cols["y"], cols["z"]])


def write_ply(points, path, fmt: str = "binary") -> None:
    """Write (N, 3) coordinates as double-precision x/y/z."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    if fmt not in ("binary", "ascii"):
        raise ValueError(f"format must be 'binary' or 'ascii', not {fmt!r}")
    kind = "binary_little_endian" if fmt == "binary" else "ascii"
    header = (f"ply\nformat {kind} 1.0\nelement vertex {pts.shape[0]}\n"
              "property double x\nproperty double y\nproperty double z\n"
              "end_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if fmt == "binary":
            fh.write(np.ascontiguousarray(pts, dtype="<f8").tobytes())
        else:
            fh.write("\n".join(
                " ".join(repr(float(v)) for v in row) for row in pts
            ).encode("ascii") + b"\n")
