"""MetaImage subset I/O: the file contract shared with the segmentation pipeline.

ASCII "Key = Value" lines in fixed order terminated by LF, then a raw
little-endian payload in x-fastest order. Arrays here are (nx, ny, nz).
"""

from __future__ import annotations

import numpy as np

_HEADER_ORDER = (
    "ObjectType",
    "NDims",
    "DimSize",
    "ElementSpacing",
    "Offset",
    "ElementByteOrderMSB",
    "ElementType",
    "ElementDataFile",
)

_DTYPES = {
    "MET_UCHAR": np.dtype("u1"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
}


def read_mha(path):
    """Returns (data (nx,ny,nz) float32, spacing, origin)."""
    seen = {}
    with open(path, "rb") as fh:
        while "ElementDataFile" not in seen:
            line = bytearray()
            while True:
                b = fh.read(1)
                if not b:
                    raise ValueError("unexpected end of header")
                if b == b"\n":
                    break
                line += b
            key, _, value = line.decode("ascii").partition(" = ")
            expected = _HEADER_ORDER[len(seen)]
            if key != expected:
                raise ValueError(f"header key {key!r}, expected {expected!r}")
            seen[key] = value
        payload = fh.read()
    if seen["ElementType"] not in _DTYPES:
        raise ValueError(f"unsupported ElementType {seen['ElementType']!r}")
    dims = tuple(int(x) for x in seen["DimSize"].split())
    spacing = tuple(float(x) for x in seen["ElementSpacing"].split())
    origin = tuple(float(x) for x in seen["Offset"].split())
    dtype = _DTYPES[seen["ElementType"]]
    count = dims[0] * dims[1] * dims[2]
    if len(payload) != count * dtype.itemsize:
        raise ValueError("payload size does not match DimSize")
    data = np.frombuffer(payload, dtype=dtype, count=count).astype(np.float32)
    return data.reshape(dims, order="F"), spacing, origin


def write_mha(path, data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0),
              element_type="MET_FLOAT"):
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError("data must be 3D")
    dtype = _DTYPES[element_type]
    nx, ny, nz = data.shape
    fmt = lambda vals: " ".join(repr(float(v)) for v in vals)
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        f"DimSize = {nx} {ny} {nz}\n"
        f"ElementSpacing = {fmt(spacing)}\n"
        f"Offset = {fmt(origin)}\n"
        "ElementByteOrderMSB = False\n"
        f"ElementType = {element_type}\n"
        "ElementDataFile = LOCAL\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.astype(dtype).ravel(order="F").tobytes())
