"""Volume data model, MetaImage I/O and click-point ROI extraction.

Volumes are stored as (nx, ny, nz)-indexed float32 arrays, so ``data[i, j, k]``
addresses voxel (x=i, y=j, z=k). World position of a voxel center is
``origin + index * spacing`` (mm). Arrays are frozen after construction;
operations return new volumes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScalarVolume",
    "ProbabilityVolume",
    "LabelVolume",
    "RoiSpec",
    "MetaImageError",
    "read_metaimage",
    "write_metaimage",
    "crop_roi",
]


class MetaImageError(ValueError):
    """Malformed or unsupported MetaImage content."""


def _as_triple(values, name: str, dtype=float) -> tuple:
    t = tuple(dtype(v) for v in values)
    if len(t) != 3:
        raise ValueError(f"{name} must have exactly 3 entries, got {len(t)}")
    return t


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """3D grid of intensities with voxel spacing and world origin in mm."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dims must be >= 1, got {arr.shape}")
        spacing = _as_triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        origin = _as_triple(self.origin, "origin")
        self._validate_data(arr)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    def _validate_data(self, arr: np.ndarray) -> None:
        if not np.isfinite(arr).all():
            raise ValueError("volume data contains non-finite values")

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def same_geometry(self, other: "ScalarVolume") -> bool:
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
        )

    def index_to_world(self, index) -> np.ndarray:
        """World position (mm) of the given (possibly fractional) voxel index."""
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * np.asarray(self.spacing)


class ProbabilityVolume(ScalarVolume):
    """Per-voxel likelihood in [0, 1]; out-of-range data is rejected, not clamped."""

    def _validate_data(self, arr: np.ndarray) -> None:
        super()._validate_data(arr)
        lo, hi = float(arr.min()), float(arr.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"probability values must lie in [0, 1], got range [{lo}, {hi}]")


class LabelVolume(ScalarVolume):
    """Binary mask; values are exactly 0 or 1 (stored as float32, written as uchar)."""

    def _validate_data(self, arr: np.ndarray) -> None:
        super()._validate_data(arr)
        if not np.isin(arr, (0.0, 1.0)).all():
            raise ValueError("label values must be exactly 0 or 1")

    @property
    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.data))

    def as_bool(self) -> np.ndarray:
        return self.data > 0.5


@dataclass(frozen=True)
class RoiSpec:
    """Cubic region of interest around a click point given as a voxel index."""

    center: tuple
    size: int = 32

    def __post_init__(self):
        center = _as_triple(self.center, "center", dtype=int)
        size = int(self.size)
        if size < 4 or size % 2 != 0:
            raise ValueError(f"ROI size must be even and >= 4, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)


# --- MetaImage subset ------------------------------------------------------
#
# ASCII header lines "Key = Value" terminated by LF, fixed key order, then a
# raw little-endian payload in x-fastest order immediately after the header.

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

_ELEMENT_TYPES = {
    "MET_UCHAR": np.dtype("u1"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
}

_KINDS = {
    "scalar": ScalarVolume,
    "probability": ProbabilityVolume,
    "label": LabelVolume,
}


def _read_header_line(fh) -> str:
    raw = bytearray()
    while True:
        b = fh.read(1)
        if not b:
            raise MetaImageError("unexpected end of file inside header")
        if b == b"\n":
            break
        raw += b
        if len(raw) > 4096:
            raise MetaImageError("header line too long")
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MetaImageError("header is not ASCII") from exc


def _parse_numbers(value: str, count: int, cast, key: str):
    parts = value.split()
    if len(parts) != count:
        raise MetaImageError(f"{key} must have {count} entries, got {value!r}")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError as exc:
        raise MetaImageError(f"cannot parse {key} value {value!r}") from exc


def read_metaimage(path, kind: str = "scalar"):
    """Read a MetaImage file as the requested volume kind.

    kind is one of "scalar", "probability" or "label"; validation of the
    returned volume (probability range, binary labels) happens on load.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown volume kind {kind!r}")
    seen = {}
    with open(path, "rb") as fh:
        while "ElementDataFile" not in seen:
            line = _read_header_line(fh)
            if " = " not in line:
                raise MetaImageError(f"malformed header line {line!r}")
            key, value = line.split(" = ", 1)
            if key in seen:
                raise MetaImageError(f"duplicate header key {key!r}")
            if key not in _HEADER_ORDER:
                raise MetaImageError(f"unsupported header key {key!r}")
            expected = _HEADER_ORDER[len(seen)]
            if key != expected:
                raise MetaImageError(f"header key {key!r} out of order, expected {expected!r}")
            seen[key] = value
        payload = fh.read()

    if seen["ObjectType"] != "Image":
        raise MetaImageError(f"ObjectType must be Image, got {seen['ObjectType']!r}")
    if seen["NDims"] != "3":
        raise MetaImageError(f"NDims must be 3, got {seen['NDims']!r}")
    if seen["ElementByteOrderMSB"] != "False":
        raise MetaImageError("only little-endian data is supported")
    if seen["ElementDataFile"] != "LOCAL":
        raise MetaImageError("only ElementDataFile = LOCAL is supported")
    if seen["ElementType"] not in _ELEMENT_TYPES:
        raise MetaImageError(f"unsupported ElementType {seen['ElementType']!r}")

    dims = _parse_numbers(seen["DimSize"], 3, int, "DimSize")
    if min(dims) < 1:
        raise MetaImageError(f"DimSize entries must be >= 1, got {dims}")
    spacing = _parse_numbers(seen["ElementSpacing"], 3, float, "ElementSpacing")
    origin = _parse_numbers(seen["Offset"], 3, float, "Offset")

    dtype = _ELEMENT_TYPES[seen["ElementType"]]
    count = dims[0] * dims[1] * dims[2]
    expected_bytes = count * dtype.itemsize
    if len(payload) < expected_bytes:
        raise MetaImageError(
            f"payload has {len(payload)} bytes, expected {expected_bytes}"
        )
    if len(payload) > expected_bytes:
        raise MetaImageError(f"{len(payload) - expected_bytes} trailing bytes after payload")
    flat = np.frombuffer(payload, dtype=dtype, count=count).astype(np.float32)
    data = flat.reshape(dims, order="F")
    try:
        return _KINDS[kind](data=data, spacing=spacing, origin=origin)
    except ValueError as exc:
        raise MetaImageError(f"data invalid for kind {kind!r}: {exc}") from exc


def _format_float(x: float) -> str:
    # repr round-trips exactly and writes 0.5 as "0.5", 1.0 as "1.0"
    return repr(float(x))


def write_metaimage(volume: ScalarVolume, path) -> None:
    """Write a volume in the MetaImage subset; read-back is bit-exact."""
    if isinstance(volume, LabelVolume):
        element_type, dtype = "MET_UCHAR", _ELEMENT_TYPES["MET_UCHAR"]
    else:
        element_type, dtype = "MET_FLOAT", _ELEMENT_TYPES["MET_FLOAT"]
    nx, ny, nz = volume.dims
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        f"DimSize = {nx} {ny} {nz}\n"
        f"ElementSpacing = {' '.join(_format_float(s) for s in volume.spacing)}\n"
        f"Offset = {' '.join(_format_float(o) for o in volume.origin)}\n"
        "ElementByteOrderMSB = False\n"
        f"ElementType = {element_type}\n"
        "ElementDataFile = LOCAL\n"
    )
    payload = volume.data.astype(dtype).ravel(order="F").tobytes()
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload)
    os.replace(tmp, path)


def crop_roi(volume: ScalarVolume, roi: RoiSpec):
    """Extract a cubic ROI centered on a voxel index, edge-replicating out of bounds.

    The output keeps the input kind and voxel size; its origin is shifted so
    the world coordinates of in-bounds voxels are preserved.
    """
    dims = volume.dims
    for c, n in zip(roi.center, dims):
        if not 0 <= c < n:
            raise ValueError(f"ROI center {roi.center} outside volume dims {dims}")
    half = roi.size // 2
    index = [
        np.clip(np.arange(c - half, c - half + roi.size), 0, n - 1)
        for c, n in zip(roi.center, dims)
    ]
    data = volume.data[np.ix_(*index)]
    origin = tuple(
        o + (c - half) * s for o, c, s in zip(volume.origin, roi.center, volume.spacing)
    )
    return type(volume)(data=data, spacing=volume.spacing, origin=origin)
