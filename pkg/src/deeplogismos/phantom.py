"""Synthetic test data: intensity phantoms, simulated probability maps, distractors.

All randomness comes from a counter-based generator (splitmix64 finalizer plus
Box-Muller), so a given spec reproduces bit-identical volumes on any platform
regardless of library RNG streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volio import LabelVolume, ProbabilityVolume, ScalarVolume

__all__ = [
    "PhantomSpec",
    "make_phantom",
    "simulate_prob",
    "add_distractor",
    "counter_normals",
    "boundary_voxels",
    "signed_boundary_distance_mm",
]

_U64 = np.uint64
_GAMMA = _U64(0x9E3779B97F4A7C15)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps mod 2^64
    z = (z + _GAMMA).astype(_U64)
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


def counter_normals(seed: int, stream: int, count: int) -> np.ndarray:
    """Standard normal draws indexed by (seed, stream, counter), via Box-Muller."""
    stream_key = np.array([stream], dtype=_U64) * _GAMMA
    key = _mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=_U64) ^ stream_key)[0]
    idx = np.arange(count, dtype=_U64)
    h1 = _mix64(key + _U64(2) * idx)
    h2 = _mix64(key + _U64(2) * idx + _U64(1))
    # 53-bit mantissas shifted into (0, 1) so log() is finite
    u1 = ((h1 >> _U64(11)).astype(np.float64) + 0.5) * 2.0**-53
    u2 = ((h2 >> _U64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _voxel_centers_mm(dims, spacing) -> tuple:
    axes = [np.arange(n, dtype=np.float64) * s for n, s in zip(dims, spacing)]
    return np.meshgrid(*axes, indexing="ij")


@dataclass(frozen=True)
class PhantomSpec:
    """Analytic blob on a regular grid: geometry, contrast, noise and seed."""

    dims: tuple = (32, 32, 32)
    spacing: tuple = (1.0, 1.0, 1.0)
    shape: str = "sphere"
    center_mm: tuple = (16.0, 16.0, 16.0)
    radii_mm: tuple = (8.0, 8.0, 8.0)
    fg_mean: float = 180.0
    bg_mean: float = 60.0
    noise_sigma: float = 10.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "center_mm", tuple(float(c) for c in self.center_mm))
        object.__setattr__(self, "radii_mm", tuple(float(r) for r in self.radii_mm))
        if self.shape not in ("sphere", "ellipsoid"):
            raise ValueError(f"shape must be sphere or ellipsoid, got {self.shape!r}")
        if len(self.dims) != 3 or len(self.spacing) != 3:
            raise ValueError("dims and spacing must have 3 entries")
        if min(self.radii_mm) <= 0:
            raise ValueError(f"radii must be positive, got {self.radii_mm}")
        if self.shape == "sphere" and len(set(self.radii_mm)) != 1:
            raise ValueError("sphere requires equal radii")
        if not self.fg_mean > self.bg_mean:
            raise ValueError("fg_mean must exceed bg_mean")
        for c, r, n, s in zip(self.center_mm, self.radii_mm, self.dims, self.spacing):
            if c - r < 0 or c + r > (n - 1) * s:
                raise ValueError("shape does not fit inside the volume")

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        return cls(**d)


def make_phantom(spec: PhantomSpec):
    """Render the spec: binary label plus noisy two-level intensity volume."""
    gx, gy, gz = _voxel_centers_mm(spec.dims, spec.spacing)
    q = sum(
        ((g - c) / r) ** 2
        for g, c, r in zip((gx, gy, gz), spec.center_mm, spec.radii_mm)
    )
    inside = q <= 1.0
    count = int(np.prod(spec.dims))
    noise = counter_normals(spec.seed, stream=0, count=count).reshape(spec.dims, order="F")
    intensity = np.where(inside, spec.fg_mean, spec.bg_mean) + spec.noise_sigma * noise
    label = LabelVolume(inside.astype(np.float32), spec.spacing)
    return ScalarVolume(intensity.astype(np.float32), spec.spacing), label


_CROSS = ndimage.generate_binary_structure(3, 1)


def boundary_voxels(label: LabelVolume) -> np.ndarray:
    """Foreground voxels with a background 6-neighbor (outside counts as background)."""
    fg = label.as_bool()
    interior = ndimage.binary_erosion(fg, structure=_CROSS, border_value=0)
    return fg & ~interior


def _point_to_cube_min_mm(points: np.ndarray, cubes_idx: np.ndarray, spacing) -> np.ndarray:
    """Exact min distance from each point (mm) to a set of voxel cubes.

    A voxel cube is the axis-aligned box of size spacing centered on its voxel
    center; per-axis distance is max(|dx| - spacing/2, 0).
    """
    spacing = np.asarray(spacing, dtype=np.float64)
    centers = cubes_idx.astype(np.float64) * spacing
    half = spacing / 2.0
    best = np.full(len(points), np.inf)
    chunk = max(1, int(2**22 / max(len(points), 1)))
    for s in range(0, len(centers), chunk):
        c = centers[s : s + chunk]
        d2 = np.zeros((len(points), len(c)))
        for a in range(3):
            da = np.abs(points[:, a, None] - c[None, :, a]) - half[a]
            np.maximum(da, 0.0, out=da)
            d2 += da * da
        np.minimum(best, d2.min(axis=1), out=best)
    return np.sqrt(best)


def signed_boundary_distance_mm(label: LabelVolume) -> np.ndarray:
    """Exact Euclidean distance (mm) to the foreground/background interface.

    The label region is the union of foreground voxel cubes; the interface is
    its surface (voxels beyond the volume count as background). Negative
    inside. Computed by brute force over the two one-voxel boundary shells:
    for inside points the nearest outside point lies on a face of an adjacent
    background cube, and symmetrically for outside points.
    """
    fg = label.as_bool()
    if not fg.any():
        raise ValueError("label volume has no foreground")
    pad = np.pad(fg, 1)
    inner = pad & ~ndimage.binary_erosion(pad, structure=_CROSS, border_value=0)
    outer = ndimage.binary_dilation(pad, structure=_CROSS, border_value=0) & ~pad
    # indices on the padded grid, shifted back so voxel (0,0,0) is the origin
    inner_idx = np.argwhere(inner) - 1
    outer_idx = np.argwhere(outer) - 1

    spacing = np.asarray(label.spacing, dtype=np.float64)
    axes = [np.arange(n, dtype=np.float64) * s for n, s in zip(label.dims, spacing)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    flat_fg = fg.ravel()

    d = np.empty(flat_fg.size, dtype=np.float64)
    d[flat_fg] = -_point_to_cube_min_mm(grid[flat_fg], outer_idx, spacing)
    d[~flat_fg] = _point_to_cube_min_mm(grid[~flat_fg], inner_idx, spacing)
    return d.reshape(label.dims)


def simulate_prob(label: LabelVolume, tau: float, noise_sigma: float, seed: int) -> ProbabilityVolume:
    """Sigmoid-of-signed-distance probability map with additive Gaussian noise.

    tau (mm) controls the boundary softness; with zero noise the p >= 0.5 set
    is exactly the input label.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    d = signed_boundary_distance_mm(label)
    p = 1.0 / (1.0 + np.exp(np.clip(d / tau, -60.0, 60.0)))
    if noise_sigma:
        count = int(np.prod(label.dims))
        noise = counter_normals(seed, stream=1, count=count).reshape(label.dims, order="F")
        p = p + noise_sigma * noise
    p = np.clip(p, 0.0, 1.0)
    return ProbabilityVolume(p.astype(np.float32), label.spacing, label.origin)


def add_distractor(
    volume: ScalarVolume,
    label: LabelVolume,
    offset_mm,
    radius_mm: float,
    intensity_mean: float,
    noise_sigma: float = 0.0,
    seed: int = 0,
    min_gap_mm: float = 2.0,
):
    """Inject a second spherical blob at an offset from the main blob centroid.

    Returns the modified intensity volume and the distractor-only mask. The
    distractor must keep at least min_gap_mm clearance from the main shape.
    """
    if radius_mm < 0:
        raise ValueError("radius must be non-negative")
    fg = label.as_bool()
    if not fg.any():
        raise ValueError("main label is empty")
    empty = LabelVolume(np.zeros(label.dims, np.float32), label.spacing, label.origin)
    if radius_mm == 0:
        return volume, empty

    centroid_mm = np.array(ndimage.center_of_mass(fg)) * np.array(label.spacing)
    center = centroid_mm + np.asarray(offset_mm, dtype=float)
    gx, gy, gz = _voxel_centers_mm(label.dims, label.spacing)
    q = ((gx - center[0]) ** 2 + (gy - center[1]) ** 2 + (gz - center[2]) ** 2) / radius_mm**2
    blob = q <= 1.0
    if not blob.any():
        return volume, empty
    dist_to_main = ndimage.distance_transform_edt(~fg, sampling=label.spacing)
    gap = float(dist_to_main[blob].min())
    if gap < min_gap_mm:
        raise ValueError(f"distractor too close to main shape ({gap:.2f} mm < {min_gap_mm} mm)")

    intensity = volume.data.astype(np.float64).copy()
    values = np.full(int(blob.sum()), float(intensity_mean))
    if noise_sigma:
        values = values + noise_sigma * counter_normals(seed, stream=2, count=values.size)
    intensity[blob] = values
    out = ScalarVolume(intensity.astype(np.float32), volume.spacing, volume.origin)
    return out, LabelVolume(blob.astype(np.float32), label.spacing, label.origin)
