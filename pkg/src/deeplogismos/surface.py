"""Boundary mesh extraction and electric-lines-of-force graph columns.

The refined mask is smoothed once with a 3x3x3 box filter and triangulated by
marching cubes at the 0.5 level. Treating every mesh vertex as a unit point
charge yields a field whose integral curves never cross; tracing them outward
and inward from each vertex produces non-intersecting node columns that the
graph stage searches over.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage import measure

from .volio import LabelVolume

__all__ = [
    "SurfaceMesh",
    "ColumnSet",
    "MeshTopologyError",
    "ZeroFieldError",
    "extract_mesh",
    "icosphere",
    "mesh_volume",
    "elf_field",
    "build_columns",
    "write_stl",
]

_FULL = np.ones((3, 3, 3), dtype=bool)


class MeshTopologyError(ValueError):
    """Extracted surface is empty, open, or otherwise unusable."""


class ZeroFieldError(ValueError):
    """Field magnitude below threshold; direction undefined at this point."""


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Closed triangle mesh in mm with outward orientation.

    vertex_adjacency[i] is the frozenset of vertices sharing an edge with i;
    vertex_normals are unit, area-weighted averages of incident face normals.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_adjacency: tuple
    vertex_normals: np.ndarray

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def edges(self):
        """Unique undirected edges as sorted (i, j) pairs."""
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)


def _mesh_from_arrays(vertices: np.ndarray, triangles: np.ndarray) -> SurfaceMesh:
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    if len(triangles) == 0:
        raise MeshTopologyError("isosurface is empty")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshTopologyError("triangle references an invalid vertex")

    # closed <=> every undirected edge is shared by exactly two triangles
    edges = np.sort(triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    if not (counts == 2).all():
        raise MeshTopologyError(
            f"mesh is not closed: {int((counts != 2).sum())} edges not shared by 2 triangles"
        )

    if _signed_volume(vertices, triangles) < 0:
        triangles = triangles[:, ::-1]

    a, b, c = (vertices[triangles[:, i]] for i in range(3))
    face_cross = np.cross(b - a, c - a)  # 2x area times unit normal
    vnormals = np.zeros_like(vertices)
    for i in range(3):
        np.add.at(vnormals, triangles[:, i], face_cross)
    norms = np.linalg.norm(vnormals, axis=1)
    if norms.min() < 1e-12:
        raise MeshTopologyError("degenerate vertex normal")
    vnormals /= norms[:, None]

    adjacency = [set() for _ in range(len(vertices))]
    for i, j in np.sort(triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1):
        adjacency[i].add(int(j))
        adjacency[j].add(int(i))

    vertices.flags.writeable = False
    triangles = np.ascontiguousarray(triangles)
    triangles.flags.writeable = False
    vnormals.flags.writeable = False
    return SurfaceMesh(
        vertices=vertices,
        triangles=triangles,
        vertex_adjacency=tuple(frozenset(s) for s in adjacency),
        vertex_normals=vnormals,
    )


def _signed_volume(vertices: np.ndarray, triangles: np.ndarray) -> float:
    ref = vertices.mean(axis=0)
    a, b, c = (vertices[triangles[:, i]] - ref for i in range(3))
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def mesh_volume(mesh: SurfaceMesh) -> float:
    """Enclosed volume via signed tetrahedra; positive for outward orientation."""
    return _signed_volume(mesh.vertices, mesh.triangles)


def extract_mesh(mask: LabelVolume) -> SurfaceMesh:
    """Triangulate the mask boundary: one 3x3x3 box-smoothing pass, then
    marching cubes at level 0.5. Vertex positions are in mm.

    Requires a single 26-connected component of at least 8 voxels; tiny masks
    whose smoothed field never reaches 0.5 raise MeshTopologyError.
    """
    fg = mask.as_bool()
    n_fg = int(fg.sum())
    if n_fg == 0:
        raise ValueError("mask is empty")
    _, n_comp = ndimage.label(fg, structure=_FULL)
    if n_comp != 1:
        raise ValueError(f"mask has {n_comp} components, expected exactly 1")
    if n_fg < 8:
        raise ValueError(f"mask has {n_fg} voxels, need >= 8")

    field = ndimage.uniform_filter(fg.astype(np.float64), size=3, mode="constant", cval=0.0)
    if field.max() <= 0.5:
        raise MeshTopologyError("mask too thin: smoothed field never exceeds the 0.5 level")
    verts, faces, _, _ = measure.marching_cubes(field, level=0.5, spacing=mask.spacing)
    verts = verts + np.asarray(mask.origin)
    return _mesh_from_arrays(verts, faces)


_ICO_T = (1.0 + 5.0**0.5) / 2.0
_ICO_VERTS = np.array(
    [
        (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
        (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
        (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
    ],
    dtype=np.float64,
)
_ICO_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


def icosphere(
    center_mm, radius_mm: float, subdivisions: int = 3, radial_jitter: float = 0.0
) -> SurfaceMesh:
    """Subdivided icosahedron: the analytic initial surface for baseline runs.

    radial_jitter scales each vertex by 1 + jitter * u_k with deterministic
    u_k in [-0.5, 0.5). The icosphere is centrally symmetric, so columns
    traced from antipodal vertices otherwise coincide exactly at the center;
    a sub-micron jitter breaks the tie without moving the surface.
    """
    if radius_mm <= 0:
        raise ValueError("radius must be positive")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = [tuple(f) for f in _ICO_FACES]
    for _ in range(subdivisions):
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for i, j, k in faces:
            ij, jk, ki = mid(i, j), mid(j, k), mid(k, i)
            new_faces += [(i, ij, ki), (j, jk, ij), (k, ki, jk), (ij, jk, ki)]
        faces = new_faces
    pts = np.asarray(verts) * radius_mm
    if radial_jitter:
        u = (np.arange(len(pts)) * 0.6180339887498949) % 1.0 - 0.5
        pts *= (1.0 + radial_jitter * u)[:, None]
    pts = pts + np.asarray(center_mm, dtype=float)
    return _mesh_from_arrays(pts, np.asarray(faces, dtype=np.int64))


def _field_batch(charges: np.ndarray, queries: np.ndarray, exclusion_radius: float) -> np.ndarray:
    """Summed inverse-square field of unit charges at each query point.

    Charges closer than exclusion_radius to a query are left out of its sum,
    which bounds the field near the surface the charges sit on.
    """
    out = np.empty_like(queries)
    c2 = np.einsum("cx,cx->c", charges, charges)
    chunk = max(1, int(2**23 / max(len(charges), 1)))
    for s in range(0, len(queries), chunk):
        q = queries[s : s + chunk]
        d2 = np.einsum("qx,qx->q", q, q)[:, None] + c2[None, :] - 2.0 * (q @ charges.T)
        np.maximum(d2, 1e-30, out=d2)
        w = 1.0 / (d2 * np.sqrt(d2))
        w[d2 <= exclusion_radius**2] = 0.0
        # sum_c w_qc (q - c) = q * rowsum(w) - w @ charges
        out[s : s + chunk] = q * w.sum(axis=1)[:, None] - w @ charges
    return out


def elf_field(boundary_points, query, exclusion_radius: float = 0.75) -> np.ndarray:
    """Unit field direction at a single query point; raises on a vanishing field."""
    charges = np.atleast_2d(np.asarray(boundary_points, dtype=np.float64))
    if len(charges) < 1:
        raise ValueError("need at least one boundary point")
    e = _field_batch(charges, np.asarray(query, dtype=np.float64)[None, :], exclusion_radius)[0]
    norm = np.linalg.norm(e)
    if norm < 1e-12:
        raise ZeroFieldError(f"field magnitude {norm:g} below 1e-12")
    return e / norm


@dataclass(frozen=True, eq=False)
class ColumnSet:
    """Per-vertex node columns, innermost node first.

    positions has shape (columns, length, 3) in mm; the node at base_index
    coincides with the mesh vertex. adjacency holds sorted column index pairs
    inherited from the mesh edges.
    """

    positions: np.ndarray
    node_spacing: float
    length: int
    base_index: int
    adjacency: frozenset

    @property
    def num_columns(self) -> int:
        return len(self.positions)


def _directions(charges, points, sign: float, fallback, exclusion_radius, reference=None):
    """Unit trace directions; returns (directions, degenerate mask).

    An evaluation is degenerate when the field has effectively vanished
    (|E| < 1e-12, or below 5% of the column's initial field strength when a
    reference is given) or when it reverses against the previous direction:
    inside a closed charge shell the summed field cancels to discretization
    residue, and following that residue would tangle the columns. Degenerate
    rows reuse the fallback direction.
    """
    e = sign * _field_batch(charges, points, exclusion_radius)
    norms = np.linalg.norm(e, axis=1)
    weak = norms < 1e-12
    if reference is not None:
        weak |= norms < 0.05 * reference
    norms = np.where(norms == 0.0, 1.0, norms)
    d = e / norms[:, None]
    reversed_ = np.einsum("ij,ij->i", d, fallback) < 0.0
    bad = weak | reversed_
    d[bad] = fallback[bad]
    return d, bad


def build_columns(
    mesh: SurfaceMesh,
    length: int = 50,
    spacing: float = 0.5,
    mode: str = "elf",
    exclusion_radius: float = 0.75,
) -> ColumnSet:
    """Trace a node column through every mesh vertex.

    elf mode advances by midpoint-rule steps of `spacing` along the unit field
    direction (+ outward, - inward); where the field vanishes the previous
    step direction, initially the vertex normal, is reused. normal mode uses
    the fixed vertex normal, giving straight columns. The inward half starts
    one spacing inside the vertex along its normal.
    """
    if mode not in ("elf", "normal"):
        raise ValueError(f"mode must be 'elf' or 'normal', got {mode!r}")
    if length < 2:
        raise ValueError("column length must be >= 2")
    if spacing <= 0:
        raise ValueError("node spacing must be positive")

    verts = mesh.vertices
    normals = mesh.vertex_normals
    k = len(verts)
    base = length // 2
    pos = np.empty((k, length, 3), dtype=np.float64)
    pos[:, base] = verts

    if mode == "normal":
        for m in range(1, length - base):
            pos[:, base + m] = verts + m * spacing * normals
        for m in range(1, base + 1):
            pos[:, base - m] = verts - m * spacing * normals
    else:
        charges = verts
        norm0 = np.linalg.norm(
            _field_batch(charges, verts, exclusion_radius), axis=1
        )
        p = verts.copy()
        last = normals.copy()
        for m in range(base + 1, length):
            d1, _ = _directions(charges, p, +1.0, last, exclusion_radius, norm0)
            d2, _ = _directions(charges, p + 0.5 * spacing * d1, +1.0, d1, exclusion_radius, norm0)
            p = p + spacing * d2
            pos[:, m] = p
            last = d2
        # Inward, the field is meaningful only while the exclusion radius still
        # removes at least one charge from the sum; farther in, the closed
        # shell cancels to discretization residue (Gauss), so each column is
        # frozen onto its last direction once it leaves that boundary layer.
        charge_tree = cKDTree(charges)
        p = verts - spacing * normals
        pos[:, base - 1] = p
        last = -normals
        frozen = np.zeros(k, dtype=bool)
        for m in range(base - 2, -1, -1):
            unbound = charge_tree.query(p, k=1)[0] > exclusion_radius
            d1, bad1 = _directions(charges, p, -1.0, last, exclusion_radius, norm0)
            d2, bad2 = _directions(
                charges, p + 0.5 * spacing * d1, -1.0, d1, exclusion_radius, norm0
            )
            frozen |= unbound | bad1 | bad2
            d2[frozen] = last[frozen]
            p = p + spacing * d2
            pos[:, m] = p
            last = d2

    if not np.isfinite(pos).all():
        raise ValueError("column tracing produced non-finite positions")

    flat = pos.reshape(-1, 3)
    pairs = cKDTree(flat).query_pairs(1e-9, output_type="ndarray")
    if len(pairs):
        col = pairs // length
        if (col[:, 0] != col[:, 1]).any():
            raise ValueError("two columns share a node position")

    adjacency = frozenset(
        (min(i, j), max(i, j)) for i, nb in enumerate(mesh.vertex_adjacency) for j in nb
    )
    pos.flags.writeable = False
    return ColumnSet(
        positions=pos,
        node_spacing=float(spacing),
        length=int(length),
        base_index=base,
        adjacency=adjacency,
    )


def write_stl(mesh: SurfaceMesh, path, name: str = "surface") -> None:
    """ASCII STL export for external inspection; floats formatted with %.9g."""
    a, b, c = (mesh.vertices[mesh.triangles[:, i]] for i in range(3))
    n = np.cross(b - a, c - a)
    n /= np.maximum(np.linalg.norm(n, axis=1), 1e-30)[:, None]
    fmt = lambda v: " ".join("%.9g" % x for x in v)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"solid {name}\n")
        for i in range(len(mesh.triangles)):
            fh.write(f"facet normal {fmt(n[i])}\n outer loop\n")
            for v in (a[i], b[i], c[i]):
                fh.write(f"  vertex {fmt(v)}\n")
            fh.write(" endloop\nendfacet\n")
        fh.write(f"endsolid {name}\n")
