"""Watertight triangle meshes: loading, validation, and pseudonormal data.

Meshes are immutable after construction; all query state (normals,
angle-weighted pseudonormals, edge table) is precomputed so concurrent
read-only queries are safe.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TriangleMesh",
    "MeshError",
    "MeshFormatError",
    "NonWatertightError",
    "DegenerateTrianglesError",
    "load_mesh",
    "load_obj",
    "load_stl",
    "build_mesh",
    "mesh_report",
]

DEGENERATE_AREA_FACTOR = 1e-12


class MeshError(ValueError):
    """Base class for mesh construction failures."""


class MeshFormatError(MeshError):
    """The byte stream could not be parsed in the requested format."""


class NonWatertightError(MeshError):
    """Some edge is not shared by exactly two consistently oriented triangles."""

    def __init__(self, boundary_edges):
        self.boundary_edges = sorted(tuple(sorted(e)) for e in boundary_edges)
        super().__init__(
            f"mesh is not watertight: {len(self.boundary_edges)} offending edges "
            f"{self.boundary_edges[:8]}{'...' if len(self.boundary_edges) > 8 else ''}"
        )


class DegenerateTrianglesError(MeshError):
    """Triangles with area below tolerance."""

    def __init__(self, indices, tol):
        self.indices = list(indices)
        super().__init__(f"degenerate triangles (area < {tol:g}): {self.indices}")


@dataclass(frozen=True)
class TriangleMesh:
    """Watertight, consistently oriented triangle mesh with pseudonormals.

    vertices      (V, 3) float64, meters
    triangles     (T, 3) int64 vertex indices, counter-clockwise seen from outside
    face_normals  (T, 3) unit outward normals
    vertex_normals  (V, 3) angle-weighted unit pseudonormals
    edges         (E, 2) sorted vertex pairs
    edge_normals  (E, 3) unit pseudonormals (mean of the two incident faces)
    edge_index    maps sorted vertex pair -> row into edges/edge_normals
    """

    vertices: np.ndarray
    triangles: np.ndarray
    face_normals: np.ndarray
    vertex_normals: np.ndarray
    edges: np.ndarray
    edge_normals: np.ndarray
    edge_index: dict = field(repr=False)
    tri_edge_index: np.ndarray = field(repr=False)  # (T, 3): local edge -> edge row
    edge_flat: np.ndarray = field(repr=False)  # (E,) incident faces coplanar
    volume: float = 0.0
    bbox_min: np.ndarray = None
    bbox_max: np.ndarray = None
    scale: float = 0.0  # bounding-box diagonal, used for tolerances

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def triangle_corners(self):
        """Returns (A, B, C), each (T, 3)."""
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]


def _triangle_normals_areas(vertices, triangles):
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    cross = np.cross(b - a, c - a)
    doubled = np.linalg.norm(cross, axis=1)
    return cross, doubled * 0.5


def _check_edges(triangles):
    """Every directed edge must occur exactly once and its reverse exactly once."""
    directed = {}
    undirected = {}
    for t, (i, j, k) in enumerate(triangles):
        for a, b in ((i, j), (j, k), (k, i)):
            key = (int(a), int(b))
            directed[key] = directed.get(key, 0) + 1
            ug = (min(key), max(key))
            undirected[ug] = undirected.get(ug, 0) + 1
    bad = [e for e, n in undirected.items() if n != 2]
    if bad:
        raise NonWatertightError(bad)
    for (a, b), n in directed.items():
        if n != 1 or (b, a) not in directed:
            # count == 2 with missing reverse: inconsistent orientation
            raise NonWatertightError([(a, b)])
    return undirected


def build_mesh(vertices, triangles) -> TriangleMesh:
    """Validates connectivity and orientation, computes pseudonormals.

    Orientation is normalized so the enclosed volume is positive (all
    triangles flipped if the signed volume comes out negative).
    """
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3 or len(vertices) < 4:
        raise MeshFormatError("need at least 4 vertices of dimension 3")
    if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) < 4:
        raise MeshFormatError("need at least 4 triangles")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshFormatError("triangle index out of range")

    bbox_min = vertices.min(axis=0)
    bbox_max = vertices.max(axis=0)
    scale = float(np.linalg.norm(bbox_max - bbox_min))
    if scale == 0.0:
        raise MeshFormatError("mesh has zero extent")

    cross, areas = _triangle_normals_areas(vertices, triangles)
    tol = DEGENERATE_AREA_FACTOR * scale * scale
    degenerate = np.flatnonzero(areas < tol)
    if len(degenerate):
        raise DegenerateTrianglesError(degenerate.tolist(), tol)

    _check_edges(triangles)

    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    signed_volume = float(np.einsum("ij,ij->", a, np.cross(b, c)) / 6.0)
    if signed_volume < 0.0:
        triangles = triangles[:, ::-1].copy()
        cross, areas = _triangle_normals_areas(vertices, triangles)
        signed_volume = -signed_volume
    if signed_volume < tol:
        raise MeshFormatError("mesh encloses no volume")

    face_normals = cross / (2.0 * areas)[:, None]

    # Angle-weighted vertex pseudonormals.
    vertex_normals = np.zeros_like(vertices)
    corners = [vertices[triangles[:, k]] for k in range(3)]
    for k in range(3):
        p = corners[k]
        q = corners[(k + 1) % 3] - p
        r = corners[(k + 2) % 3] - p
        qn = q / np.linalg.norm(q, axis=1, keepdims=True)
        rn = r / np.linalg.norm(r, axis=1, keepdims=True)
        ang = np.arccos(np.clip(np.einsum("ij,ij->i", qn, rn), -1.0, 1.0))
        np.add.at(vertex_normals, triangles[:, k], ang[:, None] * face_normals)
    vertex_normals /= np.linalg.norm(vertex_normals, axis=1, keepdims=True)

    # Edge pseudonormals: mean of the two incident face normals.
    edge_accum = {}
    for t, (i, j, k) in enumerate(triangles):
        for aa, bb in ((i, j), (j, k), (k, i)):
            key = (int(min(aa, bb)), int(max(aa, bb)))
            edge_accum.setdefault(key, []).append(t)
    edges = np.array(sorted(edge_accum.keys()), dtype=np.int64)
    edge_index = {tuple(e): idx for idx, e in enumerate(map(tuple, edges.tolist()))}
    edge_normals = np.zeros((len(edges), 3))
    edge_flat = np.zeros(len(edges), dtype=bool)
    for key, tris in edge_accum.items():
        row = edge_index[key]
        n0, n1 = face_normals[tris[0]], face_normals[tris[1]]
        n = n0 + n1
        edge_normals[row] = n / np.linalg.norm(n)
        # coplanar incident faces: the edge is a triangulation artifact and
        # behaves like face interior for normals and their Jacobians
        edge_flat[row] = float(n0 @ n1) > 1.0 - 1e-12

    tri_edge_index = np.zeros((len(triangles), 3), dtype=np.int64)
    for t, (i, j, k) in enumerate(triangles):
        for local, (aa, bb) in enumerate(((i, j), (j, k), (k, i))):
            tri_edge_index[t, local] = edge_index[(int(min(aa, bb)), int(max(aa, bb)))]

    return TriangleMesh(
        vertices=vertices,
        triangles=triangles,
        face_normals=face_normals,
        vertex_normals=vertex_normals,
        edges=edges,
        edge_normals=edge_normals,
        edge_index=edge_index,
        tri_edge_index=tri_edge_index,
        edge_flat=edge_flat,
        volume=signed_volume,
        bbox_min=bbox_min,
        bbox_max=bbox_max,
        scale=scale,
    )


def _as_text(source) -> str:
    if isinstance(source, str):
        return source
    if isinstance(source, bytes):
        return source.decode("utf-8", errors="replace")
    return source.read() if hasattr(source, "read") else str(source)


def load_obj(source) -> TriangleMesh:
    """ASCII OBJ with v/f records; polygon faces are fan-triangulated."""
    text = _as_text(source)
    if isinstance(text, bytes):
        text = text.decode()
    vertices = []
    faces = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshFormatError(f"line {lineno}: vertex needs 3 coordinates")
            vertices.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                head = tok.split("/")[0]
                i = int(head)
                if i < 0:
                    i = len(vertices) + 1 + i
                idx.append(i - 1)
            if len(idx) < 3:
                raise MeshFormatError(f"line {lineno}: face needs >= 3 vertices")
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
        # other record types (vn, vt, o, g, s, usemtl, mtllib) are ignored
    if not vertices or not faces:
        raise MeshFormatError("no v/f records found")
    return build_mesh(np.array(vertices), np.array(faces))


def load_stl(source) -> TriangleMesh:
    """Binary STL: 80-byte header, uint32 count, 50-byte little-endian records.

    Exactly equal vertex coordinates are welded so connectivity can be checked.
    """
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as f:
            data = f.read()
    if len(data) < 84:
        raise MeshFormatError("binary STL shorter than the 84-byte header")
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) < expected:
        raise MeshFormatError(
            f"binary STL truncated: header says {count} triangles "
            f"({expected} bytes), got {len(data)}"
        )
    vert_ids = {}
    vertices = []
    triangles = []
    off = 84
    for _ in range(count):
        rec = struct.unpack_from("<12fH", data, off)
        off += 50
        tri = []
        for k in range(3):
            xyz = rec[3 + 3 * k : 6 + 3 * k]
            vid = vert_ids.get(xyz)
            if vid is None:
                vid = len(vertices)
                vert_ids[xyz] = vid
                vertices.append(xyz)
            tri.append(vid)
        triangles.append(tri)
    return build_mesh(np.array(vertices, dtype=np.float64), np.array(triangles))


def load_mesh(source, fmt: str | None = None) -> TriangleMesh:
    """Loads 'ascii-obj' or 'binary-stl'; sniffs by filename when fmt is None."""
    if fmt is None:
        name = source if isinstance(source, str) else getattr(source, "name", "")
        lowered = str(name).lower()
        if lowered.endswith(".obj"):
            fmt = "ascii-obj"
        elif lowered.endswith(".stl"):
            fmt = "binary-stl"
        else:
            raise MeshFormatError(f"cannot infer mesh format from {name!r}")
    if fmt == "ascii-obj":
        if isinstance(source, str) and "\n" not in source:
            with open(source, "r") as f:
                return load_obj(f.read())
        return load_obj(source)
    if fmt == "binary-stl":
        return load_stl(source)
    raise MeshFormatError(f"unknown format {fmt!r}")


def mesh_report(mesh: TriangleMesh) -> str:
    """Line-oriented statistics / validation report."""
    bmin = [float(x) for x in mesh.bbox_min]
    bmax = [float(x) for x in mesh.bbox_max]
    lines = [
        f"vertices {mesh.num_vertices}",
        f"triangles {mesh.num_triangles}",
        f"edges {len(mesh.edges)}",
        f"volume {mesh.volume!r}",
        f"bbox_min {bmin[0]!r} {bmin[1]!r} {bmin[2]!r}",
        f"bbox_max {bmax[0]!r} {bmax[1]!r} {bmax[2]!r}",
        f"scale {mesh.scale!r}",
        "watertight yes",
        "oriented yes",
    ]
    return "\n".join(lines) + "\n"
