"""Structured triangulations of the closed unit disk.

Level 0 is a hexagonal fan (one centre vertex, six boundary vertices).  Each
refinement splits every triangle into four through its edge midpoints and then
pushes the midpoints of boundary edges radially onto the unit circle.  Old
vertices keep their indices, so a level-``l`` mesh is a prefix of the
level-``l+1`` mesh.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import BoundsError, InvalidMeshError

MAX_LEVEL = 10


@dataclass(frozen=True, eq=False)
class DiskMesh:
    vertices: np.ndarray  # (V, 2)
    triangles: np.ndarray  # (F, 3), counterclockwise
    boundary_loop: np.ndarray  # (Nb,), counterclockwise
    refinement_level: int

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary_loop):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs, lexicographic order."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @property
    def boundary_edges(self) -> np.ndarray:
        loop = self.boundary_loop
        return np.stack([loop, np.roll(loop, -1)], axis=1)

    @cached_property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_loop] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the three P1 hat functions on every triangle, (F, 3, 2)."""
        p = self.vertices[self.triangles]
        area2 = 2.0 * self.signed_areas
        g = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            a = p[:, (k + 1) % 3]
            b = p[:, (k + 2) % 3]
            # rotate the opposite edge by -90 degrees
            g[:, k, 0] = (a[:, 1] - b[:, 1]) / area2
            g[:, k, 1] = (b[:, 0] - a[:, 0]) / area2
        return g

    @cached_property
    def boundary_edge_lengths(self) -> np.ndarray:
        e = self.boundary_edges
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    @cached_property
    def outward_normals(self) -> np.ndarray:
        """Unit outward normals of the unit circle at the boundary vertices."""
        p = self.vertices[self.boundary_loop]
        return p / np.linalg.norm(p, axis=1, keepdims=True)

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Piecewise-constant gradient of the P1 interpolant of ``f``, (F, 2)."""
        return np.einsum("tk,tkd->td", f[self.triangles], self.basis_gradients)

    def vertex_gradient(self, f: np.ndarray) -> np.ndarray:
        """Area-weighted average of the triangle gradients around each vertex."""
        g = self.gradient(f) * self.signed_areas[:, None]
        out = np.zeros((self.n_vertices, 2))
        w = np.zeros(self.n_vertices)
        for k in range(3):
            np.add.at(out, self.triangles[:, k], g)
            np.add.at(w, self.triangles[:, k], self.signed_areas)
        return out / w[:, None]

    def to_dict(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary_loop": self.boundary_loop.tolist(),
            "refinement_level": int(self.refinement_level),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DiskMesh":
        mesh = cls(
            vertices=np.asarray(data["vertices"], dtype=float).reshape(-1, 2),
            triangles=np.asarray(data["triangles"], dtype=np.int64).reshape(-1, 3),
            boundary_loop=np.asarray(data["boundary_loop"], dtype=np.int64),
            refinement_level=int(data["refinement_level"]),
        )
        validate_mesh(mesh)
        return mesh

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DiskMesh":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class QualityReport:
    min_angle_deg: float
    max_angle_deg: float
    min_edge_length: float
    max_edge_length: float
    max_aspect_ratio: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _boundary_loop(triangles: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    # boundary edges appear once; triangle orientation makes them counterclockwise
    directed = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bnd = directed[counts[inverse.ravel()] == 1]
    succ = dict(zip(bnd[:, 0].tolist(), bnd[:, 1].tolist()))
    if len(succ) != len(bnd):
        raise InvalidMeshError("boundary is not a simple cycle")
    angles = np.arctan2(vertices[bnd[:, 0], 1], vertices[bnd[:, 0], 0]) % (2 * np.pi)
    start = int(bnd[np.argmin(angles), 0])
    loop = [start]
    while True:
        nxt = succ[loop[-1]]
        if nxt == start:
            break
        loop.append(nxt)
        if len(loop) > len(bnd):
            raise InvalidMeshError("boundary is not a single closed cycle")
    if len(loop) != len(bnd):
        raise InvalidMeshError("boundary has more than one component")
    return np.asarray(loop, dtype=np.int64)


def _base_mesh() -> tuple[np.ndarray, np.ndarray]:
    theta = np.arange(6) * (np.pi / 3.0)
    verts = np.vstack([[0.0, 0.0], np.stack([np.cos(theta), np.sin(theta)], axis=1)])
    tris = np.array([[0, 1 + k, 1 + (k + 1) % 6] for k in range(6)], dtype=np.int64)
    return verts, tris


def _subdivide(verts: np.ndarray, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    edges, inverse, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    nv = len(verts)
    mids = 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])
    on_boundary = counts == 1
    mids[on_boundary] /= np.linalg.norm(mids[on_boundary], axis=1, keepdims=True)
    nt = len(tris)
    m01 = nv + inverse[:nt]
    m12 = nv + inverse[nt : 2 * nt]
    m20 = nv + inverse[2 * nt :]
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    new = np.concatenate(
        [
            np.stack([a, m01, m20], axis=1),
            np.stack([m01, b, m12], axis=1),
            np.stack([m20, m12, c], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return np.vstack([verts, mids]), new


@functools.lru_cache(maxsize=16)
def generate_disk_mesh(refinement_level: int) -> DiskMesh:
    """Build the level-``refinement_level`` disk mesh (cached, immutable)."""
    if not isinstance(refinement_level, (int, np.integer)) or isinstance(refinement_level, bool):
        raise BoundsError(f"refinement level must be an integer, got {refinement_level!r}")
    if not 0 <= refinement_level <= MAX_LEVEL:
        raise BoundsError(f"refinement level must lie in [0, {MAX_LEVEL}], got {refinement_level}")
    verts, tris = _base_mesh()
    for _ in range(int(refinement_level)):
        verts, tris = _subdivide(verts, tris)
    loop = _boundary_loop(tris, verts)
    return DiskMesh(verts, tris, loop, int(refinement_level))


def validate_mesh(mesh: DiskMesh) -> None:
    """Raise :class:`InvalidMeshError` unless ``mesh`` satisfies the disk invariants."""
    if mesh.triangles.size and (mesh.triangles.min() < 0 or mesh.triangles.max() >= mesh.n_vertices):
        raise InvalidMeshError("triangle index out of range")
    if np.any(mesh.signed_areas <= 0.0):
        raise InvalidMeshError("degenerate or inverted triangle")
    radius = np.linalg.norm(mesh.vertices[mesh.boundary_loop], axis=1)
    if np.max(np.abs(radius - 1.0)) > 1e-12:
        raise InvalidMeshError("boundary vertex off the unit circle")
    loop = _boundary_loop(mesh.triangles, mesh.vertices)
    if len(loop) != len(mesh.boundary_loop) or set(loop.tolist()) != set(mesh.boundary_loop.tolist()):
        raise InvalidMeshError("boundary_loop does not match the triangulation")
    euler = mesh.n_vertices - len(mesh.edges) + mesh.n_triangles
    if euler != 1:
        raise InvalidMeshError(f"Euler characteristic {euler} != 1")


def mesh_quality_report(mesh: DiskMesh) -> QualityReport:
    if np.any(mesh.signed_areas <= 0.0):
        raise InvalidMeshError("degenerate or inverted triangle")
    p = mesh.vertices[mesh.triangles]
    sides = np.stack(
        [
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),  # opposite vertex 0
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        ],
        axis=1,
    )
    a, b, c = sides[:, 0], sides[:, 1], sides[:, 2]
    cos_a = np.clip((b**2 + c**2 - a**2) / (2 * b * c), -1.0, 1.0)
    cos_b = np.clip((a**2 + c**2 - b**2) / (2 * a * c), -1.0, 1.0)
    angles = np.degrees(np.arccos(np.stack([cos_a, cos_b], axis=1)))
    angles = np.concatenate([angles, 180.0 - angles.sum(axis=1, keepdims=True)], axis=1)
    # longest edge over twice the inradius-like height: equilateral gives 2/sqrt(3)
    heights = 2.0 * mesh.signed_areas / sides.max(axis=1)
    edge_len = np.linalg.norm(mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]], axis=1)
    return QualityReport(
        min_angle_deg=float(angles.min()),
        max_angle_deg=float(angles.max()),
        min_edge_length=float(edge_len.min()),
        max_edge_length=float(edge_len.max()),
        max_aspect_ratio=float((sides.max(axis=1) / heights).max()),
    )


def prolongation_prefix(coarse: DiskMesh, fine: DiskMesh) -> int:
    """Number of leading fine vertices that coincide with the coarse mesh."""
    if fine.refinement_level < coarse.refinement_level:
        raise BoundsError("fine mesh is coarser than coarse mesh")
    n = coarse.n_vertices
    if not np.array_equal(fine.vertices[:n], coarse.vertices):
        raise InvalidMeshError("meshes are not nested")
    return n
