"""P1 finite-element assembly on :class:`~diskpsc.mesh.DiskMesh`.

All densities are vertex values interpolated linearly, so weighted mass
matrices integrate ``rho * phi_i * phi_j`` exactly for the P1 density.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .mesh import DiskMesh


def _scatter(mesh: DiskMesh, local: np.ndarray) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def stiffness_matrix(mesh: DiskMesh) -> sp.csr_matrix:
    g = mesh.basis_gradients
    local = np.einsum("tid,tjd->tij", g, g) * mesh.signed_areas[:, None, None]
    return _scatter(mesh, local)


def mass_matrix(mesh: DiskMesh, density: np.ndarray | None = None) -> sp.csr_matrix:
    """Consistent mass matrix ``int rho phi_i phi_j`` with P1 ``rho`` (default 1)."""
    area = mesh.signed_areas
    if density is None:
        base = (np.ones((3, 3)) + np.eye(3)) / 12.0
        local = area[:, None, None] * base[None]
        return _scatter(mesh, local)
    r = np.asarray(density, dtype=float)[mesh.triangles]  # (F, 3)
    rsum = r.sum(axis=1)
    # int phi_i phi_j phi_k over a triangle: A/10 (i=j=k), A/30 (two equal), A/60 (distinct)
    local = np.empty((mesh.n_triangles, 3, 3))
    for i in range(3):
        for j in range(3):
            if i == j:
                local[:, i, i] = (2.0 * r[:, i] + rsum) / 30.0
            else:
                local[:, i, j] = (r[:, i] + r[:, j] + rsum) / 60.0
    local *= area[:, None, None]
    return _scatter(mesh, local)


def lumped_mass(mesh: DiskMesh, density: np.ndarray | None = None) -> np.ndarray:
    """Row sums of the consistent mass matrix, i.e. ``int rho phi_i``."""
    area = mesh.signed_areas
    out = np.zeros(mesh.n_vertices)
    if density is None:
        for k in range(3):
            np.add.at(out, mesh.triangles[:, k], area / 3.0)
        return out
    r = np.asarray(density, dtype=float)[mesh.triangles]
    rsum = r.sum(axis=1)
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], area * (r[:, k] + rsum) / 12.0)
    return out


def boundary_mass_matrix(mesh: DiskMesh, density: np.ndarray | None = None) -> sp.csr_matrix:
    """Consistent 1D mass on the polygonal boundary, ``oint rho phi_i phi_j ds``."""
    e = mesh.boundary_edges
    L = mesh.boundary_edge_lengths
    if density is None:
        ri = rj = np.ones(len(e))
    else:
        d = np.asarray(density, dtype=float)
        ri, rj = d[e[:, 0]], d[e[:, 1]]
    mii = L * (ri / 4.0 + rj / 12.0)
    mjj = L * (ri / 12.0 + rj / 4.0)
    mij = L * (ri + rj) / 12.0
    rows = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
    n = mesh.n_vertices
    return sp.csr_matrix((np.concatenate([mii, mjj, mij, mij]), (rows, cols)), shape=(n, n))


def boundary_lumped_mass(mesh: DiskMesh, density: np.ndarray | None = None) -> np.ndarray:
    """Per-boundary-vertex ``oint rho phi_i ds`` in ``boundary_loop`` order."""
    e = mesh.boundary_edges
    L = mesh.boundary_edge_lengths
    if density is None:
        ri = rj = np.ones(len(e))
    else:
        d = np.asarray(density, dtype=float)
        ri, rj = d[e[:, 0]], d[e[:, 1]]
    # loop position k owns edge k (start) and edge k-1 (end)
    start = L * (ri / 3.0 + rj / 6.0)
    end = L * (ri / 6.0 + rj / 3.0)
    return start + np.roll(end, 1)


def conformal_potential_form(mesh: DiskMesh, w: np.ndarray) -> sp.csr_matrix:
    """Matrix of ``int grad w . grad(phi_i phi_j) dx`` for P1 ``w``."""
    gw = mesh.gradient(w)  # (F, 2)
    dots = np.einsum("td,tkd->tk", gw, mesh.basis_gradients)  # grad w . grad phi_k
    local = (dots[:, :, None] + dots[:, None, :]) * (mesh.signed_areas / 3.0)[:, None, None]
    return _scatter(mesh, local)


def boundary_restriction(mesh: DiskMesh) -> sp.csr_matrix:
    """Selector mapping vertex vectors to ``boundary_loop`` order."""
    nb = len(mesh.boundary_loop)
    return sp.csr_matrix(
        (np.ones(nb), (np.arange(nb), mesh.boundary_loop)), shape=(nb, mesh.n_vertices)
    )


class PointLocator:
    """Barycentric point location on a mesh; points slightly outside the
    polygon (between a boundary chord and the circle) use the nearest
    boundary triangle with extrapolated coordinates."""

    def __init__(self, mesh: DiskMesh, k: int = 12):
        self.mesh = mesh
        p = mesh.vertices[mesh.triangles]
        self._p0 = p[:, 0]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        # inverse of [d1 d2] per triangle
        self._inv = np.stack(
            [np.stack([d2[:, 1], -d2[:, 0]], axis=1), np.stack([-d1[:, 1], d1[:, 0]], axis=1)],
            axis=1,
        ) / det[:, None, None]
        self._tree = cKDTree(p.mean(axis=1))
        self._k = min(k, mesh.n_triangles)

    def _barycentric(self, tri, pts):
        lam12 = np.einsum("nij,nj->ni", self._inv[tri], pts - self._p0[tri])
        return np.concatenate([1.0 - lam12.sum(axis=1, keepdims=True), lam12], axis=1)

    def locate(self, points: np.ndarray, hint: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Return (triangle index, barycentric coordinates (n, 3)).

        ``hint`` holds a guess per point (e.g. the previous location of a
        moving point); guesses that still contain the point are kept.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if hint is not None:
            tri = np.asarray(hint).copy()
            lam = self._barycentric(tri, pts)
            redo = np.flatnonzero(lam.min(axis=1) < 0.0)
            if len(redo):
                t2, l2 = self.locate(pts[redo])
                tri[redo], lam[redo] = t2, l2
            return tri, lam
        _, cand = self._tree.query(pts, k=self._k)
        cand = np.atleast_2d(cand).reshape(len(pts), -1)
        rel = pts[:, None, :] - self._p0[cand]
        lam12 = np.einsum("nkij,nkj->nki", self._inv[cand], rel)
        lam = np.concatenate([1.0 - lam12.sum(axis=2, keepdims=True), lam12], axis=2)
        score = lam.min(axis=2)
        best = np.argmax(score, axis=1)
        idx = np.arange(len(pts))
        return cand[idx, best], lam[idx, best]

    def interpolate(self, values: np.ndarray, points: np.ndarray, hint: np.ndarray | None = None) -> np.ndarray:
        tri, lam = self.locate(points, hint)
        vals = np.asarray(values)[self.mesh.triangles[tri]]  # (n, 3, ...)
        return np.einsum("nk,nk...->n...", lam, vals)
