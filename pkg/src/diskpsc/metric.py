"""Conformal metrics ``h = exp(2w) * delta`` on the meshed unit disk.

Vertex-valued arrays stand in for scalar fields; boundary fields are arrays
ordered like ``mesh.boundary_loop``.
"""

from __future__ import annotations

import functools
import json
import math
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import fem
from .errors import ConfigurationError, DegenerateInputError
from .mesh import DiskMesh, generate_disk_mesh

# smooth cutoff used by bump metrics: 1 for r <= CUT_INNER, 0 for r >= CUT_OUTER
CUT_INNER = 0.6
CUT_OUTER = 0.9


@dataclass(frozen=True, eq=False)
class ConformalMetric:
    mesh: DiskMesh
    w: np.ndarray
    label: str = ""

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.shape != (self.mesh.n_vertices,):
            raise DegenerateInputError(
                f"conformal factor has shape {w.shape}, expected ({self.mesh.n_vertices},)"
            )
        if not np.all(np.isfinite(w)):
            raise DegenerateInputError("conformal factor is not finite")
        assert np.all(np.exp(2.0 * w) > 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @cached_property
    def density(self) -> np.ndarray:
        """Area density ``exp(2w)`` at the vertices."""
        return np.exp(2.0 * self.w)

    def shifted(self, c: float, label: str | None = None) -> "ConformalMetric":
        """The homothetic metric ``exp(2c) * h``."""
        return ConformalMetric(self.mesh, self.w + c, self.label if label is None else label)

    def restrict(self, mesh: DiskMesh) -> "ConformalMetric":
        """Same metric on a coarser nested mesh (vertex prefix)."""
        n = mesh.n_vertices
        if mesh.n_vertices > self.mesh.n_vertices or not np.array_equal(
            self.mesh.vertices[:n], mesh.vertices
        ):
            raise ConfigurationError("target mesh is not a nested coarsening")
        return ConformalMetric(mesh, self.w[:n], self.label)

    def to_dict(self, mesh_ref=None) -> dict:
        ref = mesh_ref if mesh_ref is not None else {"level": self.mesh.refinement_level}
        return {"mesh_ref": ref, "w": self.w.tolist(), "label": self.label}

    @classmethod
    def from_dict(cls, data: dict) -> "ConformalMetric":
        return cls(resolve_mesh_ref(data["mesh_ref"]), np.asarray(data["w"], dtype=float), data.get("label", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ConformalMetric":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def resolve_mesh_ref(ref) -> DiskMesh:
    """A mesh reference is a level dict, an inline mesh dict, or a path."""
    if isinstance(ref, dict) and set(ref) == {"level"}:
        return generate_disk_mesh(int(ref["level"]))
    if isinstance(ref, dict):
        return DiskMesh.from_dict(ref)
    if isinstance(ref, str):
        return DiskMesh.load(ref)
    raise ConfigurationError(f"unrecognised mesh reference {ref!r}")


def smooth_cutoff(r: np.ndarray, inner: float = CUT_INNER, outer: float = CUT_OUTER) -> np.ndarray:
    """C-infinity radial cutoff, 1 inside ``inner`` and 0 outside ``outer``."""

    def psi(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    s = (outer - np.asarray(r, dtype=float)) / (outer - inner)
    return psi(s) / (psi(s) + psi(1.0 - s))


def bump_factor(points: np.ndarray, a: float, r0: float, s: float) -> np.ndarray:
    if s <= 0:
        raise ConfigurationError("bump width must be positive")
    x = np.asarray(points, dtype=float)
    d2 = (x[:, 0] - r0) ** 2 + x[:, 1] ** 2
    return a * np.exp(-d2 / s**2) * smooth_cutoff(np.linalg.norm(x, axis=1))


def _parse_number(tok: str) -> float:
    tok = tok.strip()
    m = re.fullmatch(r"sqrt\(?([0-9.eE+-]+)\)?", tok)
    if m:
        return math.sqrt(float(m.group(1)))
    try:
        return float(tok)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse number {tok!r}") from exc


def _term(mesh: DiskMesh, name: str) -> np.ndarray:
    name = name.strip()
    head, _, args = name.partition(":")
    head = head.strip().lower()
    params = [_parse_number(t) for t in args.split(",")] if args else []
    x = mesh.vertices
    r2 = np.einsum("ij,ij->i", x, x)
    if head == "flat" and not params:
        return np.zeros(mesh.n_vertices)
    if head == "hemisphere" and not params:
        return np.log(2.0 / (1.0 + r2))
    if head == "scaled_flat" and len(params) == 1:
        (c,) = params
        if not (c > 0 and math.isfinite(c)):
            raise ConfigurationError("scaled_flat needs a finite c > 0")
        return np.full(mesh.n_vertices, math.log(c))
    if head == "bump" and len(params) == 3:
        a, r0, s = params
        if not all(map(math.isfinite, params)):
            raise ConfigurationError("bump parameters must be finite")
        return bump_factor(x, a, r0, s)
    raise ConfigurationError(f"unknown metric {name!r}")


def named_metric(mesh: DiskMesh, name: str) -> ConformalMetric:
    """Build a metric from a name such as ``hemisphere``, ``scaled_flat:sqrt2``,
    ``bump:0.1,0.2,0.25`` or a ``+``-separated sum of those (factors add)."""
    if not isinstance(name, str) or not name.strip():
        raise ConfigurationError("metric name must be a non-empty string")
    w = sum((_term(mesh, part) for part in name.split("+")), np.zeros(mesh.n_vertices))
    return ConformalMetric(mesh, w, name.strip())


def random_metric(mesh: DiskMesh, rng: np.random.Generator, n_bumps: int = 3, amplitude: float = 0.4) -> ConformalMetric:
    """Sum of random interior bumps plus a random constant and hemisphere weight."""
    w = rng.uniform(-0.3, 0.3) + rng.uniform(0.0, 1.0) * _term(mesh, "hemisphere")
    parts = []
    for _ in range(n_bumps):
        a = rng.uniform(-amplitude, amplitude)
        r0 = rng.uniform(-0.4, 0.4)
        s = rng.uniform(0.2, 0.5)
        w = w + bump_factor(mesh.vertices, a, r0, s)
        parts.append(f"{a:.3f},{r0:.3f},{s:.3f}")
    return ConformalMetric(mesh, w, "random[" + ";".join(parts) + "]")


def total_area(h: ConformalMetric) -> float:
    """Exact integral of the P1 interpolant of ``exp(2w)``."""
    r = h.density[h.mesh.triangles]
    return float(np.sum(h.mesh.signed_areas * r.mean(axis=1)))


def normal_derivative(mesh: DiskMesh, f: np.ndarray) -> np.ndarray:
    """Flat outward normal derivative at the boundary vertices.

    Radial component of the area-weighted average of the P1 gradients on the
    triangle fan of each boundary vertex.
    """
    g = mesh.vertex_gradient(np.asarray(f, dtype=float))[mesh.boundary_loop]
    return np.einsum("ij,ij->i", g, mesh.outward_normals)


def flat_laplacian(mesh: DiskMesh, f: np.ndarray) -> np.ndarray:
    """Lumped-mass P1 Laplacian of ``f``.

    At boundary vertices the weak form carries the boundary flux; it is
    removed using :func:`normal_derivative`, so summing ``lap * mass`` gives
    back the boundary integral of the normal derivative.
    """
    return _weak_laplacian(mesh, np.asarray(f, dtype=float)) / fem.lumped_mass(mesh)


def _weak_laplacian(mesh: DiskMesh, f: np.ndarray) -> np.ndarray:
    weak = -(fem.stiffness_matrix(mesh) @ f)
    weak[mesh.boundary_loop] += fem.boundary_lumped_mass(mesh) * normal_derivative(mesh, f)
    return weak


@functools.lru_cache(maxsize=8)
def _recovery_weights(mesh: DiskMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-vertex least-squares Laplacian weights on the 2-ring.

    Interior vertices fit a full cubic, boundary vertices (one-sided patch)
    a quadratic.  Returns (centre, neighbour, weights) with weights of shape
    (nnz, 3) such that ``sum_j weights[:, k] * (f_j - f_i)`` gives the x
    derivative, y derivative and Laplacian at ``i`` for k = 0, 1, 2.
    """
    n = mesh.n_vertices
    e = mesh.edges
    adj = sp.csr_matrix(
        (np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)
    )
    ring = (adj + adj @ adj).tolil()
    ring.setdiag(0)
    ring = ring.tocsr()
    ring.eliminate_zeros()
    counts = np.diff(ring.indptr)
    x = mesh.vertices
    centre, nbr, weight = [], [], []
    for cubic in (True, False):
        for c in np.unique(counts):
            vs = np.flatnonzero((counts == c) & (mesh.is_boundary != cubic))
            if len(vs) == 0:
                continue
            idx = np.stack([ring.indices[ring.indptr[v] : ring.indptr[v + 1]] for v in vs])
            d = x[idx] - x[vs][:, None, :]
            scale = np.linalg.norm(d, axis=2).mean(axis=1)
            X = d[..., 0] / scale[:, None]
            Y = d[..., 1] / scale[:, None]
            cols = [X, Y, 0.5 * X**2, X * Y, 0.5 * Y**2]
            if cubic:
                cols += [X**3, X**2 * Y, X * Y**2, Y**3]
            pinv = np.linalg.pinv(np.stack(cols, axis=2))  # (n, ncoef, c)
            sc = scale[:, None]
            w = np.stack([pinv[:, 0] / sc, pinv[:, 1] / sc, (pinv[:, 2] + pinv[:, 4]) / sc**2], axis=2)
            centre.append(np.repeat(vs, c))
            nbr.append(idx.ravel())
            weight.append(w.reshape(-1, 3))
    return np.concatenate(centre), np.concatenate(nbr), np.concatenate(weight)


def recovered_laplacian(mesh: DiskMesh, f: np.ndarray) -> np.ndarray:
    """Pointwise flat Laplacian from local polynomial least squares.

    The lumped P1 Laplacian is not consistent at the irregular vertices of
    the refined hexagon (it stalls near 4% on the hemisphere); the patch
    fit is second order in the interior.  Only differences of ``f`` enter,
    so constants are annihilated.
    """
    f = np.asarray(f, dtype=float)
    i, j, w = _recovery_weights(mesh)
    return np.bincount(i, weights=w[:, 2] * (f[j] - f[i]), minlength=mesh.n_vertices)


def recovered_gradient(mesh: DiskMesh, f: np.ndarray) -> np.ndarray:
    """Vertex gradients (V, 2) from the same least-squares patch fits."""
    f = np.asarray(f, dtype=float)
    i, j, w = _recovery_weights(mesh)
    df = f[j] - f[i]
    n = mesh.n_vertices
    return np.stack(
        [np.bincount(i, weights=w[:, k] * df, minlength=n) for k in (0, 1)], axis=1
    )


def gauss_curvature(h: ConformalMetric) -> np.ndarray:
    """``K_h = -exp(-2w) * lap_delta(w)``; scalar curvature is ``2 K_h``."""
    return -np.exp(-2.0 * h.w) * recovered_laplacian(h.mesh, h.w)


def curvature_measure(h: ConformalMetric) -> np.ndarray:
    """Integrated curvature ``int K phi_i dA_h`` per vertex from the weak
    (lumped) Laplacian; sums exactly to the boundary flux of ``w``."""
    return -_weak_laplacian(h.mesh, h.w)


def geodesic_curvature(h: ConformalMetric) -> np.ndarray:
    """``kappa_h = exp(-w) (1 + d_eta w)`` on ``boundary_loop``; the unit
    circle's curvature enters analytically."""
    wb = h.w[h.mesh.boundary_loop]
    return np.exp(-wb) * (1.0 + normal_derivative(h.mesh, h.w))


def gauss_bonnet_total(h: ConformalMetric, quadrature: str = "weak") -> float:
    """``int K dA_h + oint kappa ds_h``.

    ``quadrature="weak"`` integrates the curvature measure; ``"field"``
    applies vertex quadrature to the pointwise :func:`gauss_curvature`.
    """
    mesh = h.mesh
    if quadrature == "weak":
        interior = np.sum(curvature_measure(h))
    elif quadrature == "field":
        interior = np.sum(gauss_curvature(h) * h.density * fem.lumped_mass(mesh))
    else:
        raise ConfigurationError(f"unknown quadrature {quadrature!r}")
    ds = fem.boundary_lumped_mass(mesh) * np.exp(h.w[mesh.boundary_loop])
    return float(interior + np.sum(geodesic_curvature(h) * ds))
