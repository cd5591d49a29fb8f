"""Volume normalization of a path by the flow of a gradient field.

Along a path ``k_t = exp(2 omega_t) delta`` of constant total area, the
potential ``f_t`` solves the Neumann problem

    lap_{k_t} f_t = -tr_{k_t}(dk_t/dt) / 2 = -2 d(omega_t)/dt,  d_eta f_t = 0,

and ``W_t = grad_{k_t} f_t = exp(-2 omega_t) grad f_t``.  In flat coordinates
this reads ``-lap f = d(rho_t)/dt`` with ``rho_t = exp(2 omega_t)``, and the
flow of ``W_t`` carries ``rho_0 dx`` to ``rho_t dx``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import AssemblyError, BoundsError, IntegrationError, SolvabilityError
from .isotopy import MetricPath, time_derivative
from .mesh import generate_disk_mesh
from .metric import recovered_gradient

COMPATIBILITY_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class MoserStep:
    t_index: int
    f: np.ndarray
    W: np.ndarray  # (V, 2), tangential at boundary vertices
    compatibility: float  # sum of the discrete load, i.e. int RHS dvol
    pde_residual: float
    normal_flux: float  # max |W . eta| before the tangential projection
    mean: float  # int f dvol_k after gauge fixing

    def to_dict(self) -> dict:
        return {
            "t_index": self.t_index,
            "compatibility": self.compatibility,
            "pde_residual": self.pde_residual,
            "normal_flux": self.normal_flux,
            "mean": self.mean,
            "max_W": float(np.abs(self.W).max()),
        }


def nodal_masses(path: MetricPath) -> np.ndarray:
    """``m_i(t) = int rho_t phi_i dx`` per sample, (N+1, V)."""
    rho = np.exp(2.0 * path.effective_w)
    return np.stack([fem.lumped_mass(path.mesh, r) for r in rho])


def moser_loads(path: MetricPath, time_order: int = 4) -> np.ndarray:
    """Weak right-hand sides ``int (d rho / dt) phi_i dx``.

    The time derivative is taken of the nodal masses themselves, so each
    load sums to the time derivative of the total area, which vanishes for
    a volume-matched path up to rounding.
    """
    return time_derivative(nodal_masses(path), path.dt, time_order)


class _NeumannSolver:
    """Stiffness system bordered by the volume constraint ``m . f = 0``."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.S = fem.stiffness_matrix(mesh).tocsr()
        self._cache = {}

    def solve(self, load: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, float]:
        key = m.tobytes()
        lu = self._cache.get(key)
        n = self.mesh.n_vertices
        if lu is None:
            col = sp.csr_matrix(m[:, None])
            K = sp.bmat([[self.S, col], [col.T, None]], format="csc")
            try:
                lu = spla.splu(K)
            except RuntimeError as exc:
                raise AssemblyError(f"Neumann system is singular beyond constants: {exc}") from exc
            if len(self._cache) > 4:
                self._cache.clear()
            self._cache[key] = lu
        sol = lu.solve(np.concatenate([load, [0.0]]))
        if not np.all(np.isfinite(sol)):
            raise AssemblyError("Neumann solve produced non-finite values")
        return sol[:n], float(sol[n])


def _potential(path, i, load, masses, solver, rho):
    mesh = path.mesh
    area = float(masses[i].sum())
    compat = float(load.sum())
    if abs(compat) > COMPATIBILITY_RTOL * area:
        raise SolvabilityError(
            f"load at sample {i} integrates to {compat:.3e} (area {area:.6g}); "
            "the path is not volume-matched"
        )
    if not np.any(load):
        z = np.zeros(mesh.n_vertices)
        return MoserStep(i, z, np.zeros((mesh.n_vertices, 2)), compat, 0.0, 0.0, 0.0)
    f, _ = solver.solve(load, masses[i])
    Sf = solver.S @ f
    # the multiplier absorbs the (rounding-level) incompatible part of the load
    proj = load - masses[i] * (compat / area)
    res = float(np.linalg.norm(Sf - proj) / np.linalg.norm(load))
    W = recovered_gradient(mesh, f) / rho[:, None]
    b = mesh.boundary_loop
    nrm = mesh.outward_normals
    wn = np.einsum("ij,ij->i", W[b], nrm)
    W[b] -= wn[:, None] * nrm
    return MoserStep(i, f, W, compat, res, float(np.abs(wn).max()), float(masses[i] @ f))


def neumann_potential(path: MetricPath, t_index: int, time_order: int = 4) -> MoserStep:
    if not 0 <= t_index <= path.n_intervals:
        raise BoundsError(f"t_index must lie in [0, {path.n_intervals}]")
    masses = nodal_masses(path)
    loads = time_derivative(masses, path.dt, time_order)
    rho = np.exp(2.0 * path.effective_w[t_index])
    return _potential(path, t_index, loads[t_index], masses, _NeumannSolver(path.mesh), rho)


def moser_steps(path: MetricPath, time_order: int = 4) -> list[MoserStep]:
    masses = nodal_masses(path)
    loads = time_derivative(masses, path.dt, time_order)
    solver = _NeumannSolver(path.mesh)
    rho = np.exp(2.0 * path.effective_w)
    return [_potential(path, i, loads[i], masses, solver, rho[i]) for i in range(len(path.times))]


def divergence_fields(path: MetricPath, steps: list[MoserStep]) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample vertex fields ``div_delta W`` and ``2 W . grad omega``.

    Their sum is ``div_k W``; the flat part drives the flat Jacobian.
    """
    mesh = path.mesh
    div, adv = [], []
    for s, om in zip(steps, path.effective_w):
        gx = recovered_gradient(mesh, s.W[:, 0])
        gy = recovered_gradient(mesh, s.W[:, 1])
        div.append(gx[:, 0] + gy[:, 1])
        adv.append(2.0 * np.einsum("ij,ij->i", s.W, recovered_gradient(mesh, om)))
    return np.array(div), np.array(adv)


@dataclass(frozen=True, eq=False)
class FlowResult:
    times: np.ndarray
    seeds: np.ndarray
    trajectories: np.ndarray  # (N+1, n_seeds, 2)
    jacobian_log: np.ndarray  # (N+1, n_seeds): int div_k W dt along the trajectory
    flat_jacobian_log: np.ndarray  # (N+1, n_seeds): int div_delta W dt
    density_defect: np.ndarray  # (n_seeds,): log(rho_1(psi_1) det Dpsi_1 / rho_0)
    volume_drift: np.ndarray  # (N+1,): max relative cell-volume deviation
    total_volume_drift: np.ndarray  # (N+1,)
    boundary_deviation: float
    substeps: int
    compatibility: np.ndarray
    pde_residual: np.ndarray
    normal_flux: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def max_displacement(self) -> float:
        return float(np.linalg.norm(self.trajectories - self.seeds[None], axis=2).max())

    @property
    def max_volume_drift(self) -> float:
        return float(self.volume_drift.max())

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "seeds": self.seeds.tolist(),
            "trajectories": self.trajectories.tolist(),
            "jacobian_log": self.jacobian_log.tolist(),
            "volume_drift": self.volume_drift.tolist(),
            "total_volume_drift": self.total_volume_drift.tolist(),
            "max_volume_drift": self.max_volume_drift,
            "max_displacement": self.max_displacement,
            "boundary_deviation": self.boundary_deviation,
            "substeps": self.substeps,
            "compatibility": self.compatibility.tolist(),
            "pde_residual": self.pde_residual.tolist(),
            "normal_flux": self.normal_flux.tolist(),
            **self.extra,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")


def _time_weights(i, a, n, order):
    """Interpolation nodes and weights at time ``(i + a) dt``: linear for
    order 2, cubic Lagrange on four neighbouring samples for order 4."""
    if order == 2 or n < 3:
        return (i, i + 1), (1.0 - a, a)
    j0 = min(max(i - 1, 0), n - 3)
    x = i + a - j0
    w = (
        -(x - 1) * (x - 2) * (x - 3) / 6.0,
        x * (x - 2) * (x - 3) / 2.0,
        -x * (x - 1) * (x - 3) / 2.0,
        x * (x - 1) * (x - 2) / 6.0,
    )
    return tuple(range(j0, j0 + 4)), w


def seed_grid(density: int) -> np.ndarray:
    """Polar seed layout: ``density`` rings (the last on the circle) with
    ``6 k`` points on ring ``k``, plus the centre."""
    if density < 1:
        raise BoundsError("seed density must be >= 1")
    pts = [[0.0, 0.0]]
    for k in range(1, density + 1):
        r = k / density
        th = 2 * np.pi * np.arange(6 * k) / (6 * k)
        pts.extend(np.stack([r * np.cos(th), r * np.sin(th)], axis=1).tolist())
    return np.asarray(pts)


def _cell_volumes(points, tris, rho):
    """Density-weighted areas of straight triangles, vertex-rule quadrature."""
    p = points[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return area * rho[tris].mean(axis=1)


def moser_flow(
    path: MetricPath,
    seeds: np.ndarray | None = None,
    substeps: int = 8,
    cell_level: int = 1,
    cell_refine: int = 4,
    exit_tol: float = 1e-3,
    steps: list[MoserStep] | None = None,
    time_order: int = 4,
) -> FlowResult:
    """Integrate ``dx/dt = W_t(x)`` with classical RK4.

    ``W`` is P1 in space; in time it is interpolated linearly
    (``time_order=2``) or by cubic Lagrange on four samples (``time_order=4``,
    the default, which also uses fourth-order load differences).  Volume
    transport is measured on the triangles of the level-``cell_level`` disk
    mesh, each subdivided ``cell_refine`` times; all sub-triangle vertices
    are advected and cell volumes are sums of sub-triangle volumes.
    """
    if substeps < 4:
        raise BoundsError("substeps must be >= 4")
    steps = steps if steps is not None else moser_steps(path, time_order)
    mesh = path.mesh
    seeds = seed_grid(8) if seeds is None else np.atleast_2d(np.asarray(seeds, dtype=float))
    if np.any(np.linalg.norm(seeds, axis=1) > 1.0 + 1e-12):
        raise BoundsError("seeds must lie in the closed unit disk")

    fine = generate_disk_mesh(cell_level + cell_refine)
    # 1-to-4 splitting appends four blocks, so fine triangle j descends from
    # coarse triangle j mod n_coarse
    n_coarse = 6 * 4**cell_level
    parent = np.arange(fine.n_triangles) % n_coarse
    n_seed = len(seeds)
    pts0 = np.vstack([seeds, fine.vertices])

    locator = fem.PointLocator(mesh)
    Ws = np.stack([s.W for s in steps])  # (N+1, V, 2)
    div, adv = divergence_fields(path, steps)
    rho = np.exp(2.0 * path.effective_w)
    dt = path.dt
    h = dt / substeps

    hint = locator.locate(pts0)[0]

    def field_at(i, a, x):
        tri, lam = locator.locate(x, hint)
        idx = mesh.triangles[tri]
        nodes, weights = _time_weights(i, a, n_t - 1, time_order)

        def interp(v):
            vt = sum(c * v[j][idx] for j, c in zip(nodes, weights))
            return np.einsum("nk,nk...->n...", lam, vt)

        return interp(Ws), interp(div), interp(adv)

    n_t = len(path.times)
    traj = np.empty((n_t, len(pts0), 2))
    jlog = np.zeros((n_t, len(pts0)))
    flog = np.zeros((n_t, len(pts0)))
    traj[0] = pts0
    x = pts0.copy()
    jk = np.zeros(len(pts0))
    jf = np.zeros(len(pts0))
    moving = np.abs(Ws).max(axis=(1, 2)) > 0
    for i in range(n_t - 1):
        if moving[i] or moving[i + 1]:
            for s in range(substeps):
                a0 = s / substeps
                k1, d1, e1 = field_at(i, a0, x)
                k2, d2, e2 = field_at(i, a0 + 0.5 / substeps, x + 0.5 * h * k1)
                k3, d3, e3 = field_at(i, a0 + 0.5 / substeps, x + 0.5 * h * k2)
                k4, d4, e4 = field_at(i, a0 + 1.0 / substeps, x + h * k3)
                x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                hint = locator.locate(x, hint)[0]
                dflat = (h / 6.0) * (d1 + 2 * d2 + 2 * d3 + d4)
                jf = jf + dflat
                jk = jk + dflat + (h / 6.0) * (e1 + 2 * e2 + 2 * e3 + e4)
                if not np.all(np.isfinite(x)):
                    raise IntegrationError("trajectory became non-finite")
                r = np.linalg.norm(x, axis=1)
                if r.max() > 1.0 + exit_tol:
                    raise IntegrationError(
                        f"trajectory left the disk by {r.max() - 1.0:.3e}; increase substeps or N"
                    )
        traj[i + 1] = x
        jlog[i + 1] = jk
        flog[i + 1] = jf

    # cell volumes in the moving metric
    vol0 = None
    drift = np.zeros(n_t)
    total = np.zeros(n_t)
    for i in range(n_t):
        rho_pts = locator.interpolate(rho[i], traj[i, n_seed:])
        sub = _cell_volumes(traj[i, n_seed:], fine.triangles, rho_pts)
        cells = np.bincount(parent, weights=sub, minlength=n_coarse)
        if vol0 is None:
            vol0 = cells
        drift[i] = np.max(np.abs(cells / vol0 - 1.0))
        total[i] = abs(cells.sum() / vol0.sum() - 1.0)

    bseed = np.abs(np.linalg.norm(seeds, axis=1) - 1.0) < 1e-12
    bdev = 0.0
    if bseed.any():
        bdev = float(np.abs(np.linalg.norm(traj[:, :n_seed][:, bseed], axis=2) - 1.0).max())

    end = traj[-1, :n_seed]
    defect = (
        flog[-1, :n_seed]
        + np.log(locator.interpolate(rho[-1], end))
        - np.log(locator.interpolate(rho[0], seeds))
    )
    return FlowResult(
        times=path.times,
        seeds=seeds,
        trajectories=traj[:, :n_seed],
        jacobian_log=jlog[:, :n_seed],
        flat_jacobian_log=flog[:, :n_seed],
        density_defect=defect,
        volume_drift=drift,
        total_volume_drift=total,
        boundary_deviation=bdev,
        substeps=substeps,
        compatibility=np.array([s.compatibility for s in steps]),
        pde_residual=np.array([s.pde_residual for s in steps]),
        normal_flux=np.array([s.normal_flux for s in steps]),
        extra={"cell_level": cell_level, "cell_refine": cell_refine},
    )
