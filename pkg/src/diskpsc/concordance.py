"""Cylinder metrics ``g = v^2 dt^2 + k_t`` on the disk times ``[0, 1]``.

Here ``v = A u_t`` and ``k_t = (1 + eps t^2) sigma_t exp(2 w_t) delta =
exp(2 omega_t) delta``.  Scalar curvature follows the slicing identity

    R_g = 2 v^-1 (-lap_k v + K_k v) - 2 v^-1 dH/dt - H^2 - |II|^2

and the mean curvature of the cylindrical boundary is
``(d_eta v + kappa_k v) / v``.

The spatial part is not differentiated pointwise.  For every sample the
stability form ``B`` of ``k_t`` satisfies, weakly,

    B v = M_k (T v) + l_k rho,

with ``T = (-lap_k v + K_k v) / v`` in the interior and ``rho = d_eta v +
kappa_k v`` on the boundary.  ``T`` is solved from the interior rows (its
boundary values are the mean over interior neighbours) and ``rho`` is then
read off the boundary rows.  For an eigen-warp this returns ``T = lambda``
and ``rho`` equal to the eigen-residual, so the cylinder inherits the
solver accuracy rather than a second discretization error.

Two gauges are offered for the slice geometry.  ``conformal`` uses the
time lines ``x = const``, so the slices have pure-trace second fundamental
form ``(d omega / dt) / v * k``.  ``moser`` uses the time lines of the Moser
flow of a volume-matched path (the metric ``v^2 dt^2 + psi_t^* k_t`` written
in the original coordinates).  The volume-preserving part of ``dk/dt`` then
drops out of the mean curvature, which is what the outward-bending
construction relies on.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import (
    AssemblyError,
    BoundsError,
    ConfigurationError,
    ContinuationError,
    DiskPSCError,
    InvalidWarpError,
    PreconditionError,
    SearchFailure,
)
from .isotopy import (
    VOLUME_MATCH_RTOL,
    MetricPath,
    coarsen_path,
    conformal_segment,
    continuity_jumps,
    path_areas,
    refine_time,
    spectral_sweep,
    time_derivative,
    volume_match,
)
from .metric import ConformalMetric, gauss_curvature, geodesic_curvature, recovered_gradient
from .moser import moser_loads, moser_steps, nodal_masses
from .spectral import DEFAULT_TOL, Membership, assemble_stability_forms, membership_report, principal_eigenpair

GAUGES = ("conformal", "moser")
WARP_KINDS = ("eigen", "unit")
MODES = ("weak-min", "weak-mc", "strong-min", "outward-bent")
A_MAX = 2.0**20
CONTINUITY_JUMP = 0.1
MAX_TIME_REFINEMENTS = 3
COLLAR = (1.0 / 3.0, 2.0 / 3.0)


@dataclass(frozen=True, eq=False)
class CylinderMetric:
    path: MetricPath
    warp: np.ndarray  # (N+1, V), lapse before the A scaling
    A: float
    epsilon: float = 0.0
    gauge: str = "conformal"
    warp_kind: str = "eigen"
    lambdas: np.ndarray | None = None
    residuals: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        warp = np.asarray(self.warp, dtype=float)
        if warp.shape != self.path.w_samples.shape:
            raise BoundsError("warp must have one value per (sample, vertex)")
        if not (math.isfinite(self.A) and self.A > 0):
            raise BoundsError(f"A must be positive, got {self.A}")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise BoundsError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.gauge not in GAUGES:
            raise ConfigurationError(f"gauge must be one of {GAUGES}")
        if self.warp_kind not in WARP_KINDS:
            raise ConfigurationError(f"warp_kind must be one of {WARP_KINDS}")
        warp.setflags(write=False)
        object.__setattr__(self, "warp", warp)
        object.__setattr__(self, "A", float(self.A))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def mesh(self):
        return self.path.mesh

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    @property
    def lapse(self) -> np.ndarray:
        return self.A * self.warp

    @property
    def bend(self) -> np.ndarray:
        """``log(1 + eps t^2) / 2`` per sample."""
        return 0.5 * np.log1p(self.epsilon * self.times**2)

    @property
    def omega(self) -> np.ndarray:
        return self.path.effective_w + self.bend[:, None]

    @property
    def lambda_star(self) -> float | None:
        return None if self.lambdas is None else float(np.min(self.lambdas))

    def with_A(self, A: float) -> "CylinderMetric":
        """Same cylinder with another lapse scale; A-independent fields are shared."""
        return CylinderMetric(
            self.path, self.warp, A, self.epsilon, self.gauge, self.warp_kind,
            self.lambdas, self.residuals, dict(self.provenance), self._cache,
        )

    def to_dict(self) -> dict:
        return {
            "path": self.path.to_dict(),
            "warp": self.warp.tolist(),
            "A": self.A,
            "epsilon": self.epsilon,
            "gauge": self.gauge,
            "warp_kind": self.warp_kind,
            "lambdas": None if self.lambdas is None else np.asarray(self.lambdas).tolist(),
            "residuals": None if self.residuals is None else np.asarray(self.residuals).tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CylinderMetric":
        opt = lambda k: None if data.get(k) is None else np.asarray(data[k], dtype=float)  # noqa: E731
        return cls(
            MetricPath.from_dict(data["path"]), np.asarray(data["warp"], dtype=float),
            float(data["A"]), float(data.get("epsilon", 0.0)), data.get("gauge", "conformal"),
            data.get("warp_kind", "eigen"), opt("lambdas"), opt("residuals"), dict(data.get("provenance", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CylinderMetric":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True, eq=False)
class SliceGeometry:
    t_index: int
    II_norm_sq: np.ndarray
    H_slice: np.ndarray
    dH_dt: np.ndarray


def _check_warp(cyl: CylinderMetric) -> None:
    u = cyl.warp
    if not np.all(np.isfinite(u)) or np.any(u <= 0):
        i, j = np.unravel_index(np.argmin(np.where(np.isfinite(u), u, -np.inf)), u.shape)
        raise InvalidWarpError(f"warp must be positive; u = {u[i, j]:.3e} at sample {i}, vertex {j}")


@functools.lru_cache(maxsize=8)
def _interior_prolongation(mesh) -> sp.csr_matrix:
    """(V, n_interior) map: identity on interior vertices, mean over the
    interior 1-ring at boundary vertices."""
    e = mesh.edges
    n = mesh.n_vertices
    adj = sp.csr_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
    I = mesh.interior
    E = adj[:, I].tolil()
    E[I] = sp.identity(len(I), format="lil")
    E = E.tocsr()
    counts = np.asarray(E.sum(axis=1)).ravel()
    if np.any(counts == 0):
        raise AssemblyError("a boundary vertex has no interior neighbour")
    return (sp.diags(1.0 / counts) @ E).tocsr()


def spatial_split(h: ConformalMetric, u: np.ndarray, forms=None) -> tuple[np.ndarray, np.ndarray]:
    """``(T, rho)`` with ``B u = M (T u) + l rho`` (see the module docstring).

    ``T`` is per vertex, ``rho`` per boundary vertex in loop order; the
    boundary length ``l`` is measured in ``h``.
    """
    mesh = h.mesh
    forms = forms or assemble_stability_forms(h)
    u = np.asarray(u, dtype=float)
    I = mesh.interior
    P = _interior_prolongation(mesh)
    Bu = forms.B @ u
    K = (forms.M[I] @ sp.diags(u) @ P).tocsc()
    try:
        T = P @ spla.splu(K).solve(Bu[I])
    except RuntimeError as exc:
        raise AssemblyError(f"spatial split is singular: {exc}") from exc
    b = mesh.boundary_loop
    ell = fem.boundary_lumped_mass(mesh, np.exp(h.w))
    rho = (Bu - forms.M @ (u * T))[b] / ell
    return T, rho


def _spatial_terms(cyl: CylinderMetric) -> tuple[np.ndarray, np.ndarray]:
    """Per sample ``T`` (N+1, V) and ``H_cyl = rho / u`` (N+1, Nb).

    Both are invariant under ``u -> A u``, so they are cached across the
    A search.  Identical samples (clamped collars, constant paths) are
    computed once.
    """
    hit = cyl._cache.get("spatial")
    if hit is not None:
        return hit
    _check_warp(cyl)
    mesh = cyl.mesh
    omega = cyl.omega
    seen: dict[bytes, tuple] = {}
    T = np.empty_like(omega)
    H = np.empty((len(omega), len(mesh.boundary_loop)))
    for i, (om, u) in enumerate(zip(omega, cyl.warp)):
        key = om.tobytes() + u.tobytes()
        if key not in seen:
            Ti, rho = spatial_split(ConformalMetric(mesh, om), u)
            seen[key] = (Ti, rho / u[mesh.boundary_loop])
        T[i], H[i] = seen[key]
    cyl._cache["spatial"] = (T, H)
    return T, H


def _bend_rate(cyl: CylinderMetric) -> np.ndarray:
    """``d/dt log(1 + eps t^2) / 2``, taken analytically."""
    t = cyl.times
    return cyl.epsilon * t / (1.0 + cyl.epsilon * t**2)


def _moser_data(cyl: CylinderMetric) -> dict:
    """A-independent Moser-gauge fields: shift ``W``, the weak trace residual
    ``(load - S f) / m`` and ``|P|^2`` of the trace-free part of the
    symmetrized flat gradient of ``W``."""
    hit = cyl._cache.get("moser")
    if hit is not None:
        return hit
    path = cyl.path
    mesh = cyl.mesh
    steps = moser_steps(path)
    loads = moser_loads(path)
    masses = nodal_masses(path)
    S = fem.stiffness_matrix(mesh)
    W = np.stack([s.W for s in steps])
    resid = np.stack([(ld - S @ s.f) / m for ld, s, m in zip(loads, steps, masses)])
    P2 = np.empty(resid.shape)
    for i, s in enumerate(steps):
        g1 = recovered_gradient(mesh, s.W[:, 0])
        g2 = recovered_gradient(mesh, s.W[:, 1])
        P2[i] = 2.0 * (g1[:, 0] - g2[:, 1]) ** 2 + 2.0 * (g1[:, 1] + g2[:, 0]) ** 2
    out = {"W": W, "trace_residual": resid, "P2": P2, "steps": steps}
    cyl._cache["moser"] = out
    return out


def _slice_fields(cyl: CylinderMetric) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(|II|^2, H, dH/dt)`` for all samples, shape (N+1, V) each.

    In the Moser gauge ``dH/dt`` is the derivative along the shifted time
    lines, ``d_t H + W . grad H``.
    """
    _check_warp(cyl)
    dt = cyl.path.dt
    v = cyl.lapse
    e = _bend_rate(cyl)[:, None]
    if cyl.gauge == "conformal":
        omdot = time_derivative(cyl.path.effective_w, dt) + e
        H = 2.0 * omdot / v
        II2 = 0.5 * H * H
        dH = time_derivative(H, dt)
    else:
        m = _moser_data(cyl)
        H = (2.0 * e + m["trace_residual"]) / v
        II2 = 0.5 * H * H + m["P2"] / (4.0 * v * v)
        dH = time_derivative(H, dt)
        if np.any(m["W"]):
            for i in range(len(H)):
                gH = recovered_gradient(cyl.mesh, H[i])
                dH[i] += np.einsum("ij,ij->i", m["W"][i], gH)
    return II2, H, dH


def slice_geometry(cyl: CylinderMetric, t_index: int) -> SliceGeometry:
    if not 0 <= t_index <= cyl.path.n_intervals:
        raise BoundsError(f"t_index must lie in [0, {cyl.path.n_intervals}]")
    II2, H, dH = _slice_fields(cyl)
    if cyl.gauge == "conformal":
        assert np.array_equal(II2[t_index], 0.5 * H[t_index] * H[t_index])
    return SliceGeometry(t_index, II2[t_index], H[t_index], dH[t_index])


def cylinder_curvatures(cyl: CylinderMetric) -> tuple[np.ndarray, np.ndarray]:
    """``(R_g, H_cyl)``: scalar curvature per (sample, vertex) and boundary
    mean curvature per (sample, boundary-loop vertex)."""
    T, Hcyl = _spatial_terms(cyl)
    II2, H, dH = _slice_fields(cyl)
    R = 2.0 * T - 2.0 * dH / cyl.lapse - H * H - II2
    return R, Hcyl


def remainder(cyl: CylinderMetric) -> np.ndarray:
    """``R_g - 2 T``, the part of the scalar curvature carried by the time
    derivatives; it scales like ``A^-2``."""
    T, _ = _spatial_terms(cyl)
    R, _ = cylinder_curvatures(cyl)
    return R - 2.0 * T


def a_scaling_ratio(cyl: CylinderMetric) -> float:
    """``max|remainder(2A)| / max|remainder(A)|``; nan when the remainder
    vanishes identically."""
    r1 = np.abs(remainder(cyl)).max()
    r2 = np.abs(remainder(cyl.with_A(2.0 * cyl.A))).max()
    return float(r2 / r1) if r1 > 0 else math.nan


# ---------------------------------------------------------------- builders


def _eigen_warps(path: MetricPath, tol: float):
    """Per-sample principal eigenfunctions with the continuity guard.

    A jump ``|u_{i+1} - u_i| > 0.1 |u_i|`` doubles the time resolution
    (the grid must stay uniform, so the refinement is global).
    """
    for attempt in range(MAX_TIME_REFINEMENTS + 1):
        rep = spectral_sweep(path, tol)
        if rep.failure_index is not None:
            raise PreconditionError(f"eigenproblem failed at sample {rep.failure_index}: {rep.failure}")
        if not rep.lambda_star > 0:
            raise PreconditionError(f"path leaves M: lambda_* = {rep.lambda_star:.6g}")
        jumps = continuity_jumps(rep.eigenfunctions, relative=True)
        if jumps.size == 0 or jumps.max() <= CONTINUITY_JUMP:
            if np.any(rep.eigenfunctions <= 0):
                raise InvalidWarpError("a principal eigenfunction is not positive at mesh resolution")
            return path, rep, attempt
        path = refine_time(path)
        if path.metadata.get("volume_matched"):
            path = volume_match(path)
    raise ContinuationError(
        f"eigenfunction jumps stay above {CONTINUITY_JUMP} after {MAX_TIME_REFINEMENTS} refinements"
    )


def _double_A(cyl: CylinderMetric, target: float, A_max: float) -> tuple[CylinderMetric, list]:
    history = []
    A = 1.0
    while True:
        c = cyl.with_A(A)
        minR = float(cylinder_curvatures(c)[0].min())
        history.append([A, minR])
        if minR > target:
            return c, history
        A *= 2.0
        if A > A_max:
            raise SearchFailure(
                f"no A <= {A_max:g} gives min R_g > {target:.6g} (last min R_g {minR:.6g})"
            )


def build_warped_cylinder(h: ConformalMetric, N: int = 8, tol: float = DEFAULT_TOL) -> CylinderMetric:
    """Constant path at ``h`` warped by its principal eigenfunction, A = 1."""
    report = membership_report(h, tol=tol)
    if report.verdict is not Membership.YES:
        raise PreconditionError(
            f"metric is not certified in M: lambda1 = {report.lambda1:.6g} +- {report.error_estimate:.2e}"
        )
    r = principal_eigenpair(h, tol)
    if not r.positive:
        raise InvalidWarpError("principal eigenfunction is not positive at mesh resolution")
    path = conformal_segment(h, h, N).with_metadata(clamped=True, volume_matched=True, kind="constant")
    n = len(path.times)
    return CylinderMetric(
        path, np.tile(r.u, (n, 1)), 1.0, 0.0, "conformal", "eigen",
        np.full(n, r.lambda1), np.full(n, r.residual),
        {"builder": "warped_cylinder", "metric": h.label, "lambda1": r.lambda1, "solver_tol": tol},
    )


def product_hypotheses(path: MetricPath) -> dict:
    """Minimum scalar curvature and boundary mean curvature over the path,
    each with a two-level error estimate: the change of the per-sample
    minimum when the path is restricted to the next coarser nested mesh."""
    level = path.mesh.refinement_level
    coarse = coarsen_path(path, level - 1) if level > 0 else None
    minR, minH, errR, errH = np.inf, np.inf, 0.0, 0.0
    seen = set()
    for i in range(len(path.times)):
        key = path.effective_w[i].tobytes()
        if key in seen:
            continue
        seen.add(key)
        h = path.metric(i)
        r = 2.0 * gauss_curvature(h).min()
        k = geodesic_curvature(h).min()
        minR, minH = min(minR, r), min(minH, k)
        if coarse is None:
            errR = errH = np.inf
            continue
        hc = coarse.metric(i)
        errR = max(errR, abs(r - 2.0 * gauss_curvature(hc).min()))
        errH = max(errH, abs(k - geodesic_curvature(hc).min()))
    return {"min_R": float(minR), "err_R": float(errR), "min_H": float(minH), "err_H": float(errH)}


def build_product_concordance(
    path: MetricPath, A_max: float = A_MAX, tol: float = DEFAULT_TOL
) -> CylinderMetric:
    """``g = A^2 dt^2 + h_t`` with A doubled until ``min R_g > rho / 2``."""
    if not path.clamped:
        raise PreconditionError("product concordance needs a clamped path (product collars)")
    hyp = product_hypotheses(path)
    # R > 0 must clear its error estimate; H >= 0 may undershoot by the
    # default tolerance of 10 error estimates
    if not hyp["min_R"] > hyp["err_R"]:
        raise PreconditionError(
            f"path sample with R <= 0 at mesh resolution: min R = {hyp['min_R']:.4g} "
            f"(error estimate {hyp['err_R']:.2e})"
        )
    if not hyp["min_H"] >= -10.0 * hyp["err_H"]:
        raise PreconditionError(
            f"path sample with H < 0: min H = {hyp['min_H']:.4g} (error estimate {hyp['err_H']:.2e})"
        )
    rho = hyp["min_R"]
    base = CylinderMetric(
        path, np.ones_like(path.w_samples), 1.0, 0.0, "conformal", "unit",
        provenance={"builder": "product_concordance", "path": dict(path.metadata), "solver_tol": tol},
    )
    cyl, history = _double_A(base, 0.5 * rho, A_max)
    cyl.provenance.update(rho=rho, target=0.5 * rho, search=history, hypotheses=hyp)
    return cyl


def build_plain_cylinder(path: MetricPath, A: float = 1.0, tol: float = DEFAULT_TOL) -> CylinderMetric:
    """Unwarped ``A^2 dt^2 + h_t`` with no search or hypothesis checks
    (used for known-fail fixtures such as the flat product)."""
    return CylinderMetric(
        path, np.ones_like(path.w_samples), A, 0.0, "conformal", "unit",
        provenance={"builder": "plain", "path": dict(path.metadata), "solver_tol": tol},
    )


def _eigen_cylinder(path, epsilon, gauge, A_max, tol, builder):
    if not path.clamped:
        raise PreconditionError("path must be clamped")
    path, rep, refinements = _eigen_warps(path, tol)
    lam_star = rep.lambda_star
    base = CylinderMetric(
        path, rep.eigenfunctions, 1.0, epsilon, gauge, "eigen", rep.lambdas, rep.residuals,
        {
            "builder": builder, "path": dict(path.metadata), "solver_tol": tol,
            "lambda_star": lam_star, "time_refinements": refinements, "continuity": rep.continuity,
        },
    )
    # the spatial term is 2 lambda_t / (1 + eps t^2) >= 2 lambda_* / (1 + eps);
    # asking for R_g above half of that reduces to R_g > lambda_* at eps = 0
    target = lam_star / (1.0 + epsilon)
    cyl, history = _double_A(base, target, A_max)
    cyl.provenance.update(target=target, search=history)
    return cyl


def build_warped_concordance(
    path: MetricPath, A_max: float = A_MAX, tol: float = DEFAULT_TOL, gauge: str = "conformal"
) -> CylinderMetric:
    """``g = A^2 u_t^2 dt^2 + sigma_t h_t`` with eigen-warps, A doubled until
    ``min R_g > lambda_*``."""
    return _eigen_cylinder(path, 0.0, gauge, A_max, tol, "warped_concordance")


def _volume_matched(path: MetricPath) -> bool:
    areas = path_areas(path)
    return bool(np.all(np.abs(areas - areas[0]) <= VOLUME_MATCH_RTOL * areas[0]))


def build_outward_bent(
    path: MetricPath, epsilon: float, A_max: float = A_MAX, tol: float = DEFAULT_TOL,
    gauge: str = "moser", bisection_steps: int = 8,
) -> CylinderMetric:
    """``g = A^2 u_t^2 dt^2 + (1 + eps t^2) sigma_t h_t``.

    With ``epsilon = 0`` this is :func:`build_warped_concordance` in the same
    gauge.  On failure the largest feasible epsilon found by bisection is
    attached to the :class:`SearchFailure`.
    """
    if not (math.isfinite(epsilon) and epsilon >= 0):
        raise BoundsError("epsilon must be >= 0")
    if not _volume_matched(path):
        raise PreconditionError("outward bending needs a volume-matched path")
    if epsilon == 0.0:
        return _eigen_cylinder(path, 0.0, gauge, A_max, tol, "warped_concordance")
    try:
        return _eigen_cylinder(path, epsilon, gauge, A_max, tol, "outward_bent")
    except SearchFailure as exc:
        lo, hi = 0.0, epsilon
        for _ in range(bisection_steps):
            mid = 0.5 * (lo + hi)
            try:
                _eigen_cylinder(path, mid, gauge, A_max, tol, "outward_bent")
                lo = mid
            except SearchFailure:
                hi = mid
        raise SearchFailure(str(exc), largest_feasible_epsilon=lo) from exc


# ------------------------------------------------------------ certificates


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    error_estimate: float
    tol: float | None
    margin: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name, "value": self.value, "error_estimate": self.error_estimate,
            "tol": self.tol, "margin": self.margin, "passed": self.passed,
        }


@dataclass(frozen=True)
class ConcordanceCertificate:
    mode: str
    passed: bool
    checks: list
    min_R_g: float
    min_R_location: dict
    max_abs_H_cyl: float
    base_H: tuple
    slice_H_min: list
    endpoint_restriction: tuple
    A: float
    epsilon: float
    lambda_star: float | None
    a_scaling_ratio: float
    level: int
    coarse_level: int | None
    series: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "verdict": self.verdict,
            "checks": [c.to_dict() for c in self.checks],
            "min_R_g": self.min_R_g,
            "min_R_location": self.min_R_location,
            "max_abs_H_cyl": self.max_abs_H_cyl,
            "base_H": list(self.base_H),
            "slice_H_min": list(self.slice_H_min),
            "endpoint_restriction": list(self.endpoint_restriction),
            "A": self.A,
            "epsilon": self.epsilon,
            "lambda_star": self.lambda_star,
            "a_scaling_ratio": None if math.isnan(self.a_scaling_ratio) else self.a_scaling_ratio,
            "level": self.level,
            "coarse_level": self.coarse_level,
            "series": self.series,
            "provenance": self.provenance,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")


def _quantities(cyl: CylinderMetric) -> dict:
    R, Hcyl = cylinder_curvatures(cyl)
    _, H, _ = _slice_fields(cyl)
    t = cyl.times
    n = cyl.path.n_intervals
    ladder = math.nan
    if cyl.epsilon > 0 and n >= 2:
        k = np.arange(2, n + 1)
        ladder = float(np.min(H[k].min(axis=1) / (cyl.epsilon * t[k])))
    return {
        "R": R,
        "min_R": float(R.min()),
        "max_H_cyl": float(np.abs(Hcyl).max()),
        "min_H_cyl": float(Hcyl.min()),
        "H0": float(np.abs(H[0]).max()),
        "H1": float(np.abs(H[-1]).max()),
        "slice_H_min": H.min(axis=1),
        "min_R_t": R.min(axis=1),
        "max_H_cyl_t": np.abs(Hcyl).max(axis=1),
        "ladder": ladder,
    }


def coarse_companion(cyl: CylinderMetric) -> CylinderMetric | None:
    """The same construction (A, eps, gauge, warp kind) rebuilt on the next
    coarser nested mesh; ``None`` on level 0 or if the rebuild fails."""
    level = cyl.mesh.refinement_level
    if level == 0:
        return None
    try:
        path = coarsen_path(cyl.path, level - 1)
        if cyl.warp_kind == "eigen":
            rep = spectral_sweep(path, cyl.provenance.get("solver_tol", DEFAULT_TOL))
            if rep.failure_index is not None:
                return None
            warp, lams, res = rep.eigenfunctions, rep.lambdas, rep.residuals
        else:
            warp, lams, res = np.ones_like(path.w_samples), None, None
        return CylinderMetric(path, warp, cyl.A, cyl.epsilon, cyl.gauge, cyl.warp_kind, lams, res)
    except DiskPSCError:
        return None


def verify_concordance(cyl: CylinderMetric, mode: str = "weak-min") -> ConcordanceCertificate:
    """Evaluate the concordance inequalities of ``mode`` with two-level
    error estimates.

    Sign conditions pass when the value clears 0 by more than its error
    estimate.  Smallness conditions use ``tol = max(10 err, 10 solver_tol)``
    (the floor covers quantities that vanish identically on both levels)
    and pass when ``value + err < tol``.
    """
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}")
    fine = _quantities(cyl)
    comp = coarse_companion(cyl)
    coarse = _quantities(comp) if comp is not None else None
    floor = 10.0 * float(cyl.provenance.get("solver_tol", DEFAULT_TOL))

    def err(key):
        if coarse is None:
            return math.inf
        return abs(fine[key] - coarse[key])

    checks = []

    def positive(name, key, shift=0.0):
        e = err(key)
        m = fine[key] - shift - e
        checks.append(Check(name, fine[key], e, None, m, bool(m > 0)))

    def small(name, key):
        e = err(key)
        tol = max(10.0 * e, floor) if math.isfinite(e) else math.inf
        m = tol - fine[key] - e
        checks.append(Check(name, fine[key], e, tol, m, bool(m > 0)))

    positive("min_R_g", "min_R")
    if mode == "weak-mc":
        e = err("min_H_cyl")
        tol = max(10.0 * e, floor) if math.isfinite(e) else math.inf
        m = fine["min_H_cyl"] + tol - e
        checks.append(Check("min_H_cyl", fine["min_H_cyl"], e, tol, m, bool(m > 0)))
    else:
        small("max_abs_H_cyl", "max_H_cyl")
    small("base_H0", "H0")
    if mode != "outward-bent":
        small("base_H1", "H1")

    # endpoint restrictions: g restricted to t = 0 and t = 1 against the
    # path endpoints (the top one bent by 1 + eps)
    om = cyl.omega
    d0 = float(np.abs(om[0] - cyl.path.w_samples[0]).max())
    d1 = float(np.abs(om[-1] - (cyl.path.w_samples[-1] + 0.5 * np.log1p(cyl.epsilon))).max())
    checks.append(Check("endpoint_restriction", max(d0, d1), 0.0, 0.0, -max(d0, d1), d0 == 0.0 and d1 == 0.0))

    if mode == "strong-min":
        # product collars: the path has no time derivative at samples whose
        # difference stencil lies inside [0, 1/3] or [2/3, 1]
        t = cyl.times
        dt = cyl.path.dt
        inner = (t + dt <= COLLAR[0] + 1e-12) | (t - dt >= COLLAR[1] - 1e-12)
        om_dot = time_derivative(om, dt)
        defect = float(np.abs(om_dot[inner]).max()) if inner.any() else math.inf
        checks.append(Check("collar_time_derivative", defect, 0.0, 0.0, -defect, defect == 0.0 and bool(inner.any())))
    if mode == "outward-bent":
        if cyl.epsilon > 0:
            positive("mean_convexity_c", "ladder")
        else:
            checks.append(Check("mean_convexity_c", math.nan, math.inf, None, -math.inf, False))

    ratio = a_scaling_ratio(cyl)
    if not math.isnan(ratio):
        checks.append(Check("a_scaling_ratio", ratio, 0.0, None, min(ratio - 0.2, 0.3 - ratio), 0.2 <= ratio <= 0.3))

    R = fine["R"]
    i, j = np.unravel_index(int(np.argmin(R)), R.shape)
    loc = {
        "t_index": int(i), "t": float(cyl.times[i]), "vertex": int(j),
        "x": float(cyl.mesh.vertices[j, 0]), "y": float(cyl.mesh.vertices[j, 1]),
    }
    return ConcordanceCertificate(
        mode=mode,
        passed=all(c.passed for c in checks),
        checks=checks,
        min_R_g=fine["min_R"],
        min_R_location=loc,
        max_abs_H_cyl=fine["max_H_cyl"],
        base_H=(fine["H0"], fine["H1"]),
        slice_H_min=fine["slice_H_min"].tolist(),
        endpoint_restriction=(d0, d1),
        A=cyl.A,
        epsilon=cyl.epsilon,
        lambda_star=cyl.lambda_star,
        a_scaling_ratio=ratio,
        level=cyl.mesh.refinement_level,
        coarse_level=None if comp is None else comp.mesh.refinement_level,
        series={
            "t": cyl.times.tolist(),
            "lambda": None if cyl.lambdas is None else np.asarray(cyl.lambdas).tolist(),
            "min_R_g": fine["min_R_t"].tolist(),
            "max_abs_H_cyl": fine["max_H_cyl_t"].tolist(),
            "min_H_slice": fine["slice_H_min"].tolist(),
        },
        provenance={
            **{k: v for k, v in cyl.provenance.items() if k != "path"},
            "path": dict(cyl.path.metadata),
            "gauge": cyl.gauge,
            "warp_kind": cyl.warp_kind,
            "N": cyl.path.n_intervals,
        },
    )
