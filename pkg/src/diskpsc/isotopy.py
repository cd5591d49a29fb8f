"""Time-sampled paths ``t -> sigma_t * exp(2 w_t) delta`` on a uniform grid."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DiskPSCError, IncompatibleInputError, PreconditionError, BoundsError
from .mesh import DiskMesh, generate_disk_mesh
from .metric import ConformalMetric, resolve_mesh_ref, total_area
from .spectral import DEFAULT_TOL, principal_eigenpair

MIN_SAMPLES = 8
VOLUME_MATCH_RTOL = 1e-9


def time_derivative(samples: np.ndarray, dt: float, order: int = 2) -> np.ndarray:
    """Central differences along axis 0 with one-sided stencils of the same
    order at the ends; ``order`` is 2 or 4.

    Stencils are written in differences of samples so that runs of
    identical samples differentiate to exactly 0.
    """
    f = np.asarray(samples, dtype=float)
    if order not in (2, 4):
        raise BoundsError("order must be 2 or 4")
    if len(f) < order + 1:
        raise BoundsError(f"order-{order} differences need at least {order + 1} samples")
    out = np.empty_like(f)
    if order == 2:
        out[1:-1] = (f[2:] - f[:-2]) / (2.0 * dt)
        out[0] = (4.0 * (f[1] - f[0]) - (f[2] - f[0])) / (2.0 * dt)
        out[-1] = -(4.0 * (f[-2] - f[-1]) - (f[-3] - f[-1])) / (2.0 * dt)
        return out
    out[2:-2] = (8.0 * (f[3:-1] - f[1:-3]) - (f[4:] - f[:-4])) / (12.0 * dt)
    for k, s in ((0, 1), (-1, -1)):
        d = [f[k + s * j] - f[k] for j in range(1, 5)]
        out[k] = s * (48.0 * d[0] - 36.0 * d[1] + 16.0 * d[2] - 3.0 * d[3]) / (12.0 * dt)
        g = [f[k + s * (1 + j)] - f[k + s] for j in (-1, 1, 2, 3)]
        out[k + s] = s * (-3.0 * g[0] + 18.0 * g[1] - 6.0 * g[2] + g[3]) / (12.0 * dt)
    return out


def smoothstep5(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def clamp_profile(t):
    """0 on [0, 1/3], 1 on [2/3, 1], quintic smoothstep in ``3t - 1`` between."""
    return smoothstep5(3.0 * np.asarray(t, dtype=float) - 1.0)


@dataclass(frozen=True, eq=False)
class MetricPath:
    mesh: DiskMesh
    times: np.ndarray  # (N+1,)
    w_samples: np.ndarray  # (N+1, V)
    sigma: np.ndarray  # (N+1,)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        w = np.asarray(self.w_samples, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        n = len(times)
        if n < 2 or times[0] != 0.0 or times[-1] != 1.0:
            raise BoundsError("time grid must run from 0 to 1")
        if not np.allclose(np.diff(times), 1.0 / (n - 1), rtol=0, atol=1e-12):
            raise BoundsError("time grid must be uniform")
        if w.shape != (n, self.mesh.n_vertices) or sigma.shape != (n,):
            raise IncompatibleInputError("sample arrays do not match the grid and mesh")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(sigma)) and np.all(sigma > 0)):
            raise IncompatibleInputError("path samples must be finite with sigma > 0")
        for a in (times, w, sigma):
            a.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "w_samples", w)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return 1.0 / self.n_intervals

    @property
    def clamped(self) -> bool:
        return bool(self.metadata.get("clamped", False))

    @property
    def effective_w(self) -> np.ndarray:
        """Conformal factors of ``sigma_t h_t``: ``w_t + log(sigma_t) / 2``."""
        return self.w_samples + 0.5 * np.log(self.sigma)[:, None]

    def base_metric(self, i: int) -> ConformalMetric:
        return ConformalMetric(self.mesh, self.w_samples[i], f"{self.metadata.get('label', 'path')}[{i}]")

    def metric(self, i: int) -> ConformalMetric:
        """The scaled sample ``sigma_i h_i``."""
        if self.sigma[i] == 1.0:
            return self.base_metric(i)
        return ConformalMetric(self.mesh, self.effective_w[i], f"{self.metadata.get('label', 'path')}[{i}]")

    def w_dot(self) -> np.ndarray:
        return time_derivative(self.w_samples, self.dt)

    def sigma_dot(self) -> np.ndarray:
        return time_derivative(self.sigma, self.dt)

    def with_metadata(self, **extra) -> "MetricPath":
        return MetricPath(self.mesh, self.times, self.w_samples, self.sigma, {**self.metadata, **extra})

    def reversed(self) -> "MetricPath":
        return MetricPath(
            self.mesh, self.times, self.w_samples[::-1], self.sigma[::-1],
            {**self.metadata, "reversed": not self.metadata.get("reversed", False)},
        )

    def to_dict(self) -> dict:
        prov = dict(self.metadata)
        prov.setdefault("mesh_ref", {"level": self.mesh.refinement_level})
        return {
            "times": self.times.tolist(),
            "w": self.w_samples.tolist(),
            "sigma": self.sigma.tolist(),
            "provenance": prov,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricPath":
        prov = dict(data.get("provenance", {}))
        mesh = resolve_mesh_ref(prov.get("mesh_ref", {"level": 5}))
        return cls(mesh, np.asarray(data["times"]), np.asarray(data["w"]), np.asarray(data["sigma"]), prov)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MetricPath":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _same_mesh(a: DiskMesh, b: DiskMesh) -> bool:
    return a is b or (
        a.n_vertices == b.n_vertices
        and np.array_equal(a.vertices, b.vertices)
        and np.array_equal(a.triangles, b.triangles)
    )


def conformal_segment(h0: ConformalMetric, h1: ConformalMetric, N: int = 64) -> MetricPath:
    """Linear path ``w_t = (1 - t) w0 + t w1`` with ``N`` intervals."""
    if not _same_mesh(h0.mesh, h1.mesh):
        raise IncompatibleInputError("endpoint metrics live on different meshes")
    if int(N) != N or N < MIN_SAMPLES:
        raise BoundsError(f"N must be an integer >= {MIN_SAMPLES}")
    N = int(N)
    k = np.arange(N + 1)
    # (N-k)/N and k/N keep the swapped segment sample-exact under time reversal
    a = ((N - k) / N)[:, None]
    b = (k / N)[:, None]
    if np.array_equal(h0.w, h1.w):
        # keep a constant path bit-constant so its time derivative is exactly 0
        w = np.tile(h0.w, (N + 1, 1))
    else:
        w = a * h0.w[None, :] + b * h1.w[None, :]
    meta = {
        "kind": "conformal_segment",
        "from": h0.label,
        "to": h1.label,
        "N": N,
        "mesh_ref": {"level": h0.mesh.refinement_level},
        "clamped": False,
        "volume_matched": False,
    }
    return MetricPath(h0.mesh, k / N, w, np.ones(N + 1), meta)


def _resample(values: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Linear interpolation of samples on the uniform grid at times ``s``."""
    n = len(values) - 1
    x = np.clip(np.asarray(s) * n, 0.0, n)
    j = np.minimum(np.floor(x).astype(int), n - 1)
    a = x - j
    a = a.reshape((-1,) + (1,) * (values.ndim - 1))
    # difference form: runs of equal samples resample exactly
    out = values[j] + a * (values[j + 1] - values[j])
    at_node = np.broadcast_to(a == 1.0, out.shape)
    out[at_node] = values[j + 1][at_node]
    return out


def clamp_reparametrize(path: MetricPath) -> MetricPath:
    """Compose with the clamp profile so the path is constant on the outer
    thirds.  Already-clamped paths are returned unchanged."""
    if path.clamped:
        return path
    phi = clamp_profile(path.times)
    w = _resample(path.w_samples, phi)
    sigma = _resample(path.sigma, phi)
    w[0], w[-1] = path.w_samples[0], path.w_samples[-1]
    sigma[0], sigma[-1] = path.sigma[0], path.sigma[-1]
    return MetricPath(path.mesh, path.times, w, sigma, {**path.metadata, "clamped": True})


def area_match(h: ConformalMetric, target_area: float, label: str | None = None) -> ConformalMetric:
    """Homothetic copy of ``h`` whose discrete area equals ``target_area``."""
    c = 0.5 * math.log(target_area / total_area(h))
    return h.shifted(c, h.label if label is None else label)


def path_areas(path: MetricPath) -> np.ndarray:
    return np.array([total_area(path.metric(i)) for i in range(len(path.times))])


def volume_match(path: MetricPath) -> MetricPath:
    areas = path_areas(path)
    a0 = areas[0]
    if abs(areas[-1] - a0) > VOLUME_MATCH_RTOL * a0:
        raise PreconditionError(
            f"endpoint areas differ ({a0:.12g} vs {areas[-1]:.12g}); rescale one endpoint "
            "(compose with scaled_flat, or use area_match) before volume matching"
        )
    factor = a0 / areas
    # samples identical to an endpoint (clamped collars) keep sigma = 1
    w = path.effective_w
    same = np.all(w == w[0], axis=1) | np.all(w == w[-1], axis=1)
    factor[same] = 1.0
    sigma = path.sigma * factor
    return MetricPath(
        path.mesh, path.times, path.w_samples, sigma,
        {**path.metadata, "volume_matched": True, "area": float(a0)},
    )


def refine_time(path: MetricPath) -> MetricPath:
    """Double the number of intervals by linear interpolation in time."""
    n = 2 * path.n_intervals
    t = np.arange(n + 1) / n
    w = _resample(path.w_samples, t)
    sigma = _resample(path.sigma, t)
    return MetricPath(path.mesh, t, w, sigma, {**path.metadata, "N": n})


@dataclass(frozen=True, eq=False)
class SweepReport:
    times: np.ndarray
    lambdas: np.ndarray
    eigenfunctions: np.ndarray
    residuals: np.ndarray
    continuity: float
    failure_index: int | None = None
    failure: str | None = None

    @property
    def lambda_star(self) -> float:
        return float(np.min(self.lambdas)) if len(self.lambdas) else math.nan

    @property
    def in_M(self) -> bool:
        return self.failure_index is None and self.lambda_star > 0

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "lambda": self.lambdas.tolist(),
            "lambda_star": self.lambda_star,
            "in_M": self.in_M,
            "continuity": self.continuity,
            "residuals": self.residuals.tolist(),
            "failure_index": self.failure_index,
            "failure": self.failure,
        }


def continuity_jumps(u: np.ndarray, relative: bool = False) -> np.ndarray:
    """Sup-norm jumps ``|u_{i+1} - u_i|`` between samples, optionally
    divided by ``|u_i|``."""
    if len(u) < 2:
        return np.zeros(0)
    jumps = np.abs(np.diff(u, axis=0)).max(axis=1)
    return jumps / np.abs(u[:-1]).max(axis=1) if relative else jumps


def spectral_sweep(path: MetricPath, tol: float = DEFAULT_TOL) -> SweepReport:
    """Principal eigenpair of every ``sigma_t h_t`` (u normalized there)."""
    lams, us, res = [], [], []
    cache: dict[bytes, object] = {}
    prev = None
    weff = path.effective_w
    for i in range(len(path.times)):
        key = weff[i].tobytes()
        try:
            r = cache.get(key)
            if r is None:
                r = principal_eigenpair(path.metric(i), tol, u0=prev)
                cache[key] = r
        except DiskPSCError as exc:
            n = len(lams)
            return SweepReport(
                path.times[:n], np.array(lams), np.array(us).reshape(n, -1), np.array(res),
                float(np.max(continuity_jumps(np.array(us)), initial=0.0)), i, str(exc),
            )
        prev = r.u
        lams.append(r.lambda1)
        us.append(r.u)
        res.append(r.residual)
    us = np.array(us)
    return SweepReport(
        path.times, np.array(lams), us, np.array(res), float(np.max(continuity_jumps(us), initial=0.0))
    )


def coarsen_path(path: MetricPath, level: int) -> MetricPath:
    """Restrict a path to the nested level-``level`` mesh (vertex prefix).

    For volume-matched paths sigma is renormalized against the coarse
    areas, so the coarse path keeps constant area; its endpoint sigma may
    then differ from 1 by the discretization error of the area.
    """
    mesh = generate_disk_mesh(level)
    n = mesh.n_vertices
    if level > path.mesh.refinement_level or not np.array_equal(path.mesh.vertices[:n], mesh.vertices):
        raise IncompatibleInputError("target level is not a nested coarsening of the path mesh")
    meta = {**path.metadata, "mesh_ref": {"level": level}, "coarsened_from": path.mesh.refinement_level}
    coarse = MetricPath(mesh, path.times, path.w_samples[:, :n], path.sigma, meta)
    if path.metadata.get("volume_matched"):
        areas = path_areas(coarse)
        coarse = MetricPath(mesh, path.times, coarse.w_samples, path.sigma * areas[0] / areas, meta)
    return coarse


def prepared_path(
    h0: ConformalMetric, h1: ConformalMetric, N: int = 64, clamp: bool = True, match_volume: bool = True
) -> MetricPath:
    """Conformal segment, optionally clamped and volume-matched.

    Volume matching first rescales ``h0`` homothetically to the discrete
    area of ``h1`` (so ``scaled_flat:sqrt2`` becomes the flat metric with
    exactly the hemisphere's discrete area); the shift is recorded.
    """
    meta = {}
    if match_volume:
        a0 = total_area(h0)
        target = total_area(h1)
        h0 = area_match(h0, target)
        meta = {"area_shift": 0.5 * math.log(target / a0), "nominal_area": a0}
    path = conformal_segment(h0, h1, N)
    if clamp:
        path = clamp_reparametrize(path)
    if match_volume:
        path = volume_match(path)
    return path.with_metadata(**meta)
