"""Command line front end: ``diskpsc <command> [<subcommand>] [options]``.

Every command reads and writes JSON; ``report plotdata`` writes CSV.  Exit
status is 0 on success or a passing certificate, 2 when the geometry says
no (failed certificate, path leaving M) and 1 on any error, in which case a
JSON object ``{"error": ..., "message": ...}`` goes to standard error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .concordance import (
    GAUGES,
    MODES,
    CylinderMetric,
    build_outward_bent,
    build_plain_cylinder,
    build_product_concordance,
    build_warped_concordance,
    build_warped_cylinder,
    verify_concordance,
)
from .errors import ConfigurationError, DiskPSCError
from .isotopy import MIN_SAMPLES, MetricPath, prepared_path, spectral_sweep
from .mesh import generate_disk_mesh, mesh_quality_report
from .metric import ConformalMetric, named_metric, random_metric
from .moser import moser_flow, seed_grid
from .spectral import DEFAULT_TOL, membership_report, principal_eigenpair

OUT_ENV = "DISKPSC_OUT"
EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
DEFAULT_MODE = {
    "warped": "weak-min",
    "product": "strong-min",
    "outward": "outward-bent",
    "plain": "weak-min",
    "cylinder": "weak-min",
}


@dataclass
class RunConfig:
    level: int = 5
    N: int = 64
    tol: float = DEFAULT_TOL
    A_max: int = 20  # exponent: the search stops above A = 2**A_max
    epsilon: float = 0.0
    seed: int = 0  # RNG seed for random metrics
    seed_density: int = 8  # rings of Moser seed points
    substeps: int = 8
    verbose: int = 0

    def validate(self) -> "RunConfig":
        checks = [
            (0 <= self.level <= 10, "level must lie in [0, 10]"),
            (self.N >= MIN_SAMPLES, f"N must be >= {MIN_SAMPLES}"),
            (0.0 < self.tol <= 1e-2, "tol must lie in (0, 1e-2]"),
            (0 <= self.A_max <= 40, "A_max exponent must lie in [0, 40]"),
            (np.isfinite(self.epsilon) and self.epsilon >= 0, "epsilon must be >= 0"),
            (self.seed >= 0, "seed must be >= 0"),
            (1 <= self.seed_density <= 64, "seed density must lie in [1, 64]"),
            (self.substeps >= 4, "substeps must be >= 4"),
            (self.verbose >= 0, "verbosity must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)
        return self


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {unknown}")
    return data


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _common(p: argparse.ArgumentParser) -> None:
    # defaults are None so that config-file values apply unless overridden
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--level", type=int, default=None)
    p.add_argument("-N", type=int, default=None, dest="N")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--A-max", type=int, default=None, dest="A_max", help="exponent k, search up to A = 2**k")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seed-density", type=int, default=None, dest="seed_density")
    p.add_argument("--substeps", type=int, default=None)
    p.add_argument("-v", "--verbose", action="count", default=None)
    p.add_argument("--out", help="output file (default: under $%s or the working directory)" % OUT_ENV)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diskpsc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    mesh = sub.add_parser("mesh").add_subparsers(dest="action", required=True, parser_class=_Parser)
    _common(mesh.add_parser("gen", help="write a refined disk mesh"))

    lam = sub.add_parser("lambda1", help="principal eigenvalue and membership in M")
    _common(lam)
    lam.add_argument("--metric", required=True, help="metric name or metric JSON file")

    path = sub.add_parser("path").add_subparsers(dest="action", required=True, parser_class=_Parser)
    pb = path.add_parser("build", help="conformal segment, clamped and volume-matched")
    _common(pb)
    pb.add_argument("--from", dest="source", required=True)
    pb.add_argument("--to", dest="target", required=True)
    pb.add_argument("--no-clamp", action="store_true")
    pb.add_argument("--no-volume-match", action="store_true")
    ps = path.add_parser("sweep", help="principal eigenvalue along a path")
    _common(ps)
    ps.add_argument("--path", required=True)

    moser = sub.add_parser("moser").add_subparsers(dest="action", required=True, parser_class=_Parser)
    mr = moser.add_parser("run", help="integrate the Moser flow of a volume-matched path")
    _common(mr)
    mr.add_argument("--path", required=True)

    conc = sub.add_parser("concordance").add_subparsers(dest="action", required=True, parser_class=_Parser)
    cb = conc.add_parser("build", help="build a cylinder metric and certify it")
    _common(cb)
    cb.add_argument("--kind", choices=sorted(DEFAULT_MODE), default="warped")
    cb.add_argument("--from", dest="source")
    cb.add_argument("--to", dest="target")
    cb.add_argument("--path", help="path JSON instead of --from/--to")
    cb.add_argument("--metric", help="metric for --kind cylinder")
    cb.add_argument("--gauge", choices=GAUGES, default=None)
    cb.add_argument("--mode", choices=MODES, default=None)
    cb.add_argument("--cylinder-out", help="where to write the cylinder JSON")
    cv = conc.add_parser("verify", help="certify a stored cylinder metric")
    _common(cv)
    cv.add_argument("--cylinder", required=True)
    cv.add_argument("--mode", choices=MODES, default="weak-min")

    rep = sub.add_parser("report").add_subparsers(dest="action", required=True, parser_class=_Parser)
    rp = rep.add_parser("plotdata", help="CSV series from a certificate or sweep report")
    _common(rp)
    rp.add_argument("--input", required=True)
    rp.add_argument("--out-dir", default=None)
    return parser


def _config(args) -> RunConfig:
    values = load_config(args.config)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values).validate()


def _out_path(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, ".")) / default_name
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")


def resolve_metric(spec: str, level: int, seed: int) -> ConformalMetric:
    """Metric from a name, ``random`` / ``random:<seed>``, or a JSON file."""
    if spec.endswith(".json") and Path(spec).exists():
        h = ConformalMetric.load(spec)
        if h.mesh.refinement_level < level:
            raise ConfigurationError("metric file lives on a coarser mesh than --level")
        return h.restrict(generate_disk_mesh(level)) if h.mesh.refinement_level > level else h
    mesh = generate_disk_mesh(level)
    if spec.split(":")[0] == "random":
        s = int(spec.split(":")[1]) if ":" in spec else seed
        return random_metric(mesh, np.random.default_rng(s))
    return named_metric(mesh, spec)


def cmd_mesh_gen(args, cfg):
    mesh = generate_disk_mesh(cfg.level)
    out = _out_path(args, f"mesh_L{cfg.level}.json")
    mesh.save(out)
    q = mesh_quality_report(mesh)
    return EXIT_OK, {"mesh": str(out), "quality": q.to_dict()}


def cmd_lambda1(args, cfg):
    h = resolve_metric(args.metric, cfg.level, cfg.seed)
    r = principal_eigenpair(h, cfg.tol)
    m = membership_report(h, tol=cfg.tol)
    out = _out_path(args, "lambda1.json")
    r.save(out)
    return EXIT_OK, {
        "metric": h.label, "lambda1": r.lambda1, "residual": r.residual, "iterations": r.iterations,
        "positive": r.positive, "membership": m.to_dict(), "eigenpair": str(out),
    }


def cmd_path_build(args, cfg):
    h0 = resolve_metric(args.source, cfg.level, cfg.seed)
    h1 = resolve_metric(args.target, cfg.level, cfg.seed)
    path = prepared_path(h0, h1, cfg.N, clamp=not args.no_clamp, match_volume=not args.no_volume_match)
    out = _out_path(args, "path.json")
    path.save(out)
    return EXIT_OK, {"path": str(out), "provenance": path.to_dict()["provenance"]}


def cmd_path_sweep(args, cfg):
    rep = spectral_sweep(MetricPath.load(args.path), cfg.tol)
    data = rep.to_dict()
    out = _out_path(args, "sweep.json")
    _write_json(out, data)
    return (EXIT_OK if rep.in_M else EXIT_FAIL), {
        "sweep": str(out), "lambda_star": data["lambda_star"], "in_M": rep.in_M, "continuity": rep.continuity,
    }


def cmd_moser_run(args, cfg):
    path = MetricPath.load(args.path)
    res = moser_flow(path, seeds=seed_grid(cfg.seed_density), substeps=cfg.substeps)
    out = _out_path(args, "moser.json")
    res.save(out)
    data = res.to_dict()
    return EXIT_OK, {
        "moser": str(out),
        "max_volume_drift": res.max_volume_drift,
        "max_compatibility": float(np.abs(res.compatibility).max()),
        "boundary_deviation": data.get("boundary_deviation"),
    }


def _build_cylinder(args, cfg) -> CylinderMetric:
    A_max = 2.0**cfg.A_max
    if args.kind == "cylinder":
        if not args.metric:
            raise ConfigurationError("--kind cylinder needs --metric")
        return build_warped_cylinder(resolve_metric(args.metric, cfg.level, cfg.seed), tol=cfg.tol)
    if args.path:
        path = MetricPath.load(args.path)
    elif args.source and args.target:
        h0 = resolve_metric(args.source, cfg.level, cfg.seed)
        h1 = resolve_metric(args.target, cfg.level, cfg.seed)
        path = prepared_path(h0, h1, cfg.N, match_volume=args.kind in ("warped", "outward"))
    else:
        raise ConfigurationError("give --path or both --from and --to")
    if args.kind == "warped":
        return build_warped_concordance(path, A_max, cfg.tol, gauge=args.gauge or "conformal")
    if args.kind == "outward":
        return build_outward_bent(path, cfg.epsilon, A_max, cfg.tol, gauge=args.gauge or "moser")
    if args.kind == "product":
        return build_product_concordance(path, A_max, cfg.tol)
    return build_plain_cylinder(path, tol=cfg.tol)


def _certificate_summary(cert) -> dict:
    d = cert.to_dict()
    d.pop("series", None)
    d.pop("slice_H_min", None)
    return d


def cmd_concordance_build(args, cfg):
    cyl = _build_cylinder(args, cfg)
    cert = verify_concordance(cyl, args.mode or DEFAULT_MODE[args.kind])
    out = _out_path(args, "certificate.json")
    cert.save(out)
    cyl_out = Path(args.cylinder_out) if args.cylinder_out else out.with_name(out.stem + "_cylinder.json")
    cyl.save(cyl_out)
    summary = _certificate_summary(cert)
    summary.update(certificate=str(out), cylinder=str(cyl_out))
    return (EXIT_OK if cert.passed else EXIT_FAIL), summary


def cmd_concordance_verify(args, cfg):
    cyl = CylinderMetric.load(args.cylinder)
    cert = verify_concordance(cyl, args.mode)
    out = _out_path(args, "certificate.json")
    cert.save(out)
    summary = _certificate_summary(cert)
    summary.update(certificate=str(out))
    return (EXIT_OK if cert.passed else EXIT_FAIL), summary


PLOT_SERIES = {
    # file stem: (header, certificate series key, sweep key)
    "lambda_t": ("t,lambda", "lambda", "lambda"),
    "minR_t": ("t,min_R_g", "min_R_g", None),
    "Hcyl_t": ("t,max_abs_H_cyl", "max_abs_H_cyl", None),
    "Hslice_t": ("t,min_H_slice", "min_H_slice", None),
}


def report_plotdata(data: dict, out_dir: Path) -> tuple[list, list]:
    """Write one CSV per available series; returns (written, warnings)."""
    if "series" in data:
        series, col = data["series"], 1
    elif "lambda" in data and "times" in data:
        series, col = {"t": data["times"], "lambda": data["lambda"]}, 2
    else:
        raise ConfigurationError("input is neither a certificate nor a sweep report")
    out_dir.mkdir(parents=True, exist_ok=True)
    written, warnings = [], []
    for stem, spec in PLOT_SERIES.items():
        header, key = spec[0], spec[col]
        values = series.get(key) if key else None
        if values is None:
            warnings.append(f"series {stem} not available in input")
            continue
        f = out_dir / f"{stem}.csv"
        with f.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            fh.write(f"# columns: {header}\n")
            for t, v in zip(series["t"], values):
                w.writerow([repr(float(t)), repr(float(v))])
        written.append(str(f))
    return written, warnings


def cmd_report_plotdata(args, cfg):
    data = json.loads(Path(args.input).read_text(encoding="utf-8"))
    out_dir = Path(args.out_dir) if args.out_dir else Path(os.environ.get(OUT_ENV, ".")) / "plotdata"
    written, warnings = report_plotdata(data, out_dir)
    return EXIT_OK, {"written": written, "warnings": warnings}


COMMANDS = {
    ("mesh", "gen"): cmd_mesh_gen,
    ("lambda1", None): cmd_lambda1,
    ("path", "build"): cmd_path_build,
    ("path", "sweep"): cmd_path_sweep,
    ("moser", "run"): cmd_moser_run,
    ("concordance", "build"): cmd_concordance_build,
    ("concordance", "verify"): cmd_concordance_verify,
    ("report", "plotdata"): cmd_report_plotdata,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
        handler = COMMANDS[(args.command, getattr(args, "action", None))]
        status, report = handler(args, cfg)
    except (DiskPSCError, OSError, ValueError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("largest_feasible_epsilon", "last_value"):
            if getattr(exc, attr, None) is not None:
                err[attr] = getattr(exc, attr)
        sys.stderr.write(json.dumps(err) + "\n")
        return EXIT_ERROR
    report = {"status": {EXIT_OK: "ok", EXIT_FAIL: "fail"}[status], **report}
    sys.stdout.write(json.dumps(report, indent=1 if cfg.verbose else None, default=float) + "\n")
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
