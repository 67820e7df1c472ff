"""Command-line driver: single solves, convergence studies, condition sweeps.

Configuration is a flat ``key = value`` file overridden by ``--key value``
arguments.  Every CSV output starts with ``#`` comment lines echoing the
resolved configuration and the artifact version, so results are
self-describing; reruns of the same configuration are byte-identical.

Exit codes: 0 success, 1 configuration error, 2 geometry/mesh error,
3 solver error, 4 estimator non-convergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from . import __version__
from .analysis import (
    ConvergenceTable,
    condition_number,
    error_norms,
    residual_norm,
    solve,
)
from .assembly import (
    AssemblyParams,
    POINTWISE,
    PIOLA,
    assemble,
    export_matrix_market,
    export_vector,
)
from .errors import (
    ConfigError,
    EstimatorError,
    GeometryError,
    MeshError,
    SolverError,
    SurfcutError,
)
from .geometry import ImplicitTorus, torus_benchmark
from .mesh import build_background, export_obj, extract_cut_surface, interpolate_levelset

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_GEOMETRY = 2
EXIT_SOLVER = 3
EXIT_ESTIMATOR = 4


@dataclass
class ExperimentConfig:
    """Resolved experiment parameters (defaults are the reference benchmark)."""

    R: float = 1.0
    r: float = 0.5
    box_min: tuple = (-1.6, -1.6, -0.6)
    box_max: tuple = (1.6, 1.6, 0.6)
    h: tuple = (0.2,)
    c_F: tuple = (1e-2,)
    coefficient_mode: str = POINTWISE
    rel_tol: float = 1e-10
    output_dir: str = "."
    export_obj: bool = True
    export_matrix: bool = False
    export_solution: bool = True
    allow_unstabilized: bool = False


_BOOL_KEYS = {"export_obj", "export_matrix", "export_solution", "allow_unstabilized"}
_TUPLE_KEYS = {"box_min", "box_max", "h", "c_F"}
_FLOAT_KEYS = {"R", "r", "rel_tol"}
_STR_KEYS = {"coefficient_mode", "output_dir"}
_ALL_KEYS = _BOOL_KEYS | _TUPLE_KEYS | _FLOAT_KEYS | _STR_KEYS


def _parse_value(key, raw, where):
    raw = raw.strip()
    try:
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if key in _TUPLE_KEYS:
            parts = raw.replace(",", " ").split()
            if not parts:
                raise ValueError("expected at least one value")
            return tuple(float(p) for p in parts)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key == "coefficient_mode":
            return raw.lower()
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: invalid value for {key!r}: {exc}") from exc


def parse_config_file(path):
    """Read a flat key = value configuration file."""
    updates = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
        updates[key] = _parse_value(key, raw, f"{path}:{lineno}")
    return updates


def _cells_for(config, h):
    lengths = np.array(config.box_max) - np.array(config.box_min)
    counts = lengths / h
    cells = np.rint(counts)
    if np.any(np.abs(counts - cells) > 1e-9 * np.maximum(np.abs(counts), 1.0)):
        raise ConfigError(
            f"h = {h} does not divide the box edges {lengths.tolist()} "
            "into integer cell counts"
        )
    return tuple(int(c) for c in cells)


def validate_config(config, command):
    """Check the resolved configuration; raises ConfigError on violations."""
    if not config.R > config.r > 0:
        raise ConfigError(f"need R > r > 0, got R={config.R}, r={config.r}")
    if np.any(np.array(config.box_max) <= np.array(config.box_min)):
        raise ConfigError("box_max must exceed box_min on every axis")
    if len(config.box_min) != 3 or len(config.box_max) != 3:
        raise ConfigError("box corners need exactly three components")
    if not config.h:
        raise ConfigError("at least one mesh size h is required")
    if any(hv <= 0 for hv in config.h):
        raise ConfigError("mesh sizes must be positive")
    for hv in config.h:
        _cells_for(config, hv)
    if any(c < 0 for c in config.c_F):
        raise ConfigError("c_F must be nonnegative")
    if any(c == 0 for c in config.c_F) and not config.allow_unstabilized:
        raise ConfigError("c_F = 0 requires --allow-unstabilized")
    if config.coefficient_mode not in (POINTWISE, PIOLA):
        raise ConfigError(f"unknown coefficient_mode {config.coefficient_mode!r}")
    if config.rel_tol <= 0:
        raise ConfigError("rel_tol must be positive")
    if command == "solve":
        if len(config.h) != 1:
            raise ConfigError("solve expects exactly one h")
        if len(config.c_F) != 1:
            raise ConfigError("solve expects exactly one c_F")
    if command == "convergence":
        if len(config.h) < 2:
            raise ConfigError("convergence expects at least two h values")
        if len(config.c_F) != 1:
            raise ConfigError("convergence expects exactly one c_F")
        if sorted(config.h, reverse=True) != list(config.h):
            raise ConfigError("h values must be strictly decreasing")
    if command == "condition":
        if len(config.h) < 2:
            raise ConfigError("condition expects at least two h values")
        if any(c <= 0 for c in config.c_F):
            raise ConfigError("condition expects strictly positive c_F values")
    threads = os.environ.get("SURFCUT_THREADS")
    if threads is not None:
        try:
            if int(threads) < 1:
                raise ValueError
        except ValueError:
            raise ConfigError(
                f"SURFCUT_THREADS must be a positive integer, got {threads!r}"
            ) from None


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, tuple):
        return " ".join(_fmt(v) for v in value)
    return str(value)


def config_preamble(config, command):
    lines = [f"# surfcut {__version__}", f"# command = {command}"]
    for f in fields(config):
        lines.append(f"# {f.name} = {_fmt(getattr(config, f.name))}")
    # the worker cap is not echoed: outputs are byte-identical regardless
    lines.append("# workers = 1")
    return "\n".join(lines) + "\n"


def _build_level(config, h):
    surface = ImplicitTorus(major_radius=config.R, minor_radius=config.r)
    problem = torus_benchmark(surface)
    mesh = build_background(config.box_min, config.box_max, _cells_for(config, h))
    cut = extract_cut_surface(mesh, interpolate_levelset(mesh, surface))
    if cut.n_facets == 0:
        raise MeshError(f"empty cut: the box does not intersect the surface at h = {h}")
    return problem, cut


def _params(config, c_F):
    return AssemblyParams(c_F=c_F, coefficient_mode=config.coefficient_mode)


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def cmd_solve(config):
    """Single-resolution solve with file outputs."""
    h = config.h[0]
    problem, cut = _build_level(config, h)
    params = _params(config, config.c_F[0])
    system = assemble(cut, problem, params)
    u = solve(system, rel_tol=config.rel_tol)
    residual = residual_norm(system, u)
    report = error_norms(u, cut, problem, params)

    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    preamble = config_preamble(config, "solve")

    if config.export_obj:
        export_obj(cut, os.path.join(out, "gamma_h.obj"))
    if config.export_solution:
        lines = [
            f"{vid} {val:.17g}"
            for vid, val in zip(system.dof_map.vertex_ids, u)
        ]
        _write(os.path.join(out, "solution.txt"), "\n".join(lines) + "\n")
    if config.export_matrix:
        export_matrix_market(system.A, os.path.join(out, "system.mtx"))
        export_vector(system.b, os.path.join(out, "rhs.txt"))

    row = (
        f"{h:.17g},{system.dof_map.n_dofs},{report.l2_error:.17g},"
        f"{report.energy_error:.17g},{report.grad_error:.17g},{residual:.17g}"
    )
    _write(
        os.path.join(out, "report.csv"),
        preamble + "h,n_dofs,l2_error,energy_error,grad_error,residual\n" + row + "\n",
    )
    print(
        f"h={h:g} N={system.dof_map.n_dofs} l2={report.l2_error:.6e} "
        f"energy={report.energy_error:.6e} grad={report.grad_error:.6e} "
        f"residual={residual:.3e}"
    )
    return EXIT_OK


def _eoc_cell(value):
    return "" if value is None else f"{value:.17g}"


def cmd_convergence(config):
    """Refinement study over the configured h values."""
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "convergence.csv")
    params_cf = config.c_F[0]

    hs, n_dofs, reports = [], [], []
    with open(path, "w") as fh:
        fh.write(config_preamble(config, "convergence"))
        fh.write("h,n_dofs,l2_error,energy_error,grad_error,eoc_l2,eoc_energy,eoc_grad\n")
        fh.flush()
        for h in config.h:
            try:
                problem, cut = _build_level(config, h)
                params = _params(config, params_cf)
                system = assemble(cut, problem, params)
                u = solve(system, rel_tol=config.rel_tol)
                report = error_norms(u, cut, problem, params)
            except SurfcutError as exc:
                fh.write(f"# ERROR at h = {h:g}: {exc}\n")
                fh.flush()
                raise
            hs.append(h)
            n_dofs.append(system.dof_map.n_dofs)
            reports.append(report)
            table = ConvergenceTable.from_reports(hs, n_dofs, reports)
            row = table.rows[-1]
            fh.write(
                f"{row.h:.17g},{row.n_dofs},{row.l2_error:.17g},"
                f"{row.energy_error:.17g},{row.grad_error:.17g},"
                f"{_eoc_cell(row.eoc_l2)},{_eoc_cell(row.eoc_energy)},"
                f"{_eoc_cell(row.eoc_grad)}\n"
            )
            fh.flush()
            print(
                f"h={h:g} N={n_dofs[-1]} l2={report.l2_error:.6e} "
                f"energy={report.energy_error:.6e} grad={report.grad_error:.6e}"
            )
    return EXIT_OK


def cmd_condition(config):
    """Condition-number sweep over h for each stabilization strength."""
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "condition.csv")
    any_failed = False
    with open(path, "w") as fh:
        fh.write(config_preamble(config, "condition"))
        fh.write("c_F,h,n_dofs,sigma_max,sigma_min,kappa,slope\n")
        fh.flush()
        for c_F in config.c_F:
            group_h, group_kappa = [], []
            for h in config.h:
                problem, cut = _build_level(config, h)
                system = assemble(cut, problem, _params(config, c_F))
                try:
                    cr = condition_number(system.A)
                except EstimatorError as exc:
                    any_failed = True
                    fh.write(
                        f"{c_F:.17g},{h:.17g},{system.dof_map.n_dofs},,,"
                        f"FAILED: {exc},\n"
                    )
                    fh.flush()
                    print(f"c_F={c_F:g} h={h:g}: estimator failed: {exc}")
                    continue
                group_h.append(h)
                group_kappa.append(cr.kappa)
                fh.write(
                    f"{c_F:.17g},{h:.17g},{system.dof_map.n_dofs},"
                    f"{cr.sigma_max:.17g},{cr.sigma_min:.17g},{cr.kappa:.17g},\n"
                )
                fh.flush()
                print(f"c_F={c_F:g} h={h:g}: kappa={cr.kappa:.6e}")
            if len(group_h) >= 2:
                slope = float(
                    np.polyfit(np.log(group_h), np.log(group_kappa), 1)[0]
                )
                fh.write(f"{c_F:.17g},,,,,,{slope:.17g}\n")
                fh.flush()
                print(f"c_F={c_F:g}: fitted slope log(kappa) vs log(h) = {slope:.4f}")
    return EXIT_ESTIMATOR if any_failed else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="surfcut",
        description="Stabilized cut finite element solver for surface convection",
    )
    parser.add_argument("--version", action="version", version=f"surfcut {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "single-resolution solve with file outputs"),
        ("convergence", "refinement study producing convergence.csv"),
        ("condition", "condition-number sweep producing condition.csv"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--allow-unstabilized", action="store_true", default=None,
                       help="permit c_F = 0 (failure demonstration)")
        for key in sorted(_ALL_KEYS - {"allow_unstabilized"}):
            names = [f"--{key}"]
            if "_" in key:
                names.append(f"--{key.replace('_', '-')}")
            p.add_argument(*names, dest=key, default=None, metavar="VALUE")
    return parser


def resolve_config(args):
    """Layer defaults, config file, and command-line overrides."""
    config = ExperimentConfig()
    if args.config:
        for key, value in parse_config_file(args.config).items():
            config = replace(config, **{key: value})
    for key in _ALL_KEYS - {"allow_unstabilized"}:
        raw = getattr(args, key, None)
        if raw is not None:
            config = replace(config, **{key: _parse_value(key, raw, f"--{key}")})
    if getattr(args, "allow_unstabilized", None):
        config = replace(config, allow_unstabilized=True)
    return config


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        validate_config(config, args.command)
        if args.command == "solve":
            return cmd_solve(config)
        if args.command == "convergence":
            return cmd_convergence(config)
        return cmd_condition(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GeometryError, MeshError) as exc:
        print(f"geometry/mesh error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except EstimatorError as exc:
        print(f"estimator error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR


if __name__ == "__main__":
    sys.exit(main())
