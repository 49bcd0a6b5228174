#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
metriq: spectra of metric graphs and their continuum limits

Subcommands build graphs, solve spectra, compute continuum fields, evaluate
lattice dispersion relations, run first-order perturbation on sphere graphs
and compare computed spectra with analytic continuum modes.
"""
import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import orjson
import pandas as pd
import yaml

from core.config import load_config, solver_config_from
from core.errors import ConfigError, IoError, MetriqError
from core.graph import MetricGraph, load_graph, save_graph
from core.models import BOUNDARY_KINDS, CONNECTIVITIES, TRACE_MODES, DispersionQuery, RunConfig
from core.spectrum_store import SpectrumStore
from spectral.analytic import default_modes
from spectral.builders import FAMILIES, build_family
from spectral.comparison import (CONVERGENCE_FAMILIES, cached_solve, compare_spectrum, comparison_window,
                                 convergence_study, plot_data)
from spectral.continuum import continuum_field, field_to_dict, homogeneity_report
from spectral.dispersion import cross_check_secular, dispersion_k, limit_defect
from spectral.eigensolver import spectrum_from_dict, spectrum_to_dict
from spectral.perturbation import level_errors, splitting_report

__version__ = "0.3.0"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
CSV_FLOAT_FORMAT = "%.17g"

logger = logging.getLogger("metriq")


def setup_logging(config: Dict[str, Any]) -> None:
    section = config.get("logging", {})
    level = getattr(logging, str(section.get("level", "INFO")).upper(), None)
    if not isinstance(level, int):
        raise ConfigError(f"unknown log level {section.get('level')!r}")
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if section.get("file"):
        handlers.append(logging.FileHandler(section["file"]))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------
def parse_params(items: Optional[Sequence[str]]) -> Dict[str, Any]:
    """key=value pairs, values parsed as YAML scalars or lists."""
    params: Dict[str, Any] = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"parameter {item!r} is not key=value")
        try:
            params[key] = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse value of {key!r}: {e}") from e
    return params


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metriq", description="Metric graph spectra and continuum limits")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=str, help="Path to a YAML config file")
    parser.add_argument("--threads", type=int, help="Worker cap for seed polishing")
    parser.add_argument("--seed", type=int, dest="rng_seed", help="Root random seed")
    sub = parser.add_subparsers(dest="command", required=True)

    def solver_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--kmin", type=float, help="Lower end of the k window")
        p.add_argument("--kmax", type=float, help="Upper end of the k window")
        p.add_argument("--trace", type=str, help="exact | stochastic | auto")
        p.add_argument("--cache", action="store_true", help="Reuse spectra from the SQLite store")

    p = sub.add_parser("build", help="Build a graph file")
    p.add_argument("--family", type=str, required=True)
    p.add_argument("--ops", type=str, help="Conway operations for goldberg, e.g. t or tdt")
    p.add_argument("-p", "--param", action="append", help="Family parameter key=value")
    p.add_argument("-o", "--output", type=str, required=True)

    p = sub.add_parser("spectrum", help="Solve the spectrum of a graph file")
    p.add_argument("-g", "--graph", type=str, required=True)
    p.add_argument("--boundary", type=str, default="clamped")
    solver_flags(p)
    p.add_argument("-o", "--output", type=str)

    p = sub.add_parser("fields", help="Continuum fields R, tr R, mu of a graph")
    p.add_argument("-g", "--graph", type=str, required=True)
    p.add_argument("--density", type=str, default="dual_cell", help="dual_cell | empirical")
    p.add_argument("-o", "--output", type=str)

    p = sub.add_parser("dispersion", help="Plane-wave dispersion on square lattices")
    p.add_argument("--connectivity", type=str, required=True)
    p.add_argument("--ell", type=float, required=True)
    p.add_argument("--kx", type=float, required=True)
    p.add_argument("--ky", type=float, required=True)
    p.add_argument("-g", "--graph", type=str, help="Periodic lattice for the plane-wave check")

    p = sub.add_parser("perturb", help="First-order splittings on a sphere graph")
    p.add_argument("-g", "--graph", type=str, required=True)
    p.add_argument("--jmax", type=int, default=4)
    p.add_argument("--spectrum", type=str, help="Previously solved spectrum.json")
    solver_flags(p)
    p.add_argument("-o", "--output", type=str)

    p = sub.add_parser("compare", help="Compare a graph spectrum with analytic modes")
    p.add_argument("-g", "--graph", type=str, required=True)
    p.add_argument("--family", type=str, required=True)
    p.add_argument("--jmax", type=int, default=4)
    p.add_argument("-p", "--param", action="append", help="Family parameter key=value")
    solver_flags(p)
    p.add_argument("-o", "--output", type=str)

    p = sub.add_parser("convergence", help="Error against graph density")
    p.add_argument("--family", type=str, required=True)
    p.add_argument("--densities", type=str, required=True, help="Comma separated target |V| values")
    p.add_argument("--jmax", type=int, default=4)
    p.add_argument("-p", "--param", action="append", help="Family parameter key=value")
    p.add_argument("--plot-data", type=str, help="Directory for per-figure CSVs")
    solver_flags(p)
    p.add_argument("-o", "--output", type=str)
    return parser


def _check_choice(name: str, value: Optional[str], choices: Sequence[str]) -> None:
    if value is not None and value not in choices:
        raise ConfigError(f"invalid {name} {value!r}, expected one of {', '.join(choices)}")


def run_config_from(args: argparse.Namespace, config: Dict[str, Any]) -> RunConfig:
    """Validated RunConfig from parsed flags over the loaded config."""
    _check_choice("boundary", getattr(args, "boundary", None), BOUNDARY_KINDS)
    _check_choice("trace mode", getattr(args, "trace", None), TRACE_MODES)
    _check_choice("connectivity", getattr(args, "connectivity", None), CONNECTIVITIES)
    family = getattr(args, "family", None)
    if args.command == "convergence":
        _check_choice("family", family, CONVERGENCE_FAMILIES)
    else:
        _check_choice("family", family, FAMILIES)

    params = parse_params(getattr(args, "param", None))
    if getattr(args, "ops", None):
        params["ops"] = list(args.ops)
    solver = solver_config_from(
        config,
        k_min=getattr(args, "kmin", None),
        k_max=getattr(args, "kmax", None),
        trace_mode=getattr(args, "trace", None),
        threads=args.threads,
        rng_seed=args.rng_seed,
    )
    return RunConfig(
        command=args.command,
        graph=getattr(args, "graph", None),
        output=getattr(args, "output", None),
        family=family,
        params=params,
        solver=solver,
        boundary=getattr(args, "boundary", None) or "clamped",
        rng_seed=solver.rng_seed,
        threads=solver.threads,
    )


# ----------------------------------------------------------------------------
# outputs
# ----------------------------------------------------------------------------
def write_json(data: Any, path: Optional[str]) -> None:
    if not path:
        return
    try:
        Path(path).write_bytes(orjson.dumps(data, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    logger.info("💾 Saved %s", path)


def write_csv(frame: pd.DataFrame, path: Optional[str], header: Optional[str] = None, index: bool = False) -> None:
    if not path:
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            if header:
                f.write(f"# {header}\n")
            frame.to_csv(f, index=index, float_format=CSV_FLOAT_FORMAT)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    logger.info("💾 Saved %s", path)


def _store(run: RunConfig, config: Dict[str, Any], requested: bool) -> Optional[SpectrumStore]:
    if not (requested or config.get("cache", {}).get("enabled")):
        return None
    return SpectrumStore(config["cache"]["path"])


def _trace_header(spectrum_trace: str, run: RunConfig) -> Optional[str]:
    return f"trace_mode={spectrum_trace} rng_seed={run.rng_seed}" if spectrum_trace == "stochastic" else None


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------
def cmd_build(run: RunConfig, config: Dict[str, Any]) -> str:
    graph = build_family(run.family, **run.params)
    save_graph(graph, run.output)
    return f"{graph.name}: |V|={graph.n_vertices} |E|={graph.n_edges}"


def cmd_spectrum(run: RunConfig, config: Dict[str, Any], use_cache: bool) -> str:
    graph = load_graph(run.graph)
    spectrum = cached_solve(graph, run.solver, run.boundary, _store(run, config, use_cache))
    write_json(spectrum_to_dict(spectrum), run.output)
    residual = max(m.residual for m in spectrum.modes)
    return (f"{len(spectrum.modes)} roots, multiplicity {spectrum.total_multiplicity}, "
            f"max residual {residual:.2e}")


def cmd_fields(run: RunConfig, config: Dict[str, Any], density: str) -> str:
    graph = load_graph(run.graph)
    field = continuum_field(graph, density)
    report = homogeneity_report(field)
    data = field_to_dict(field)
    data["homogeneity"] = {
        "homogeneity_defect": report.homogeneity_defect,
        "isotropy_defect": report.isotropy_defect,
        "relative_homogeneity": report.relative_homogeneity,
        "relative_isotropy": report.relative_isotropy,
        "n_interior": report.n_interior,
    }
    write_json(data, run.output)
    return f"r0={field.r0:.6g} mu0={field.mu0:.6g} isotropy defect {report.relative_isotropy:.2e}"


def cmd_dispersion(args: argparse.Namespace) -> str:
    query = DispersionQuery(args.connectivity, args.ell, args.kx, args.ky)
    k = dispersion_k(query)
    summary = f"k={k:.17g} defect={limit_defect(query):.3e}"
    if args.graph:
        summary += f" plane-wave residual={cross_check_secular(load_graph(args.graph), query):.2e}"
    return summary


def _sphere_spectrum(run: RunConfig, config: Dict[str, Any], graph: MetricGraph, jmax: int,
                     spectrum_path: Optional[str], use_cache: bool):
    if spectrum_path:
        try:
            return spectrum_from_dict(orjson.loads(Path(spectrum_path).read_bytes()))
        except (OSError, orjson.JSONDecodeError) as e:
            raise IoError(f"cannot read spectrum file {spectrum_path}: {e}") from e
    window, _ = comparison_window("goldberg", run.solver, [], jmax)
    return cached_solve(graph, window, "free", _store(run, config, use_cache))


def cmd_perturb(run: RunConfig, config: Dict[str, Any], jmax: int, spectrum_path: Optional[str],
                use_cache: bool) -> str:
    graph = load_graph(run.graph)
    spectrum = _sphere_spectrum(run, config, graph, jmax, spectrum_path, use_cache)
    factor = bool(config.get("perturbation", {}).get("b_degeneracy_factor", False))
    report = splitting_report(graph, spectrum, jmax, factor)
    write_csv(report, run.output, _trace_header(spectrum.trace_mode, run))
    errors = level_errors(report)
    parts = [f"j={int(r.j)} eta={r.eta:.3e}->{r.eta_corrected:.3e}" for r in errors.itertuples()]
    return f"{len(report)} splittings; " + ", ".join(parts)


def cmd_compare(run: RunConfig, config: Dict[str, Any], jmax: int, use_cache: bool) -> str:
    graph = load_graph(run.graph)
    modes = default_modes(run.family, jmax=jmax, **run.params) if run.family != "goldberg" else []
    window, boundary = comparison_window(run.family, run.solver, modes, jmax)
    started = time.perf_counter()
    spectrum = cached_solve(graph, window, boundary, _store(run, config, use_cache))
    runtime = time.perf_counter() - started
    factor = bool(config.get("perturbation", {}).get("b_degeneracy_factor", False))
    table = compare_spectrum(graph, spectrum, run.family, modes or None, jmax, runtime, factor,
                             int(config.get("quad_order", 16)), window.dedup_tol, **run.params)
    write_csv(table, run.output, _trace_header(spectrum.trace_mode, run))
    return f"{len(table)} modes compared, max eta {table['eta'].max():.3e}, max chi {table['chi'].max():.3e}"


def cmd_convergence(run: RunConfig, config: Dict[str, Any], densities: str, jmax: int,
                    plot_dir: Optional[str], use_cache: bool) -> str:
    try:
        targets = [int(d) for d in densities.split(",") if d.strip()]
    except ValueError as e:
        raise ConfigError(f"densities must be comma separated integers, got {densities!r}") from e
    if not targets:
        raise ConfigError("no densities given")
    factor = bool(config.get("perturbation", {}).get("b_degeneracy_factor", False))
    table = convergence_study(run.family, targets, run.solver, store=_store(run, config, use_cache),
                              progress=sys.stderr.isatty(), degeneracy_factor=factor,
                              quad_order=int(config.get("quad_order", 16)), jmax=jmax, **run.params)
    write_csv(table, run.output)
    if plot_dir:
        out = Path(plot_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoError(f"cannot create {out}: {e}") from e
        for name, frame in plot_data(table).items():
            write_csv(frame, str(out / f"{run.family}_{name}.csv"), index=True)
    return f"{table['n_vertices'].nunique()} densities, {len(table)} rows"


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one subcommand; returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        config = load_config(Path(args.config) if args.config else None)
        setup_logging(config)
        run_cfg = run_config_from(args, config)
        logger.info("🚀 metriq %s %s", __version__, args.command)

        use_cache = bool(getattr(args, "cache", False))
        if args.command == "build":
            summary = cmd_build(run_cfg, config)
        elif args.command == "spectrum":
            summary = cmd_spectrum(run_cfg, config, use_cache)
        elif args.command == "fields":
            summary = cmd_fields(run_cfg, config, args.density)
        elif args.command == "dispersion":
            summary = cmd_dispersion(args)
        elif args.command == "perturb":
            summary = cmd_perturb(run_cfg, config, args.jmax, args.spectrum, use_cache)
        elif args.command == "compare":
            summary = cmd_compare(run_cfg, config, args.jmax, use_cache)
        else:
            summary = cmd_convergence(run_cfg, config, args.densities, args.jmax, args.plot_data, use_cache)
    except MetriqError as e:
        logger.error("❌ %s: %s", e.category, e.message)
        print(orjson.dumps(e.as_dict(), option=orjson.OPT_SERIALIZE_NUMPY, default=str).decode(), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("❌ unexpected error: %s", e)
        return 1

    elapsed = time.perf_counter() - started
    print(f"{args.command}: {summary} ({elapsed:.2f}s)")
    logger.info("✅ done in %.2fs", elapsed)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
