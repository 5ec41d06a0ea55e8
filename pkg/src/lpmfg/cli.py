"""Command-line front end: ``lpmfg {validate,solve,simulate,crosscheck,all}``.

Exit status: 0 success, 1 error (or failed cross-check), 2 equilibrium
iteration did not converge.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from lpmfg import __version__
from lpmfg.config import ConfigError, RunConfig, build_run, load_config, preset_names
from lpmfg.equilibrium import EquilibriumError, EquilibriumReport, solve_equilibrium
from lpmfg.generator import GeneratorError, assemble_generator, dump_coo, flow_stats
from lpmfg.grid import DiscreteGrid, GridError, cfl_report, jump_stencil
from lpmfg.io import (ArtifactError, read_flow, read_json, read_triple, write_array, write_dict_row, write_flow,
                      write_json, write_trace, write_triple)
from lpmfg.lp import LpError, assemble_lp, boundary_mass_bound, write_mps
from lpmfg.measures import MeanFieldFlow, MeasureError, OccupationTriple, extract_kernel
from lpmfg.model import ModelError, validate_model
from lpmfg.simulate import SimulationError, compare_lp_vs_sim, simulate

log = logging.getLogger("lpmfg")

OUT_ENV = "LPMFG_OUT_DIR"
EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2
_ERRORS = (ConfigError, ModelError, GridError, GeneratorError, LpError, EquilibriumError, SimulationError,
           ArtifactError, MeasureError, OSError)


def output_dir(cfg: RunConfig, cli_out: str | None) -> Path:
    """``--out`` beats the environment variable, which beats the config file."""
    out = cli_out or os.environ.get(OUT_ENV) or cfg.output.dir or os.path.join("lpmfg-out", cfg.name)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def grid_summary(grid: DiscreteGrid) -> dict:
    return {"N": grid.N, "M": grid.M, "K": grid.K, "T": grid.T, "lo": grid.lo, "hi": grid.hi,
            "a_lo": float(grid.a_nodes[0]), "a_hi": float(grid.a_nodes[-1]), "dt": grid.dt, "dx": grid.dx}


def _validate(cfg: RunConfig):
    model, grid = build_run(cfg)
    report = validate_model(model, grid)
    m0 = model.initial_law.on_grid(grid.x_nodes)
    stats = flow_stats(model, grid, MeanFieldFlow.constant(m0, grid.N))
    cfl = cfl_report(model, grid, stats, warn=False)
    return model, grid, report, cfl


def run_validate(cfg: RunConfig) -> int:
    model, grid, report, cfl = _validate(cfg)
    print(f"model {model.name}: {report.summary()}")
    for v in report.violations[:20]:
        print(f"  {v}")
    if len(report.violations) > 20:
        print(f"  ... {len(report.violations) - 20} more")
    print(f"coefficient bounds: {report.bounds}")
    print(cfl)
    if not cfl.stable and not cfg.override_cfl:
        return EXIT_ERROR
    return EXIT_OK if report.ok else EXIT_ERROR


def _dump_debug(cfg, model, grid, report: EquilibriumReport, out: Path):
    stats = flow_stats(model, grid, report.flow)
    tensors = assemble_generator(model, grid, stats, jump_stencil(model, grid, stats))
    if cfg.output.dump_lp:
        write_mps(assemble_lp(model, grid, tensors, stats, override_cfl=True), out / "lp.mps")
    if cfg.output.dump_generator:
        gdir = out / "generator"
        gdir.mkdir(exist_ok=True)
        for n, Gn in enumerate(tensors.G):
            for k, G in enumerate(Gn):
                dump_coo(G, gdir / f"G_{n}_{k}.coo")
        dump_coo(tensors.B, gdir / "B.coo")


def run_solve(cfg: RunConfig, out: Path) -> tuple[int, EquilibriumReport | None]:
    model, grid, vreport, cfl = _validate(cfg)
    if not vreport.ok:
        print(f"error: model is not admissible: {vreport.summary()}", file=sys.stderr)
        for v in vreport.violations[:5]:
            print(f"  {v}", file=sys.stderr)
        return EXIT_ERROR, None
    start = time.perf_counter()
    report = solve_equilibrium(model, grid, cfg.fixed_point_params())
    elapsed = time.perf_counter() - start
    write_flow(out / "flow.csv", report.flow)
    write_triple(out, report.triple)
    write_trace(out / "trace.csv", report.trace)
    _dump_debug(cfg, model, grid, report, out)
    final_stats = flow_stats(model, grid, report.flow)
    meta = {
        "version": __version__,
        "config": cfg.as_dict(),
        "grid": grid_summary(grid),
        "cfl": {"initial": cfl.number, "final": cfl_report(model, grid, final_stats, warn=False).number},
        "coefficient_bounds": dataclasses.asdict(vreport.bounds),
        "boundary_mass": report.triple.total_boundary_mass(),
        "boundary_mass_bound": boundary_mass_bound(vreport.bounds, grid),
        "converged": report.converged,
        "iterations": report.iterations,
        "residual": report.residual,
        "exploitability": report.exploitability,
        "cost": report.cost,
        "lp": report.lp_stats,
        "timings": {"solve_seconds": elapsed},
        "seed": cfg.simulation.seed,
    }
    write_json(out / "metadata.json", meta)
    state = "converged" if report.converged else "NOT converged"
    print(f"{cfg.name}: {state} after {report.iterations} iteration(s); residual {report.residual:.3g}, "
          f"exploitability {report.exploitability:.3g}, cost {report.cost:.10g}; artifacts in {out}")
    return (EXIT_OK if report.converged else EXIT_NOT_CONVERGED), report


def load_solution(cfg: RunConfig, source: Path, grid: DiscreteGrid):
    """Flow, triple and cost written by ``solve``; the stored grid must match ``grid``."""
    meta = read_json(source / "metadata.json")
    stored = meta.get("grid", {})
    mine = grid_summary(grid)
    mismatch = [k for k in ("N", "M", "K", "T", "lo", "hi", "a_lo", "a_hi") if stored.get(k) != mine[k]]
    if mismatch:
        detail = ", ".join(f"{k}: artifact {stored.get(k)!r} vs config {mine[k]!r}" for k in mismatch)
        raise ArtifactError(f"artifact grid in {source} does not match the configuration ({detail})")
    flow = read_flow(source / "flow.csv", grid.N, grid.M)
    triple = read_triple(source, grid.N, grid.M, grid.K)
    return flow, triple, float(meta["cost"])


def _solution(cfg, out, from_dir):
    model, grid = build_run(cfg)
    if from_dir is not None:
        flow, triple, cost = load_solution(cfg, Path(from_dir), grid)
        return model, grid, flow, triple, cost, EXIT_OK
    status, report = run_solve(cfg, out)
    if report is None:
        return model, grid, None, None, None, status
    return model, grid, report.flow, report.triple, report.cost, status


def _simulate(cfg, model, grid, flow, triple, out):
    s = cfg.simulation
    kernel = extract_kernel(triple, grid)
    start = time.perf_counter()
    est = simulate(model, grid, kernel, flow, s.n_paths, s.substeps, s.seed)
    elapsed = time.perf_counter() - start
    write_array(out / "sim_nu.csv", est.nu, ("i",))
    write_array(out / "sim_nu_se.csv", est.nu_se, ("i",))
    write_array(out / "sim_m.csv", est.m, ("n", "i", "k"))
    write_array(out / "sim_lambda_b.csv", est.lambda_b, ("n", "j"))
    write_dict_row(out / "sim_summary.csv", {"cost": est.cost, "cost_se": est.cost_se, "n_paths": est.n_paths,
                                             "substeps": est.substeps, "seed": est.seed, "seconds": elapsed})
    print(f"simulated {est.n_paths} paths x {grid.N * est.substeps} steps in {elapsed:.2f}s: "
          f"J = {est.cost:.8g} +- {est.cost_se:.3g}")
    return est


def run_simulate(cfg: RunConfig, out: Path, from_dir=None) -> int:
    model, grid, flow, triple, _, status = _solution(cfg, out, from_dir)
    if triple is None:
        return status
    _simulate(cfg, model, grid, flow, triple, out)
    return EXIT_OK


def run_crosscheck(cfg: RunConfig, out: Path, from_dir=None) -> int:
    model, grid, flow, triple, cost, status = _solution(cfg, out, from_dir)
    if triple is None:
        return status
    est = _simulate(cfg, model, grid, flow, triple, out)
    rep = compare_lp_vs_sim(triple, cost, est, grid, cfg.simulation.eps_disc)
    write_dict_row(out / "comparison.csv", rep.row())
    write_array(out / "comparison_tv.csv", np.array(rep.tv_slices), ("n",))
    ok = rep.passed(cfg.simulation.w1_bound)
    print(f"crosscheck {'PASS' if ok else 'FAIL'}: {rep}")
    if not ok:
        return EXIT_ERROR
    return status if status == EXIT_NOT_CONVERGED else EXIT_OK


def run_all(cfg: RunConfig, out: Path) -> int:
    status = run_validate(cfg)
    if status != EXIT_OK:
        return status
    return run_crosscheck(cfg, out)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help=f"TOML config file or preset name ({', '.join(preset_names())})")
    common.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    common.add_argument("--seed", type=int, help="simulation seed (overrides the config)")
    common.add_argument("--override-cfl", action="store_true", help="solve even if the CFL number exceeds 1")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="lpmfg", description="Linear-programming mean-field equilibria.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check model admissibility and CFL")
    sub.add_parser("solve", parents=[common], help="compute the equilibrium and write artifacts")
    for name, text in (("simulate", "Monte Carlo estimates under the equilibrium control"),
                       ("crosscheck", "compare LP and Monte Carlo estimates")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--from", dest="from_dir", help="reuse artifacts written by `solve`")
    sub.add_parser("all", parents=[common], help="validate, solve and cross-check")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
            cfg = dataclasses.replace(cfg, simulation=dataclasses.replace(cfg.simulation, seed=args.seed))
        if args.override_cfl:
            cfg = dataclasses.replace(cfg, override_cfl=True)
        if args.command == "validate":
            return run_validate(cfg)
        out = output_dir(cfg, args.out)
        if args.command == "solve":
            return run_solve(cfg, out)[0]
        if args.command == "simulate":
            return run_simulate(cfg, out, args.from_dir)
        if args.command == "crosscheck":
            return run_crosscheck(cfg, out, args.from_dir)
        return run_all(cfg, out)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
