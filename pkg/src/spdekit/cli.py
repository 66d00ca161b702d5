"""``spdekit`` command line.

Subcommands: run (the experiment named in the config), convergence,
compare, darcy-precompute, dump-noise. Report files are deterministic for a
fixed configuration and seed; wall-clock information goes to a ``.log``
sidecar next to them.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

from .config import ConfigError, RunConfig, format_config, parse_config, set_value
from .darcy import reconstruct_velocity, solve_pressure, streak_permeability, write_darcy_csv
from .harness import RealizationFailure, compare_fem_fvm, run_convergence
from .mesh import write_mesh_csv
from .noise import generate_path, write_noise_csv

log = logging.getLogger("spdekit")

SUBCOMMANDS = ("run", "convergence", "compare", "darcy-precompute", "dump-noise")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdekit", description="Strong convergence experiments for semi-implicit SPDE schemes.")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="configuration file (defaults apply when omitted)")
        s.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        s.add_argument("--threads", type=int, help="worker threads for realization batches")
        s.add_argument("--out", type=Path, help="output directory")
        s.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    return p


def resolve_config(args) -> RunConfig:
    text = ""
    if args.config is not None:
        if not args.config.is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        text = args.config.read_text()
    cfg = parse_config(text)
    if args.seed is not None:
        set_value(cfg, "monte_carlo", "seed", str(args.seed), "cli")
    if args.threads is not None:
        set_value(cfg, "monte_carlo", "threads", str(args.threads), "cli")
    if args.out is not None:
        set_value(cfg, "output", "directory", str(args.out), "cli")
    if args.command != "run":
        cfg.experiment = args.command
        cfg.provenance["experiment"] = "cli"
    cfg.validate()
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory is not writable: {out}")
    return out


def _sidecar(out: Path, base: str, started: float, extra: dict | None = None) -> None:
    info = {"finished": datetime.now(timezone.utc).isoformat(), "wall_clock_s": round(time.perf_counter() - started, 3)}
    info.update(extra or {})
    (out / f"{base}.log").write_text(json.dumps(info, indent=2) + "\n")


def _progress(cfg):
    if cfg.verbosity < 2:
        return None
    return lambda done, total: log.info("batch %d/%d", done, total)


def cmd_convergence(cfg: RunConfig, out: Path, started: float) -> list[Path]:
    plan = cfg.plan()
    problem = plan.build_problem()
    files = []
    if cfg.dump_mesh:
        files += write_mesh_csv(problem.mesh, out / "mesh")
    try:
        report = run_convergence(plan, threads=cfg.threads, progress=_progress(cfg), problem=problem)
    except RealizationFailure as exc:
        if exc.partial is not None:
            paths = exc.partial.write(out, "partial")
            log.error("wrote partial results over %d realizations to %s", len(exc.partial.realizations), paths[0])
        raise
    files += report.write(out)
    for s, res in report.results.items():
        log.info("%s: rate %.3f +/- %.3f", s, res.rate, res.rate_halfwidth)
    _sidecar(out, report.basename(), started, {"realizations": len(report.realizations)})
    return files


def cmd_compare(cfg: RunConfig, out: Path, started: float) -> list[Path]:
    comp = compare_fem_fvm(cfg.plan(), threads=cfg.threads)
    files = comp.write(out)
    for s, d in comp.relative_discrepancy.items():
        log.info("%s: max relative FEM/FVM discrepancy %.3f", s, max(d))
    _sidecar(out, comp.fem.basename("compare"), started)
    return files


def cmd_darcy(cfg: RunConfig, out: Path, started: float) -> list[Path]:
    from .mesh import build_fv_grid

    mesh = build_fv_grid(cfg.L1, cfg.L2, cfg.nx, cfg.nx if cfg.ny is None else cfg.ny)
    perm = streak_permeability(mesh, contrast=cfg.contrast)
    p = solve_pressure(mesh, perm)
    vel = reconstruct_velocity(mesh, perm, p)
    files = write_darcy_csv(mesh, perm, p, vel, out / "darcy")
    if cfg.dump_mesh:
        files += write_mesh_csv(mesh, out / "mesh")
    _sidecar(out, "darcy", started)
    return files


def cmd_dump_noise(cfg: RunConfig, out: Path, started: float) -> list[Path]:
    plan = cfg.plan()
    problem = plan.build_problem()
    dt = float(plan.ref_dt)
    states = generate_path(problem.noise, dt, cfg.noise_steps, plan.seed)
    path = write_noise_csv(states, problem.noise.basis, out / f"noise_{plan.digest()}_seed{plan.seed}.csv")
    _sidecar(out, path.stem, started, {"dt": str(Fraction(plan.ref_dt)), "steps": cfg.noise_steps})
    return [path]


COMMANDS = {
    "convergence": cmd_convergence,
    "compare": cmd_compare,
    "darcy-precompute": cmd_darcy,
    "dump-noise": cmd_dump_noise,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"spdekit: error: {exc}", file=sys.stderr)
        return 1
    if args.print_config:
        sys.stdout.write(format_config(cfg))
        return 0
    level = {0: logging.WARNING, 1: logging.INFO}.get(cfg.verbosity, logging.DEBUG if cfg.verbosity > 1 else logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        out = _out_dir(cfg)
        files = COMMANDS[cfg.experiment](cfg, out, started)
        if cfg.dump_velocity and cfg.experiment != "darcy-precompute":
            files += cmd_darcy(cfg, out, started)
        if cfg.dump_noise and cfg.experiment != "dump-noise":
            files += cmd_dump_noise(cfg, out, started)
    except (OSError, RealizationFailure, ValueError) as exc:
        print(f"spdekit: error: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
