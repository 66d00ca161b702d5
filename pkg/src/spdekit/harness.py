"""Monte-Carlo strong convergence studies over a ladder of time steps.

Every realization draws one noise path on the finest grid. The reference
(exact oracle for the linear problem, modified scheme at the reference step
for the advection problem) and every scheme at every ladder step are run on
that same path, and squared discrete L2 errors at the final time are
accumulated per realization.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .problems import build_adr_darcy, build_linear_rd
from .schemes import ProblemDef, simulate_ensemble

PROBLEMS = ("linear_rd", "adr_darcy")
SPACES = ("fem", "fvm")
COUPLINGS = ("coupled", "independent")
RUN_SCHEMES = ("modified", "standard")


class PlanError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, float):
        return Fraction(x).limit_denominator(1 << 40)
    return Fraction(x)


@dataclass(frozen=True)
class ExperimentPlan:
    problem: str = "linear_rd"
    space: str = "fem"
    nx: int = 50
    ny: int = 50
    n_modes: int = 50
    r: int = 2
    delta: float = 0.05
    dt_ladder: tuple = tuple(Fraction(1, 2 ** k) for k in range(5, 10))
    # None: the finest ladder step (linear) or finest / 8 (advection problem)
    reference_dt: Fraction | None = None
    realizations: int = 30
    seed: int = 0
    coupling: str = "coupled"
    T: Fraction = Fraction(1)
    schemes: tuple = RUN_SCHEMES
    # None selects the problem default (1 for linear_rd, 0.01 for adr_darcy)
    diffusion: float | None = None
    reaction: float = 0.5
    reaction_mode: str = "explicit"
    max_speed: float | None = 1.0
    contrast: float = 100.0
    q00: float = 1.0
    L1: float = 1.0
    L2: float = 1.0
    solver: str = "direct"
    batch_size: int = 10

    def __post_init__(self):
        object.__setattr__(self, "dt_ladder", tuple(sorted((_frac(d) for d in self.dt_ladder), reverse=True)))
        object.__setattr__(self, "T", _frac(self.T))
        if self.reference_dt is not None:
            object.__setattr__(self, "reference_dt", _frac(self.reference_dt))
        object.__setattr__(self, "schemes", tuple(self.schemes))

    @property
    def ref_dt(self) -> Fraction:
        if self.reference_dt is not None:
            return self.reference_dt
        finest = min(self.dt_ladder)
        return finest if self.problem == "linear_rd" else finest / 8

    @property
    def reference_kind(self) -> str:
        return "exact" if self.problem == "linear_rd" else "modified"

    def validate(self) -> None:
        """Raise ``PlanError`` naming the field of the first violated constraint."""
        def need(ok, name, msg):
            if not ok:
                raise PlanError(name, msg)

        need(self.problem in PROBLEMS, "problem", f"must be one of {PROBLEMS}, got {self.problem!r}")
        need(self.space in SPACES, "space", f"must be one of {SPACES}, got {self.space!r}")
        need(self.problem != "adr_darcy" or self.space == "fvm", "space",
             "adr_darcy is implemented with finite volumes only")
        need(self.r in (1, 2), "r", f"must be in {{1, 2}}, got {self.r}")
        need(self.delta > 0, "delta", "must be positive")
        need(min(self.nx, self.ny, self.n_modes) >= 1, "nx", "nx, ny and n_modes must be positive")
        need(self.realizations >= 2, "realizations", "at least 2 realizations are needed")
        need(self.coupling in COUPLINGS, "coupling", f"must be one of {COUPLINGS}")
        need(bool(self.schemes) and all(s in RUN_SCHEMES for s in self.schemes), "schemes",
             f"must be a non-empty subset of {RUN_SCHEMES}")
        need(bool(self.dt_ladder) and all(d > 0 for d in self.dt_ladder), "dt_ladder", "must hold positive steps")
        need(self.T > 0, "T", "must be positive")
        need(self.batch_size >= 1, "batch_size", "must be positive")
        ref = self.ref_dt
        need((self.T / ref).denominator == 1, "reference_dt", f"{ref} does not divide T = {self.T}")
        for d in self.dt_ladder:
            need((d / ref).denominator == 1, "dt_ladder",
                 f"dt {d} is not an integer multiple of the reference dt {ref}")
        # adjacent steps must nest so every coarse grid is a subgrid of the next finer one
        for coarse, fine in zip(self.dt_ladder, self.dt_ladder[1:]):
            need((coarse / fine).denominator == 1, "dt_ladder",
                 f"dt {coarse} is not an integer multiple of the finer ladder step {fine}")

    def build_problem(self, space: str | None = None) -> ProblemDef:
        space = space or self.space
        if self.problem == "linear_rd":
            return build_linear_rd(space, self.nx, self.ny, self.n_modes, self.r, self.delta,
                                   1.0 if self.diffusion is None else self.diffusion, self.reaction,
                                   self.reaction_mode, self.L1, self.L2, self.q00, solver=self.solver)
        return build_adr_darcy(self.nx, self.ny, self.n_modes, self.r, self.delta,
                               0.01 if self.diffusion is None else self.diffusion,
                               max_speed=self.max_speed, contrast=self.contrast, L1=self.L1, L2=self.L2,
                               q00=self.q00, solver=self.solver)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dt_ladder"] = [str(x) for x in self.dt_ladder]
        d["reference_dt"] = None if self.reference_dt is None else str(self.reference_dt)
        d["T"] = str(self.T)
        d["schemes"] = list(self.schemes)
        return d

    def digest(self) -> str:
        """Hash of everything that affects the numbers."""
        d = self.to_dict()
        d.pop("batch_size")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:10]


def estimate_rms_error(errors: Sequence[float]) -> tuple[float, float]:
    """Root mean square and its standard error (delta method on the mean of squares)."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("no errors given")
    if e.size < 2:
        raise ValueError("at least two samples are needed for a standard error")
    sq = e * e
    ms = math.fsum(sq) / sq.size
    rms = math.sqrt(ms)
    if rms == 0.0:
        return 0.0, 0.0
    var = math.fsum((sq - ms) ** 2) / (sq.size - 1)
    se_ms = math.sqrt(var / sq.size)
    return rms, se_ms / (2.0 * rms)


def fit_rate(dts: Sequence[float], errors: Sequence[float],
             std_errors: Sequence[float] | None = None) -> tuple[float, float]:
    """Slope of log(error) against log(dt) and a 95% half-width.

    With standard errors for every point the fit is weighted by
    ``(rms / se)^2`` (the inverse variance of log rms); otherwise it is
    ordinary least squares with the half-width taken from the residuals.
    """
    x = np.log(np.asarray(dts, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    n = len(x)
    if n < 2:
        raise ValueError("need at least two points to fit a rate")
    if std_errors is not None and np.all(np.asarray(std_errors) > 0):
        w = (np.asarray(errors) / np.asarray(std_errors)) ** 2
    else:
        w = None
    ww = np.ones(n) if w is None else w
    xm = np.sum(ww * x) / ww.sum()
    ym = np.sum(ww * y) / ww.sum()
    sxx = np.sum(ww * (x - xm) ** 2)
    slope = float(np.sum(ww * (x - xm) * (y - ym)) / sxx)
    resid = y - (ym + slope * (x - xm))
    dof = max(n - 2, 1)
    chi2 = float(np.sum(ww * resid ** 2)) / dof
    if w is None:
        var = chi2 / sxx
    else:
        var = max(1.0, chi2) / sxx
    return slope, 1.96 * math.sqrt(var)


@dataclass
class SchemeResult:
    scheme: str
    dts: list
    rms: list
    std_error: list
    rate: float
    rate_halfwidth: float

    def rate_without_coarsest(self) -> tuple[float, float]:
        return fit_rate(self.dts[1:], self.rms[1:], self.std_error[1:])


@dataclass
class ConvergenceReport:
    plan: ExperimentPlan
    results: dict
    squared_errors: dict
    realizations: list
    seeds: dict
    reference: str
    space: str
    wall_clock: float = 0.0
    notes: list = field(default_factory=list)

    def rows(self) -> list[tuple]:
        out = []
        for s, res in self.results.items():
            for dt, e, se in zip(res.dts, res.rms, res.std_error):
                out.append((s, dt, e, se))
        return out

    def summary(self) -> dict:
        return {
            "version": __version__,
            "plan": self.plan.to_dict(),
            "plan_hash": self.plan.digest(),
            "space": self.space,
            "reference": self.reference,
            "coupling": self.plan.coupling,
            "realizations": len(self.realizations),
            "seeds": self.seeds,
            "rates": {s: {"rate": r.rate, "halfwidth": r.rate_halfwidth} for s, r in self.results.items()},
            "errors": {s: [{"dt": str(Fraction(d).limit_denominator(1 << 40)), "rms_error": e, "std_error": se}
                           for d, e, se in zip(r.dts, r.rms, r.std_error)] for s, r in self.results.items()},
            "notes": self.notes,
        }

    def basename(self, kind: str = "convergence") -> str:
        return f"{kind}_{self.plan.problem}_{self.space}_{self.plan.digest()}_seed{self.plan.seed}"

    def write(self, directory: str | Path, kind: str = "convergence") -> list[Path]:
        """CSV (scheme, dt, rms_error, std_error) and JSON summary; no timestamps."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        base = self.basename(kind)
        csv_path = directory / f"{base}.csv"
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["scheme", "dt", "rms_error", "std_error"])
            for s, dt, e, se in self.rows():
                w.writerow([s, repr(float(dt)), repr(float(e)), repr(float(se))])
        json_path = directory / f"{base}_summary.json"
        json_path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return [csv_path, json_path]


class RealizationFailure(RuntimeError):
    """A realization batch failed; ``partial`` holds the report over completed batches."""

    def __init__(self, msg, partial: ConvergenceReport | None):
        super().__init__(msg)
        self.partial = partial


def _batches(n: int, size: int) -> list[np.ndarray]:
    idx = np.arange(n)
    return [idx[i:i + size] for i in range(0, n, size)]


def _assemble_report(plan, space, sq: dict, done: np.ndarray, wall: float) -> ConvergenceReport:
    results = {}
    real = np.flatnonzero(done)
    for s in plan.schemes:
        rms, ses = [], []
        for d in plan.dt_ladder:
            e = np.sqrt(sq[s][d][real])
            m, se = estimate_rms_error(e) if len(e) >= 2 else (float(np.sqrt(np.mean(e ** 2))), 0.0)
            rms.append(m)
            ses.append(se)
        dts = [float(d) for d in plan.dt_ladder]
        if len(dts) >= 2 and all(v > 0 for v in rms):
            rate, hw = fit_rate(dts, rms, ses)
        else:
            rate, hw = float("nan"), float("nan")
        results[s] = SchemeResult(s, dts, rms, ses, rate, hw)
    streams = {s: (0 if plan.coupling == "coupled" else i) for i, s in enumerate(plan.schemes)}
    notes = []
    if len(plan.dt_ladder) < 3:
        notes.append("rate fitted on fewer than 3 ladder points")
    return ConvergenceReport(
        plan, results, {s: {str(d): sq[s][d][real].tolist() for d in plan.dt_ladder} for s in plan.schemes},
        real.tolist(), {"base_seed": plan.seed, "streams": streams}, plan.reference_kind, space, wall, notes)


def run_convergence(plan: ExperimentPlan, space: str | None = None, threads: int = 1,
                    progress: Callable[[int, int], None] | None = None,
                    problem: ProblemDef | None = None) -> ConvergenceReport:
    """Strong errors at T for every scheme and ladder step, plus fitted rates."""
    plan.validate()
    space = space or plan.space
    t0 = time.perf_counter()
    problem = problem or plan.build_problem(space)
    ref = plan.ref_dt
    n_fine = int(plan.T / ref)
    factors = [int(d / ref) for d in plan.dt_ladder]
    # factor every implicit operator up front so worker threads only read them
    for d in plan.dt_ladder:
        problem.step_operator(float(d))
    if plan.reference_kind == "modified":
        problem.step_operator(float(ref))

    if plan.coupling == "coupled":
        runs = [(tuple(plan.schemes), 0)]
    else:
        runs = [((s,), i) for i, s in enumerate(plan.schemes)]

    R = plan.realizations
    sq = {s: {d: np.full(R, np.nan) for d in plan.dt_ladder} for s in plan.schemes}
    done = np.zeros(R, dtype=bool)
    jobs = [(schemes, stream, b) for schemes, stream in runs for b in _batches(R, plan.batch_size)]
    completed = [0]

    def work(job):
        schemes, stream, batch = job
        res = simulate_ensemble(problem, float(ref), n_fine, factors, schemes, plan.seed, batch,
                                reference=plan.reference_kind, stream=stream)
        out = {}
        for s in schemes:
            for d, f in zip(plan.dt_ladder, factors):
                out[s, d] = problem.norm(res.finals[s, f] - res.reference) ** 2
        return schemes, batch, out

    def collect(result):
        schemes, batch, out = result
        for (s, d), v in out.items():
            sq[s][d][batch] = v
        if all(np.all(np.isfinite(sq[s][plan.dt_ladder[0]][batch])) for s in plan.schemes):
            done[batch] = True
        completed[0] += 1
        if progress:
            progress(completed[0], len(jobs))

    try:
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                for result in ex.map(work, jobs):
                    collect(result)
        else:
            for job in jobs:
                collect(work(job))
    except Exception as exc:
        partial = _assemble_report(plan, space, sq, done, time.perf_counter() - t0) if done.sum() >= 2 else None
        raise RealizationFailure(f"realization batch failed: {exc}", partial) from exc
    return _assemble_report(plan, space, sq, done, time.perf_counter() - t0)


@dataclass
class Comparison:
    fem: ConvergenceReport
    fvm: ConvergenceReport
    # scheme -> per-dt |fem - fvm| / max(fem, fvm)
    relative_discrepancy: dict

    def summary(self) -> dict:
        return {
            "fem_hash": self.fem.plan.digest(),
            "relative_discrepancy": self.relative_discrepancy,
            "max_relative_discrepancy": {s: max(v) for s, v in self.relative_discrepancy.items()},
            "rates": {"fem": self.fem.summary()["rates"], "fvm": self.fvm.summary()["rates"]},
        }

    def write(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        paths = self.fem.write(directory, "compare") + self.fvm.write(directory, "compare")
        base = f"compare_{self.fem.plan.problem}_{self.fem.plan.digest()}_seed{self.fem.plan.seed}"
        p = directory / f"{base}_discrepancy.csv"
        with open(p, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["scheme", "dt", "rms_fem", "rms_fvm", "relative_discrepancy"])
            for s, disc in self.relative_discrepancy.items():
                a, b = self.fem.results[s], self.fvm.results[s]
                for dt, ea, eb, rd in zip(a.dts, a.rms, b.rms, disc):
                    w.writerow([s, repr(dt), repr(ea), repr(eb), repr(rd)])
        return paths + [p]


def compare_fem_fvm(plan: ExperimentPlan, threads: int = 1) -> Comparison:
    """Run the same plan with both space discretizations on identical noise paths."""
    if plan.problem != "linear_rd":
        raise ValueError("the FEM/FVM comparison is defined for the linear problem")
    fem = run_convergence(plan, "fem", threads)
    fvm = run_convergence(plan, "fvm", threads)
    disc = {}
    for s in plan.schemes:
        a, b = fem.results[s].rms, fvm.results[s].rms
        disc[s] = [abs(x - y) / max(x, y) for x, y in zip(a, b)]
    return Comparison(fem, fvm, disc)
