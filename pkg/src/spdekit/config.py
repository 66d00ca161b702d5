"""Sectioned ``key = value`` run configuration.

Grammar (one item per line)::

    # comment            ; also a comment
    [section]
    key = value

Sections: problem, space, noise, time, monte_carlo, output. Values are
integers, decimals, fractions (``1/64``), booleans (``true``/``false``),
``none``, bare words, or lists in brackets (``[1/32, 1/64]``). Unknown
sections or keys are errors. Environment variables of the form
``SPDEKIT_<SECTION>__<KEY>`` override the file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Any, Callable, Mapping

from .harness import COUPLINGS, PROBLEMS, RUN_SCHEMES, SPACES, ExperimentPlan, PlanError
from .fem import SOLVERS

ENV_PREFIX = "SPDEKIT_"
EXPERIMENTS = ("convergence", "compare", "darcy-precompute", "dump-noise")

LINEAR_LADDER = tuple(Fraction(1, 2 ** k) for k in range(5, 10))
ADR_LADDER = tuple(Fraction(1, 2 ** k) for k in range(6, 10))


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{key}: {msg}")
        self.key = key
        self.line = line


def _int(s: str) -> int:
    return int(s, 0)


def _float(s: str) -> float:
    return float(Fraction(s)) if "/" in s else float(s)


def _frac(s: str) -> Fraction:
    return Fraction(s)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _word(s: str) -> str:
    if not s or any(c in s for c in "[],="):
        raise ValueError(f"expected a bare word, got {s!r}")
    return s


def _opt(conv):
    def parse(s):
        return None if s.lower() == "none" else conv(s)
    return parse


def _list(conv):
    def parse(s):
        s = s.strip()
        if not (s.startswith("[") and s.endswith("]")):
            raise ValueError(f"expected a bracketed list, got {s!r}")
        body = s[1:-1].strip()
        return tuple(conv(x.strip()) for x in body.split(",")) if body else ()
    return parse


def _choice(conv, allowed):
    def parse(s):
        v = conv(s)
        if v not in allowed:
            raise ValueError(f"must be one of {{{', '.join(map(str, allowed))}}}, got {s}")
        return v
    return parse


def _positive(conv):
    def parse(s):
        v = conv(s)
        if v <= 0:
            raise ValueError(f"must be positive, got {s}")
        return v
    return parse


# (section, key) -> (RunConfig attribute, parser)
SCHEMA: dict[tuple[str, str], tuple[str, Callable[[str], Any]]] = {
    ("problem", "experiment"): ("experiment", _choice(_word, EXPERIMENTS)),
    ("problem", "name"): ("problem", _choice(_word, PROBLEMS)),
    ("problem", "diffusion"): ("diffusion", _opt(_positive(_float))),
    ("problem", "reaction"): ("reaction", _float),
    ("problem", "reaction_mode"): ("reaction_mode", _choice(_word, ("explicit", "implicit"))),
    ("problem", "max_speed"): ("max_speed", _opt(_positive(_float))),
    ("problem", "contrast"): ("contrast", _positive(_float)),
    ("space", "discretization"): ("space", _choice(_word, SPACES)),
    ("space", "nx"): ("nx", _positive(_int)),
    ("space", "ny"): ("ny", _opt(_positive(_int))),
    ("space", "L1"): ("L1", _positive(_float)),
    ("space", "L2"): ("L2", _positive(_float)),
    ("space", "solver"): ("solver", _choice(_word, SOLVERS)),
    ("noise", "N"): ("n_modes", _opt(_positive(_int))),
    ("noise", "r"): ("r", _choice(_int, (1, 2))),
    ("noise", "delta"): ("delta", _positive(_float)),
    ("noise", "q00"): ("q00", _float),
    ("time", "T"): ("T", _positive(_frac)),
    ("time", "dt_ladder"): ("dt_ladder", _opt(_list(_positive(_frac)))),
    ("time", "reference_dt"): ("reference_dt", _opt(_positive(_frac))),
    ("monte_carlo", "realizations"): ("realizations", _opt(_int)),
    ("monte_carlo", "seed"): ("seed", _int),
    ("monte_carlo", "coupling"): ("coupling", _choice(_word, COUPLINGS)),
    ("monte_carlo", "schemes"): ("schemes", _list(_choice(_word, RUN_SCHEMES))),
    ("monte_carlo", "batch_size"): ("batch_size", _positive(_int)),
    ("monte_carlo", "threads"): ("threads", _positive(_int)),
    ("output", "directory"): ("out_dir", str),
    ("output", "verbosity"): ("verbosity", _int),
    ("output", "dump_mesh"): ("dump_mesh", _bool),
    ("output", "dump_noise"): ("dump_noise", _bool),
    ("output", "dump_velocity"): ("dump_velocity", _bool),
    ("output", "noise_steps"): ("noise_steps", _positive(_int)),
}
SECTIONS = tuple(dict.fromkeys(s for s, _ in SCHEMA))
_ATTR_KEY = {attr: key for key, (attr, _) in SCHEMA.items()}


@dataclass
class RunConfig:
    experiment: str = "convergence"
    problem: str = "linear_rd"
    diffusion: float | None = None
    reaction: float = 0.5
    reaction_mode: str = "explicit"
    max_speed: float | None = 1.0
    contrast: float = 100.0
    # ignored for adr_darcy, which always uses finite volumes
    space: str = "fem"
    nx: int = 50
    ny: int | None = None
    L1: float = 1.0
    L2: float = 1.0
    solver: str = "direct"
    n_modes: int | None = None
    r: int = 2
    delta: float = 0.05
    q00: float = 1.0
    T: Fraction = Fraction(1)
    # None: problem default (1/32..1/512 linear, 1/64..1/512 advection)
    dt_ladder: tuple | None = None
    reference_dt: Fraction | None = None
    # None: 30 for the linear problem, 100 for the advection problem
    realizations: int | None = None
    seed: int = 0
    coupling: str = "coupled"
    schemes: tuple = RUN_SCHEMES
    batch_size: int = 10
    threads: int = 1
    out_dir: str = "results"
    verbosity: int = 1
    dump_mesh: bool = False
    dump_noise: bool = False
    dump_velocity: bool = False
    noise_steps: int = 16
    # attribute -> "default" | "file" | "env" | "cli"
    provenance: dict = field(default_factory=dict, compare=False, repr=False)

    def plan(self) -> ExperimentPlan:
        adr = self.problem == "adr_darcy"
        ladder = self.dt_ladder if self.dt_ladder is not None else (ADR_LADDER if adr else LINEAR_LADDER)
        return ExperimentPlan(
            problem=self.problem, space="fvm" if adr else self.space, nx=self.nx,
            ny=self.nx if self.ny is None else self.ny,
            n_modes=self.nx if self.n_modes is None else self.n_modes, r=self.r, delta=self.delta,
            dt_ladder=ladder, reference_dt=self.reference_dt,
            realizations=self.realizations if self.realizations is not None else (100 if adr else 30),
            seed=self.seed, coupling=self.coupling, T=self.T, schemes=self.schemes,
            diffusion=self.diffusion, reaction=self.reaction, reaction_mode=self.reaction_mode,
            max_speed=self.max_speed, contrast=self.contrast, q00=self.q00, L1=self.L1, L2=self.L2,
            solver=self.solver, batch_size=self.batch_size)

    def validate(self) -> None:
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("monte_carlo.seed", "seed must be an unsigned 64-bit integer")
        try:
            self.plan().validate()
        except PlanError as exc:
            section, key = _ATTR_KEY.get(exc.field, ("plan", exc.field))
            raise ConfigError(f"{section}.{key}", str(exc)) from None


def set_value(cfg: RunConfig, section: str, key: str, raw: str, source: str, line: int | None = None) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"[{section}]", f"unknown section (allowed: {', '.join(SECTIONS)})", line)
    if (section, key) not in SCHEMA:
        raise ConfigError(f"{section}.{key}", "unknown key", line)
    attr, conv = SCHEMA[section, key]
    try:
        value = conv(raw.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{section}.{key}", str(exc), line) from None
    setattr(cfg, attr, value)
    cfg.provenance[attr] = source


def parse_config(text: str, env: Mapping[str, str] | None = None) -> RunConfig:
    """Parse and validate a configuration document; ``env`` overrides apply last."""
    cfg = RunConfig()
    cfg.provenance = {f.name: "default" for f in fields(RunConfig) if f.name != "provenance"}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(line, "malformed section header", lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"[{section}]", f"unknown section (allowed: {', '.join(SECTIONS)})", lineno)
            continue
        if "=" not in line:
            raise ConfigError(line, "expected 'key = value'", lineno)
        if section is None:
            raise ConfigError(line, "key outside of any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        set_value(cfg, section, key, value, "file", lineno)
    apply_env(cfg, os.environ if env is None else env)
    cfg.validate()
    return cfg


def apply_env(cfg: RunConfig, env: Mapping[str, str]) -> None:
    for name, value in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            raise ConfigError(name, f"expected {ENV_PREFIX}<SECTION>__<KEY>")
        section, key = rest.split("__", 1)
        section = section.lower()
        match = [k for s, k in SCHEMA if s == section and k.lower() == key.lower()]
        set_value(cfg, section, match[0] if match else key, value, "env")


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: RunConfig, annotate: bool = True) -> str:
    """Render every setting; the output parses back to an equal config."""
    out = []
    for section in SECTIONS:
        out.append(f"[{section}]")
        for (s, key), (attr, _) in SCHEMA.items():
            if s != section:
                continue
            line = f"{key} = {_fmt(getattr(cfg, attr))}"
            if annotate:
                line += f"  # {cfg.provenance.get(attr, 'default')}"
            out.append(line)
        out.append("")
    return "\n".join(out)
