"""Time stepping: the modified semi-implicit scheme, the standard
semi-implicit Euler-Maruyama baseline and the exact linear oracle.

All steps act on blocks of shape (n_dofs, R), one column per realization.
The modified step is

    X_{m+1} = S (X_m + dt F(X_m) - O(t_m)) + O(t_{m+1}),

the standard step

    X_{m+1} = S (X_m + dt F(X_m) + dW_m),

with ``S = (I - dt A_h)^{-1}`` and the noise fields sampled at the degrees of
freedom.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fem import ImplicitStep
from .mesh import Mesh
from .noise import GridEvaluator, NoiseModel, ou_step
from .sparse import SparseMatrix

SCHEMES = ("modified", "standard", "exact_linear")


@dataclass(eq=False)
class ProblemDef:
    name: str
    mesh: Mesh
    mass: SparseMatrix
    implicit_factory: Callable[[float], ImplicitStep]
    F: Callable[[np.ndarray], np.ndarray]
    noise: NoiseModel
    X0: np.ndarray
    # F(u) = -linear_reaction * u for linear problems, None otherwise
    linear_reaction: float | None = None
    # OU channel holding the exact solution's convolution (linear problems)
    exact_channel: int | None = None
    lipschitz: float | None = None
    step_check: Callable[[float], None] | None = None
    meta: dict = field(default_factory=dict)
    _steps: dict = field(default_factory=dict, repr=False)
    _evaluator: GridEvaluator | None = field(default=None, repr=False)

    def __post_init__(self):
        f0 = self.F(np.zeros((self.n_dofs, 1)))
        if not np.all(np.isfinite(f0)):
            raise ValueError("F(0) is not finite")

    @property
    def n_dofs(self) -> int:
        return self.mass.n_rows

    @property
    def is_linear(self) -> bool:
        return self.linear_reaction is not None

    def step_operator(self, dt: float) -> ImplicitStep:
        key = float(dt)
        if key not in self._steps:
            if self.step_check is not None:
                self.step_check(key)
            self._steps[key] = self.implicit_factory(key)
        return self._steps[key]

    def noise_field(self, coeffs: np.ndarray) -> np.ndarray:
        """Noise coefficients (R, modes) to dof values (n, R): realises P_h P_N."""
        if self._evaluator is None:
            self._evaluator = GridEvaluator(self.noise.basis, *self.mesh.dof_axes)
        return self._evaluator(coeffs)

    def norm(self, v: np.ndarray) -> np.ndarray:
        """Discrete L2 norm, column-wise."""
        return np.sqrt(np.einsum("i...,i...->...", v, self.mass @ v))

    def lipschitz_spot_check(self, n_pairs: int = 20, seed: int = 0) -> float:
        """Largest observed ``|F(a) - F(b)| / |a - b|`` in the discrete L2 norm."""
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((self.n_dofs, n_pairs))
        b = rng.standard_normal((self.n_dofs, n_pairs))
        return float(np.max(self.norm(self.F(a) - self.F(b)) / self.norm(a - b)))


@dataclass
class SchemeState:
    X: np.ndarray
    m: int
    t: float
    scheme: str


def _block(X):
    return X if X.ndim == 2 else X[:, None]


def modified_step(state: SchemeState, problem: ProblemDef, noise_now: np.ndarray,
                  noise_next: np.ndarray, dt: float) -> SchemeState:
    """One step of the modified scheme; ``noise_now``/``noise_next`` are O(t_m), O(t_{m+1}) at the dofs."""
    S = problem.step_operator(dt)
    X = state.X
    X1 = S.apply(X + dt * _shape_like(problem.F(_block(X)), X) - noise_now) + noise_next
    return SchemeState(X1, state.m + 1, (state.m + 1) * dt, "modified")


def standard_step(state: SchemeState, problem: ProblemDef, brownian_increment: np.ndarray,
                  dt: float) -> SchemeState:
    """One step of the standard semi-implicit Euler-Maruyama scheme."""
    S = problem.step_operator(dt)
    X = state.X
    X1 = S.apply(X + dt * _shape_like(problem.F(_block(X)), X) + brownian_increment)
    return SchemeState(X1, state.m + 1, (state.m + 1) * dt, "standard")


def _shape_like(Y, X):
    return Y[:, 0] if X.ndim == 1 else Y


def exact_linear_path(problem: ProblemDef, O: np.ndarray) -> np.ndarray:
    """Exact solution at the dofs from the noise state's OU channels ``O`` (n_ou, R, modes).

    Requires a linear problem with zero initial value; the solution is the
    convolution with the full linear semigroup, carried by ``exact_channel``.
    """
    if not problem.is_linear or problem.exact_channel is None:
        raise ValueError("exact_linear_path needs a linear problem")
    if np.any(problem.X0 != 0):
        raise ValueError("exact_linear_path assumes X0 = 0")
    return problem.noise_field(O[problem.exact_channel])


def initial_state(problem: ProblemDef, R: int, scheme: str) -> SchemeState:
    X = np.repeat(problem.X0[:, None], R, axis=1).astype(float)
    return SchemeState(X, 0, 0.0, scheme)


def run_realization(problem: ProblemDef, dt: float, n_steps: int, seed: int, scheme: str = "modified",
                    realization: int = 0, stream: int = 0, snapshot_steps: Sequence[int] = (),
                    snapshots: list | None = None) -> SchemeState:
    """Drive one realization over ``n_steps`` steps of size ``dt``.

    Deterministic in (seed, realization, stream). States at ``snapshot_steps``
    are appended to ``snapshots`` as (step, X) pairs.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    state = initial_state(problem, 1, scheme)
    snap = set(snapshot_steps)
    if snapshots is not None and 0 in snap:
        snapshots.append((0, state.X[:, 0].copy()))
    noise = problem.noise.initial_state(seed, [realization], stream)
    O_now = np.zeros((problem.n_dofs, 1))
    for _ in range(n_steps):
        noise = ou_step(problem.noise, noise, dt)
        if scheme == "modified":
            O_next = problem.noise_field(noise.O[0])
            state = modified_step(state, problem, O_now, O_next, dt)
            O_now = O_next
        elif scheme == "standard":
            state = standard_step(state, problem, problem.noise_field(noise.dW), dt)
        else:
            state = SchemeState(exact_linear_path(problem, noise.O), state.m + 1, (state.m + 1) * dt, scheme)
        if snapshots is not None and state.m in snap:
            snapshots.append((state.m, state.X[:, 0].copy()))
    state.X = state.X[:, 0]
    return state


@dataclass
class EnsembleResult:
    # (scheme, factor) -> (n, R) solution at T
    finals: dict
    reference: np.ndarray | None
    realizations: np.ndarray
    max_iterations: int = 0


def simulate_ensemble(problem: ProblemDef, dt_fine: float, n_fine: int, factors: Sequence[int],
                      schemes: Sequence[str], seed: int, realizations: Sequence[int],
                      reference: str | None = "exact", stream: int = 0) -> EnsembleResult:
    """Run every scheme at every coarse step ``factor * dt_fine`` on one fine noise path.

    The coarse modified scheme reads O at its own step times (the OU recursion
    is exact, so subsampling needs no re-randomization); the coarse standard
    scheme sums the fine Brownian increments of each coarse interval.
    ``reference`` is ``"exact"`` (linear oracle), ``"modified"`` (modified
    scheme at ``dt_fine``) or None.
    """
    factors = [int(f) for f in factors]
    for f in factors:
        if f < 1 or n_fine % f:
            raise ValueError(f"factor {f} does not divide the {n_fine} fine steps")
    for s in schemes:
        if s not in ("modified", "standard"):
            raise ValueError(f"unknown scheme {s!r}")
    real = np.asarray(realizations, dtype=np.int64)
    R = len(real)
    n = problem.n_dofs

    X = {(s, f): np.repeat(problem.X0[:, None], R, axis=1).astype(float) for s in schemes for f in factors}
    O_prev = {f: np.zeros((n, R)) for f in factors}
    dW_acc = {f: np.zeros((R, problem.noise.n_modes)) for f in factors if "standard" in schemes}
    ref_X = ref_O = None
    if reference == "modified":
        ref_X = np.repeat(problem.X0[:, None], R, axis=1).astype(float)
        ref_O = np.zeros((n, R))
    elif reference == "exact":
        exact_linear_path(problem, np.zeros((len(problem.noise.rates), 1, problem.noise.n_modes)))
    elif reference is not None:
        raise ValueError(f"unknown reference {reference!r}")

    max_it = 0
    noise = problem.noise.initial_state(seed, real, stream)
    for k in range(1, n_fine + 1):
        noise = ou_step(problem.noise, noise, dt_fine)
        for f in dW_acc:
            dW_acc[f] += noise.dW
        O_field = None
        if reference == "modified" or "modified" in schemes and any(k % f == 0 for f in factors):
            O_field = problem.noise_field(noise.O[0])
        if reference == "modified":
            st = modified_step(SchemeState(ref_X, k - 1, 0.0, "modified"), problem, ref_O, O_field, dt_fine)
            ref_X, ref_O = st.X, O_field
            max_it = max(max_it, problem.step_operator(dt_fine).last_iterations)
        for f in factors:
            if k % f:
                continue
            dt = f * dt_fine
            m = k // f - 1
            if "modified" in schemes:
                st = modified_step(SchemeState(X["modified", f], m, 0.0, "modified"), problem,
                                   O_prev[f], O_field, dt)
                X["modified", f] = st.X
                O_prev[f] = O_field
            if "standard" in schemes:
                st = standard_step(SchemeState(X["standard", f], m, 0.0, "standard"), problem,
                                   problem.noise_field(dW_acc[f]), dt)
                X["standard", f] = st.X
                dW_acc[f] = np.zeros_like(dW_acc[f])
            max_it = max(max_it, problem.step_operator(dt).last_iterations)
    if reference == "exact":
        ref_X = exact_linear_path(problem, noise.O)
    return EnsembleResult(X, ref_X, real, max_it)
