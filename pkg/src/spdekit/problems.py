"""Problem builders for the two benchmark equations.

``linear_rd``:  dX = (D Lap X - c X) dt + dW, homogeneous Neumann, X0 = 0.
``adr_darcy``:  dX = (D Lap X - div(q X) - X / (|X| + 1)) dt + dW with
X = 1 on the left side, no-flux elsewhere and q a Darcy velocity through a
medium with three high-permeability streaks.
"""
from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.sparse as sp

from .darcy import reconstruct_velocity, solve_pressure, streak_permeability
from .fem import ImplicitStep, OperatorSpec, assemble, implicit_step
from .fvm import assemble_tpfa, nonlinear_reaction, upwind_advection, upwind_inflow
from .mesh import build_fv_grid, build_uniform_triangulation
from .noise import NoiseModel, NoiseSpec, SpectralBasis
from .schemes import ProblemDef
from .sparse import SparseMatrix

log = logging.getLogger(__name__)

REACTION_MODES = ("explicit", "implicit")


def build_linear_rd(space: str = "fem", nx: int = 50, ny: int | None = None, n_modes: int | None = None,
                    r: float = 2, delta: float = 0.05, diffusion: float = 1.0, reaction: float = 0.5,
                    reaction_mode: str = "explicit", L1: float = 1.0, L2: float = 1.0,
                    q00: float = 1.0, epsilon: float = 0.0, tol: float = 1e-10,
                    solver: str = "direct") -> ProblemDef:
    """Linear reaction-diffusion benchmark.

    With ``reaction_mode="explicit"`` the reaction sits in F and the
    convolution uses the rates of ``D Lap`` alone; the exact solution is then
    carried as a second OU channel with rates ``D lambda + c`` on the same
    Brownian motions. ``"implicit"`` moves the reaction into both the implicit
    matrix and the convolution, which makes the modified scheme exact in time
    for X0 = 0. ``epsilon`` shifts the convolution rates by ``+epsilon`` (the
    perturbed operator) and compensates in F.
    """
    ny = nx if ny is None else ny
    n_modes = nx if n_modes is None else n_modes
    if reaction_mode not in REACTION_MODES:
        raise ValueError(f"reaction_mode must be one of {REACTION_MODES}")
    if reaction < 0 or epsilon < 0:
        raise ValueError("reaction and epsilon must be non-negative")
    implicit_c = (reaction if reaction_mode == "implicit" else 0.0) + epsilon
    explicit_c = reaction if reaction_mode == "explicit" else 0.0

    if space == "fem":
        mesh = build_uniform_triangulation(L1, L2, nx, ny)
        op = assemble(mesh, OperatorSpec(diffusion=diffusion, d00=-implicit_c))
        mass = op.M
        factory = lambda dt: implicit_step(op, dt, tol, solver)
    elif space == "fvm":
        mesh = build_fv_grid(L1, L2, nx, ny)
        tp = assemble_tpfa(mesh, diffusion)
        mass = tp.mass
        Mc, Kc = mass.to_scipy(), tp.K_neumann.to_scipy()
        factory = lambda dt: ImplicitStep(
            SparseMatrix.from_scipy(Mc * (1 + dt * implicit_c) + dt * Kc, True), mass, tol=tol, solver=solver)
    else:
        raise ValueError(f"unknown space discretization {space!r}")

    basis = SpectralBasis(n_modes, L1, L2)
    spec = NoiseSpec(r=r, delta=delta, diffusion=diffusion, rate_shift=implicit_c, q00=q00)
    exact_rates = diffusion * basis.eigenvalues.ravel() + reaction
    if np.array_equal(exact_rates, spec.rates(basis).ravel()):
        noise, exact_channel = NoiseModel(basis, spec), 0
    else:
        noise, exact_channel = NoiseModel(basis, spec, [exact_rates]), 1

    c_eff = explicit_c - epsilon

    def F(X):
        return -c_eff * X

    return ProblemDef(
        name="linear_rd", mesh=mesh, mass=mass, implicit_factory=factory, F=F, noise=noise,
        X0=np.zeros(mesh.n_dofs), linear_reaction=reaction, exact_channel=exact_channel,
        lipschitz=abs(c_eff),
        meta=dict(space=space, reaction_mode=reaction_mode, diffusion=diffusion, reaction=reaction,
                  epsilon=epsilon),
    )


def build_adr_darcy(nx: int = 50, ny: int | None = None, n_modes: int | None = None, r: float = 2,
                    delta: float = 0.05, diffusion: float = 0.01, inflow_value: float = 1.0,
                    max_speed: float | None = 1.0, contrast: float = 100.0, k_base: float = 1.0,
                    streak_centers=(0.25, 0.5, 0.75), streak_width: float | None = None,
                    L1: float = 1.0, L2: float = 1.0, q00: float = 1.0, tol: float = 1e-10,
                    space: str = "fvm", solver: str = "direct") -> ProblemDef:
    """Advection-diffusion-reaction through a streaked Darcy field (finite volumes).

    The implicit part is the Neumann TPFA Laplacian; advection, reaction and
    the Dirichlet boundary flux are explicit. ``max_speed`` rescales the
    Darcy velocity so its largest face speed equals the given value (None
    keeps the raw field from a unit pressure drop).
    """
    if space != "fvm":
        raise ValueError("the advection-diffusion-reaction problem is implemented with finite volumes only")
    ny = nx if ny is None else ny
    n_modes = nx if n_modes is None else n_modes
    mesh = build_fv_grid(L1, L2, nx, ny)
    perm = streak_permeability(mesh, k_base, contrast, streak_centers, streak_width)
    p = solve_pressure(mesh, perm)
    vel = reconstruct_velocity(mesh, perm, p)
    if max_speed is not None:
        vel = vel.scaled(max_speed / np.abs(vel.face_velocity).max())
    vmax = float(np.abs(vel.face_velocity).max())

    tp = assemble_tpfa(mesh, diffusion, {"left": ("dirichlet", inflow_value)})
    U = upwind_advection(mesh, vel.face_velocity).to_scipy()
    src = upwind_inflow(mesh, vel.face_velocity, {"left": inflow_value})
    areas = tp.cell_areas
    mass = tp.mass
    Mc, Kc = mass.to_scipy(), tp.K_neumann.to_scipy()
    # explicit linear part and constant inflow, both per unit cell area
    inv_area = sp.diags(1.0 / areas)
    A_lin = (inv_area @ -(U + sp.diags(tp.dirichlet_diag))).tocsr()
    const = ((src + tp.b_rhs) / areas)[:, None]

    def F(X):
        return A_lin @ X + const + nonlinear_reaction(X)

    hmin = min(mesh.dx, mesh.dy)

    def check(dt):
        cfl = dt * vmax / hmin
        if cfl > 1:
            msg = f"CFL number {cfl:.2f} > 1 for dt={dt:g}; explicit upwind advection may be unstable"
            log.warning(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=3)

    basis = SpectralBasis(n_modes, L1, L2)
    spec = NoiseSpec(r=r, delta=delta, diffusion=diffusion, q00=q00)
    return ProblemDef(
        name="adr_darcy", mesh=mesh, mass=mass,
        implicit_factory=lambda dt: ImplicitStep(SparseMatrix.from_scipy(Mc + dt * Kc, True), mass, tol=tol,
                                                  solver=solver),
        F=F, noise=NoiseModel(basis, spec), X0=np.zeros(mesh.n_dofs), step_check=check,
        meta=dict(space="fvm", diffusion=diffusion, max_speed=vmax, contrast=contrast,
                  permeability=perm, velocity=vel, pressure=p),
    )
