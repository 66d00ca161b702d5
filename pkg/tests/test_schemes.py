import warnings

import numpy as np
import pytest
import scipy.sparse as sps

from spdekit.fem import ImplicitStep
from spdekit.mesh import build_fv_grid
from spdekit.noise import NoiseModel, NoiseSpec, SpectralBasis, iter_path
from spdekit.problems import build_adr_darcy, build_linear_rd
from spdekit.schemes import (ProblemDef, SchemeState, exact_linear_path, initial_state, modified_step,
                             run_realization, simulate_ensemble, standard_step)
from spdekit.sparse import SparseMatrix


def one_cell_problem(lam, c, q=1.0):
    """A single finite volume cell carrying one spectral mode with rate lam: dX = (-lam X - c X) dt + sqrt(q) dB."""
    mesh = build_fv_grid(1.0, 1.0, 1, 1)
    mass = SparseMatrix.identity(1)
    noise = NoiseModel(SpectralBasis(1), NoiseSpec(q00=q, rate_shift=lam), [np.array([lam + c])])
    factory = lambda dt: ImplicitStep(SparseMatrix.from_dense([[1 + lam * dt]], True), mass)
    return ProblemDef("scalar", mesh, mass, factory, lambda X: -c * X, noise, np.zeros(1),
                      linear_reaction=c, exact_channel=1)


def test_single_mode_matches_scalar_recursion():
    lam, c, dt, n = 2.0, 0.5, 0.01, 50
    p = one_cell_problem(lam, c)
    X = run_realization(p, dt, n, seed=3).X[0]
    x, O_prev = 0.0, 0.0
    for st in iter_path(p.noise, dt, n, seed=3):
        O = st.O[0, 0, 0]
        x = (x + dt * (-c * x) - O_prev) / (1 + lam * dt) + O
        O_prev = O
    assert X == pytest.approx(x, abs=1e-12)


def test_standard_single_step_from_zero():
    lam, dt = 3.0, 0.1
    p = one_cell_problem(lam, 0.0, q=2.0)
    st = next(iter_path(p.noise, dt, 1, seed=1))
    X = run_realization(p, dt, 1, seed=1, scheme="standard").X[0]
    assert X == pytest.approx(st.dW[0, 0] / (1 + lam * dt), rel=1e-14)


def test_modified_step_without_stiffness_telescopes():
    p = one_cell_problem(0.0, 0.0)
    X = run_realization(p, 0.1, 10, seed=5).X
    O_T = list(iter_path(p.noise, 0.1, 10, seed=5))[-1].O[0, 0]
    np.testing.assert_allclose(X, O_T, rtol=1e-14)


def test_pure_brownian_mode_exact_solution():
    p = one_cell_problem(0.0, 0.0, q=4.0)
    path = list(iter_path(p.noise, 0.1, 10, seed=2))
    beta_T = sum(s.dW for s in path) / np.sqrt(4.0)
    X = exact_linear_path(p, path[-1].O)
    np.testing.assert_allclose(X[:, 0], 2.0 * beta_T[0], rtol=1e-12)


@pytest.mark.slow
def test_standard_scheme_variance_matches_oracle():
    lam, dt, R = 1.5, 1 / 512, 4000
    p = one_cell_problem(lam, 0.0)
    res = simulate_ensemble(p, dt, 512, [1], ["standard"], seed=9, realizations=range(R), reference=None)
    v = np.var(res.finals["standard", 1][0], ddof=1)
    exact = (1 - np.exp(-2 * lam)) / (2 * lam)
    # implicit Euler damps the variance by O(dt); sampling error is ~ sqrt(2/R)
    assert v == pytest.approx(exact, rel=0.05)


def test_exact_oracle_variance():
    lam, c = 1.0, 0.5
    p = one_cell_problem(lam, c)
    st = p.noise.initial_state(4, range(20000))
    from spdekit.noise import ou_step
    st = ou_step(p.noise, st, 1.0)
    X = exact_linear_path(p, st.O)[0]
    mu = lam + c
    target = (1 - np.exp(-2 * mu)) / (2 * mu)
    assert abs(np.var(X, ddof=1) - target) <= 3 * target * np.sqrt(2 / 20000)


def test_fold_in_makes_modified_scheme_exact():
    # with the reaction inside the implicit matrix and the convolution, F = 0 and the scheme is exact
    p = build_linear_rd("fvm", nx=6, n_modes=6, reaction_mode="implicit")
    res = simulate_ensemble(p, 1 / 16, 16, [1, 4], ["modified"], seed=1, realizations=range(3))
    for f in (1, 4):
        np.testing.assert_allclose(res.finals["modified", f], res.reference, atol=1e-12)


def test_zero_noise_schemes_are_bit_identical_implicit_euler():
    p = build_linear_rd("fem", nx=6, n_modes=6, q00=0.0)
    p.noise.q[:] = 0.0
    p.noise._cache.clear()
    X0 = np.cos(np.pi * p.mesh.vertices[:, 0])
    p.X0 = X0
    a = run_realization(p, 0.05, 10, seed=1, scheme="modified").X
    b = run_realization(p, 0.05, 10, seed=2, scheme="standard").X
    np.testing.assert_array_equal(a, b)
    S = p.step_operator(0.05)
    x = X0.copy()
    for _ in range(10):
        x = S.apply(x + 0.05 * (-0.5 * x))
    assert np.abs(a - x).max() <= 1e-12


def test_run_realization_contracts():
    p = build_linear_rd("fvm", nx=5, n_modes=5)
    assert np.array_equal(run_realization(p, 0.1, 0, seed=1).X, p.X0)
    a = run_realization(p, 0.1, 5, seed=1, realization=2).X
    b = run_realization(p, 0.1, 5, seed=1, realization=2).X
    np.testing.assert_array_equal(a, b)
    snaps = []
    run_realization(p, 0.1, 5, seed=1, snapshot_steps=(0, 3, 5), snapshots=snaps)
    assert [s for s, _ in snaps] == [0, 3, 5]
    with pytest.raises(ValueError):
        run_realization(p, 0.1, 2, seed=1, scheme="other")


def test_ensemble_matches_single_realization_runs():
    p = build_linear_rd("fem", nx=5, n_modes=5, r=1)
    res = simulate_ensemble(p, 1 / 32, 32, [1, 4], ["modified", "standard"], seed=6, realizations=[0, 3])
    for j, r in enumerate([0, 3]):
        for s in ("modified", "standard"):
            x = run_realization(p, 1 / 32, 32, seed=6, scheme=s, realization=r).X
            np.testing.assert_allclose(res.finals[s, 1][:, j], x, rtol=1e-12, atol=1e-14)
        ex = run_realization(p, 1 / 32, 32, seed=6, scheme="exact_linear", realization=r).X
        np.testing.assert_allclose(res.reference[:, j], ex, rtol=1e-12, atol=1e-14)


def test_coarse_steps_consume_the_fine_path():
    p = build_linear_rd("fem", nx=5, n_modes=5, r=1)
    f, dt = 4, 1 / 32
    res = simulate_ensemble(p, dt, 32, [f], ["modified", "standard"], seed=6, realizations=[1])
    S = p.step_operator(f * dt)
    xm = np.zeros(p.n_dofs)
    xs = np.zeros(p.n_dofs)
    O_prev = np.zeros(p.n_dofs)
    dW = 0.0
    for k, st in enumerate(iter_path(p.noise, dt, 32, seed=6, realizations=[1]), 1):
        dW = dW + st.dW[0]
        if k % f:
            continue
        O = p.noise_field(st.O[0, 0])
        xm = S.apply(xm + f * dt * p.F(xm[:, None])[:, 0] - O_prev) + O
        xs = S.apply(xs + f * dt * p.F(xs[:, None])[:, 0] + p.noise_field(dW))
        O_prev, dW = O, 0.0
    np.testing.assert_allclose(res.finals["modified", f][:, 0], xm, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(res.finals["standard", f][:, 0], xs, rtol=1e-12, atol=1e-14)


def test_error_shrinks_as_dt_halves():
    p = build_linear_rd("fem", nx=8, n_modes=8, r=2)
    res = simulate_ensemble(p, 1 / 256, 256, [32, 16, 8], ["modified"], seed=2, realizations=range(30))
    e = [np.sqrt(np.mean(p.norm(res.finals["modified", f] - res.reference) ** 2)) for f in (32, 16, 8)]
    assert e[0] > e[1] > e[2]


def test_step_state_bookkeeping():
    p = build_linear_rd("fvm", nx=4, n_modes=4)
    st = initial_state(p, 2, "modified")
    z = np.zeros((p.n_dofs, 2))
    st1 = modified_step(st, p, z, z, 0.25)
    st2 = standard_step(st1, p, z, 0.25)
    assert (st1.m, st1.t, st2.m, st2.t) == (1, 0.25, 2, 0.5)
    assert st2.X.shape == (p.n_dofs, 2)


def test_problem_definition_checks():
    p = build_linear_rd("fvm", nx=4, n_modes=4)
    assert p.lipschitz_spot_check() <= 0.5 + 1e-12
    with pytest.raises(ValueError):
        ProblemDef("bad", p.mesh, p.mass, p.implicit_factory, lambda X: X + np.inf, p.noise, p.X0)
    adr = build_adr_darcy(nx=6, n_modes=6)
    with pytest.raises(ValueError):
        exact_linear_path(adr, np.zeros((1, 1, 36)))
    with pytest.raises(ValueError):
        simulate_ensemble(p, 0.1, 10, [3], ["modified"], 0, [0])


def test_adr_lipschitz_and_cfl_warning():
    p = build_adr_darcy(nx=10, n_modes=10)
    assert np.isfinite(p.lipschitz_spot_check())
    with pytest.warns(RuntimeWarning, match="CFL"):
        p.step_operator(0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p.step_operator(0.05)


def test_adr_inflow_boundary_drives_solution():
    p = build_adr_darcy(nx=10, n_modes=10, q00=0.0)
    p.noise.q[:] = 0.0
    p.noise._cache.clear()
    X = run_realization(p, 0.01, 100, seed=0).X
    # mean concentration rises from the left inlet; columns nearer the inlet are higher
    cols = X.reshape(10, 10).mean(axis=0)
    assert cols[0] > cols[-1] > -1e-12
    assert 0 < cols[0] < 1
