"""Spectral Q-Wiener noise and exact simulation of the stochastic convolution.

The noise is ``W = sum_ij sqrt(q_ij) e_ij beta_ij`` with the Neumann
eigenfunctions ``e_ij(x, y) = e_i(x) e_j(y)`` of the Laplacian on the
rectangle. For a linear operator diagonal in the same basis, each mode of
the stochastic convolution ``O(t)`` is a scalar Ornstein-Uhlenbeck process,
which is advanced with its exact Gaussian transition.

Several processes driven by the same Brownian motions are carried together
("channels"): channel 0 is the Brownian increment itself, the remaining
channels are OU processes with their own per-mode rates. Per step and mode
the channel increments are drawn from their exact joint law,

    Cov(I_a, I_b) = q (1 - exp(-(k_a + k_b) dt)) / (k_a + k_b),

so the standard scheme (which needs Brownian increments), the modified
scheme (which needs O) and an exact solution with a different rate can all
be driven by one path.

Random numbers come from Philox keyed by (seed, realization, stream) with
the step index in the counter, so any step of any realization can be drawn
independently of all others.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SpectralBasis:
    N: int
    L1: float = 1.0
    L2: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.L1 <= 0 or self.L2 <= 0:
            raise ValueError("domain sides must be positive")

    @property
    def n_modes(self) -> int:
        return self.N * self.N

    @property
    def index_pairs(self) -> np.ndarray:
        """(i, j) per flattened mode, flattened index ``i * N + j``."""
        i, j = np.meshgrid(np.arange(self.N), np.arange(self.N), indexing="ij")
        return np.column_stack([i.ravel(), j.ravel()])

    @property
    def eigenvalues(self) -> np.ndarray:
        """Laplacian eigenvalues ``(i pi / L1)^2 + (j pi / L2)^2`` as an (N, N) array."""
        k = np.arange(self.N) * np.pi
        return (k[:, None] / self.L1) ** 2 + (k[None, :] / self.L2) ** 2

    def functions_1d(self, s: np.ndarray, L: float) -> np.ndarray:
        """Values of ``e_0, ..., e_{N-1}`` on [0, L] at points ``s``, shape (len(s), N)."""
        s = np.asarray(s, dtype=float)
        k = np.arange(self.N)
        E = np.sqrt(2.0 / L) * np.cos(np.outer(s, k) * (np.pi / L))
        E[:, 0] = np.sqrt(1.0 / L)
        return E


@dataclass(frozen=True)
class NoiseSpec:
    """Covariance decay and OU rates.

    ``q_ij = (i^2 + j^2)^-(r + delta)``; the (0, 0) mode, where the formula
    is undefined, takes ``q00`` (1 by default, 0 removes the mean mode).
    The OU rate of mode ij is ``diffusion * lambda_ij + rate_shift``; a
    positive shift folds a linear reaction ``-c X`` into the convolution or
    realises the ``A + eps I`` perturbation.
    """
    r: float = 2
    delta: float = 0.05
    diffusion: float = 1.0
    rate_shift: float = 0.0
    q00: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.diffusion < 0 or self.rate_shift < 0 or self.q00 < 0 or self.amplitude < 0:
            raise ValueError("diffusion, rate_shift, q00 and amplitude must be non-negative")

    def q(self, basis: SpectralBasis) -> np.ndarray:
        k2 = np.add.outer(np.arange(basis.N) ** 2, np.arange(basis.N) ** 2).astype(float)
        k2[0, 0] = 1.0
        q = k2 ** (-(self.r + self.delta))
        q[0, 0] = self.q00
        return self.amplitude * q

    def rates(self, basis: SpectralBasis) -> np.ndarray:
        return self.diffusion * basis.eigenvalues + self.rate_shift


def _phi(s: np.ndarray, dt: float) -> np.ndarray:
    """``(1 - exp(-s dt)) / s`` with its limit ``dt`` at ``s = 0``."""
    s = np.asarray(s, dtype=float)
    out = np.full(s.shape, float(dt))
    nz = s * dt > 1e-300
    out[nz] = -np.expm1(-s[nz] * dt) / s[nz]
    return out


def increment_covariance(q: np.ndarray, rates: Sequence[np.ndarray], dt: float) -> np.ndarray:
    """Joint covariance of the channel increments, shape (modes, k, k).

    ``rates`` lists per-mode rates for each channel; a rate of zero gives the
    Brownian increment ``sqrt(q) d beta``.
    """
    R = np.stack([np.broadcast_to(np.asarray(r, dtype=float), q.shape) for r in rates], axis=-1)
    S = R[:, :, None] + R[:, None, :]
    return q[:, None, None] * _phi(S, dt)


def joint_increment_covariance(q: float, lam: float, dt: float) -> np.ndarray:
    """2x2 covariance of (sqrt(q) d beta, OU increment) for one mode."""
    return increment_covariance(np.array([q]), [0.0, lam], dt)[0]


def psd_cholesky(C: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Lower factor ``L L^T = C`` for a stack of small PSD matrices.

    Pivots below ``rtol`` times the diagonal entry are treated as exact zeros
    (channels that coincide, e.g. an OU process with rate zero and the
    Brownian increment). A clearly negative pivot raises.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[-1]
    L = np.zeros_like(C)
    for j in range(n):
        piv = C[..., j, j] - np.sum(L[..., j, :j] ** 2, axis=-1)
        scale = np.maximum(C[..., j, j], 1e-300)
        if np.any(piv < -1e-8 * scale):
            raise ValueError("increment covariance is not positive semi-definite")
        ok = piv > rtol * scale
        d = np.where(ok, np.sqrt(np.where(ok, piv, 1.0)), 0.0)
        L[..., j, j] = d
        for i in range(j + 1, n):
            off = C[..., i, j] - np.sum(L[..., i, :j] * L[..., j, :j], axis=-1)
            L[..., i, j] = np.where(ok, off / np.where(ok, d, 1.0), 0.0)
    return L


@dataclass
class NoiseState:
    """Per-realization noise state, batched over realizations.

    ``O`` has shape (n_ou, R, n_modes): one row per OU channel. ``dW`` holds
    the Brownian increments ``sqrt(q) d beta`` of the last step, shape
    (R, n_modes).
    """
    t: float
    step: int
    O: np.ndarray
    dW: np.ndarray
    seed: int
    realizations: np.ndarray
    stream: int = 0

    @property
    def O_coeffs(self) -> np.ndarray:
        """Coefficients of the scheme's convolution (first OU channel)."""
        return self.O[0]


class NoiseModel:
    """Spectral basis, covariance and the set of OU channels to carry."""

    def __init__(self, basis: SpectralBasis, spec: NoiseSpec, extra_rates: Sequence = ()):
        self.basis = basis
        self.spec = spec
        self.q = spec.q(basis).ravel()
        self.rates = [spec.rates(basis).ravel()] + [
            np.broadcast_to(np.asarray(r, dtype=float), self.q.shape).ravel() for r in extra_rates
        ]
        self._cache: dict = {}

    @property
    def n_modes(self) -> int:
        return self.basis.n_modes

    @property
    def n_channels(self) -> int:
        return 1 + len(self.rates)

    def transition(self, dt: float):
        """Decay factors (n_ou, modes) and lower increment factor (k, k, modes) for a step ``dt``."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        key = float(dt)
        if key not in self._cache:
            decay = np.stack([np.exp(-r * dt) for r in self.rates])
            C = increment_covariance(self.q, [np.zeros_like(self.q)] + self.rates, dt)
            # stored as (k, k, modes) so each factor entry is a contiguous row
            self._cache[key] = (decay, np.ascontiguousarray(psd_cholesky(C).transpose(1, 2, 0)))
        return self._cache[key]

    def initial_state(self, seed: int, realizations=(0,), stream: int = 0) -> NoiseState:
        real = np.atleast_1d(np.asarray(realizations, dtype=np.int64))
        R = len(real)
        return NoiseState(0.0, 0, np.zeros((len(self.rates), R, self.n_modes)),
                          np.zeros((R, self.n_modes)), int(seed), real, int(stream))

    def normals(self, seed: int, realization: int, step: int, stream: int = 0) -> np.ndarray:
        """Standard normals (k, modes) for one realization and step; pure function of its arguments."""
        key = (int(seed) & _MASK64) | ((int(realization) * 16 + int(stream)) << 64)
        g = np.random.Generator(np.random.Philox(key=key, counter=int(step) << 64))
        return g.standard_normal((self.n_channels, self.n_modes))


def ou_step(model: NoiseModel, state: NoiseState, dt: float) -> NoiseState:
    """Advance every OU channel exactly by ``dt`` and draw the coupled Brownian increment."""
    decay, L = model.transition(dt)
    Z = np.stack([model.normals(state.seed, r, state.step, state.stream) for r in state.realizations])
    k = L.shape[0]
    incr = np.empty((k,) + Z.shape[::2])  # (k, R, modes)
    for a in range(k):
        incr[a] = L[a, 0] * Z[:, 0]
        for b in range(1, a + 1):
            incr[a] += L[a, b] * Z[:, b]
    O = decay[:, None, :] * state.O + incr[1:]
    return replace(state, t=state.t + dt, step=state.step + 1, O=O, dW=incr[0])


def coupled_brownian_increment(model: NoiseModel, state: NoiseState, dt: float) -> tuple[np.ndarray, NoiseState]:
    """Step the noise and return the Brownian increment drawn jointly with the OU update."""
    new = ou_step(model, state, dt)
    return new.dW, new


def iter_path(model: NoiseModel, dt: float, n_steps: int, seed: int,
              realizations=(0,), stream: int = 0) -> Iterator[NoiseState]:
    """Yield the states at steps 1..n_steps (the initial zero state is not yielded)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    state = model.initial_state(seed, realizations, stream)
    for _ in range(n_steps):
        state = ou_step(model, state, dt)
        yield state


def generate_path(model: NoiseModel, dt: float, n_steps: int, seed: int,
                  realizations=(0,), stream: int = 0) -> list[NoiseState]:
    """States at steps 0..n_steps on the fine grid ``dt``."""
    return [model.initial_state(seed, realizations, stream),
            *iter_path(model, dt, n_steps, seed, realizations, stream)]


def evaluate_field(basis: SpectralBasis, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
    """``sum_ij c_ij e_i(x) e_j(y)`` at arbitrary points (P, 2)."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != basis.n_modes:
        raise ValueError(f"expected {basis.n_modes} coefficients, got {coeffs.shape[-1]}")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    E1 = basis.functions_1d(points[:, 0], basis.L1)
    E2 = basis.functions_1d(points[:, 1], basis.L2)
    C = coeffs.reshape(coeffs.shape[:-1] + (basis.N, basis.N))
    return np.einsum("pi,...ij,pj->...p", E1, C, E2)


class GridEvaluator:
    """Separable evaluation on a tensor lattice ordered x-fastest.

    Returns fields of shape (nx * ny, R) for coefficient blocks (R, modes).
    """

    def __init__(self, basis: SpectralBasis, xs: np.ndarray, ys: np.ndarray):
        self.basis = basis
        self.E1 = basis.functions_1d(xs, basis.L1)
        self.E2 = basis.functions_1d(ys, basis.L2)

    def __call__(self, coeffs: np.ndarray) -> np.ndarray:
        single = coeffs.ndim == 1
        C = np.atleast_2d(coeffs).reshape(-1, self.basis.N, self.basis.N)
        # F[r, y, x] = sum_ij E2[y, j] C[r, i, j] E1[x, i]
        F = self.E2 @ np.swapaxes(C, 1, 2) @ self.E1.T
        out = F.reshape(len(C), -1).T
        return out[:, 0] if single else out


def trace_partial_sum(spec: NoiseSpec, N: int, power: float) -> float:
    """``sum over I_N of lambda^power q`` with the (0, 0) mode excluded."""
    basis = SpectralBasis(N)
    lam = basis.eigenvalues.ravel()[1:]
    q = spec.q(basis).ravel()[1:]
    return float(np.sum(lam ** power * q))


def convolution_hr_moment(spec: NoiseSpec, N: int, r: float, t: float) -> float:
    """``E ||P_N O(t)||^2_{H^r} = sum lambda^r q (1 - exp(-2 k t)) / (2 k)`` with k the OU rate."""
    basis = SpectralBasis(N)
    lam = basis.eigenvalues.ravel()[1:]
    k = spec.rates(basis).ravel()[1:]
    q = spec.q(basis).ravel()[1:]
    return float(np.sum(lam ** r * q * _phi(2 * k, t)))


def write_noise_csv(states: Sequence[NoiseState], basis: SpectralBasis, path: str | Path,
                    realization_index: int = 0) -> Path:
    """Dump ``step, mode_i, mode_j, O_coeff`` for one realization of a path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ij = basis.index_pairs
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "mode_i", "mode_j", "O_coeff"])
        for s in states:
            for m, (i, j) in enumerate(ij):
                w.writerow([s.step, int(i), int(j), repr(float(s.O[0, realization_index, m]))])
    return path
