"""Spatially homogeneous Fokker-Planck solver for Hookean dumbbells.

The density ``f(q)`` lives on a Cartesian finite-volume grid covering the
ball ``|q| <= R_q``; cells outside the ball are inactive and no flux crosses
into them. The equation is

    f_t + div_q(W q f) = c div_q(M grad_q(f / M)),

with the Maxwellian-weighted diffusion in the symmetric form
``c sqrt(M_L M_R) (f_R/M_R - f_L/M_L) / h``, which leaves ``rho M`` exactly
stationary. For a rotation ``W`` the drift flux is ``A (f / M)`` with ``A``
the discrete curl of ``psi = w M`` taken at cell corners: its divergence
vanishes identically, so ``rho M`` stays stationary under any spin. General
``W`` falls back to MUSCL upwinding of ``f`` (monotonised-central limiter).
Time stepping is SSP-RK2.

The relaxation coefficient ``c`` defaults to ``1/(4 lambda)``: that is the
value for which the second moment obeys ``T' = W T + T W^T - T/(2 lambda)``.
``c = 1/(2 lambda)`` ("printed") doubles the relaxation rate.
"""

from dataclasses import dataclass, replace

import numpy as np

from .algebra import frobenius, rotation_matrix

NEGATIVITY_TOL = 1e-12


class KineticError(RuntimeError):
    pass


def relaxation_coefficient(lam, convention="closure"):
    if lam <= 0:
        raise ValueError("relaxation time must be positive")
    if convention == "closure":
        return 1.0 / (4.0 * lam)
    if convention == "printed":
        return 1.0 / (2.0 * lam)
    raise ValueError(f"unknown convention {convention!r}")


@dataclass(frozen=True)
class QGrid:
    R: float = 6.0
    n: int = 64

    def __post_init__(self):
        if self.R <= 0 or self.n < 16:
            raise ValueError("need R_q > 0 and Nq >= 16")

    @property
    def h(self):
        return 2 * self.R / self.n

    @property
    def centers(self):
        return -self.R + (np.arange(self.n) + 0.5) * self.h

    def mesh(self):
        return np.meshgrid(self.centers, self.centers, indexing="ij")

    @property
    def mask(self):
        q1, q2 = self.mesh()
        return q1**2 + q2**2 <= self.R**2

    def integrate(self, g):
        return float(np.sum(np.where(self.mask, g, 0.0)) * self.h**2)


def maxwellian_grid(R=6.0, n=64):
    """Normalised ``exp(-|q|^2/2)`` on the active cells (zero outside the ball)."""
    grid = QGrid(R, n)
    q1, q2 = grid.mesh()
    M = np.where(grid.mask, np.exp(-0.5 * (q1**2 + q2**2)), 0.0)
    return M / grid.integrate(M)


def second_moment_of_maxwellian(grid):
    """``sigma^2 = int_B M q_1^2 dq``; the Boltzmann factor that makes equilibrium stress-free."""
    q1, _ = grid.mesh()
    return grid.integrate(maxwellian_grid(grid.R, grid.n) * q1**2)


@dataclass(frozen=True)
class KineticState:
    f: np.ndarray
    grid: QGrid
    lam: float
    W: np.ndarray
    t: float = 0.0
    convention: str = "closure"

    @property
    def rho(self):
        return self.grid.integrate(self.f)

    @property
    def coefficient(self):
        return relaxation_coefficient(self.lam, self.convention)


def gaussian_state(grid, T0, lam, W, rho=1.0, convention="closure"):
    """Density whose covariance is ``k I + T0 / rho``; ``T0`` is the target extra stress."""
    k = second_moment_of_maxwellian(grid)
    C = k * np.eye(2) + np.asarray(T0, dtype=float) / rho
    if np.any(np.linalg.eigvalsh(C) <= 0):
        raise ValueError("initial covariance must be positive definite")
    Ci = np.linalg.inv(C)
    q1, q2 = grid.mesh()
    quad = Ci[0, 0] * q1**2 + 2 * Ci[0, 1] * q1 * q2 + Ci[1, 1] * q2**2
    f = np.where(grid.mask, np.exp(-0.5 * quad), 0.0)
    f *= rho / grid.integrate(f)
    return KineticState(f, grid, lam, np.asarray(W, dtype=float), 0.0, convention)


def stress_moment(state):
    """``hat T = int_B f q (x) q dq``."""
    g = state.grid
    q1, q2 = g.mesh()
    t11 = g.integrate(state.f * q1 * q1)
    t12 = g.integrate(state.f * q1 * q2)
    t22 = g.integrate(state.f * q2 * q2)
    return np.array([[t11, t12], [t12, t22]])


def extra_stress(state):
    """``T = hat T - k rho I`` with ``k = sigma^2``."""
    k = second_moment_of_maxwellian(state.grid)
    return stress_moment(state) - k * state.rho * np.eye(2)


def _mc_slope(a, b):
    """Monotonised-central limiter: ``minmod(2a, (a+b)/2, 2b)``."""
    m = np.minimum(np.minimum(2 * np.abs(a), 2 * np.abs(b)), 0.5 * np.abs(a + b))
    return np.where(a * b > 0, np.sign(a) * m, 0.0)


class FokkerPlanckOperator:
    """Right-hand side of the homogeneous equation on a fixed ``QGrid``."""

    def __init__(self, grid, W, coefficient):
        self.grid, self.c = grid, coefficient
        h = grid.h
        q1, q2 = grid.mesh()
        self.mask = grid.mask
        self.M = maxwellian_grid(grid.R, grid.n)
        W = np.asarray(W, dtype=float)
        # face-normal drift W q at the faces between cells (i, i+1) along each axis
        qf = -grid.R + np.arange(1, grid.n) * h
        qc = grid.centers
        self.a1 = W[0, 0] * qf[:, None] + W[0, 1] * qc[None, :]   # faces normal to q1
        self.a2 = W[1, 0] * qc[:, None] + W[1, 1] * qf[None, :]   # faces normal to q2
        self.open1 = self.mask[:-1, :] & self.mask[1:, :]
        self.open2 = self.mask[:, :-1] & self.mask[:, 1:]
        M = self.M
        self.Mf1 = np.sqrt(M[:-1, :] * M[1:, :])
        self.Mf2 = np.sqrt(M[:, :-1] * M[:, 1:])
        with np.errstate(divide="ignore"):
            self.Minv = np.where(self.mask, 1.0 / np.where(self.mask, M, 1.0), 0.0)
        self.rotational = bool(W[0, 0] == 0 and W[1, 1] == 0 and W[0, 1] == -W[1, 0])
        if self.rotational:
            self.A1, self.A2 = self._rotation_fluxes(W[0, 1])

    def _rotation_fluxes(self, w):
        """Face fluxes of ``W q M`` as the discrete curl of ``psi = w M`` at cell corners.

        A rotation drift of a radial density has zero divergence; taking the
        fluxes from a corner stream function keeps that exact on the grid, so
        ``rho M`` is stationary for any spin. ``psi`` is zeroed on corners that
        touch an inactive cell, which closes the ball boundary.
        """
        g = self.grid
        qk = -g.R + np.arange(g.n + 1) * g.h
        Q1, Q2 = np.meshgrid(qk, qk, indexing="ij")
        c1, c2 = g.mesh()
        norm = g.integrate(np.exp(-0.5 * (c1**2 + c2**2)))   # same factor as maxwellian_grid
        psi = w / norm * np.exp(-0.5 * (Q1**2 + Q2**2))
        act = np.pad(self.mask, 1, constant_values=False)
        full = act[:-1, :-1] & act[1:, :-1] & act[:-1, 1:] & act[1:, 1:]
        psi = np.where(full, psi, 0.0)
        # q1-faces (i+1/2, j): -d psi / d q2; q2-faces (i, j+1/2): d psi / d q1
        A1 = -(psi[1:-1, 1:] - psi[1:-1, :-1]) / g.h
        A2 = (psi[1:, 1:-1] - psi[:-1, 1:-1]) / g.h
        return A1, A2

    def _upwind_flux(self, f, a, axis):
        """MUSCL face values with limited slopes, upwinded by the face velocity."""
        d = np.diff(f, axis=axis)
        if axis == 0:
            pad = np.zeros((1, f.shape[1]))
            dl = np.concatenate([pad, d], axis=0)
            dr = np.concatenate([d, pad], axis=0)
        else:
            pad = np.zeros((f.shape[0], 1))
            dl = np.concatenate([pad, d], axis=1)
            dr = np.concatenate([d, pad], axis=1)
        slope = _mc_slope(dl, dr)
        if axis == 0:
            left = f[:-1, :] + 0.5 * slope[:-1, :]
            right = f[1:, :] - 0.5 * slope[1:, :]
        else:
            left = f[:, :-1] + 0.5 * slope[:, :-1]
            right = f[:, 1:] - 0.5 * slope[:, 1:]
        return np.where(a > 0, a * left, a * right)

    @staticmethod
    def _log_upwind_flux(g, A, axis):
        """Upwind face values of a positive ratio ``g`` reconstructed linearly in
        ``log g`` (exact for Gaussians relative to ``M``; constant ``g`` stays
        constant). Cells with a non-positive or missing neighbour fall back to
        first order."""
        ok = g > 0
        lg = np.log(np.where(ok, g, 1.0))
        d = np.diff(lg, axis=axis)
        both = np.logical_and(*((ok[:-1], ok[1:]) if axis == 0 else (ok[:, :-1], ok[:, 1:])))
        d = np.where(both, d, np.nan)
        pad = np.full((1, g.shape[1]) if axis == 0 else (g.shape[0], 1), np.nan)
        dl = np.concatenate([pad, d], axis=axis)
        dr = np.concatenate([d, pad], axis=axis)
        half = np.clip(np.nan_to_num(0.25 * (dl + dr), nan=0.0), -1.0, 1.0)
        up = np.exp(half)
        if axis == 0:
            left, right = g[:-1] * up[:-1], g[1:] / up[1:]
        else:
            left, right = g[:, :-1] * up[:, :-1], g[:, 1:] / up[:, 1:]
        return np.where(A > 0, A * left, A * right)

    def rhs(self, f):
        h, c = self.grid.h, self.c
        f = np.where(self.mask, f, 0.0)
        g = f * self.Minv
        if self.rotational:
            D1, D2 = self._log_upwind_flux(g, self.A1, 0), self._log_upwind_flux(g, self.A2, 1)
        else:
            D1, D2 = self._upwind_flux(f, self.a1, 0), self._upwind_flux(f, self.a2, 1)
        F1 = D1 - c * self.Mf1 * np.diff(g, axis=0) / h
        F2 = D2 - c * self.Mf2 * np.diff(g, axis=1) / h
        F1 = np.where(self.open1, F1, 0.0)
        F2 = np.where(self.open2, F2, 0.0)
        out = np.zeros_like(f)
        out[:-1, :] -= F1 / h
        out[1:, :] += F1 / h
        out[:, :-1] -= F2 / h
        out[:, 1:] += F2 / h
        return np.where(self.mask, out, 0.0)

    def stable_dt(self):
        h = self.grid.h
        if self.rotational:
            # effective face speed relative to the density in the upwind cell
            with np.errstate(divide="ignore", invalid="ignore"):
                s1 = np.abs(self.A1) / np.minimum(self.M[:-1, :], self.M[1:, :])
                s2 = np.abs(self.A2) / np.minimum(self.M[:, :-1], self.M[:, 1:])
            amax = max(np.max(np.where(self.open1, s1, 0.0)),
                       np.max(np.where(self.open2, s2, 0.0)), 1e-300)
        else:
            amax = max(np.max(np.abs(self.a1)), np.max(np.abs(self.a2)), 1e-300)
        return min(0.5 * h / amax, 0.2 * h * h / self.c)


def fokker_planck_step(state, dt, operator=None):
    """One SSP-RK2 step; raises ``KineticError`` on CFL violation or lost positivity."""
    op = operator or FokkerPlanckOperator(state.grid, state.W, state.coefficient)
    if dt > op.stable_dt():
        raise KineticError(f"dt = {dt} exceeds the stable step {op.stable_dt():.3g}")
    f0 = state.f
    f1 = f0 + dt * op.rhs(f0)
    f2 = 0.5 * f0 + 0.5 * (f1 + dt * op.rhs(f1))
    scale = np.max(f0)
    if np.min(f2) < -NEGATIVITY_TOL * scale:
        raise KineticError(f"negative density {np.min(f2):.3e}")
    return replace(state, f=np.maximum(f2, 0.0), t=state.t + dt)


def run_kinetic(state, dt, horizon, sample_every=1):
    """Integrate to ``horizon``; returns sample times and extra-stress samples."""
    op = FokkerPlanckOperator(state.grid, state.W, state.coefficient)
    n = int(round(horizon / dt))
    times, stresses, masses = [state.t], [extra_stress(state)], [state.rho]
    for i in range(1, n + 1):
        state = fokker_planck_step(state, dt, op)
        if i % sample_every == 0 or i == n:
            times.append(state.t)
            stresses.append(extra_stress(state))
            masses.append(state.rho)
    return np.array(times), np.array(stresses), np.array(masses), state


def closure_oracle(T0, W, lam, t):
    """``exp(-t/(2 lambda)) R(t) T0 R(t)^T`` for constant antisymmetric ``W``."""
    t = np.asarray(t, dtype=float)
    R = rotation_matrix(W[0, 1] * t)
    decay = np.exp(-t / (2 * lam))[..., None, None]
    return decay * (R @ T0 @ np.swapaxes(R, -1, -2))


def closure_residual(times, stresses, W, lam):
    """Centred-difference residual of ``T' - (W T + T W^T - T / (2 lambda))``,
    as Frobenius norm relative to ``|T(0)|``. Returned at interior samples."""
    times = np.asarray(times, dtype=float)
    T = np.asarray(stresses, dtype=float)
    dT = (T[2:] - T[:-2]) / (times[2:] - times[:-2])[:, None, None]
    Tm = T[1:-1]
    model = W @ Tm + Tm @ W.T - Tm / (2 * lam)
    scale = max(float(frobenius(T[0])), 1e-300)
    return times[1:-1], frobenius(dT - model) / scale
