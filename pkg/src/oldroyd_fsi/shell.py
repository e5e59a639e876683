"""Periodic viscoelastic shell ``eta_tt - gamma eta_tyy + eta_yyyy = g``.

Time stepping is modal: each Fourier mode is a damped oscillator that is
advanced by the exact exponential of its 2x2 companion matrix, with the
forcing held constant over the step.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .geometry import DegeneracyError, project_mean_zero, spectral_derivative

MEAN_TOL = 1e-12


@dataclass(frozen=True)
class ShellState:
    eta: np.ndarray
    etadot: np.ndarray
    t: float = 0.0

    @classmethod
    def rest(cls, n, t=0.0):
        return cls(np.zeros(n), np.zeros(n), t)


def _modal_propagators(kappa, gamma, dt):
    """Per-mode ``(E, P)`` with ``z(dt) = E z0 + P g`` for ``z = (eta_k, etadot_k)``."""
    E = np.zeros((kappa.size, 2, 2))
    P = np.zeros((kappa.size, 2))
    for m, k in enumerate(kappa):
        if k == 0.0:
            # the mean is removed from the function space; keep it frozen
            E[m] = np.eye(2)
            continue
        M = np.array([[0.0, 1.0], [-k**4, -gamma * k**2]])
        Em = expm(M * dt)
        E[m] = Em
        # int_0^dt e^{M s} ds (0, 1)^T = M^{-1} (E - I) (0, 1)^T
        P[m] = np.linalg.solve(M, (Em - np.eye(2))[:, 1])
    return E, P


class ShellIntegrator:
    """Caches modal propagators for a fixed ``(n, Lx, gamma, dt)``."""

    def __init__(self, n, Lx, gamma, dt):
        self.n, self.Lx, self.gamma, self.dt = n, Lx, gamma, dt
        self.kappa = 2 * np.pi * np.fft.rfftfreq(n, d=Lx / n)
        self.E, self.P = _modal_propagators(self.kappa, gamma, dt)
        self._gram = None

    @staticmethod
    def _advance(E, P, e_hat, v_hat, g_hat):
        e_new = E[:, 0, 0] * e_hat + E[:, 0, 1] * v_hat + P[:, 0] * g_hat
        v_new = E[:, 1, 0] * e_hat + E[:, 1, 1] * v_hat + P[:, 1] * g_hat
        return e_new, v_new

    def _spectra(self, state, g):
        g_hat = np.fft.rfft(project_mean_zero(g))
        g_hat[0] = 0.0
        return np.fft.rfft(state.eta), np.fft.rfft(state.etadot), g_hat

    def step(self, state, g, L=None):
        e_new, v_new = self._advance(self.E, self.P, *self._spectra(state, g))
        eta = np.fft.irfft(e_new, n=self.n)
        etadot = np.fft.irfft(v_new, n=self.n)
        t = state.t + self.dt
        if L is not None and np.max(np.abs(eta)) >= L:
            raise DegeneracyError(
                f"shell displacement {np.max(np.abs(eta)):.4g} reached L = {L}", t)
        return ShellState(eta, etadot, t)

    def _velocity_gram(self):
        """Per-mode ``int_0^dt e^{Ms}^T e2 e2^T e^{Ms} ds``.

        Van Loan's block exponential on a short interval, then doubled with
        ``X(2h) = X(h) + e^{M^T h} X(h) e^{M h}``; the direct formula
        overflows for stiff modes because it contains ``e^{-M^T dt}``.
        """
        gram = np.zeros((self.kappa.size, 2, 2))
        Q = np.diag([0.0, 1.0])
        for m, k in enumerate(self.kappa):
            if k == 0.0:
                continue
            M = np.array([[0.0, 1.0], [-k**4, -self.gamma * k**2]])
            halvings = max(0, int(np.ceil(np.log2(np.abs(M).sum() * self.dt))) + 1)
            h = self.dt / 2**halvings
            big = np.zeros((4, 4))
            big[:2, :2], big[:2, 2:], big[2:, 2:] = -M.T, Q, M
            F = expm(big * h)
            E = F[2:, 2:]
            X = E.T @ F[:2, 2:]
            for _ in range(halvings):
                X = X + E.T @ X @ E
                E = E @ E
            gram[m] = 0.5 * (X + X.T)
        return gram

    def dissipation_integral(self, state, g):
        """``int_0^dt gamma ||d_y etadot(s)||^2 ds`` along the exact step from
        ``state`` under the load ``g``, in the discrete norm of
        :func:`shell_dissipation`."""
        if self._gram is None:
            self._gram = self._velocity_gram()
        e_hat, v_hat, g_hat = self._spectra(state, g)
        k4 = self.kappa**4
        k4[0] = 1.0
        # the constant load only shifts the rest position to g / k^4
        z = np.stack([e_hat - g_hat / k4, v_hat], axis=-1)
        quad = np.einsum("mi,mij,mj->m", z.real, self._gram, z.real) \
            + np.einsum("mi,mij,mj->m", z.imag, self._gram, z.imag)
        # rfft bookkeeping: interior modes count twice, the Nyquist mode is
        # dropped by the odd derivative
        weight = np.full(self.kappa.size, 2.0)
        weight[0] = 0.0
        if self.n % 2 == 0:
            weight[-1] = 0.0
        dx = self.Lx / self.n
        return float(self.gamma * dx / self.n * np.sum(weight * self.kappa**2 * quad))


def shell_step(state, g, gamma, dt, Lx, L=None):
    """One modal-exponential step (builds the propagators; prefer ``ShellIntegrator`` in loops)."""
    return ShellIntegrator(state.eta.size, Lx, gamma, dt).step(state, g, L)


def damped_oscillator(a0, v0, k, gamma, t):
    """Closed-form solution of ``x'' + gamma k^2 x' + k^4 x = 0`` (independent of ``expm``)."""
    w0 = k * k
    zeta = gamma * k * k / (2 * w0)
    t = np.asarray(t, dtype=float)
    if zeta < 1.0:
        wd = w0 * np.sqrt(1.0 - zeta * zeta)
        decay = np.exp(-zeta * w0 * t)
        x = decay * (a0 * np.cos(wd * t) + (v0 + zeta * w0 * a0) / wd * np.sin(wd * t))
    elif zeta == 1.0:
        x = np.exp(-w0 * t) * (a0 + (v0 + w0 * a0) * t)
    else:
        r = w0 * np.sqrt(zeta * zeta - 1.0)
        r1, r2 = -zeta * w0 + r, -zeta * w0 - r
        c1 = (v0 - r2 * a0) / (r1 - r2)
        c2 = a0 - c1
        x = c1 * np.exp(r1 * t) + c2 * np.exp(r2 * t)
    return x


def traction_forcing(S, deta, project=True):
    """Shell load ``-(S n_eta) . n |d_y phi_eta|`` from a stress sampled on the interface.

    ``S`` has shape ``(n, 2, 2)`` (physical Cauchy stress at the deformed
    boundary points), ``deta`` is ``d_y eta`` on the omega grid. In the
    channel, ``n_eta |d_y phi_eta| = (-d_y eta, 1)`` so the metric factors
    cancel and the load is ``deta * S_21 - S_22``.
    """
    S = np.asarray(S, dtype=float)
    g = deta * S[:, 1, 0] - S[:, 1, 1]
    return project_mean_zero(g) if project else g


def shell_energy(state, Lx):
    """``(kinetic, elastic)`` halves of the shell energy."""
    dx = Lx / state.eta.size
    d2 = spectral_derivative(state.eta, Lx, 2)
    return 0.5 * np.sum(state.etadot**2) * dx, 0.5 * np.sum(d2**2) * dx


def shell_dissipation(state, Lx, gamma):
    dx = Lx / state.eta.size
    return gamma * np.sum(spectral_derivative(state.etadot, Lx, 1) ** 2) * dx


def sobolev_norms(values, Lx):
    """Discrete ``(||f||_{W^{2,2}}, ||f_yy||_{L^2})`` for a periodic grid function."""
    dx = Lx / values.size
    f1 = spectral_derivative(values, Lx, 1)
    f2 = spectral_derivative(values, Lx, 2)
    full = np.sqrt(np.sum(values**2 + f1**2 + f2**2) * dx)
    return full, np.sqrt(np.sum(f2**2) * dx)


def with_time(state, t):
    return replace(state, t=t)
