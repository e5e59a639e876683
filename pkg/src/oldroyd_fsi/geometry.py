"""Reference channel, boundary cutoff and the Hanzawa map.

The reference domain is the horizontally periodic channel
``(0, Lx) x (0, Ly)`` with a flexible top boundary ``x2 = Ly`` (outer normal
``(0, 1)``) and a rigid bottom. A shell displacement ``eta(x1)`` deforms it by

    Psi_eta(x) = x + (0, eta(x1) * phi(x2 - Ly)),

where ``phi`` is a smooth cutoff equal to 1 near the top and 0 below
``Ly - 3L/4``. Shell samples live on the cell-centre abscissae
``(k + 1/2) dx`` and are interpolated spectrally.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

INVERSE_TOL = 1e-13
INVERSE_MAXITER = 60


class DegeneracyError(RuntimeError):
    """The deformation left the admissible tube or the Jacobian lost positivity."""

    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} (t = {time:.6g})")
        self.time = time


class GeometryError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReferenceDomain:
    Lx: float = 2.0
    Ly: float = 1.0
    L: float = 0.4
    nx: int = 64
    ny: int = 32

    def __post_init__(self):
        if not 0 < self.L < self.Ly / 2:
            raise ValueError("tube half-width must satisfy 0 < L < Ly/2")
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid too small")
        if abs(self.Lx * self.Ly - 1.0) < 1e-12:
            raise ValueError("reference area must differ from 1")

    @property
    def dx(self):
        return self.Lx / self.nx

    @property
    def dy(self):
        return self.Ly / self.ny

    @property
    def area(self):
        return self.Lx * self.Ly

    @property
    def n_omega(self):
        return self.nx

    @cached_property
    def xc(self):
        return (np.arange(self.nx) + 0.5) * self.dx

    @cached_property
    def xf(self):
        return np.arange(self.nx) * self.dx

    @cached_property
    def yc(self):
        return (np.arange(self.ny) + 0.5) * self.dy

    @cached_property
    def yf(self):
        return np.arange(self.ny + 1) * self.dy

    @cached_property
    def omega_wavenumbers(self):
        return 2 * np.pi * np.fft.fftfreq(self.nx, d=self.dx)

    def locations(self, where):
        """Abscissae and ordinates (broadcastable 2D arrays) of a staggered location.

        ``center``: cell centres (ny, nx); ``uface``: vertical faces (ny, nx);
        ``vface``: horizontal faces incl. walls (ny+1, nx); ``corner``: (ny+1, nx).
        """
        if where == "center":
            return self.xc[None, :], self.yc[:, None]
        if where == "uface":
            return self.xf[None, :], self.yc[:, None]
        if where == "vface":
            return self.xc[None, :], self.yf[:, None]
        if where == "corner":
            return self.xf[None, :], self.yf[:, None]
        raise ValueError(where)

    def points(self, where):
        x1, x2 = np.broadcast_arrays(*self.locations(where))
        return np.stack([x1, x2], axis=-1)


def cutoff(s, L):
    """Quintic smoothstep: 0 for ``s <= -3L/4``, 1 for ``s >= -L/4``."""
    t = np.clip((np.asarray(s, dtype=float) + 0.75 * L) / (0.5 * L), 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def cutoff_derivative(s, L):
    t = np.clip((np.asarray(s, dtype=float) + 0.75 * L) / (0.5 * L), 0.0, 1.0)
    return 30.0 * t * t * (1.0 - t) ** 2 / (0.5 * L)


def cutoff_max_slope(L):
    return 3.75 / L


# --- periodic spectral interpolation on omega ----------------------------------

def _fourier_coefficients(values):
    values = np.asarray(values, dtype=float)
    return np.fft.fft(values) / values.size


def spectral_eval(values, x, Lx, deriv=0, x0=None):
    """Evaluate the real trigonometric interpolant of ``values`` (samples at
    ``x0 + k*dx``) or its ``deriv``-th derivative at abscissae ``x``."""
    values = np.asarray(values, dtype=float)
    n = values.size
    dx = Lx / n
    if x0 is None:
        x0 = 0.5 * dx
    c = _fourier_coefficients(values)
    kappa = 2 * np.pi * np.fft.fftfreq(n, d=dx)
    x = np.asarray(x, dtype=float)
    xi = (x.reshape(-1) - x0)[:, None]
    if n % 2 == 0:
        nyq = n // 2
        keep = np.ones(n, dtype=bool)
        keep[nyq] = False
        phase = np.exp(1j * kappa[keep] * xi)
        out = (phase * ((1j * kappa[keep]) ** deriv * c[keep])).real.sum(axis=1)
        kn = abs(kappa[nyq])
        # d^m/dx^m cos(k x) = k^m cos(k x + m pi/2)
        out += (c[nyq].real * kn**deriv * np.cos(kn * xi[:, 0] + deriv * np.pi / 2))
    else:
        phase = np.exp(1j * kappa * xi)
        out = (phase * ((1j * kappa) ** deriv * c)).real.sum(axis=1)
    return out.reshape(x.shape)


def spectral_derivative(values, Lx, order=1):
    """Spectral derivative on the sample grid (Nyquist mode dropped for odd orders)."""
    values = np.asarray(values, dtype=float)
    n = values.size
    kappa = 2 * np.pi * np.fft.fftfreq(n, d=Lx / n)
    mult = (1j * kappa) ** order
    if n % 2 == 0 and order % 2 == 1:
        mult[n // 2] = 0.0
    return np.fft.ifft(mult * np.fft.fft(values)).real


def project_mean_zero(values):
    values = np.asarray(values, dtype=float)
    return values - values.mean()


# --- the map -------------------------------------------------------------------

class HanzawaMap:
    """Immutable snapshot of ``Psi_eta`` and its derived matrices.

    ``eta`` and ``etadot`` are samples on the omega grid. Point-wise
    evaluators accept arrays of shape ``(..., 2)``; ``coeffs(where)`` returns
    cached coefficient fields on the staggered grid locations.
    """

    def __init__(self, domain, eta=None, etadot=None):
        self.domain = domain
        n = domain.nx
        self.eta = np.zeros(n) if eta is None else np.array(eta, dtype=float)
        self.etadot = np.zeros(n) if etadot is None else np.array(etadot, dtype=float)
        if self.eta.shape != (n,) or self.etadot.shape != (n,):
            raise ValueError("shell samples must live on the omega grid")
        self.eta.setflags(write=False)
        self.etadot.setflags(write=False)
        self._cache = {}

    @property
    def is_identity(self):
        return not np.any(self.eta) and not np.any(self.etadot)

    @property
    def key(self):
        return self.eta.tobytes()

    def sup_eta(self):
        return float(np.max(np.abs(self.eta), initial=0.0))

    def check(self, time=None):
        """Raise ``DegeneracyError`` unless ``|eta| < L`` and ``J > 0`` on the grid."""
        if self.sup_eta() >= self.domain.L:
            raise DegeneracyError(
                f"sup|eta| = {self.sup_eta():.4g} reached the tube width L = {self.domain.L}", time)
        jmin = min(float(self.coeffs(w)["J"].min()) for w in ("center", "uface", "vface", "corner"))
        if jmin <= 0.0:
            raise DegeneracyError(f"Jacobian lost positivity (min J = {jmin:.4g})", time)
        return self

    # boundary data along x1
    def _interp(self, which, x1, deriv):
        x1 = np.asarray(x1, dtype=float)
        key = (which, deriv, x1.shape, x1.tobytes())
        out = self._cache.get(key)
        if out is None:
            values = self.eta if which == "eta" else self.etadot
            # grid abscissae repeat along columns: evaluate each distinct one once
            xs, inv = np.unique(x1, return_inverse=True)
            vals = spectral_eval(values, xs, self.domain.Lx, deriv=deriv)
            out = self._cache[key] = vals[inv].reshape(x1.shape)
        return out

    def eta_at(self, x1, deriv=0):
        return self._interp("eta", x1, deriv)

    def etadot_at(self, x1, deriv=0):
        return self._interp("etadot", x1, deriv)

    def _boundary_data(self, x1):
        x1 = np.asarray(x1, dtype=float)
        if self.is_identity:
            z = np.zeros_like(x1)
            return z, z, z
        return self.eta_at(x1), self.eta_at(x1, 1), self.etadot_at(x1)

    def _pieces(self, x):
        x = np.asarray(x, dtype=float)
        s = x[..., 1] - self.domain.Ly
        phi = cutoff(s, self.domain.L)
        dphi = cutoff_derivative(s, self.domain.L)
        eta, deta, etadot = self._boundary_data(x[..., 0])
        return phi, dphi, eta, deta, etadot

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        phi, _, eta, _, _ = self._pieces(x)
        out = x.copy()
        out[..., 1] = x[..., 1] + eta * phi
        return out

    def inverse(self, xt):
        """Solve ``Psi(x) = xt``; only the normal coordinate moves, so this is a
        scalar monotone root find per point (Newton with bisection safeguard)."""
        xt = np.asarray(xt, dtype=float)
        eta = self.eta_at(xt[..., 0]) if not self.is_identity else np.zeros(xt.shape[:-1])
        target = xt[..., 1]
        L, Ly = self.domain.L, self.domain.Ly
        y = target - eta * cutoff(target - Ly, L)
        lo = np.minimum(target, target - eta) - 1.0
        hi = np.maximum(target, target - eta) + 1.0
        for _ in range(INVERSE_MAXITER):
            s = y - Ly
            r = y + eta * cutoff(s, L) - target
            if np.all(np.abs(r) <= INVERSE_TOL * (1.0 + np.abs(target))):
                break
            lo = np.where(r < 0, y, lo)
            hi = np.where(r > 0, y, hi)
            jac = 1.0 + eta * cutoff_derivative(s, L)
            step = np.where(jac > 0, r / np.where(jac > 0, jac, 1.0), 0.0)
            y_new = y - step
            bad = (y_new <= lo) | (y_new >= hi) | (jac <= 0)
            y = np.where(bad, 0.5 * (lo + hi), y_new)
        else:
            raise GeometryError("Hanzawa inverse did not converge")
        out = xt.copy()
        out[..., 1] = y
        return out

    def jacobian(self, x):
        """Return ``(grad Psi, J)`` with ``grad Psi[i, j] = d Psi_i / d x_j``."""
        phi, dphi, eta, deta, _ = self._pieces(x)
        F = np.zeros(phi.shape + (2, 2))
        F[..., 0, 0] = 1.0
        F[..., 1, 0] = deta * phi
        F[..., 1, 1] = 1.0 + eta * dphi
        return F, F[..., 1, 1].copy()

    def piola(self, x):
        """Return ``B = J (grad Psi)^{-1}`` (adjugate form) and ``A = B B^T / J``."""
        F, J = self.jacobian(x)
        if np.any(J <= 0):
            raise DegeneracyError("non-positive Jacobian")
        B = np.empty_like(F)
        B[..., 0, 0] = F[..., 1, 1]
        B[..., 0, 1] = -F[..., 0, 1]
        B[..., 1, 0] = -F[..., 1, 0]
        B[..., 1, 1] = F[..., 0, 0]
        A = B @ np.swapaxes(B, -1, -2) / J[..., None, None]
        return B, A

    def time_derivative(self, x):
        """Return ``d_t Psi`` and ``(d_t Psi^{-1}) o Psi = -(grad Psi)^{-1} d_t Psi``."""
        phi, dphi, eta, deta, etadot = self._pieces(x)
        J = 1.0 + eta * dphi
        if np.any(J <= 0):
            raise DegeneracyError("non-positive Jacobian")
        dpsi = np.zeros(np.shape(phi) + (2,))
        dpsi[..., 1] = etadot * phi
        dinv = np.zeros_like(dpsi)
        dinv[..., 1] = -etadot * phi / J
        return dpsi, dinv

    def coeffs(self, where):
        """Cached coefficient arrays at a staggered location.

        Keys: ``J``, ``b`` (= B_21), ``A11``, ``A12``, ``A22``, ``phi``,
        ``eta``, ``deta``, ``etadot`` and ``w2`` (vertical mesh velocity
        ``etadot * phi``). ``B_11 = J``, ``B_12 = 0`` and ``B_22 = 1`` in this
        geometry.

        ``uface`` also carries ``Jflux`` and ``vface`` carries ``bflux``: the
        same entries of ``B`` as differences of the mapped ordinate between
        cell corners. Cell sums of these fluxes telescope, so ``div(B c) = 0``
        holds to round-off for constant ``c`` (discrete Piola identity).
        """
        if where in self._cache:
            return self._cache[where]
        d = self.domain
        x1, x2 = d.locations(where)
        s = x2 - d.Ly
        phi = np.broadcast_to(cutoff(s, d.L), (x2.shape[0], x1.shape[1]))
        dphi = np.broadcast_to(cutoff_derivative(s, d.L), phi.shape)
        eta, deta, etadot = (np.broadcast_to(a, phi.shape) for a in self._boundary_data(x1[0])[:3])
        J = 1.0 + eta * dphi
        b = -deta * phi
        out = {
            "J": J, "b": b, "A11": J, "A12": b, "A22": (1.0 + b * b) / J,
            "phi": phi, "dphi": dphi, "eta": eta, "deta": deta, "etadot": etadot,
            "w2": etadot * phi,
        }
        if where in ("uface", "vface"):
            phi_f = cutoff(d.yf - d.Ly, d.L)
            eta_f = self._boundary_data(d.xf)[0]
            if where == "uface":
                out["Jflux"] = 1.0 + eta_f[None, :] * (np.diff(phi_f) / d.dy)[:, None]
            else:
                out["bflux"] = -((np.roll(eta_f, -1) - eta_f) / d.dx)[None, :] * phi_f[:, None]
        self._cache[where] = out
        return out

    def area(self):
        """``|Omega_eta| = int J dx`` by the midpoint rule on cell centres."""
        d = self.domain
        return float(np.sum(self.coeffs("center")["J"]) * d.dx * d.dy)


def hanzawa_forward(domain, eta, x):
    m = HanzawaMap(domain, eta)
    if m.sup_eta() >= domain.L:
        raise DegeneracyError("sup|eta| >= L")
    return m.forward(x)


def hanzawa_inverse(domain, eta, xt):
    m = HanzawaMap(domain, eta)
    if m.sup_eta() >= domain.L:
        raise DegeneracyError("sup|eta| >= L")
    return m.inverse(xt)


def hanzawa_jacobian(domain, eta, x):
    m = HanzawaMap(domain, eta)
    if m.sup_eta() >= domain.L:
        raise DegeneracyError("sup|eta| >= L")
    F, J = m.jacobian(x)
    if np.any(J <= 0):
        raise DegeneracyError("non-positive Jacobian")
    return F, J


def piola_matrices(domain, eta, x):
    return HanzawaMap(domain, eta).piola(x)


def map_time_derivative(domain, eta, etadot, x):
    m = HanzawaMap(domain, eta, etadot)
    if m.sup_eta() >= domain.L:
        raise DegeneracyError("sup|eta| >= L")
    return m.time_derivative(x)
