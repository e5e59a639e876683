"""Extra-stress transport: corotational, damped and diffusive.

A step is split into three pieces:

* transport along the reference-frame characteristics ``x' = F^{-1}(u - d_t Psi)``
  (semi-Lagrangian, cubic spline at the foot, clipped to the local stencil),
* exact rotation ``T -> R T R^T`` with the vorticity of the physical gradient,
* for ``eps > 0``: damping and diffusion ``-eps (1 - Delta_x) T``. Damping is
  applied exactly; diffusion is Crank-Nicolson in the ``J``-weighted form
  ``J T_t = eps div(A grad T)`` with zero conormal flux at both walls.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import map_coordinates

from .algebra import frobenius, rotation_matrix, vorticity_tensor
from .fluid import SolverError, physical_gradient_centers, velocity_at_centers
from .solvers import ReusedFactorisation

log = logging.getLogger(__name__)

PAD = 3


@dataclass(frozen=True)
class StressField:
    """Symmetric stress field stored as ``(T11, T12, T22)`` on cell centres."""

    comps: np.ndarray  # (3, ny, nx)
    t: float = 0.0
    eps: float = 0.0

    @classmethod
    def from_tensor(cls, T, t=0.0, eps=0.0):
        T = np.asarray(T, dtype=float)
        return cls(np.stack([T[..., 0, 0], 0.5 * (T[..., 0, 1] + T[..., 1, 0]), T[..., 1, 1]]), t, eps)

    @classmethod
    def constant(cls, domain, T0, t=0.0, eps=0.0):
        T = np.broadcast_to(np.asarray(T0, dtype=float), (domain.ny, domain.nx, 2, 2))
        return cls.from_tensor(T, t, eps)

    @property
    def tensor(self):
        c = self.comps
        T = np.empty(c.shape[1:] + (2, 2))
        T[..., 0, 0] = c[0]
        T[..., 0, 1] = T[..., 1, 0] = c[1]
        T[..., 1, 1] = c[2]
        return T

    def frobenius(self):
        c = self.comps
        return np.sqrt(c[0] ** 2 + 2 * c[1] ** 2 + c[2] ** 2)


def lq_norm(T, q, fmap):
    """``J``-weighted ``L^q`` norm of the cell-wise Frobenius norm; ``q = inf`` gives the max."""
    f = T.frobenius() if isinstance(T, StressField) else frobenius(T)
    if np.isinf(q):
        return float(np.max(f, initial=0.0))
    d = fmap.domain
    J = fmap.coeffs("center")["J"]
    return float((np.sum(J * f**q) * d.dx * d.dy) ** (1.0 / q))


# --- pointwise correction --------------------------------------------------------

def correction_H(T, dTdt, gradT, u, gradu, J, B, dinv):
    """Point-wise ``(1-J) T_t - J grad T . dinv + W(G)(B-I)T + T(B-I)^T W(G^T) + (u.grad T)(I-B)``.

    ``gradT[..., i, j, k] = d T_ij / d x_k``, ``gradu[..., i, j] = d u_i / d x_j``
    and ``dinv = (d_t Psi^{-1}) o Psi``.
    """
    eye = np.eye(2)
    J = np.asarray(J, dtype=float)[..., None, None]
    BI = B - eye
    W = vorticity_tensor(gradu)
    WT = vorticity_tensor(np.swapaxes(gradu, -1, -2))
    return ((1.0 - J) * dTdt
            - J * np.einsum("...ijk,...k->...ij", gradT, dinv)
            + W @ BI @ T
            + T @ np.swapaxes(BI, -1, -2) @ WT
            + np.einsum("...ijk,...k->...ij", gradT, u) @ (eye - B))


def correction_H_terms(T, dTdt, gradT, u, gradu, J, B, dinv):
    """The five summands of :func:`correction_H` separately, in order."""
    eye = np.eye(2)
    Jm = np.asarray(J, dtype=float)[..., None, None]
    BI = B - eye
    return (
        (1.0 - Jm) * dTdt,
        -Jm * np.einsum("...ijk,...k->...ij", gradT, dinv),
        vorticity_tensor(gradu) @ BI @ T,
        T @ np.swapaxes(BI, -1, -2) @ vorticity_tensor(np.swapaxes(gradu, -1, -2)),
        np.einsum("...ijk,...k->...ij", gradT, u) @ (eye - B),
    )


# --- characteristics ----------------------------------------------------------

def reference_velocity(fluid, fmap):
    """Cell-centred ``F^{-1}(u - d_t Psi)`` (the transport field in reference coordinates)."""
    c = fmap.coeffs("center")
    uc, vc = velocity_at_centers(fluid.u, fluid.v)
    return uc, (c["b"] * uc + vc - c["w2"]) / c["J"]


def _periodic_interpolator(field, domain, bottom, top):
    """Bilinear interpolant of a cell-centred field with wall rows, wrapped in x."""
    ext = np.concatenate([bottom[None], field, top[None]], axis=0)
    ext = np.concatenate([ext[:, -1:], ext, ext[:, :1]], axis=1)
    y = np.concatenate([[0.0], domain.yc, [domain.Ly]])
    x = np.concatenate([[domain.xc[0] - domain.dx], domain.xc, [domain.xc[-1] + domain.dx]])
    return RegularGridInterpolator((y, x), ext, method="linear")


class Characteristics:
    """Feet of the backward characteristics through every cell centre."""

    def __init__(self, domain, a1, a2, dt):
        self.domain = domain
        zero = np.zeros(domain.nx)
        i1 = _periodic_interpolator(a1, domain, zero, zero)
        i2 = _periodic_interpolator(a2, domain, zero, zero)
        X, Y = np.meshgrid(domain.xc, domain.yc)
        # midpoint rule (RK2) backwards in time
        xm, ym = self._wrap_clamp(X - 0.5 * dt * a1, Y - 0.5 * dt * a2)
        pts = np.stack([ym, xm], axis=-1)
        xf, yf = X - dt * i1(pts), Y - dt * i2(pts)
        self.clamped = int(np.sum((yf < 0) | (yf > domain.Ly)))
        if self.clamped:
            log.warning("%d characteristic feet left the reference channel; clamped to the wall",
                        self.clamped)
        self.x, self.y = self._wrap_clamp(xf, yf)
        self.moved = bool(np.any(a1) or np.any(a2))

    def _wrap_clamp(self, x, y):
        d = self.domain
        return np.mod(x, d.Lx), np.clip(y, 0.0, d.Ly)

    def sample(self, field, clip=True):
        """Cubic-spline value of a cell-centred field at the feet, with the
        surrounding 2x2 stencil bounds."""
        d = self.domain
        padded = np.pad(field, ((PAD, PAD), (0, 0)), mode="symmetric")
        padded = np.pad(padded, ((0, 0), (PAD, PAD)), mode="wrap")
        ci = (self.x - d.xc[0]) / d.dx + PAD
        cj = (self.y - d.yc[0]) / d.dy + PAD
        val = map_coordinates(padded, [cj, ci], order=3, mode="nearest")
        if not clip:
            return val, None, None
        i0 = np.floor(ci).astype(int)
        j0 = np.floor(cj).astype(int)
        corners = np.stack([padded[j0, i0], padded[j0, i0 + 1],
                            padded[j0 + 1, i0], padded[j0 + 1, i0 + 1]])
        return val, corners.min(axis=0), corners.max(axis=0)

    def transport(self, comps):
        """Values of the three stress components at the feet, bounded by the stencil."""
        if not self.moved:
            return comps.copy()
        out = np.empty_like(comps)
        for m in range(3):
            val, lo, hi = self.sample(comps[m])
            out[m] = np.clip(val, lo, hi)
        # Frobenius cap: no new extrema of |T| along characteristics
        frob = np.sqrt(comps[0] ** 2 + 2 * comps[1] ** 2 + comps[2] ** 2)
        _, _, cap = self.sample(frob)
        new = np.sqrt(out[0] ** 2 + 2 * out[1] ** 2 + out[2] ** 2)
        scale = np.where(new > cap, cap / np.where(new > 0, new, 1.0), 1.0)
        return out * scale


def rotation_rate(fluid, fmap):
    """``W_12`` of the physical velocity gradient at cell centres."""
    if not (np.any(fluid.u) or np.any(fluid.v)):
        d = fmap.domain
        return np.zeros((d.ny, d.nx))
    return vorticity_tensor(physical_gradient_centers(fluid, fmap))[..., 0, 1]


def _rotate(comps, angle):
    R = rotation_matrix(angle)
    T = StressField(comps).tensor
    return StressField.from_tensor(R @ T @ np.swapaxes(R, -1, -2)).comps


def transport_and_rotate(comps, fluid, fmap, dt):
    a1, a2 = reference_velocity(fluid, fmap)
    ch = Characteristics(fmap.domain, a1, a2, dt)
    moved = ch.transport(comps)
    w = rotation_rate(fluid, fmap)
    if not np.any(w):
        return moved, ch
    w_foot = ch.sample(w, clip=False)[0] if ch.moved else w
    return _rotate(moved, 0.5 * (w + w_foot) * dt), ch


# --- diffusion -------------------------------------------------------------------

def _periodic_diff(n, h):
    """``(f[i] - f[i-1]) / h`` with wrap-around."""
    return (sp.eye(n) - sp.eye(n, k=-1) - sp.eye(n, k=n - 1)) / h


def _neumann_center_gradient(n, h):
    """Centred y-derivative on cell centres using the Neumann wall traces
    ``(9 f0 - f1) / 8``, matching :func:`ddy_with_walls`."""
    y = (np.arange(n) + 0.5) * h
    ext_y = np.concatenate([[0.0], y, [n * h]])
    E = sp.lil_matrix((n + 2, n))
    E[0, 0], E[0, 1] = 9 / 8, -1 / 8
    E[n + 1, n - 1], E[n + 1, n - 2] = 9 / 8, -1 / 8
    for j in range(n):
        E[j + 1, j] = 1.0
    G = sp.lil_matrix((n, n + 2))
    for j in range(1, n + 1):
        hl, hr = ext_y[j] - ext_y[j - 1], ext_y[j + 1] - ext_y[j]
        G[j - 1, j - 1] = -hr / (hl * (hl + hr))
        G[j - 1, j] = (hr - hl) / (hl * hr)
        G[j - 1, j + 1] = hl / (hr * (hl + hr))
    return (G.tocsr() @ E.tocsr()).tocsr()


def metric_laplacian(fmap):
    """Sparse ``div(A grad .)`` on cell centres, periodic in x, zero conormal flux at the walls."""
    d = fmap.domain
    nx, ny = d.nx, d.ny
    Ix, Iy = sp.eye(nx), sp.eye(ny)
    Dx = sp.kron(Iy, _periodic_diff(nx, d.dx))                  # cells -> x-faces
    dy_faces = (sp.eye(ny - 1, ny, k=1) - sp.eye(ny - 1, ny)) / d.dy
    Dy = sp.kron(dy_faces, Ix)                                  # cells -> interior y-faces
    lap = -(Dx.T @ Dx) - (Dy.T @ Dy)
    if not np.any(fmap.eta):
        return lap.tocsr()
    cu = fmap.coeffs("uface")
    cv = fmap.coeffs("vface")
    diag = sp.diags
    Gx = sp.kron(Iy, (sp.eye(nx, k=1) + sp.eye(nx, k=1 - nx) - sp.eye(nx, k=-1)
                      - sp.eye(nx, k=nx - 1)) / (2 * d.dx))
    Gy = sp.kron(_neumann_center_gradient(ny, d.dy), Ix)
    avg_x = sp.kron(Iy, 0.5 * (sp.eye(nx) + sp.eye(nx, k=-1) + sp.eye(nx, k=nx - 1)))
    avg_y = sp.kron(0.5 * (sp.eye(ny - 1, ny) + sp.eye(ny - 1, ny, k=1)), Ix)
    flux_x = diag(cu["A11"].ravel()) @ Dx + diag(cu["A12"].ravel()) @ avg_x @ Gy
    flux_y = diag(cv["A22"][1:-1].ravel()) @ Dy + diag(cv["A12"][1:-1].ravel()) @ avg_y @ Gx
    return (-(Dx.T @ flux_x) - (Dy.T @ flux_y)).tocsr()


def apply_metric_laplacian(f, fmap):
    d = fmap.domain
    return (metric_laplacian(fmap) @ f.ravel()).reshape(d.ny, d.nx)


class DiffusionSolver:
    """Crank-Nicolson step of ``J d_t T = eps div(A grad T)`` on one map.

    A ``DiffusionCache`` shares the factorisation between maps with the same
    ``(domain, eps, dt)``, reusing it as a preconditioner while the shell moves.
    """

    def __init__(self, fmap, eps, dt, factor=None):
        self.key = (fmap.key, eps, dt)
        J = fmap.coeffs("center")["J"].ravel()
        K = metric_laplacian(fmap)
        self.lhs = (sp.diags(J / dt) - 0.5 * eps * K).tocsc()
        self.rhs = (sp.diags(J / dt) + 0.5 * eps * K).tocsr()
        self.factor = factor or ReusedFactorisation()

    def apply(self, comps):
        self.factor.update(self.lhs, self.key)
        flat = comps.reshape(comps.shape[0], -1).T
        return self.factor.solve(np.asarray(self.rhs @ flat)).T.reshape(comps.shape)


class DiffusionCache:
    """Solvers and factorisations kept across the steps of one trajectory.

    Owned by a single run: sharing stale factors between runs would make the
    refinement path, and so the last bits of the result, depend on history.
    """

    def __init__(self, factors=8, solvers=4):
        self.sizes = (factors, solvers)
        self.factors, self.solvers = {}, {}

    @staticmethod
    def _get(cache, key, make, size):
        item = cache.get(key)
        if item is None:
            if len(cache) >= size:
                cache.pop(next(iter(cache)))
            item = cache[key] = make()
        return item

    def solver(self, fmap, eps, dt):
        factor = self._get(self.factors, (fmap.domain, eps, dt), ReusedFactorisation, self.sizes[0])
        return self._get(self.solvers, (fmap.domain, fmap.key, eps, dt),
                         lambda: DiffusionSolver(fmap, eps, dt, factor), self.sizes[1])


def diffusion_solver(fmap, eps, dt, cache=None):
    if cache is None:
        return DiffusionSolver(fmap, eps, dt)
    return cache.solver(fmap, eps, dt)


# --- steps ------------------------------------------------------------------------

def solute_step_diffusive(T, fluid, fmap, eps, dt, cache=None):
    """One step of the damped, diffusive corotational equation on the frozen map."""
    if eps <= 0:
        raise ValueError("the diffusive step needs eps > 0")
    comps, _ = transport_and_rotate(T.comps, fluid, fmap, dt)
    comps = diffusion_solver(fmap, eps, dt, cache).apply(np.exp(-eps * dt) * comps)
    if not np.all(np.isfinite(comps)):
        raise SolverError("non-finite stress after diffusive step")
    return StressField(comps, T.t + dt, eps)


def solute_step_hyperbolic(U, fluid, dt, fmap):
    """One step of pure corotational transport (no relaxation, no diffusion)."""
    comps, _ = transport_and_rotate(U.comps, fluid, fmap, dt)
    if not np.all(np.isfinite(comps)):
        raise SolverError("non-finite stress after transport step")
    return StressField(comps, U.t + dt, 0.0)


def solute_step(T, fluid, fmap, eps, dt, cache=None):
    if eps > 0:
        return solute_step_diffusive(T, fluid, fmap, eps, dt, cache)
    return solute_step_hyperbolic(T, fluid, dt, fmap)
