"""Incompressible solvent on the reference channel (transformed formulation).

Unknowns live on a marker-and-cell grid: ``u`` on vertical faces
``(ny, nx)``, ``v`` on horizontal faces ``(ny + 1, nx)`` (rows 0 and ny are
the rigid wall and the shell), pressure at cell centres. The moving domain
enters only through the frozen map coefficients ``J``, ``B`` and ``A``:

    J u_t = nu div(A grad u) - div(B p) + div(B T) - (grad u) B (u - d_t Psi),
    B^T : grad u = 0,

with the divergence of a matrix taken over its first index. The diagonal of
``A`` is treated implicitly, its off-diagonal and all transport terms
explicitly. Velocity and pressure are solved together as one sparse
saddle-point system, so the transformed constraint and no-slip hold to
solver precision with no splitting slip at the walls.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .algebra import vorticity_tensor
from .solvers import FactorisationError, ReusedFactorisation


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class FluidState:
    u: np.ndarray  # (ny, nx) horizontal velocity on vertical faces
    v: np.ndarray  # (ny + 1, nx) vertical velocity on horizontal faces
    p: np.ndarray  # (ny, nx) pressure, mean zero
    t: float = 0.0

    @classmethod
    def rest(cls, domain, t=0.0):
        ny, nx = domain.ny, domain.nx
        return cls(np.zeros((ny, nx)), np.zeros((ny + 1, nx)), np.zeros((ny, nx)), t)

    @classmethod
    def from_streamfunction(cls, domain, psi, t=0.0):
        """Velocity ``(d_y psi, -d_x psi)`` differenced from corner values.

        ``psi(x, y)`` is evaluated at the cell corners, which makes the flat
        discrete divergence vanish identically; ``psi`` should be constant on
        each wall so that nothing crosses them.
        """
        d = domain
        X, Y = np.meshgrid(np.append(d.xf, d.Lx), d.yf)
        s = psi(X, Y)
        u = (s[1:, :-1] - s[:-1, :-1]) / d.dy
        v = -(s[:, 1:] - s[:, :-1]) / d.dx
        return cls(u, v, np.zeros((d.ny, d.nx)), t)


def cellular_flow(domain, amplitude=0.25):
    """Steady periodic cells ``psi = a sin(2 pi x / Lx) sin^2(pi y / Ly)``."""
    kx, ky = 2 * np.pi / domain.Lx, np.pi / domain.Ly
    return FluidState.from_streamfunction(
        domain, lambda x, y: amplitude * np.sin(kx * x) * np.sin(ky * y) ** 2)


# --- collocated helpers ---------------------------------------------------------

def ddx_periodic(f, dx):
    return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2 * dx)


def ddy_with_walls(f, bottom, top, domain):
    """Second-order y-derivative of a cell-centred field given wall values."""
    ext = np.concatenate([np.asarray(bottom)[None, :], f, np.asarray(top)[None, :]], axis=0)
    y = np.concatenate([[0.0], domain.yc, [domain.Ly]])
    return np.gradient(ext, y, axis=0, edge_order=2)[1:-1]


def neumann_wall_values(f):
    """Wall traces of a cell-centred field with zero normal derivative."""
    return (9 * f[0] - f[1]) / 8, (9 * f[-1] - f[-2]) / 8


def velocity_at_centers(u, v):
    uc = 0.5 * (u + np.roll(u, -1, axis=1))
    vc = 0.5 * (v[:-1] + v[1:])
    return uc, vc


def velocity_gradient_centers(state, domain):
    """Reference-coordinate gradient ``G[..., i, j] = d u_i / d x_j`` at cell centres."""
    uc, vc = velocity_at_centers(state.u, state.v)
    G = np.empty(uc.shape + (2, 2))
    G[..., 0, 0] = (np.roll(state.u, -1, axis=1) - state.u) / domain.dx
    G[..., 0, 1] = ddy_with_walls(uc, np.zeros(domain.nx), np.zeros(domain.nx), domain)
    G[..., 1, 0] = ddx_periodic(vc, domain.dx)
    G[..., 1, 1] = (state.v[1:] - state.v[:-1]) / domain.dy
    return G


def physical_gradient_centers(state, fmap):
    """``grad_x u = (grad u) (grad Psi)^{-1}`` at cell centres."""
    c = fmap.coeffs("center")
    G = velocity_gradient_centers(state, fmap.domain)
    J, b = c["J"], c["b"]
    # (grad Psi)^{-1} = (1/J) [[J, 0], [b, 1]]
    out = np.empty_like(G)
    out[..., 0] = G[..., 0] + G[..., 1] * (b / J)[..., None]
    out[..., 1] = G[..., 1] / J[..., None]
    return out


def centers_to_ufaces(f):
    return 0.5 * (f + np.roll(f, 1, axis=-1))


def centers_to_vfaces(f):
    """Average to interior horizontal faces (rows 1..ny-1)."""
    return 0.5 * (f[..., :-1, :] + f[..., 1:, :])


# --- pointwise correction terms ----------------------------------------------

def correction_h(u, dudt, gradu, J, B, dinv):
    """``(1 - J) u_t - J (grad u) (d_t Psi^{-1} o Psi) - (grad u) B u`` point-wise.

    ``gradu[..., i, j] = d u_i / d x_j``; ``dinv`` is ``(d_t Psi^{-1}) o Psi``.
    """
    J = np.asarray(J, dtype=float)[..., None]
    Bu = np.einsum("...ij,...j->...i", B, u)
    return ((1.0 - J) * dudt
            - J * np.einsum("...ij,...j->...i", gradu, dinv)
            - np.einsum("...ij,...j->...i", gradu, Bu))


def correction_G(gradu, p, T, A, B, nu=1.0):
    """``nu (I - A) grad u - (I - B)(p I - T)`` point-wise."""
    eye = np.eye(2)
    p = np.asarray(p, dtype=float)[..., None, None]
    return nu * (eye - A) @ gradu - (eye - B) @ (p * eye - T)


# --- the stepper ------------------------------------------------------------------

class FluidSolver:
    """Implicit Stokes stepper (velocity and pressure solved together).

    Operators are assembled once per map; the sparse factorisation is reused
    across nearby maps as a preconditioner.
    """

    def __init__(self, domain, nu, dt):
        self.domain, self.nu, self.dt = domain, nu, dt
        ny, nx = domain.ny, domain.nx
        self.nu_dofs = ny * nx
        self.nv_dofs = (ny - 1) * nx
        self._ops = None
        self._ops_key = None
        self._saddle = ReusedFactorisation()

    # assembly ---------------------------------------------------------------
    def _divergence_matrix(self, fmap):
        d = self.domain
        ny, nx, dx, dy = d.ny, d.nx, d.dx, d.dy
        Jx = fmap.coeffs("uface")["Jflux"]
        by = fmap.coeffs("vface")["bflux"]
        rows, cols, vals = [], [], []
        jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        cell = (jj * nx + ii).ravel()
        ip = (ii + 1) % nx

        def add(r, c, v):
            rows.append(np.ravel(r)), cols.append(np.ravel(c)), vals.append(np.ravel(v))

        add(cell, (jj * nx + ip).ravel(), (Jx[jj, ip] / dx).ravel())
        add(cell, cell, (-Jx[jj, ii] / dx).ravel())
        # horizontal-face fluxes v + b * avg(u), interior faces only
        for shift, sign in ((1, 1.0), (0, -1.0)):
            jf = jj + shift
            inner = (jf >= 1) & (jf <= ny - 1)
            r = cell[inner.ravel()]
            jfi, iii = jf[inner], ii[inner]
            add(r, self.nu_dofs + (jfi - 1) * nx + iii, np.full(r.size, sign / dy))
            w = sign * 0.25 * by[jfi, iii] / dy
            for jo, io in ((jfi - 1, iii), (jfi - 1, (iii + 1) % nx), (jfi, iii), (jfi, (iii + 1) % nx)):
                add(r, jo * nx + io, w)
        D = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(ny * nx, self.nu_dofs + self.nv_dofs))
        D.sum_duplicates()
        return D

    def _laplacian_u(self, fmap):
        d = self.domain
        ny, nx, dx, dy = d.ny, d.nx, d.dx, d.dy
        A11 = fmap.coeffs("center")["A11"]
        A22 = fmap.coeffs("corner")["A22"]
        idx = np.arange(ny * nx).reshape(ny, nx)
        diag = np.zeros((ny, nx))
        rows, cols, vals = [], [], []
        # x fluxes: between u[j,i] and u[j,i+1], coefficient at centre (j,i)
        cx = A11 / dx**2
        rows += [idx.ravel(), np.roll(idx, -1, 1).ravel()]
        cols += [np.roll(idx, -1, 1).ravel(), idx.ravel()]
        vals += [cx.ravel(), cx.ravel()]
        diag -= cx + np.roll(cx, 1, axis=1)
        # y fluxes through interior corners
        cy = A22[1:ny] / dy**2
        rows += [idx[:-1].ravel(), idx[1:].ravel()]
        cols += [idx[1:].ravel(), idx[:-1].ravel()]
        vals += [cy.ravel(), cy.ravel()]
        diag[:-1] -= cy
        diag[1:] -= cy
        # no-slip walls at half a cell
        diag[0] -= 2 * A22[0] / dy**2
        diag[-1] -= 2 * A22[ny] / dy**2
        rows.append(idx.ravel()), cols.append(idx.ravel()), vals.append(diag.ravel())
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(ny * nx, ny * nx))

    def _laplacian_v(self, fmap):
        d = self.domain
        ny, nx, dx, dy = d.ny, d.nx, d.dx, d.dy
        A11 = fmap.coeffs("corner")["A11"][1:ny]      # (ny-1, nx), at (xf_i, yf_j)
        A22 = fmap.coeffs("center")["A22"]            # (ny, nx)
        m = ny - 1
        idx = np.arange(m * nx).reshape(m, nx)
        diag = np.zeros((m, nx))
        rows, cols, vals = [], [], []
        # x fluxes between v[j,i] and v[j,i+1] sit on corner (j, i+1)
        cx = np.roll(A11, -1, axis=1) / dx**2
        rows += [idx.ravel(), np.roll(idx, -1, 1).ravel()]
        cols += [np.roll(idx, -1, 1).ravel(), idx.ravel()]
        vals += [cx.ravel(), cx.ravel()]
        diag -= cx + np.roll(cx, 1, axis=1)
        # y fluxes between faces j and j+1 sit on centre row j
        cy = A22 / dy**2
        inner = cy[1:m]
        rows += [idx[:-1].ravel(), idx[1:].ravel()]
        cols += [idx[1:].ravel(), idx[:-1].ravel()]
        vals += [inner.ravel(), inner.ravel()]
        diag -= cy[:m] + cy[1:]
        rows.append(idx.ravel()), cols.append(idx.ravel()), vals.append(diag.ravel())
        K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(m * nx, m * nx))
        return K, cy[m]  # coefficient multiplying the shell velocity in the last row

    def operators(self, fmap):
        if self._ops is not None and self._ops_key == fmap.key:
            return self._ops
        d, dt, nu = self.domain, self.dt, self.nu
        ny = d.ny
        mu = fmap.coeffs("uface")["J"].ravel()
        mv = fmap.coeffs("vface")["J"][1:ny].ravel()
        Ku = self._laplacian_u(fmap)
        Kv, top_coef = self._laplacian_v(fmap)
        H = sp.block_diag([sp.diags(mu / dt) - nu * Ku, sp.diags(mv / dt) - nu * Kv])
        D = self._divergence_matrix(fmap)
        # symmetric saddle system [[H, -D^T], [-D, 0]]; pressure pinned in cell 0
        Dr = D[1:]
        K = sp.bmat([[H, -Dr.T], [-Dr, None]], format="csc")
        try:
            self._saddle.update(K, fmap.key)
        except FactorisationError as exc:
            raise SolverError(str(exc)) from exc
        ops = {"mass": np.concatenate([mu, mv]), "D": D, "K": self._saddle,
               "top_coef": top_coef}
        self._ops, self._ops_key = ops, fmap.key
        return ops

    # explicit forces -----------------------------------------------------------
    def explicit_forces(self, state, T, fmap, v_top):
        """Transport, stress divergence and off-diagonal viscous forces.

        Returns ``(fu, fv)`` on the u-faces and interior v-faces.
        """
        d = self.domain
        nx, dx = d.nx, d.dx
        c = fmap.coeffs("center")
        v_full = state.v
        uc, vc = velocity_at_centers(state.u, v_full)
        zero = np.zeros(nx)
        gx_u, gy_u = ddx_periodic(uc, dx), ddy_with_walls(uc, zero, zero, d)
        gx_v, gy_v = ddx_periodic(vc, dx), ddy_with_walls(vc, zero, v_full[-1], d)

        fu_c = np.zeros_like(uc)
        fv_c = np.zeros_like(vc)
        if np.any(state.u) or np.any(v_full):
            # -(grad u) B (u - d_t Psi)
            a1 = c["J"] * uc
            a2 = c["b"] * uc + vc - c["w2"]
            fu_c -= a1 * gx_u + a2 * gy_u
            fv_c -= a1 * gx_v + a2 * gy_v
            if not fmap.is_identity:
                # nu [d_x(A12 d_y w) + d_y(A12 d_x w)] per component
                A12 = c["A12"]
                A12_top = fmap.coeffs("vface")["A12"][-1]
                dtop = fmap.etadot_at(d.xc, 1)
                for f, gx, gy, top_gx in ((fu_c, gx_u, gy_u, zero), (fv_c, gx_v, gy_v, dtop)):
                    q = A12 * gx
                    f += self.nu * (ddx_periodic(A12 * gy, dx) + ddy_with_walls(q, zero, A12_top * top_gx, d))
        fu = centers_to_ufaces(fu_c)
        fv = centers_to_vfaces(fv_c)

        if T is not None and np.any(T):
            fu_T, fv_T = stress_divergence(T, fmap)
            fu = fu + fu_T
            fv = fv + fv_T
        return fu, fv

    # the step --------------------------------------------------------------------
    def step(self, state, T, fmap, v_top):
        """Advance one step with shell velocity ``v_top`` on the flexible wall."""
        d, dt, nu = self.domain, self.dt, self.nu
        ny, nx = d.ny, d.nx
        ops = self.operators(fmap)
        v_top = np.asarray(v_top, dtype=float)
        fu, fv = self.explicit_forces(state, T, fmap, v_top)
        mu = ops["mass"][: self.nu_dofs]
        mv = ops["mass"][self.nu_dofs:]
        rhs_u = mu * state.u.ravel() / dt + fu.ravel()
        rhs_v = mv * state.v[1:ny].ravel() / dt + fv.ravel()
        rhs_v[-nx:] += nu * ops["top_coef"] * v_top
        # the shell velocity enters the divergence of the top row of cells
        bvec = np.zeros(ny * nx)
        bvec[-nx:] = v_top / d.dy
        sol = ops["K"].solve(np.concatenate([rhs_u, rhs_v, bvec[1:]]))
        nw = self.nu_dofs + self.nv_dofs
        w = sol[:nw]
        p = np.concatenate([[0.0], sol[nw:]])
        p -= p.mean()
        u = w[: self.nu_dofs].reshape(ny, nx)
        v = np.empty((ny + 1, nx))
        v[0] = 0.0
        v[1:ny] = w[self.nu_dofs:].reshape(ny - 1, nx)
        v[ny] = v_top
        out = FluidState(u, v, p.reshape(ny, nx), state.t + dt)
        res = divergence_residual(out, fmap)
        if not np.isfinite(res) or res > 1e-8:
            raise SolverError(f"transformed divergence residual {res:.3e} after projection")
        return out


def stress_divergence(T, fmap):
    """Column divergence of ``B T`` on u-faces and interior v-faces.

    ``T`` is a cell-centred field of symmetric matrices, shape ``(ny, nx, 2, 2)``.
    """
    d = fmap.domain
    c = fmap.coeffs("center")
    cw = fmap.coeffs("vface")
    J, b = c["J"], c["b"]
    M11 = J * T[..., 0, 0]
    M12 = J * T[..., 0, 1]
    M21 = b * T[..., 0, 0] + T[..., 1, 0]
    M22 = b * T[..., 0, 1] + T[..., 1, 1]
    # wall traces with zero normal derivative of T
    T_bot, T_top = neumann_wall_values(T)
    M21_bot = cw["b"][0] * T_bot[..., 0, 0] + T_bot[..., 1, 0]
    M21_top = cw["b"][-1] * T_top[..., 0, 0] + T_top[..., 1, 0]
    dy_M21 = ddy_with_walls(M21, M21_bot, M21_top, d)
    fu = (M11 - np.roll(M11, 1, axis=1)) / d.dx + centers_to_ufaces(dy_M21)
    fv = centers_to_vfaces(ddx_periodic(M12, d.dx)) + (M22[1:] - M22[:-1]) / d.dy
    return fu, fv


def transformed_divergence(state, fmap):
    """Cell-wise discrete ``B^T : grad u`` in conservative form ``div(B u)``."""
    d = fmap.domain
    Jx = fmap.coeffs("uface")["Jflux"]
    by = fmap.coeffs("vface")["bflux"]
    u, v = state.u, state.v
    flux_x = Jx * u
    u_avg = np.zeros_like(v)
    u_avg[1:-1] = 0.25 * (u[:-1] + np.roll(u[:-1], -1, 1) + u[1:] + np.roll(u[1:], -1, 1))
    flux_y = v + by * u_avg
    return (np.roll(flux_x, -1, axis=1) - flux_x) / d.dx + (flux_y[1:] - flux_y[:-1]) / d.dy


def divergence_residual(state, fmap):
    d = fmap.domain
    r = transformed_divergence(state, fmap)
    return float(np.sqrt(np.sum(r * r) * d.dx * d.dy))


def fluid_step(state, T, fmap, shell_velocity, nu, dt, solver=None):
    solver = solver or FluidSolver(fmap.domain, nu, dt)
    return solver.step(state, T, fmap, shell_velocity)


# --- diagnostics ------------------------------------------------------------------

def kinetic_energy(state, fmap):
    """``1/2 ||u||^2`` on the deformed domain (interior unknowns, J-weighted)."""
    d = fmap.domain
    Ju = fmap.coeffs("uface")["J"]
    Jv = fmap.coeffs("vface")["J"][1:-1]
    return 0.5 * d.dx * d.dy * (np.sum(Ju * state.u**2) + np.sum(Jv * state.v[1:-1] ** 2))


def velocity_l2(state, fmap):
    return float(np.sqrt(2.0 * kinetic_energy(state, fmap)))


def gradient_norm_sq(state, fmap):
    """``||grad_x u||^2_{L^2(Omega_eta)} = int A grad u_c . grad u_c dx`` at cell centres."""
    d = fmap.domain
    c = fmap.coeffs("center")
    G = velocity_gradient_centers(state, d)
    A11, A12, A22 = c["A11"], c["A12"], c["A22"]
    total = 0.0
    for comp in range(2):
        g1, g2 = G[..., comp, 0], G[..., comp, 1]
        total += np.sum(A11 * g1 * g1 + 2 * A12 * g1 * g2 + A22 * g2 * g2)
    return float(total * d.dx * d.dy)


def interface_stress(state, T, fmap, nu):
    """Physical Cauchy stress ``nu (grad u + grad u^T) - p I + T`` on the flexible wall."""
    d = fmap.domain
    dy = d.dy
    u, v, p = state.u, state.v, state.p
    uc, _ = velocity_at_centers(u, v)
    G = np.zeros((d.nx, 2, 2))
    G[:, 0, 1] = (-9 * uc[-1] + uc[-2]) / (3 * dy)
    G[:, 1, 0] = fmap.etadot_at(d.xc, 1) if not fmap.is_identity else 0.0
    G[:, 1, 1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * dy)
    top = fmap.coeffs("vface")
    J, b = top["J"][-1], top["b"][-1]
    Gx = G.copy()
    Gx[:, :, 0] = G[:, :, 0] + G[:, :, 1] * (b / J)[:, None]
    Gx[:, :, 1] = G[:, :, 1] / J[:, None]
    S = nu * (Gx + np.swapaxes(Gx, 1, 2))
    p_top = 1.5 * p[-1] - 0.5 * p[-2]
    S[:, 0, 0] -= p_top
    S[:, 1, 1] -= p_top
    if T is not None:
        S += (9 * T[-1] - T[-2]) / 8
    return S


def vorticity_centers(state, fmap):
    """Antisymmetric part of the physical velocity gradient at cell centres."""
    return vorticity_tensor(physical_gradient_centers(state, fmap))
