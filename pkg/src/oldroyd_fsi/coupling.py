"""Partitioned time stepping of stress, shell and solvent on the moving channel.

Within a step the map is frozen at the old shell position. The stress is
advanced first; then traction -> shell -> fluid is iterated to a fixed point
in the shell velocity (Aitken-accelerated), and the map is rebuilt from the
new shell displacement.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .fluid import (FluidSolver, FluidState, SolverError, gradient_norm_sq,
                    interface_stress, kinetic_energy, velocity_l2)
from .geometry import DegeneracyError, HanzawaMap, ReferenceDomain, spectral_derivative
from .shell import (ShellIntegrator, ShellState, shell_dissipation, shell_energy,
                    sobolev_norms, traction_forcing)
from .solute import DiffusionCache, StressField, lq_norm, solute_step

log = logging.getLogger(__name__)


class CouplingError(SolverError):
    pass


@dataclass(frozen=True)
class Params:
    domain: ReferenceDomain
    nu: float = 1.0
    gamma: float = 1.0
    eps: float = 0.5
    dt: float = 1e-2
    min_subiterations: int = 2
    max_subiterations: int = 50
    coupling_tol: float = 1e-6

    def __post_init__(self):
        if self.nu <= 0 or self.gamma < 0 or self.eps < 0 or self.dt <= 0:
            raise ValueError("need nu > 0, gamma >= 0, eps >= 0, dt > 0")
        if self.min_subiterations < 1 or self.max_subiterations < self.min_subiterations:
            raise ValueError("inconsistent sub-iteration bounds")


_MAPS = {}


def _shared_map(domain, eta, etadot):
    """Maps are rebuilt from the state many times per step; keep the last few."""
    key = (domain, eta.tobytes(), etadot.tobytes())
    fmap = _MAPS.get(key)
    if fmap is None:
        if len(_MAPS) >= 8:
            _MAPS.pop(next(iter(_MAPS)))
        fmap = _MAPS[key] = HanzawaMap(domain, eta, etadot)
    return fmap


@dataclass(frozen=True)
class CoupledState:
    shell: ShellState
    fluid: FluidState
    stress: StressField
    t: float = 0.0
    subiterations: int = 0
    coupling_residual: float = 0.0
    # gamma int ||d_y etadot||^2 over the step that produced this state
    shell_dissipated: float = 0.0

    def map(self, domain):
        return _shared_map(domain, self.shell.eta, self.shell.etadot)

    @classmethod
    def rest(cls, domain, eps=0.0):
        return cls(ShellState.rest(domain.n_omega), FluidState.rest(domain),
                   StressField(np.zeros((3, domain.ny, domain.nx)), 0.0, eps))


class CoupledSolver:
    """Holds the per-run caches (shell propagators, fluid factorisations)."""

    def __init__(self, params):
        self.params = params
        d = params.domain
        self.shell = ShellIntegrator(d.n_omega, d.Lx, params.gamma, params.dt)
        self.fluid = FluidSolver(d, params.nu, params.dt)
        self.diffusion = DiffusionCache()

    def _traction(self, fluid, T, fmap, eta):
        S = interface_stress(fluid, T, fmap, self.params.nu)
        return traction_forcing(S, spectral_derivative(eta, fmap.domain.Lx, 1))

    def step(self, state, subiterations=None):
        p = self.params
        d = p.domain
        fmap = state.map(d).check(state.t)
        stress = solute_step(state.stress, state.fluid, fmap, p.eps, p.dt, self.diffusion)
        T = stress.tensor
        t_new = state.t + p.dt

        n_min = p.min_subiterations if subiterations is None else subiterations
        n_max = p.max_subiterations if subiterations is None else subiterations
        fluid = state.fluid
        g_prev = r_prev = None
        omega = 1.0
        change = np.inf
        for k in range(1, n_max + 1):
            g_raw = self._traction(fluid, T, fmap, state.shell.eta)
            if g_prev is None:
                g = g_raw
            else:
                # Aitken-relaxed fixed point on the interface load
                r = g_raw - g_prev
                if r_prev is not None:
                    dr = r - r_prev
                    denom = float(np.dot(dr, dr))
                    if denom > 0:
                        omega = float(np.clip(-omega * np.dot(r_prev, dr) / denom, 0.05, 1.0))
                g = g_prev + omega * r
                r_prev = r
            shell = self.shell.step(state.shell, g, L=d.L)
            if k > 1:
                change = float(np.max(np.abs(shell.etadot - etadot_prev)))
            fluid = self.fluid.step(state.fluid, T, fmap, shell.etadot)
            etadot_prev, g_prev = shell.etadot, g
            if k >= n_min and change <= p.coupling_tol:
                break
        residual = self.dynamic_residual(state.shell, shell, fluid, T, fmap)
        if subiterations is None and min(change, residual) > p.coupling_tol:
            raise CouplingError(f"interface residual {residual:.3e} after {k} sub-iterations "
                                f"at t = {t_new:.6g}")
        spent = self.shell.dissipation_integral(state.shell, g)
        new = CoupledState(shell, fluid, stress, t_new, k, residual, spent)
        new.map(d).check(t_new)
        return new

    def dynamic_residual(self, old_shell, shell, fluid, T, fmap):
        """Shell-velocity change if the load were re-evaluated from the committed fluid."""
        g = self._traction(fluid, T, fmap, old_shell.eta)
        again = self.shell.step(old_shell, g)
        return float(np.max(np.abs(again.etadot - shell.etadot)))


def coupled_step(state, params, solver=None, subiterations=None):
    return (solver or CoupledSolver(params)).step(state, subiterations)


def check_interface(state, domain):
    """Kinematic mismatch ``max |u(top) - (0, d_t eta)|`` on the flexible wall."""
    top_u = np.zeros(domain.nx)  # no tangential slip is built into the grid
    top_v = state.fluid.v[-1]
    return float(max(np.max(np.abs(top_u)), np.max(np.abs(top_v - state.shell.etadot))))


# --- energy ledger and observers -------------------------------------------------

def energy_terms(state, params):
    """Per-state energy and dissipation pieces, all on the deformed domain."""
    d = params.domain
    fmap = state.map(d)
    ek = kinetic_energy(state.fluid, fmap)
    sk, se = shell_energy(state.shell, d.Lx)
    T = state.stress
    J = fmap.coeffs("center")["J"]
    f = T.frobenius()
    stress_sq = float(np.sum(J * f * f) * d.dx * d.dy)
    return {
        "fluid_kinetic": ek,
        "shell_kinetic": sk,
        "shell_elastic": se,
        "total": ek + sk + se,
        "viscous": params.nu * gradient_norm_sq(state.fluid, fmap),
        "shell_dissipation": shell_dissipation(state.shell, d.Lx, params.gamma),
        "shell_dissipated_step": state.shell_dissipated,
        "stress_sq": stress_sq,
    }


def energy_defect(before, after, params):
    """``dE + int gamma |etadot_y|^2 + dt nu/2 |grad u|^2 - dt |T|^2 / (2 nu)`` for one step.

    The fluid is backward Euler, so its end-of-step dissipation is the
    discrete one; the shell is propagated exactly, so its dissipation is
    integrated along the step.
    """
    dt, nu = params.dt, params.nu
    return (after["total"] - before["total"]
            + after["shell_dissipated_step"] + dt * 0.5 * after["viscous"]
            - dt * after["stress_sq"] / (2 * nu))


def observe(state, params):
    d = params.domain
    fmap = state.map(d)
    T = state.stress
    e = energy_terms(state, params)
    full, _ = sobolev_norms(state.shell.eta, d.Lx)
    etadot_l2 = float(np.sqrt(np.sum(state.shell.etadot**2) * d.Lx / state.shell.eta.size))
    return {
        "t": state.t,
        "norm_T_L2": lq_norm(T, 2, fmap),
        "norm_u_L2": velocity_l2(state.fluid, fmap),
        "norm_etadot_L2": etadot_l2,
        "norm_eta_W22": float(full),
        "energy_total": e["total"],
        "lq2_T": lq_norm(T, 2, fmap),
        "lq4_T": lq_norm(T, 4, fmap),
        "lq8_T": lq_norm(T, 8, fmap),
        "lqinf_T": lq_norm(T, np.inf, fmap),
        "interface_residual": max(check_interface(state, d), state.coupling_residual),
        "area_J": fmap.area(),
        "_energy": e,
    }


@dataclass
class Trajectory:
    samples: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    defects: list = field(default_factory=list)
    status: str = "ok"
    failure_time: float = None
    message: str = ""

    def series(self, key):
        return np.array([s[key] for s in self.samples])

    @property
    def times(self):
        return self.series("t")


def run_trajectory(initial, params, t_max, sample_every=1, keep_snapshots=False, observers=()):
    """Step to ``t_max``; degeneracy ends the run early with a structured record."""
    solver = CoupledSolver(params)
    traj = Trajectory()
    n_steps = int(round(t_max / params.dt))
    state = initial
    dissipation = 0.0

    def record(s):
        obs = observe(s, params)
        obs["dissipation_cum"] = dissipation
        traj.samples.append(obs)
        if keep_snapshots:
            traj.snapshots.append(s)
        for fn in observers:
            fn(s, obs)

    try:
        state.map(params.domain).check(state.t)
    except DegeneracyError as exc:
        traj.status, traj.failure_time, traj.message = "degenerate", state.t, str(exc)
        return traj
    record(state)
    before = traj.samples[-1]["_energy"]
    for n in range(1, n_steps + 1):
        try:
            state = solver.step(state)
        except DegeneracyError as exc:
            traj.status = "degenerate"
            traj.failure_time = exc.time if exc.time is not None else state.t + params.dt
            traj.message = str(exc)
            log.info("trajectory stopped: %s", exc)
            return traj
        after = energy_terms(state, params)
        traj.defects.append(energy_defect(before, after, params))
        dissipation += params.dt * after["viscous"] + after["shell_dissipated_step"]
        before = after
        if n % sample_every == 0 or n == n_steps:
            record(state)
    return traj
