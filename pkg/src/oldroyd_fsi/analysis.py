"""Decay envelopes, rate fits, relative energy and the vanishing-diffusion sweep."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import map_coordinates

from .coupling import run_trajectory
from .fluid import ddx_periodic, ddy_with_walls, velocity_at_centers
from .geometry import DegeneracyError, HanzawaMap, spectral_derivative

log = logging.getLogger(__name__)

ENVELOPE_TOL = 2e-2


# --- Poincare-Wirtinger constants -------------------------------------------------

def estimate_poincare_constants(domain, maps=()):
    """Return ``(c1, (c2_low, c2_ref, c2_high))``.

    ``c1`` is the first nonzero eigenvalue of ``-d_yy`` on mean-zero periodic
    functions of period ``Lx``. ``c2_ref`` is the first nonzero eigenvalue of
    the Neumann Laplacian on the reference channel (periodic along, Neumann
    across), enumerated over the Fourier/cosine modes the grid resolves. On a
    deformed channel the Rayleigh quotient ``int A grad f . grad f / int J f^2``
    is bracketed by the extreme eigenvalues of ``A`` and values of ``J``.
    """
    kx = 2 * np.pi * np.arange(domain.nx // 2 + 1) / domain.Lx
    ky = np.pi * np.arange(domain.ny) / domain.Ly
    c1 = float(kx[1] ** 2)
    lam = (kx[:, None] ** 2 + ky[None, :] ** 2).ravel()
    c2 = float(np.min(lam[lam > 0]))
    lo = hi = 1.0
    for m in maps:
        c = m.coeffs("center")
        tr = c["A11"] + c["A22"]
        det = c["A11"] * c["A22"] - c["A12"] ** 2
        disc = np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
        lo = min(lo, float(np.min(0.5 * tr - disc) / np.max(c["J"])))
        hi = max(hi, float(np.max(0.5 * tr + disc) / np.min(c["J"])))
    return c1, (c2 * lo, c2, c2 * hi)


# --- envelopes ----------------------------------------------------------------------

def stress_source(t, eps, nu):
    """``(1 - exp(-2 eps t)) / (2 nu eps)``, continuous at ``eps = 0`` (value ``t / nu``)."""
    t = np.asarray(t, dtype=float)
    if eps == 0:
        return t / nu
    return -np.expm1(-2 * eps * t) / (2 * nu * eps)


@dataclass(frozen=True)
class Envelopes:
    eps: float
    nu: float
    gamma: float
    c1: float
    c2: float
    inf_area: float
    norm_T0: float
    norm_u0: float
    norm_eta_star: float

    def stress(self, t):
        return np.exp(-self.eps * np.asarray(t, dtype=float)) * self.norm_T0

    def shell_velocity(self, t):
        s = stress_source(t, self.eps, self.nu)
        return np.exp(-self.c1 * self.gamma * np.asarray(t, dtype=float)) * np.sqrt(
            self.norm_eta_star**2 + s * self.norm_T0**2)

    @property
    def velocity_rate(self):
        return 0.5 * self.c2 * self.nu * (1.0 - self.inf_area ** -0.5) ** 2

    def velocity(self, t):
        s = stress_source(t, self.eps, self.nu)
        return np.exp(-self.velocity_rate * np.asarray(t, dtype=float)) * np.sqrt(
            self.norm_u0**2 + s * self.norm_T0**2)


def theorem_envelopes(eps, nu, gamma, c1, c2, inf_area, norm_T0, norm_u0=0.0, norm_eta_star=0.0):
    return Envelopes(eps, nu, gamma, c1, c2, inf_area, norm_T0, norm_u0, norm_eta_star)


def within_envelope(measured, envelope, tol=ENVELOPE_TOL):
    """Per-sample pass flags for ``measured <= envelope (1 + tol)``."""
    return np.asarray(measured) <= np.asarray(envelope) * (1.0 + tol)


# --- rate fitting -----------------------------------------------------------------

def fit_exponential_rate(t, y, t_min=None):
    """Least-squares decay rate of ``log y`` against ``t``; returns ``(rate, R^2)``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t_min is not None:
        keep = t >= t_min
        t, y = t[keep], y[keep]
    if t.size < 2:
        raise ValueError("need at least two samples in the fit window")
    if np.any(y <= 0):
        raise ValueError("series must be positive on the fit window")
    ly = np.log(y)
    A = np.vstack([t, np.ones_like(t)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * t + icpt)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(-slope), r2


def fit_loglog_slope(x, y):
    """Slope of ``log y`` against ``log x``; ``None`` when underdetermined."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if np.count_nonzero(keep) < 2:
        return None
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


# --- decay report -----------------------------------------------------------------

@dataclass
class DecayReport:
    times: np.ndarray
    norms: dict
    envelopes: dict
    passed: dict
    rates: dict
    c1: float
    c2_interval: tuple
    inf_area: float
    area_crosses_one: bool
    params: dict = field(default_factory=dict)


def decay_report(traj, params, tol=ENVELOPE_TOL, fit_from=0.0):
    d = params.domain
    maps = [s.map(d) for s in traj.snapshots] if traj.snapshots else []
    c1, c2 = estimate_poincare_constants(d, maps)
    times = traj.times
    areas = traj.series("area_J")
    inf_area = float(np.min(areas))
    crosses = bool(np.any(areas >= 1.0) and np.any(areas <= 1.0))
    if crosses:
        log.warning("|Omega_eta| crosses 1; the velocity envelope hypothesis fails")
    first = traj.samples[0]
    env = theorem_envelopes(params.eps, params.nu, params.gamma, c1, c2[0], inf_area,
                            first["norm_T_L2"], first["norm_u_L2"], first["norm_etadot_L2"])
    norms = {"T": traj.series("norm_T_L2"), "etadot": traj.series("norm_etadot_L2"),
             "u": traj.series("norm_u_L2")}
    envs = {"T": env.stress(times), "etadot": env.shell_velocity(times), "u": env.velocity(times)}
    passed = {k: within_envelope(norms[k], envs[k], tol) for k in norms}
    rates = {}
    for k, series in norms.items():
        # data at rest has a zero first sample; fit where the series lives
        live = series > 0
        try:
            rates[k] = fit_exponential_rate(times[live], series[live], fit_from)
        except ValueError:
            rates[k] = (float("nan"), float("nan"))
    return DecayReport(times, norms, envs, passed, rates, c1, c2, inf_area, crosses,
                       {"eps": params.eps, "nu": params.nu, "gamma": params.gamma, "tol": tol})


# --- transport between domains -----------------------------------------------------

def interpolate_centers(field, domain, x1, x2):
    """Cubic-spline value of a cell-centred field at reference points (periodic in x)."""
    pad = 3
    padded = np.pad(field, ((pad, pad), (0, 0)), mode="symmetric")
    padded = np.pad(padded, ((0, 0), (pad, pad)), mode="wrap")
    ci = (np.mod(x1, domain.Lx) - domain.xc[0]) / domain.dx + pad
    cj = (np.clip(x2, 0.0, domain.Ly) - domain.yc[0]) / domain.dy + pad
    return map_coordinates(padded, [cj, ci], order=3, mode="nearest")


def common_domain_points(domain, eta, zeta):
    """Reference points of the ``eta``-grid that carry ``u o Psi_{eta - zeta}`` at the
    ``zeta``-grid cell centres."""
    diff = HanzawaMap(domain, np.asarray(eta) - np.asarray(zeta))
    if diff.sup_eta() >= domain.L:
        raise DegeneracyError("difference map reached the tube width")
    X = domain.points("center")
    phys = HanzawaMap(domain, zeta).forward(X)      # points of Omega_zeta
    moved = diff.forward(phys)                       # Psi_{eta - zeta}, cutoff = 1 above Ly
    back = HanzawaMap(domain, eta).inverse(moved)    # back to the eta reference grid
    return back[..., 0], back[..., 1]


def transform_to_common_domain(fields, domain, eta, zeta):
    """Compose cell-centred fields of the ``eta`` trajectory with ``Psi_{eta - zeta}``."""
    if np.array_equal(np.asarray(eta), np.asarray(zeta)) and not np.any(eta):
        return [np.array(f, dtype=float) for f in fields]
    x1, x2 = common_domain_points(domain, eta, zeta)
    return [interpolate_centers(f, domain, x1, x2) for f in fields]


def _center_fields(state):
    uc, vc = velocity_at_centers(state.fluid.u, state.fluid.v)
    return [uc, vc, *state.stress.comps]


def _gradient_sq(du, dv, fmap, top_dv):
    d = fmap.domain
    c = fmap.coeffs("center")
    zero = np.zeros(d.nx)
    total = 0.0
    for f, top in ((du, zero), (dv, top_dv)):
        gx = ddx_periodic(f, d.dx)
        gy = ddy_with_walls(f, zero, top, d)
        total += np.sum(c["A11"] * gx * gx + 2 * c["A12"] * gx * gy + c["A22"] * gy * gy)
    return float(total * d.dx * d.dy)


def indicator_distance(f_eta, eta, g_zeta, zeta, domain):
    """``|| 1_{Omega_eta} f - 1_{Omega_zeta} g ||_{L^2}`` on the container ``(0,Lx) x (0, Ly+L)``."""
    ny = int(np.ceil((domain.Ly + domain.L) / domain.dy))
    y = (np.arange(ny) + 0.5) * domain.dy
    P = np.stack(np.meshgrid(domain.xc, y), axis=-1)
    total = 0.0
    vals = []
    for f, shell in ((f_eta, eta), (g_zeta, zeta)):
        m = HanzawaMap(domain, shell)
        inside = P[..., 1] < domain.Ly + m.eta_at(P[..., 0])
        ref = m.inverse(np.where(inside[..., None], P, np.stack([P[..., 0], 0 * P[..., 1]], -1)))
        vals.append([np.where(inside, interpolate_centers(c, domain, ref[..., 0], ref[..., 1]), 0.0)
                     for c in f])
    for a, b in zip(*vals):
        total += np.sum((a - b) ** 2)
    return float(np.sqrt(total * domain.dx * domain.dy))


@dataclass
class RelativeEnergySeries:
    times: np.ndarray
    velocity_sq: np.ndarray
    shell_velocity_sq: np.ndarray
    shell_curvature_sq: np.ndarray
    stress_sq: np.ndarray
    gradient_integral: np.ndarray
    shell_dissipation_integral: np.ndarray
    indicator_u: np.ndarray
    indicator_T: np.ndarray

    @property
    def lhs(self):
        run = np.maximum.accumulate
        return (run(self.velocity_sq + self.shell_velocity_sq + self.shell_curvature_sq)
                + run(self.stress_sq) + self.gradient_integral + self.shell_dissipation_integral)


def relative_energy(traj_eps, traj_limit, params, indicator=True):
    """Left-hand side pieces of the stability estimate between an ``eps > 0`` run and the
    ``eps = 0`` run, both with snapshots at common times."""
    A, B = traj_eps.snapshots, traj_limit.snapshots
    if len(A) != len(B) or not np.allclose([s.t for s in A], [s.t for s in B]):
        raise ValueError("trajectories are not sampled at common times")
    d = params.domain
    Lx, nw = d.Lx, d.n_omega
    out = {k: [] for k in ("u", "s", "c", "T", "g", "sd", "iu", "iT")}
    for sa, sb in zip(A, B):
        eta, zeta = sa.shell.eta, sb.shell.eta
        fa = transform_to_common_domain(_center_fields(sa), d, eta, zeta)
        fb = _center_fields(sb)
        mz = HanzawaMap(d, zeta)
        J = mz.coeffs("center")["J"]
        w = J * d.dx * d.dy
        du, dv = fa[0] - fb[0], fa[1] - fb[1]
        dT = [fa[k] - fb[k] for k in (2, 3, 4)]
        out["u"].append(float(np.sum(w * (du**2 + dv**2))))
        out["T"].append(float(np.sum(w * (dT[0] ** 2 + 2 * dT[1] ** 2 + dT[2] ** 2))))
        de = eta - zeta
        ded = sa.shell.etadot - sb.shell.etadot
        out["s"].append(float(np.sum(ded**2) * Lx / nw))
        out["c"].append(float(np.sum(spectral_derivative(de, Lx, 2) ** 2) * Lx / nw))
        out["g"].append(_gradient_sq(du, dv, mz, ded))
        out["sd"].append(params.gamma * float(np.sum(spectral_derivative(ded, Lx, 1) ** 2) * Lx / nw))
        if indicator:
            ua, ub = _center_fields(sa)[:2], fb[:2]
            Ta, Tb = _center_fields(sa)[2:], fb[2:]
            out["iu"].append(indicator_distance(ua, eta, ub, zeta, d))
            out["iT"].append(indicator_distance([Ta[0], np.sqrt(2) * Ta[1], Ta[2]], eta,
                                                [Tb[0], np.sqrt(2) * Tb[1], Tb[2]], zeta, d))
        else:
            out["iu"].append(np.nan)
            out["iT"].append(np.nan)
    t = np.array([s.t for s in A])

    def cumulative(v):
        v = np.asarray(v)
        res = np.zeros_like(v)
        if v.size > 1:
            res[1:] = np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))
        return res

    return RelativeEnergySeries(t, np.array(out["u"]), np.array(out["s"]), np.array(out["c"]),
                                np.array(out["T"]), cumulative(out["g"]), cumulative(out["sd"]),
                                np.array(out["iu"]), np.array(out["iT"]))


# --- the sweep --------------------------------------------------------------------

@dataclass
class SweepResult:
    eps: list
    dist_T: list
    dist_u: list
    dist_gradu: list
    dist_eta: list
    indicator_T: list
    indicator_u: list
    slope_T: float = None
    slope_u: float = None
    monotone_T: bool = True
    monotone_u: bool = True
    data_deltas: tuple = (0.0, 0.0, 0.0, 0.0)
    complete: bool = True
    message: str = ""


def _run(args):
    initial, params, t_max, sample_every = args
    return run_trajectory(initial, params, t_max, sample_every=sample_every, keep_snapshots=True)


def _is_monotone(eps, dist):
    order = np.argsort(eps)
    return bool(np.all(np.diff(np.asarray(dist)[order]) >= 0))


def sweep_distances(traj, limit, params):
    rel = relative_energy(traj, limit, params)
    d = params.domain
    eta_w22 = []
    for sa, sb in zip(traj.snapshots, limit.snapshots):
        de = sa.shell.eta - sb.shell.eta
        f1 = spectral_derivative(de, d.Lx, 1)
        f2 = spectral_derivative(de, d.Lx, 2)
        eta_w22.append(np.sqrt(np.sum(de**2 + f1**2 + f2**2) * d.Lx / d.n_omega))
    return {
        "T": float(np.sqrt(np.max(rel.stress_sq))),
        "u": float(np.sqrt(np.max(rel.velocity_sq))),
        "gradu": float(np.sqrt(rel.gradient_integral[-1])),
        "eta": float(np.max(eta_w22)),
        "iT": float(np.max(rel.indicator_T)),
        "iu": float(np.max(rel.indicator_u)),
    }


def eps_sweep(initial, params, eps_list, t_max, sample_every=1, workers=1):
    """Run the ``eps = 0`` trajectory and each ``eps`` trajectory from identical data."""
    eps_list = [float(e) for e in eps_list]
    if any(e < 0 for e in eps_list) or np.any(np.diff(eps_list) > 0):
        raise ValueError("eps list must be non-negative and decreasing")
    jobs = [(replace(initial, stress=replace(initial.stress, eps=0.0)),
             replace(params, eps=0.0), t_max, sample_every)]
    jobs += [(replace(initial, stress=replace(initial.stress, eps=e)),
              replace(params, eps=e), t_max, sample_every) for e in eps_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(_run, jobs))
    else:
        trajs = [_run(j) for j in jobs]
    limit, runs = trajs[0], trajs[1:]
    res = SweepResult([], [], [], [], [], [], [])
    for e, tr in zip(eps_list, runs):
        if tr.status != "ok" or limit.status != "ok":
            res.complete = False
            res.message = f"trajectory at eps = {e} stopped: {tr.message or limit.message}"
            break
        dist = sweep_distances(tr, limit, params)
        res.eps.append(e)
        res.dist_T.append(dist["T"])
        res.dist_u.append(dist["u"])
        res.dist_gradu.append(dist["gradu"])
        res.dist_eta.append(dist["eta"])
        res.indicator_T.append(dist["iT"])
        res.indicator_u.append(dist["iu"])
    res.slope_T = fit_loglog_slope(res.eps, res.dist_T)
    res.slope_u = fit_loglog_slope(res.eps, res.dist_u)
    res.monotone_T = _is_monotone(res.eps, res.dist_T)
    res.monotone_u = _is_monotone(res.eps, res.dist_u)
    return res
