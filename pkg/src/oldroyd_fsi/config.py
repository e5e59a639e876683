"""Plain-text run configuration (``key = value`` lines, ``#`` comments).

Keys are case sensitive. Grid sizes come from ``N`` (``ny = N``,
``nx = 2 N``) unless ``nx``/``ny`` are given explicitly; the shell grid
shares the ``nx`` horizontal nodes. Exactly one of ``eps`` and ``lambda``
must be present, the other follows from ``eps = 1 / (2 lambda)``.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from .coupling import CoupledState, Params
from .fluid import FluidState
from .geometry import ReferenceDomain
from .shell import ShellState
from .solute import StressField


class ConfigError(ValueError):
    pass


PRESETS = ("rest", "shear-mode", "shell-mode", "stress-bump", "stress-constant", "random-seeded")


@dataclass(frozen=True)
class Config:
    Lx: float = 2.0
    Ly: float = 1.0
    L: float = 0.4
    nx: int = 64
    ny: int = 32
    n_omega: int = 64
    nu: float = 1.0
    gamma: float = 1.0
    eps: float = 0.5
    lam: float = 1.0
    Rq: float = 6.0
    Nq: int = 64
    spin: float = 1.0
    dt: float = 0.01
    t_max: float = 1.0
    kinetic_dt: float = 1e-3
    min_subiterations: int = 2
    max_subiterations: int = 50
    coupling_tol: float = 1e-6
    envelope_tol: float = 2e-2
    sample_every: int = 1
    ic: str = "rest"
    amplitude: float = 0.02
    stress: tuple = (1.0, 0.2, 0.5)
    seed: int = 0
    workers: int = 1
    output: str = "."

    @property
    def domain(self):
        return ReferenceDomain(self.Lx, self.Ly, self.L, self.nx, self.ny)

    def params(self, eps=None):
        return Params(self.domain, nu=self.nu, gamma=self.gamma,
                      eps=self.eps if eps is None else eps, dt=self.dt,
                      min_subiterations=self.min_subiterations,
                      max_subiterations=self.max_subiterations,
                      coupling_tol=self.coupling_tol)

    def echo(self):
        """Resolved ``key = value`` lines, stable order, exact floats."""
        out = []
        for k, v in asdict(self).items():
            key = "lambda" if k == "lam" else k
            if isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{key} = {v}")
        return out


_ALIASES = {"lambda": "lam", "N_omega": "n_omega", "R_q": "Rq", "N_q": "Nq"}
_TYPES = {f.name: f.type for f in fields(Config)}


def _convert(key, raw):
    kind = _TYPES[key]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            vals = tuple(float(x) for x in raw.replace(",", " ").split())
            if len(vals) != 3:
                raise ValueError("expected three components T11, T12, T22")
            return vals
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def parse_config(text):
    """Parse and validate; unknown or repeated keys are errors."""
    seen = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen[key] = raw

    values = {}
    if "N" in seen:
        n = _convert("ny", seen.pop("N"))
        values.update(nx=2 * n, ny=n)
    for key, raw in seen.items():
        name = _ALIASES.get(key, key)
        if name not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[name] = _convert(name, raw)

    has_eps, has_lam = "eps" in values, "lam" in values
    if has_eps and has_lam:
        raise ConfigError("give exactly one of eps and lambda")
    if not (has_eps or has_lam):
        raise ConfigError("missing required key: eps or lambda")
    if has_eps:
        if values["eps"] < 0:
            raise ConfigError("eps must be non-negative")
        values["lam"] = 1.0 / (2.0 * values["eps"]) if values["eps"] > 0 else float("inf")
    else:
        if values["lam"] <= 0:
            raise ConfigError("lambda must be positive")
        values["eps"] = 1.0 / (2.0 * values["lam"])
    if "nx" in values and "n_omega" not in values:
        values["n_omega"] = values["nx"]

    cfg = Config(**values)
    _validate(cfg)
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _validate(cfg):
    if cfg.Lx <= 0 or cfg.Ly <= 0 or not 0 < cfg.L < cfg.Ly:
        raise ConfigError("need Lx, Ly > 0 and 0 < L < Ly")
    if np.isclose(cfg.Lx * cfg.Ly, 1.0, rtol=0, atol=1e-12):
        raise ConfigError("reference area Lx * Ly must differ from 1")
    if cfg.n_omega != cfg.nx:
        raise ConfigError("the shell grid shares the fluid columns: need n_omega == nx")
    if cfg.nx < 8 or cfg.ny < 4 or cfg.Nq < 16:
        raise ConfigError("grid too coarse")
    for name in ("nu", "dt", "t_max", "kinetic_dt", "coupling_tol", "envelope_tol", "Rq"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be positive")
    if cfg.gamma < 0:
        raise ConfigError("gamma must be non-negative")
    if cfg.min_subiterations < 1 or cfg.max_subiterations < cfg.min_subiterations:
        raise ConfigError("need 1 <= min_subiterations <= max_subiterations")
    if cfg.sample_every < 1 or cfg.workers < 1:
        raise ConfigError("sample_every and workers must be at least 1")
    if cfg.ic not in PRESETS:
        raise ConfigError(f"unknown initial condition {cfg.ic!r}; choose from {', '.join(PRESETS)}")


# --- initial data ------------------------------------------------------------------

def _base_stress(cfg):
    t11, t12, t22 = cfg.stress
    return np.array([[t11, t12], [t12, t22]])


def initial_state(cfg):
    """Build the coupled state named by ``cfg.ic``; the stress carries ``cfg.eps``."""
    d = cfg.domain
    a = cfg.amplitude
    shell = ShellState.rest(d.n_omega)
    fluid = FluidState.rest(d)
    X, Y = np.meshgrid(d.xc, d.yc)
    kx, ky = 2 * np.pi / d.Lx, np.pi / d.Ly
    zero = np.zeros((3, d.ny, d.nx))

    if cfg.ic == "rest":
        comps = zero
    elif cfg.ic == "stress-constant":
        comps = StressField.constant(d, _base_stress(cfg)).comps
    elif cfg.ic == "stress-bump":
        # smooth, Neumann compatible, non-constant
        bump = 1 + 0.5 * np.cos(kx * X) * np.cos(ky * Y)
        t11, t12, t22 = cfg.stress
        comps = np.stack([t11 * bump, t12 * np.cos(ky * Y) * np.cos(kx * X), t22 * bump])
    elif cfg.ic == "shear-mode":
        fluid = FluidState.from_streamfunction(
            d, lambda x, y: a * d.Ly / np.pi * (1 - np.cos(ky * y)) * (1 + 0 * x))
        comps = StressField.constant(d, _base_stress(cfg)).comps
    elif cfg.ic == "shell-mode":
        shell = ShellState(a * np.cos(kx * d.xc), np.zeros(d.nx))
        comps = StressField.constant(d, _base_stress(cfg)).comps
    else:  # random-seeded
        rng = np.random.default_rng(cfg.seed)
        modes = np.arange(1, 4)
        ca, sa = rng.normal(size=(2, modes.size)) / modes**2
        eta = sum(c * np.cos(m * kx * d.xc) + s * np.sin(m * kx * d.xc)
                  for m, c, s in zip(modes, ca, sa))
        eta = a * eta / max(np.max(np.abs(eta)), 1e-300)
        shell = ShellState(eta, np.zeros(d.nx))
        base = _base_stress(cfg)
        comps = StressField.constant(d, base).comps.copy()
        for c in range(3):
            amp = rng.normal(size=2) * 0.2
            comps[c] += amp[0] * np.cos(kx * X) * np.cos(ky * Y) + amp[1] * np.cos(ky * Y)

    stress = StressField(np.array(comps, dtype=float), 0.0, cfg.eps)
    return CoupledState(shell, fluid, stress)
