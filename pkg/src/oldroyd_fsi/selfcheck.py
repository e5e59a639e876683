"""Identity suites run by ``oldroyd-fsi self-check`` and the acceptance tests."""

from dataclasses import dataclass

import numpy as np

from .algebra import corotation_identity_residual
from .geometry import DegeneracyError, HanzawaMap, ReferenceDomain

ALGEBRA_TOL = 1e-12
ROUNDTRIP_TOL = 1e-10
PIOLA_TOL = 1e-12


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tol: float

    @property
    def ok(self):
        return bool(np.isfinite(self.value) and self.value < self.tol)

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.value:.3e} (tol {self.tol:.0e})"


def corotation_residual_max(samples=1000, seed=0):
    """Largest relative residual of the two-dimensional corotation identity over
    random ``(G, Z)``, powers 1..3 and both variants."""
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(samples, 2, 2))
    Z = rng.normal(size=(samples, 2, 2))
    worst = 0.0
    for n in (1, 2, 3):
        for variant in ("Z", "ZT"):
            r = corotation_identity_residual(G, Z, n, variant)
            Y = Z if variant == "Z" else np.swapaxes(Z, -1, -2)
            Yn = np.linalg.matrix_power(Y, n)
            scale = (np.linalg.norm(G, axis=(-2, -1)) * np.linalg.norm(Z, axis=(-2, -1))
                     * np.linalg.norm(Yn, axis=(-2, -1)))
            worst = max(worst, float(np.max(np.abs(r) / scale)))
    return worst


def sample_shell(domain, amplitude=0.05, seed=0):
    rng = np.random.default_rng(seed)
    k = 2 * np.pi / domain.Lx
    x = domain.xc
    c = rng.normal(size=(2, 3))
    eta = sum(c[0, m] * np.cos((m + 1) * k * x) + c[1, m] * np.sin((m + 1) * k * x)
              for m in range(3))
    return amplitude * eta / np.max(np.abs(eta))


def geometry_checks(domain=None, eta=None, seed=0):
    d = domain or ReferenceDomain(nx=64, ny=32)
    eta = sample_shell(d, seed=seed) if eta is None else eta
    fmap = HanzawaMap(d, eta)
    rng = np.random.default_rng(seed + 1)
    x = np.stack([rng.uniform(0, d.Lx, 2000), rng.uniform(0, d.Ly, 2000)], axis=-1)
    back = fmap.inverse(fmap.forward(x))
    F, J = fmap.jacobian(x)
    B, A = fmap.piola(x)
    BBt = B @ np.swapaxes(B, -1, -2) / J[..., None, None]
    checks = [
        Check("hanzawa round trip", float(np.max(np.abs(back - x))), ROUNDTRIP_TOL),
        Check("det B = J", float(np.max(np.abs(np.linalg.det(B) - J) / np.abs(J))), PIOLA_TOL),
        Check("A = B B^T / J", float(np.max(np.abs(A - BBt)) / max(1.0, float(np.max(np.abs(A))))),
              PIOLA_TOL),
        Check("J > 0 on admissible shell", 0.0 if np.min(J) > 0 else np.inf, 1.0),
    ]
    # the guard must fire before the tube width is reached
    try:
        HanzawaMap(d, np.full(d.nx, d.L)).check()
        fired = False
    except DegeneracyError:
        fired = True
    checks.append(Check("degeneracy guard at |eta| = L", 0.0 if fired else np.inf, 1.0))
    return checks


def run_all(seed=0):
    checks = [Check("corotation identity (1000 samples, n = 1..3, both variants)",
                    corotation_residual_max(1000, seed), ALGEBRA_TOL)]
    return checks + geometry_checks(seed=seed)
