import numpy as np
import pytest
import sympy as sym
from hypothesis import given, settings, strategies as st

from conftest import FlatMap, sine_shell
from oldroyd_fsi.fluid import FluidState, cellular_flow
from oldroyd_fsi.geometry import HanzawaMap, ReferenceDomain
from oldroyd_fsi.solute import (StressField, correction_H, correction_H_terms, lq_norm,
                                metric_laplacian, solute_step, solute_step_diffusive,
                                solute_step_hyperbolic)

DOMAIN = ReferenceDomain(nx=32, ny=16)
T0 = np.array([[1.0, 0.2], [0.2, 0.5]])


def rest(domain=DOMAIN):
    return FluidState.rest(domain)


def bump(domain=DOMAIN):
    X, Y = np.meshgrid(domain.xc, domain.yc)
    mod = 1 + 0.5 * np.cos(np.pi * X) * np.cos(np.pi * Y)
    return StressField.from_tensor(mod[..., None, None] * T0)


def test_storage_round_trip_is_symmetric():
    s = bump()
    T = s.tensor
    np.testing.assert_array_equal(T[..., 0, 1], T[..., 1, 0])
    np.testing.assert_array_equal(StressField.from_tensor(T).comps, s.comps)
    np.testing.assert_allclose(s.frobenius(), np.sqrt(np.sum(T * T, axis=(-2, -1))), rtol=1e-15)


def test_constant_stress_decays_exactly():
    eps, dt = 0.5, 0.05
    fmap = HanzawaMap(DOMAIN)
    s = StressField.constant(DOMAIN, T0, eps=eps)
    for _ in range(20):
        s = solute_step(s, rest(), fmap, eps, dt)
    expected = np.exp(-eps * 20 * dt)
    np.testing.assert_allclose(s.comps[0], expected * T0[0, 0], rtol=1e-12)
    np.testing.assert_allclose(s.comps[1], expected * T0[0, 1], rtol=1e-12)


def neumann_mode_error(n, eps=0.2, t_end=0.5):
    d = ReferenceDomain(nx=2 * n, ny=n)
    dt = 1.6 / n**2
    shape = np.cos(np.pi * d.yc)[:, None] * np.ones(d.nx)
    s = StressField(np.stack([shape, 0.0 * shape, -shape]), 0.0, eps)
    fmap = HanzawaMap(d)
    steps = int(round(t_end / dt))
    for _ in range(steps):
        s = solute_step_diffusive(s, rest(d), fmap, eps, dt)
    exact = np.exp(-eps * (1 + np.pi**2) * steps * dt) * shape
    return np.max(np.abs(s.comps[0] - exact))


def test_neumann_mode_decay_rate():
    e = [neumann_mode_error(n) for n in (8, 16, 32)]
    orders = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    # the rate error of the discrete Laplacian is eps pi^4 h^2 / 12
    assert e[-1] < 5e-4
    assert np.all(orders > 1.8)


@pytest.mark.parametrize("eps", [0.0, 0.3])
def test_identity_step_is_bitwise_flat(eps):
    s = bump()
    s = StressField(s.comps, 0.0, eps)
    flow = cellular_flow(DOMAIN, 0.3)
    a = solute_step(s, flow, HanzawaMap(DOMAIN), eps, 0.02)
    b = solute_step(s, flow, FlatMap(DOMAIN), eps, 0.02)
    np.testing.assert_array_equal(a.comps, b.comps)


def test_metric_laplacian_is_conservative_and_kills_constants():
    fmap = HanzawaMap(DOMAIN, sine_shell(DOMAIN, 0.05), np.zeros(DOMAIN.nx))
    K = metric_laplacian(fmap)
    ones = np.ones(K.shape[0])
    assert np.max(np.abs(K @ ones)) < 1e-9
    assert np.max(np.abs(ones @ K)) < 1e-9


def test_flat_metric_laplacian_is_the_five_point_stencil():
    K = metric_laplacian(HanzawaMap(DOMAIN)).toarray()
    d = DOMAIN
    j, i = 5, 7
    row = K[j * d.nx + i]
    assert row[j * d.nx + i] == pytest.approx(-2 / d.dx**2 - 2 / d.dy**2)
    assert row[j * d.nx + i + 1] == pytest.approx(1 / d.dx**2)
    assert row[(j + 1) * d.nx + i] == pytest.approx(1 / d.dy**2)


def test_diffusion_conserves_weighted_mass_on_a_deformed_map():
    eps, dt = 0.4, 0.02
    fmap = HanzawaMap(DOMAIN, sine_shell(DOMAIN, 0.05, 1))
    J = fmap.coeffs("center")["J"]
    s = StressField(bump().comps, 0.0, eps)
    new = solute_step_diffusive(s, rest(), fmap, eps, dt)
    before = np.sum(J * s.comps, axis=(1, 2)) * np.exp(-eps * dt)
    after = np.sum(J * new.comps, axis=(1, 2))
    np.testing.assert_allclose(after, before, rtol=1e-11)


def test_translation_by_one_cell_is_exact():
    d = DOMAIN
    dt = 0.05
    c = d.dx / dt
    flow = FluidState(np.full((d.ny, d.nx), c), np.zeros((d.ny + 1, d.nx)), np.zeros((d.ny, d.nx)))
    s = bump()
    out = solute_step_hyperbolic(s, flow, dt, HanzawaMap(d))
    # wall rows also rotate: uniform slip next to a no-slip wall carries vorticity
    np.testing.assert_allclose(out.comps[:, 1:-1], np.roll(s.comps, 1, axis=2)[:, 1:-1], atol=1e-13)


@settings(max_examples=10, deadline=None)
@given(amp=st.floats(0.05, 1.0), steps=st.integers(1, 5))
def test_hyperbolic_maximum_principle(amp, steps):
    flow = cellular_flow(DOMAIN, amp)
    fmap = HanzawaMap(DOMAIN)
    s = bump()
    start = np.max(s.frobenius())
    for _ in range(steps):
        s = solute_step_hyperbolic(s, flow, 0.05, fmap)
        assert np.all(np.isfinite(s.comps))
        assert np.max(s.frobenius()) <= start * (1 + 1e-12)


def test_lq_norms_of_a_constant_field():
    fmap = HanzawaMap(DOMAIN, sine_shell(DOMAIN, 0.05))
    s = StressField.constant(DOMAIN, T0)
    f = np.sqrt(np.sum(T0 * T0))
    for q in (2, 4, 8):
        assert lq_norm(s, q, fmap) == pytest.approx(f * fmap.area() ** (1 / q), rel=1e-12)
    assert lq_norm(s, np.inf, fmap) == pytest.approx(f, rel=1e-14)


def test_correction_H_vanishes_on_identity():
    rng = np.random.default_rng(0)
    n = 6
    T = rng.normal(size=(n, 2, 2))
    out = correction_H(T, rng.normal(size=(n, 2, 2)), rng.normal(size=(n, 2, 2, 2)),
                       rng.normal(size=(n, 2)), rng.normal(size=(n, 2, 2)), np.ones(n),
                       np.broadcast_to(np.eye(2), (n, 2, 2)), np.zeros((n, 2)))
    assert not np.any(out)


def test_correction_H_static_map_without_flow():
    fmap = HanzawaMap(DOMAIN, sine_shell(DOMAIN, 0.05))
    pts = np.array([[0.3, 0.85], [1.2, 0.9]])
    _, J = fmap.jacobian(pts)
    B, _ = fmap.piola(pts)
    dTdt = np.random.default_rng(1).normal(size=(2, 2, 2))
    out = correction_H(np.ones((2, 2, 2)), dTdt, np.ones((2, 2, 2, 2)), np.zeros((2, 2)),
                       np.zeros((2, 2, 2)), J, B, np.zeros((2, 2)))
    np.testing.assert_allclose(out, (1 - J)[:, None, None] * dTdt, atol=1e-15)


def symbolic_map(L, Ly, a, b):
    """Hanzawa map of ``eta = a cos(pi x)``, ``d_t eta = b cos(2 pi x)`` in sympy."""
    x, y = sym.symbols("x y", real=True)
    tt = (y - Ly + sym.Rational(3, 4) * L) / (L / 2)
    phi = tt**3 * (10 - 15 * tt + 6 * tt**2)
    eta, etadot = a * sym.cos(sym.pi * x), b * sym.cos(2 * sym.pi * x)
    Psi = sym.Matrix([x, y + eta * phi])
    F = Psi.jacobian([x, y])
    J = F.det()
    B = sym.simplify(J * F.inv())
    dinv = -F.inv() * sym.Matrix([0, etadot * phi])
    return x, y, J, B, dinv


def test_correction_H_terms_match_symbolic_oracle():
    d = DOMAIN
    a, b = 0.05, 0.03
    fmap = HanzawaMap(d, a * np.cos(np.pi * d.xc), b * np.cos(2 * np.pi * d.xc))
    x, y, Js, Bs, dinvs = symbolic_map(sym.Rational(2, 5), 1, sym.Rational(1, 20), sym.Rational(3, 100))
    t = sym.symbols("t", real=True)
    T = sym.Matrix([[sym.sin(x) * y + t, sym.cos(y) * x],
                    [sym.cos(y) * x, x * y**2 - t**2]])
    u = sym.Matrix([sym.sin(sym.pi * x) * y, x * y])
    gu = u.jacobian([x, y])
    W = (gu - gu.T) / 2
    WT = (gu.T - gu) / 2
    I = sym.eye(2)

    def grad_contract(vec):
        return sym.Matrix(2, 2, lambda i, j: sum(sym.diff(T[i, j], [x, y][k]) * vec[k] for k in range(2)))

    terms = [(1 - Js) * sym.diff(T, t), -Js * grad_contract(dinvs), W * (Bs - I) * T,
             T * (Bs - I).T * WT, grad_contract(u) * (I - Bs)]
    rng = np.random.default_rng(7)
    # points inside the band where the cutoff polynomial applies
    pts = np.stack([rng.uniform(0, 2, 10), rng.uniform(0.71, 0.89, 10)], axis=-1)
    t0 = 0.4
    _, J = fmap.jacobian(pts)
    B, _ = fmap.piola(pts)
    _, dinv = fmap.time_derivative(pts)

    def num(expr, p):
        return np.array(expr.subs({x: p[0], y: p[1], t: t0}).evalf(), dtype=float)

    dTdt = np.array([num(sym.diff(T, t), p) for p in pts])
    gradT = np.array([[[[num(sym.diff(T[i, j], v), p)[()] for v in (x, y)] for j in range(2)]
                       for i in range(2)] for p in pts])
    uu = np.array([num(u, p)[:, 0] for p in pts])
    gradu = np.array([num(gu, p) for p in pts])
    Tn = np.array([num(T, p) for p in pts])
    got = correction_H_terms(Tn, dTdt, gradT, uu, gradu, J, B, dinv)
    for k, term in enumerate(terms):
        expected = np.array([num(term, p) for p in pts])
        np.testing.assert_allclose(got[k], expected, atol=1e-10, err_msg=f"term {k}")
    total = correction_H(Tn, dTdt, gradT, uu, gradu, J, B, dinv)
    np.testing.assert_allclose(total, sum(got), atol=1e-13)
