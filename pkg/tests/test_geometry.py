import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oldroyd_fsi.geometry import (DegeneracyError, HanzawaMap, ReferenceDomain, cutoff,
                                  cutoff_derivative, cutoff_max_slope, hanzawa_forward,
                                  hanzawa_inverse, hanzawa_jacobian, map_time_derivative,
                                  piola_matrices, project_mean_zero, spectral_derivative,
                                  spectral_eval)

DOMAIN = ReferenceDomain(nx=32, ny=16)


def shell(amps, phases, domain=DOMAIN):
    x = domain.xc
    out = np.zeros_like(x)
    for k, (a, p) in enumerate(zip(amps, phases), start=1):
        out += a * np.cos(2 * np.pi * k * x / domain.Lx + p)
    return out


def random_points(rng, n, domain=DOMAIN):
    return np.stack([rng.uniform(0, domain.Lx, n), rng.uniform(0, domain.Ly, n)], axis=-1)


# sum of amplitudes below L / 3.75 keeps J > 0
amp = st.floats(-0.03, 0.03)
phase = st.floats(0, 2 * np.pi)


def test_domain_validation():
    with pytest.raises(ValueError):
        ReferenceDomain(Lx=1.0, Ly=1.0, L=0.4)
    with pytest.raises(ValueError):
        ReferenceDomain(L=0.6)
    with pytest.raises(ValueError):
        ReferenceDomain(nx=2)


def test_cutoff_shape():
    L = 0.4
    assert cutoff(0.0, L) == 1.0 and cutoff(-L, L) == 0.0
    s = np.linspace(-1, 0, 20001)
    slope = np.gradient(cutoff(s, L), s)
    np.testing.assert_allclose(slope, cutoff_derivative(s, L), atol=1e-5)
    assert abs(np.max(cutoff_derivative(s, L)) - cutoff_max_slope(L)) < 1e-6


def test_spectral_interpolation_is_exact_for_resolved_modes():
    x = np.linspace(0, 2, 37)
    f = shell([0.3, -0.1, 0.05], [0.1, 1.0, 2.0])
    exact = sum(a * np.cos(np.pi * k * x + p) for k, a, p in
                ((1, 0.3, 0.1), (2, -0.1, 1.0), (3, 0.05, 2.0)))
    np.testing.assert_allclose(spectral_eval(f, x, 2.0), exact, atol=1e-13)
    d1 = sum(-a * np.pi * k * np.sin(np.pi * k * x + p) for k, a, p in
             ((1, 0.3, 0.1), (2, -0.1, 1.0), (3, 0.05, 2.0)))
    np.testing.assert_allclose(spectral_eval(f, x, 2.0, deriv=1), d1, atol=1e-12)


def test_spectral_derivative_and_mean_projection():
    x = DOMAIN.xc
    f = np.sin(np.pi * x) + 3.0
    np.testing.assert_allclose(spectral_derivative(f, 2.0, 2), -np.pi**2 * np.sin(np.pi * x), atol=1e-11)
    assert abs(project_mean_zero(f).mean()) < 1e-15


def test_identity_map():
    m = HanzawaMap(DOMAIN)
    assert m.is_identity
    x = random_points(np.random.default_rng(0), 50)
    np.testing.assert_array_equal(m.forward(x), x)
    np.testing.assert_array_equal(m.inverse(x), x)
    F, J = m.jacobian(x)
    np.testing.assert_array_equal(F, np.broadcast_to(np.eye(2), F.shape))
    np.testing.assert_array_equal(J, 1.0)
    B, A = m.piola(x)
    np.testing.assert_array_equal(B, np.broadcast_to(np.eye(2), B.shape))
    np.testing.assert_array_equal(A, np.broadcast_to(np.eye(2), A.shape))
    dpsi, dinv = m.time_derivative(x)
    assert not np.any(dpsi) and not np.any(dinv)
    for where in ("center", "uface", "vface", "corner"):
        c = m.coeffs(where)
        assert np.all(c["J"] == 1.0) and np.all(c["b"] == 0.0)
        assert np.all(c["A22"] == 1.0) and np.all(c["w2"] == 0.0)


@settings(max_examples=40, deadline=None)
@given(a=st.lists(amp, min_size=3, max_size=3), p=st.lists(phase, min_size=3, max_size=3),
       seed=st.integers(0, 1000))
def test_round_trip(a, p, seed):
    eta = shell(a, p)
    m = HanzawaMap(DOMAIN, eta).check()
    x = random_points(np.random.default_rng(seed), 200)
    assert np.max(np.abs(m.inverse(m.forward(x)) - x)) <= 1e-10
    xt = m.forward(x)
    assert np.max(np.abs(m.forward(m.inverse(xt)) - xt)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(a=st.lists(amp, min_size=3, max_size=3), p=st.lists(phase, min_size=3, max_size=3))
def test_piola_identities(a, p):
    m = HanzawaMap(DOMAIN, shell(a, p))
    x = random_points(np.random.default_rng(3), 300)
    F, J = m.jacobian(x)
    B, A = m.piola(x)
    assert np.all(J > 0)
    np.testing.assert_allclose(np.linalg.det(B), J, rtol=0, atol=1e-12)
    np.testing.assert_allclose(A, B @ np.swapaxes(B, -1, -2) / J[..., None, None], atol=1e-12)
    np.testing.assert_allclose(B @ F, J[..., None, None] * np.eye(2), atol=1e-12)
    np.testing.assert_allclose(A, np.swapaxes(A, -1, -2), atol=1e-15)


def test_jacobian_against_finite_differences():
    m = HanzawaMap(DOMAIN, shell([0.05, 0.02, 0.0], [0.3, 1.1, 0.0]))
    x = random_points(np.random.default_rng(4), 100)
    F, _ = m.jacobian(x)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (m.forward(x + e) - m.forward(x - e)) / (2 * h)
        np.testing.assert_allclose(F[..., :, j], fd, atol=1e-7)


def test_time_derivative_against_moving_shell():
    eta0 = shell([0.05, 0.0, 0.02], [0.0, 0.0, 0.5])
    rate = shell([0.0, 0.03, 0.01], [0.0, 0.2, 0.0])
    x = random_points(np.random.default_rng(5), 100)
    dpsi, dinv = map_time_derivative(DOMAIN, eta0, rate, x)
    h = 1e-6
    fd = (hanzawa_forward(DOMAIN, eta0 + h * rate, x) - hanzawa_forward(DOMAIN, eta0 - h * rate, x)) / (2 * h)
    np.testing.assert_allclose(dpsi, fd, atol=1e-8)
    # d/dt Psi^{-1}(Psi(x, t), t)
    xt = hanzawa_forward(DOMAIN, eta0, x)
    fd_inv = (hanzawa_inverse(DOMAIN, eta0 + h * rate, xt) - hanzawa_inverse(DOMAIN, eta0 - h * rate, xt)) / (2 * h)
    np.testing.assert_allclose(dinv, fd_inv, atol=1e-7)


def test_static_map_has_no_velocity():
    x = random_points(np.random.default_rng(6), 20)
    dpsi, dinv = map_time_derivative(DOMAIN, shell([0.05], [0.0]), np.zeros(DOMAIN.nx), x)
    assert not np.any(dpsi) and not np.any(dinv)


def test_coeffs_match_pointwise_evaluation():
    m = HanzawaMap(DOMAIN, shell([0.04, 0.02], [0.4, 0.0]), shell([0.01], [1.0]))
    for where in ("center", "uface", "vface", "corner"):
        pts = DOMAIN.points(where)
        B, A = m.piola(pts)
        _, J = m.jacobian(pts)
        c = m.coeffs(where)
        np.testing.assert_allclose(c["J"], J, atol=1e-14)
        np.testing.assert_allclose(c["b"], B[..., 1, 0], atol=1e-14)
        np.testing.assert_allclose(c["A22"], A[..., 1, 1], atol=1e-14)
        np.testing.assert_allclose(c["A12"], A[..., 0, 1], atol=1e-14)
        np.testing.assert_allclose(c["w2"], m.time_derivative(pts)[0][..., 1], atol=1e-14)


def test_area_is_preserved_by_mean_zero_shell():
    m = HanzawaMap(DOMAIN, shell([0.05, 0.03], [0.0, 1.0]))
    assert abs(m.area() - DOMAIN.area) < 1e-12


def test_degeneracy_guard():
    eta = np.full(DOMAIN.nx, DOMAIN.L)
    with pytest.raises(DegeneracyError):
        HanzawaMap(DOMAIN, eta).check(0.3)
    with pytest.raises(DegeneracyError):
        hanzawa_forward(DOMAIN, eta, np.zeros((1, 2)))
    # |eta| < L but steep enough to fold the map: J <= 0 is caught too
    steep = -0.39 * np.ones(DOMAIN.nx)
    with pytest.raises(DegeneracyError):
        HanzawaMap(DOMAIN, steep).check()
    with pytest.raises(DegeneracyError):
        hanzawa_jacobian(DOMAIN, steep, DOMAIN.points("center"))
    with pytest.raises(ValueError):
        HanzawaMap(DOMAIN, np.zeros(5))


def test_degeneracy_error_carries_time():
    with pytest.raises(DegeneracyError, match="0.25") as info:
        HanzawaMap(DOMAIN, np.full(DOMAIN.nx, 1.0)).check(0.25)
    assert info.value.time == 0.25


def test_piola_matrices_wrapper():
    B, A = piola_matrices(DOMAIN, np.zeros(DOMAIN.nx), np.array([[0.3, 0.9]]))
    np.testing.assert_array_equal(B[0], np.eye(2))
