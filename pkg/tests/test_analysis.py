import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from conftest import sine_shell
from oldroyd_fsi.analysis import (decay_report, eps_sweep, estimate_poincare_constants, fit_exponential_rate,
                                  fit_loglog_slope, indicator_distance, interpolate_centers,
                                  common_domain_points, relative_energy, stress_source,
                                  theorem_envelopes, transform_to_common_domain, within_envelope)
from oldroyd_fsi.config import initial_state, parse_config
from oldroyd_fsi.coupling import run_trajectory
from oldroyd_fsi.geometry import HanzawaMap, ReferenceDomain
from oldroyd_fsi.solute import metric_laplacian

DOMAIN = ReferenceDomain(nx=32, ny=16)


def test_stress_source_is_continuous_at_zero():
    t = np.linspace(0, 3, 7)
    np.testing.assert_allclose(stress_source(t, 1e-9, 2.0), stress_source(t, 0.0, 2.0), rtol=1e-8)
    np.testing.assert_allclose(stress_source(t, 0.5, 2.0), (1 - np.exp(-t)) / 2.0, rtol=1e-14)


def test_envelopes_at_start_and_rate():
    env = theorem_envelopes(0.3, 2.0, 1.0, np.pi**2, 9.0, 4.0, 1.5, 0.7, 0.2)
    assert env.stress(0.0) == pytest.approx(1.5)
    assert env.velocity(0.0) == pytest.approx(0.7)
    assert env.shell_velocity(0.0) == pytest.approx(0.2)
    # 0.5 * 9 * 2 * (1 - 1/2)^2
    assert env.velocity_rate == pytest.approx(2.25)
    assert env.stress(2.0) == pytest.approx(1.5 * np.exp(-0.6))


def test_within_envelope_tolerance():
    flags = within_envelope([1.0, 1.019, 1.021], [1.0, 1.0, 1.0], tol=0.02)
    assert flags.tolist() == [True, True, False]


@settings(max_examples=25, deadline=None)
@given(rate=st.floats(0.01, 5.0), c=st.floats(0.1, 10.0))
def test_exponential_fit_recovers_rate(rate, c):
    t = np.linspace(0, 2, 30)
    r, r2 = fit_exponential_rate(t, c * np.exp(-rate * t))
    assert r == pytest.approx(rate, rel=1e-9, abs=1e-12)
    assert r2 == pytest.approx(1.0, abs=1e-9)


def test_exponential_fit_window_and_errors():
    t = np.linspace(0, 2, 21)
    y = np.where(t < 1, 5.0, np.exp(-2 * t))
    assert fit_exponential_rate(t, y, t_min=1.0)[0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        fit_exponential_rate(t, -y)
    with pytest.raises(ValueError):
        fit_exponential_rate(t, y, t_min=5.0)


def test_loglog_slope():
    x = np.array([0.2, 0.1, 0.05])
    assert fit_loglog_slope(x, 3 * x**0.5) == pytest.approx(0.5)
    assert fit_loglog_slope([0.2], [1.0]) is None
    assert fit_loglog_slope([0.2, 0.1], [0.0, 1.0]) is None


def test_poincare_constants_on_reference_channel():
    c1, (lo, ref, hi) = estimate_poincare_constants(DOMAIN)
    assert c1 == pytest.approx(np.pi**2)
    # Lx = 2, Ly = 1: the first along-channel and across-channel modes tie at pi^2
    assert ref == pytest.approx(np.pi**2)
    assert lo == hi == ref


def test_poincare_constant_against_discrete_laplacian():
    d = ReferenceDomain(nx=64, ny=32)
    K = -metric_laplacian(HanzawaMap(d))
    vals = np.sort(spla.eigsh(K.tocsc(), k=3, sigma=-1e-3, which="LM", return_eigenvectors=False))
    _, (_, ref, _) = estimate_poincare_constants(d)
    # second-order discretisation: relative error about pi^2 h^2 / 12
    assert vals[1] == pytest.approx(ref, rel=2e-3)


def test_deformed_channel_brackets_reference_constant():
    m = HanzawaMap(DOMAIN, sine_shell(DOMAIN, 0.08))
    _, (lo, ref, hi) = estimate_poincare_constants(DOMAIN, [m])
    assert lo < ref < hi


def test_cubic_interpolation_reproduces_nodes_and_smooth_fields():
    X, Y = np.meshgrid(DOMAIN.xc, DOMAIN.yc)
    f = np.cos(np.pi * X) * np.cos(np.pi * Y)
    np.testing.assert_allclose(interpolate_centers(f, DOMAIN, X, Y), f, atol=1e-12)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 2, 50)
    y = rng.uniform(0.1, 0.9, 50)
    err = np.abs(interpolate_centers(f, DOMAIN, x, y) - np.cos(np.pi * x) * np.cos(np.pi * y))
    assert np.max(err) < 5e-4


def test_common_domain_points_for_equal_shells_are_the_centres():
    eta = sine_shell(DOMAIN, 0.05)
    x1, x2 = common_domain_points(DOMAIN, eta, eta)
    X, Y = np.meshgrid(DOMAIN.xc, DOMAIN.yc)
    np.testing.assert_allclose(x1, X, atol=1e-10)
    np.testing.assert_allclose(x2, Y, atol=1e-10)


def test_transform_is_identity_on_flat_shells():
    f = np.random.default_rng(0).normal(size=(DOMAIN.ny, DOMAIN.nx))
    zero = np.zeros(DOMAIN.nx)
    (out,) = transform_to_common_domain([f], DOMAIN, zero, zero)
    np.testing.assert_array_equal(out, f)


def test_indicator_distance():
    eta = sine_shell(DOMAIN, 0.05)
    one = [np.ones((DOMAIN.ny, DOMAIN.nx))]
    assert indicator_distance(one, eta, one, eta, DOMAIN) == 0.0
    zero = np.zeros(DOMAIN.nx)
    # 1 on the flat channel against 0: the square root of its area, up to container sampling
    dist = indicator_distance(one, zero, [0 * one[0]], zero, DOMAIN)
    assert dist == pytest.approx(np.sqrt(DOMAIN.area), rel=1e-12)
    # mismatched shells: the symmetric difference of the two domains carries the distance
    dist = indicator_distance(one, eta, one, zero, DOMAIN)
    assert 0 < dist < 0.5


def small_config(**extra):
    values = {"N": 8, "eps": 0.2, "dt": 0.05, "t_max": 0.2, "ic": "random-seeded",
              "amplitude": 0.03, **extra}
    return parse_config("\n".join(f"{k} = {v}" for k, v in values.items()))


def test_relative_energy_of_a_run_with_itself_vanishes():
    cfg = small_config()
    tr = run_trajectory(initial_state(cfg), cfg.params(), cfg.t_max, keep_snapshots=True)
    rel = relative_energy(tr, tr, cfg.params())
    for v in (rel.velocity_sq, rel.stress_sq, rel.gradient_integral, rel.indicator_u, rel.indicator_T):
        assert np.max(np.abs(v)) < 1e-20
    assert np.max(rel.lhs) < 1e-20


def test_eps_sweep_single_value_has_no_slope():
    cfg = small_config()
    res = eps_sweep(initial_state(cfg), cfg.params(), [0.2], cfg.t_max)
    assert res.complete and res.eps == [0.2]
    assert res.slope_T is None and res.slope_u is None
    assert res.dist_T[0] > 0 and res.dist_u[0] > 0


def test_eps_sweep_distances_shrink_with_eps():
    cfg = small_config()
    res = eps_sweep(initial_state(cfg), cfg.params(), [0.04, 0.02, 0.01], cfg.t_max)
    assert res.monotone_T and res.monotone_u
    # eps lambda t << 1 for the resolved modes, so the stress gap is linear in eps
    assert res.slope_T == pytest.approx(1.0, abs=0.1)


def test_eps_sweep_rejects_bad_lists():
    cfg = small_config()
    with pytest.raises(ValueError):
        eps_sweep(initial_state(cfg), cfg.params(), [0.1, 0.2], 0.1)
    with pytest.raises(ValueError):
        eps_sweep(initial_state(cfg), cfg.params(), [-0.1], 0.1)


def test_decay_report_fits_series_that_start_at_rest():
    cfg = small_config(t_max=0.5)
    tr = run_trajectory(initial_state(cfg), cfg.params(), cfg.t_max, keep_snapshots=True)
    rep = decay_report(tr, cfg.params())
    assert tr.samples[0]["norm_u_L2"] == 0.0
    assert all(np.isfinite(rate) for rate, _ in rep.rates.values())
    assert rep.passed["T"].all()
