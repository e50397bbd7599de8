import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from thermoqfi import brownian as B
from thermoqfi.phase_space import PhaseGrid, sld_qfi

BASE = B.BrownianParams(omega0=1.0, gamma=0.1, nbar0=1.0, nbar_inf=6.0)


def covariance_oracle(p, t):
    """Closed-form g-entries from the Gaussian eigenstructure of the normalized kernel.

    With ``kappa = n/(1+n)`` the shifted energy ``|u|^2 - s`` has eigenvalue ``kappa``
    and the linear fields ``(1+kappa)/2``, giving ``g(d, d) = s^3/n`` and
    ``g(2Re(conj(u) a), same) = 4 |a|^2 s^2/(1+2n)``; the two families are orthogonal.
    """
    e = math.exp(-p.gamma * t)
    n = B.nbar_t(p, t)
    s = 1 + n
    at2 = abs(p.alpha0) ** 2 * e
    a_t = p.omega0 * (1 - e * p.nbar0 * (1 + p.nbar0) / (n * (1 + n))) * n / s
    b_t = p.omega0 * (n - p.nbar0) / s
    a_b = p.omega0 * (n - p.nbar0) * (p.nbar_inf - n) / s**2
    b_b = -p.omega0 * (n - p.nbar0) / s

    def g(a1, b1, a2, b2):
        return a1 * a2 * s**3 / n + 4 * b1 * b2 * at2 * s**2 / (1 + 2 * n)

    return g(a_t, b_t, a_t, b_t), g(a_t, b_t, a_b, b_b), g(a_b, b_b, a_b, b_b)


def test_params_validation_and_beta():
    assert BASE.beta == pytest.approx(math.log(7 / 6))
    assert BASE.dhs2 == 42.0
    assert BASE.with_beta(BASE.beta).nbar_inf == pytest.approx(6.0)
    for bad in ({"gamma": 0}, {"omega0": -1}, {"nbar0": -0.1}, {"nbar_inf": 0}):
        with pytest.raises(ValueError):
            B.BrownianParams(**bad)


@given(st.floats(0, 200), st.floats(0, 5), st.floats(0.1, 10))
def test_trajectory_invariants(t, n0, ni):
    p = B.BrownianParams(nbar0=n0, nbar_inf=ni, alpha0=2 - 1j)
    tp = B.trajectory(p, t)
    assert min(n0, ni) - 1e-12 <= tp.nbar_t <= max(n0, ni) + 1e-12
    assert tp.alpha_t == pytest.approx((2 - 1j) * np.exp(-1j * t - 0.05 * t))


def test_q_function_examples():
    assert B.q_function(BASE, 0.0, 0.0) == pytest.approx(0.5)
    p = B.BrownianParams(alpha0=3.0)
    assert B.q_function(p, 1e4, 0.0) == pytest.approx(1 / 7)
    tp = B.trajectory(p, 12.0)
    g = PhaseGrid.square(tp.alpha_t, B.default_half_width(tp), 0.2)
    assert g.integrate(B.q_function(p, 12.0, g.points)) == pytest.approx(1.0, abs=1e-6)


def test_score_examples():
    a = np.array([0, 1 + 1j, 3.0])
    assert np.all(B.score(BASE, 0.0, a) == 0)
    t = 4.0
    u = math.sqrt(1 + B.nbar_t(BASE, t))
    assert B.score(BASE, t, u) == pytest.approx(0.0, abs=1e-12)


def test_avg_heat():
    assert B.avg_heat(BASE, 0.0) == 0.0
    assert B.avg_heat(BASE, 1e4) == pytest.approx(5.0)
    p = B.BrownianParams(alpha0=3.0)
    t = 6.0
    tp = B.trajectory(p, t)
    g = PhaseGrid.square(tp.alpha_t, B.default_half_width(tp), 0.2)
    h_tra = B.traj_heat_dev(p, t, g.points) + B.avg_heat(p, t)
    assert g.integrate(B.q_function(p, t, g.points) * h_tra) == pytest.approx(B.avg_heat(p, t), abs=1e-5)


def test_traj_heat_limits():
    a = np.array([0.3, 2 + 1j, -1.5j])
    p = B.BrownianParams(alpha0=3.0)
    assert np.all(B.traj_heat_dev(p, 0.0, a) == 0)
    late = B.traj_heat_dev(p, 1e4, a)
    ni = p.nbar_inf
    np.testing.assert_allclose(late, ni / (1 + ni) * (np.abs(a) ** 2 - (1 + ni)), atol=1e-12)


def test_backaction_examples():
    a = np.array([0.3, 2 + 1j, -1.5j])
    same = B.BrownianParams(nbar0=2.0, nbar_inf=2.0, alpha0=1.0)
    assert np.all(B.backaction_heat(same, 5.0, a) == 0)
    p = B.BrownianParams(alpha0=3.0)
    assert np.all(B.backaction_heat(p, 0.0, a) == 0)
    assert np.max(np.abs(B.backaction_heat(p, 1e4, a))) < 1e-12


def test_decomposition_identity_random_draws():
    rng = np.random.default_rng(7)
    p = B.BrownianParams(alpha0=3 - 1j)
    for t, a in zip(rng.uniform(0, 100, 1000), rng.normal(0, 4, 1000) + 1j * rng.normal(0, 4, 1000)):
        r = B.score(p, t, a) - B.traj_heat_dev(p, t, a) - B.backaction_heat(p, t, a)
        assert abs(r) < 1e-10


@pytest.mark.parametrize("alpha0", [0.0, 3.0])
def test_zero_mean_fields(alpha0):
    p = B.BrownianParams(alpha0=alpha0)
    for t in (1.0, 10.0, 40.0):
        tp = B.trajectory(p, t)
        g = PhaseGrid.square(tp.alpha_t, B.default_half_width(tp), 0.2)
        q = B.q_function(p, t, g.points)
        assert abs(g.integrate(q * B.traj_heat_dev(p, t, g.points))) < 1e-5
        assert abs(g.integrate(q * B.backaction_heat(p, t, g.points))) < 1e-5


def test_delta_l2_closed_values():
    assert B.delta_l2_closed(BASE, 0.0) == 0.0
    assert B.delta_l2_closed(BASE, 1e4) == 42.0
    t = math.log(2) / BASE.gamma
    assert B.nbar_t(BASE, t) == pytest.approx(3.5)
    assert B.delta_l2_closed(BASE, t) == pytest.approx(441 / 15.75)
    assert 441 / 15.75 == pytest.approx(28.0)


def test_delta_l2_monotone_and_initial_temperature():
    t = np.linspace(0, 200, 2001)
    dl2 = B.delta_l2_closed(BASE, t)
    assert np.all(np.diff(dl2) >= -1e-12)
    hotter = B.delta_l2_closed(B.BrownianParams(nbar0=3.0), t[1:])
    assert np.all(hotter < dl2[1:])


@pytest.mark.parametrize("t", [2.0, 10.0, 30.0])
def test_closed_form_is_sld_qfi(t):
    p = B.BrownianParams(alpha0=3.0)
    assert sld_qfi(B.rho_builder(p, t), p.beta) == pytest.approx(B.delta_l2_closed(p, t), rel=1e-6)


def test_classical_fisher_closed_form():
    t = 10.0
    tp = B.trajectory(BASE, t)
    g = PhaseGrid.square(tp.alpha_t, B.default_half_width(tp) + 2, 0.2)
    quad = g.integrate(B.score(BASE, t, g.points) ** 2 * B.q_function(BASE, t, g.points))
    assert quad == pytest.approx(B.classical_fisher(BASE, t), rel=1e-8)


def test_default_times():
    t = B.default_times(0.1)
    assert t.size == 60
    assert t[0] * 0.1 == pytest.approx(1e-3) and t[-1] * 0.1 == pytest.approx(8.0)
    assert np.allclose(np.diff(np.log(t)), np.log(t[1] / t[0]))


def test_covariance_at_zero_time():
    r = B.covariance_point(B.BrownianParams(alpha0=3.0), 0.0)
    assert r.var_tra == 0 and r.cov == 0 and r.var_bac == 0 and r.dl2_closed == 0
    assert r.sum_rule_violation() == 0


@pytest.mark.parametrize("alpha0,gt", [(0.0, 0.5), (3.0, 0.5), (3.0, 2.0)])
def test_covariance_matches_gaussian_oracle(alpha0, gt):
    p = B.BrownianParams(alpha0=alpha0)
    r = B.covariance_point(p, gt / p.gamma)
    vt, cv, vb = covariance_oracle(p, gt / p.gamma)
    scale = r.dl2_closed
    assert abs(r.var_tra - vt) < 1e-3 * scale
    assert abs(r.cov - cv) < 1e-3 * scale
    assert abs(r.var_bac - vb) < 1e-3 * scale
    assert r.var_tra >= 0 and r.var_bac >= 0
    assert r.sum_rule_violation() < 0.03
    assert r.dl2_grid == pytest.approx(r.dl2_closed, rel=0.02)


def test_oracle_sum_rule_is_exact():
    p = B.BrownianParams(alpha0=3.0)
    for t in (0.5, 5.0, 20.0, 60.0):
        vt, cv, vb = covariance_oracle(p, t)
        assert vt + 2 * cv + vb == pytest.approx(B.delta_l2_closed(p, t), rel=1e-12)


def test_coherence_pattern_in_oracle():
    t = np.linspace(0.5, 60, 50)
    for tt in t:
        v0 = covariance_oracle(B.BrownianParams(alpha0=0.0), tt)
        v3 = covariance_oracle(B.BrownianParams(alpha0=3.0), tt)
        assert v3[0] > v0[0] and v3[2] > v0[2] and v3[1] < v0[1]
