import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from intrahost.equilibria import dfe_vector, endemic_equilibrium
from intrahost.errors import DomainError, NoEndemicEquilibrium, NotGeneric, UnsupportedRecruitment
from intrahost.lyapunov import (ClearanceLyapunov, EndemicLyapunov, MultistrainLyapunov,
                                certificate, certificate_residuals, phi_dotvee, v_clearance,
                                v_dfe_component, v_endemic, v_multistrain, vdot_analytic,
                                vdot_chain_rule, verify_decrease)
from intrahost.model import ConstantRecruitment, LogisticRecruitment, ModelSpec, _rhs
from intrahost.simulate import EventKind, IntegratorOptions, TerminalEvent, Trajectory, integrate
from intrahost.threshold import threshold_report

from _draws import (as_constant, broad_spec, clearance_spec, competition_spec, endemic_spec,
                    random_positive_state, running_spec, running_strain)
from _oracles import a0_dense

seeds = st.integers(0, 2**32 - 1)


def _chain_scale(V, v):
    return float(np.sum(np.abs(V.gradient(v) * _rhs(V.spec, v))))


def test_running_certificate():
    cert = certificate(running_spec(), 0)
    assert cert.a == pytest.approx(15.0, rel=1e-14)
    assert cert.b.tolist() == pytest.approx([16.0, 1.0], rel=1e-14)
    assert cert.b[0] - 1.0 * cert.b[1] == pytest.approx(cert.a)


def test_certificate_without_absorption():
    spec = ModelSpec.build(ConstantRecruitment(1, 0.1), [running_strain()], u=0.0)
    cert = certificate(spec, 0)
    assert cert.b[0] == pytest.approx(cert.a, rel=1e-14)
    assert cert.b[0] == pytest.approx(16.0)


def test_certificate_needs_endemic_equilibrium():
    with pytest.raises(NoEndemicEquilibrium):
        certificate(running_spec(beta=0.05), 0)


@given(seed=seeds)
def test_certificate_is_positive_and_solves_kernel(seed):
    rng = np.random.default_rng(seed)
    spec = broad_spec(rng)
    if endemic_equilibrium(spec, 0) is None:
        return
    cert = certificate(spec, 0)
    assert cert.a > 0 and np.all(cert.b > 0) and cert.b[-1] == 1.0
    res = certificate_residuals(spec, cert)
    assert max(res.values()) <= 1e-12
    s = spec.strains[0]
    ew = np.zeros(spec.k + 1)
    ew[-1] = 1.0
    dense = cert.a * s.beta * cert.xbar * np.linalg.solve(-a0_dense(s).T, ew)
    assert np.allclose(cert.b, dense, rtol=1e-9)


def test_v_dfe_component_values():
    s = running_strain()
    assert v_dfe_component(s, 10.0, [0.0, 0.0]) == 0.0
    assert v_dfe_component(s, 10.0, [0.0, 1.0]) == pytest.approx(0.2 * 10 / 10)


@given(seed=seeds)
def test_v_dfe_component_nonnegative(seed):
    rng = np.random.default_rng(seed)
    s = broad_spec(rng).strains[0]
    assert v_dfe_component(s, 5.0, rng.random(s.k + 1)) >= 0


def test_clearance_v_values():
    spec = running_spec(beta=0.05)
    v = dfe_vector(spec)
    assert v_clearance(spec, v) == 0.0
    v2 = v.copy()
    v2[0] *= 2
    assert v_clearance(spec, v2) == pytest.approx(10 * (1 - math.log(2)), rel=1e-14)
    with pytest.raises(DomainError):
        v_clearance(spec, np.array([0.0, 1.0, 1.0, 1.0]))


@given(seed=seeds)
def test_clearance_v_positive_off_dfe(seed):
    rng = np.random.default_rng(seed)
    spec = broad_spec(rng, n=2)
    assert v_clearance(spec, random_positive_state(rng, spec)) > 0


def test_endemic_v_zero_at_equilibrium_with_zero_gradient():
    spec = running_spec()
    cert = certificate(spec, 0)
    ee = endemic_equilibrium(spec, 0).vector(spec)
    assert v_endemic(spec, 0, cert, ee) == pytest.approx(0.0, abs=1e-14)
    V = EndemicLyapunov(spec, cert)
    h = 1e-6
    fd = np.array([(V.value(ee + h * e) - V.value(ee - h * e)) / (2 * h) for e in np.eye(spec.dim)])
    assert np.abs(fd).max() <= 1e-6
    assert np.abs(V.gradient(ee)).max() <= 1e-12


def test_endemic_v_domain():
    spec = running_spec()
    cert = certificate(spec, 0)
    with pytest.raises(DomainError):
        v_endemic(spec, 0, cert, np.array([1.0, 0.0, 1.0, 1.0]))
    assert np.isnan(EndemicLyapunov(spec, cert).values(np.array([[1.0, 0.0, 1.0, 1.0]]))[0])


@given(seed=seeds)
def test_endemic_v_positive_elsewhere(seed):
    rng = np.random.default_rng(seed)
    spec = endemic_spec(rng)
    cert = certificate(spec, 0)
    assert v_endemic(spec, 0, cert, random_positive_state(rng, spec)) > 0


def test_multistrain_v_reduces_to_weighted_endemic():
    spec = running_spec()
    cert = certificate(spec, 0)
    v = np.array([4.0, 2.0, 0.3, 0.5])
    assert v_multistrain(spec, cert, v) == pytest.approx(3.0 * v_endemic(spec, 0, cert, v), rel=1e-14)

    two = ModelSpec.build(ConstantRecruitment(1, 0.1), [running_strain(), running_strain(0.1)], u=1)
    c2 = certificate(two, 0)
    w = np.array([4.0, 2.0, 0.3, 0.5, 0.0, 0.7, 0.0])
    assert v_multistrain(two, c2, w) == 3.0 * v_endemic(two, 0, c2, w)


def test_multistrain_v_rejects_tie():
    s = running_strain()
    spec = ModelSpec.build(ConstantRecruitment(1, 0.1), [s, s], u=1)
    with pytest.raises(NotGeneric):
        v_multistrain(spec, certificate(spec, 0), np.ones(spec.dim))


@given(seed=seeds)
def test_multistrain_v_nonnegative(seed):
    rng = np.random.default_rng(seed)
    spec = competition_spec(rng, n=int(rng.integers(2, 4)))
    w = threshold_report(spec).winner
    val = v_multistrain(spec, certificate(spec, w), random_positive_state(rng, spec))
    assert np.isfinite(val) and val >= 0


@given(seed=seeds)
def test_analytic_derivatives_match_chain_rule(seed):
    rng = np.random.default_rng(seed)
    spec = competition_spec(rng, n=int(rng.integers(1, 4)), k=int(rng.integers(1, 5)))
    rep = threshold_report(spec)
    cert = certificate(spec, rep.winner)
    v = random_positive_state(rng, spec)
    fns = [ClearanceLyapunov(spec, rep), EndemicLyapunov(spec, cert),
           MultistrainLyapunov(spec, cert, rep)]
    for V in fns:
        a, b = vdot_analytic(V, v), vdot_chain_rule(V, v)
        assert abs(a - b) <= 1e-10 * _chain_scale(V, v)


def test_clearance_derivative_zero_at_dfe():
    spec = running_spec(beta=0.05)
    assert vdot_analytic(ClearanceLyapunov(spec), dfe_vector(spec)) == 0.0


def test_clearance_derivative_nonpositive_below_threshold():
    rng = np.random.default_rng(7)
    for _ in range(100):
        spec = clearance_spec(rng, n=int(rng.integers(1, 3)), r0_max=1.0)
        V = ClearanceLyapunov(spec)
        for _ in range(100):
            v = random_positive_state(rng, spec)
            assert V.vdot(v) <= 1e-12 * (1 + _chain_scale(V, v))


def test_clearance_derivative_positive_near_dfe_above_threshold():
    rng = np.random.default_rng(8)
    for _ in range(50):
        spec = endemic_spec(rng)
        V = ClearanceLyapunov(spec)
        v = dfe_vector(spec)
        v[spec.m_index(0)] = 1e-6 * spec.xstar
        assert V.vdot(v) > 0


def test_multistrain_derivative_nonpositive_constant_recruitment():
    rng = np.random.default_rng(9)
    checked = 0
    while checked < 50:
        spec = competition_spec(rng, n=int(rng.integers(2, 4)))
        if not isinstance(spec.recruitment, ConstantRecruitment):
            continue
        rep = threshold_report(spec)
        V = MultistrainLyapunov(spec, certificate(spec, rep.winner), rep)
        for _ in range(100):
            v = random_positive_state(rng, spec)
            assert V.vdot(v) <= 1e-12 * (1 + _chain_scale(V, v))
        checked += 1


def test_am_gm_form_at_and_off_equilibrium():
    spec = running_spec()
    cert = certificate(spec, 0)
    ee = endemic_equilibrium(spec, 0).vector(spec)
    assert phi_dotvee(spec, 0, cert, ee) == pytest.approx(0.0, abs=1e-12)
    v = ee.copy()
    v[0] = 2 * cert.xbar
    val = phi_dotvee(spec, 0, cert, v)
    assert val < 0
    assert val == pytest.approx(vdot_chain_rule(EndemicLyapunov(spec, cert), v), rel=1e-10)


def test_am_gm_form_needs_constant_recruitment():
    rec = LogisticRecruitment(lam=1.0, s=0.05, K=20.0, mu_x=0.1)
    spec = ModelSpec.build(rec, [running_strain()], u=1.0)
    with pytest.raises(UnsupportedRecruitment):
        phi_dotvee(spec, 0, certificate(spec, 0), np.ones(4))


@given(seed=seeds)
def test_am_gm_form_matches_endemic_derivative(seed):
    rng = np.random.default_rng(seed)
    spec = endemic_spec(rng)
    spec = as_constant(spec)
    cert = certificate(spec, 0)
    V = EndemicLyapunov(spec, cert)
    v = random_positive_state(rng, spec)
    assert phi_dotvee(spec, 0, cert, v) == pytest.approx(V.vdot(v), rel=1e-10,
                                                         abs=1e-12 * _chain_scale(V, v))


@given(ratios=st.lists(st.floats(1e-3, 1e3), min_size=3, max_size=12))
def test_cyclic_ratio_bracket_nonpositive(ratios):
    # N - sum of cyclic ratios r_1/r_2 + ... + r_N/r_1 <= 0 by AM-GM
    r = np.array(ratios)
    bracket = r.size - np.sum(r / np.roll(r, -1))
    assert bracket <= 1e-9 * r.size


@given(seed=seeds)
def test_linear_terms_cancel_at_equilibrium(seed):
    rng = np.random.default_rng(seed)
    spec = competition_spec(rng, n=int(rng.integers(1, 3)))
    rep = threshold_report(spec)
    cert = certificate(spec, rep.winner)
    ee = endemic_equilibrium(spec, rep.winner).vector(spec)
    V = EndemicLyapunov(spec, cert)
    assert abs(V.vdot_single(ee)) <= 1e-12 * (1 + cert.a * spec.xstar)


def test_derivative_matches_trajectory_difference():
    rng = np.random.default_rng(3)
    spec = endemic_spec(rng, k=2)
    V = EndemicLyapunov(spec, certificate(spec, 0))
    v = endemic_equilibrium(spec, 0).vector(spec) * rng.uniform(0.5, 2.0, spec.dim)
    h = 1e-4
    tr = integrate(spec, v, IntegratorOptions(t_end=2 * h, rtol=1e-13, atol=1e-15, samples=3))
    fd = (V.value(tr.states[2]) - V.value(tr.states[0])) / (2 * h)
    assert fd == pytest.approx(V.vdot(tr.states[1]), abs=1e-6 * (1 + abs(fd)))


def _traj(states, times=None):
    states = np.asarray(states, dtype=float)
    times = np.arange(len(states), dtype=float) if times is None else times
    return Trajectory(times=times, states=states,
                      event=TerminalEvent(EventKind.REACHED_T_END, float(times[-1])),
                      n_steps=len(states), n_rejected=0)


def test_decrease_on_constant_trajectory():
    spec = running_spec()
    ee = endemic_equilibrium(spec, 0).vector(spec)
    rep = verify_decrease(EndemicLyapunov(spec, certificate(spec, 0)), _traj([ee] * 5))
    assert rep.passed and rep.max_increase == 0.0 and rep.evaluated == 5


def test_decrease_flags_increase():
    spec = running_spec()
    ee = endemic_equilibrium(spec, 0).vector(spec)
    far = ee * np.array([2.0, 1.5, 1.0, 0.5])
    rep = verify_decrease(EndemicLyapunov(spec, certificate(spec, 0)), _traj([ee, far]))
    assert not rep.passed and rep.max_increase > rep.tolerance


def test_decrease_skips_out_of_domain_samples():
    spec = running_spec()
    ee = endemic_equilibrium(spec, 0).vector(spec)
    start = np.array([10.0, 0.0, 0.0, 0.01])
    rep = verify_decrease(EndemicLyapunov(spec, certificate(spec, 0)), _traj([start, ee, ee]))
    assert rep.evaluated == 2 and rep.passed
