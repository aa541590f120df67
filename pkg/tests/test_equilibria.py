import numpy as np
import pytest
from hypothesis import given, strategies as st

from intrahost.equilibria import all_endemic_equilibria, dfe, dfe_vector, endemic_equilibrium
from intrahost.model import ConstantRecruitment, LogisticRecruitment, ModelSpec, vector_field

from _draws import broad_spec, competition_spec, endemic_spec, running_spec, running_strain
from _oracles import bisect_root, multistart_equilibria, rhs_loops

seeds = st.integers(0, 2**32 - 1)


def test_dfe_constant():
    spec = ModelSpec.build(ConstantRecruitment(1, 0.1), [running_strain(), running_strain(0.1)])
    state = dfe(spec)
    assert state.x == 10.0
    assert not state.y.any() and not state.g.any() and not state.m.any()
    assert not vector_field(spec, dfe_vector(spec)).any()


def test_dfe_logistic():
    rec = LogisticRecruitment(lam=1.0, s=0.05, K=20.0, mu_x=0.1)
    spec = ModelSpec.build(rec, [running_strain()])
    assert dfe(spec).x == pytest.approx(bisect_root(rec.phi, 0.0, 100.0), rel=1e-12)


def test_running_endemic_equilibrium():
    ee = endemic_equilibrium(running_spec(), 0)
    assert ee.xbar == pytest.approx(10 / 3, rel=1e-14)
    assert ee.mbar == pytest.approx(1.0, rel=1e-14)
    assert ee.ybar[0] == pytest.approx(4 / 3, rel=1e-14)
    assert ee.gbar == pytest.approx(0.2 * 4 / 3, rel=1e-14)
    assert ee.t0 == pytest.approx(3.0)
    assert ee.residual_norm < 1e-12
    assert np.abs(rhs_loops(running_spec(), ee.vector(running_spec()))).max() < 1e-12


def test_subthreshold_strain_has_no_equilibrium():
    assert endemic_equilibrium(running_spec(beta=0.05), 0) is None


def test_equilibrium_state_layout():
    spec = ModelSpec.build(ConstantRecruitment(1, 0.1), [running_strain(0.01), running_strain()])
    ees = all_endemic_equilibria(spec)
    assert ees[0] is None
    st_ = ees[1].state(spec)
    assert st_.m[0] == 0 and st_.m[1] == pytest.approx(1.0)


@given(seed=seeds)
def test_endemic_identities(seed):
    rng = np.random.default_rng(seed)
    spec = broad_spec(rng)
    ee = endemic_equilibrium(spec, 0)
    if ee is None:
        assert spec.strains[0].beta * spec.xstar * (spec.strains[0].burst_factor() - spec.u) \
            <= spec.strains[0].mu_m * (1 + 1e-12)
        return
    s = spec.strains[0]
    assert 0 < ee.xbar < spec.xstar
    assert np.all(ee.zbar > 0)
    assert ee.mbar == pytest.approx(spec.recruitment.phi(ee.xbar) / (s.beta * ee.xbar), rel=1e-10)
    assert ee.residual_norm <= 1e-10 * ee.residual_scale


@given(seed=seeds)
def test_xbar_ignores_recruitment_and_zbar_scales_with_phi(seed):
    rng = np.random.default_rng(seed)
    spec = endemic_spec(rng)
    other = ModelSpec.build(ConstantRecruitment(lam=spec.xstar * 3.0, mu_x=1.5), spec.strains,
                            u=spec.u)
    a, b = endemic_equilibrium(spec, 0), endemic_equilibrium(other, 0)
    assert a.xbar == pytest.approx(b.xbar, rel=1e-14)
    ratio = spec.recruitment.phi(a.xbar) / other.recruitment.phi(b.xbar)
    assert np.allclose(a.zbar, ratio * b.zbar, rtol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_multistart_newton_finds_only_known_equilibria(seed):
    rng = np.random.default_rng(100 + seed)
    spec = competition_spec(rng, n=1 + seed % 2, k=1 + seed % 3)
    known = [dfe_vector(spec)] + [e.vector(spec) for e in all_endemic_equilibria(spec) if e]
    found = multistart_equilibria(spec, rng, seeds=40)
    assert found
    for v in found:
        assert any(np.allclose(v, w, rtol=1e-6, atol=1e-9 * spec.xstar) for w in known)
