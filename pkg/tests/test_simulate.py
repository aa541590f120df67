from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intrahost.equilibria import dfe_vector, endemic_equilibrium
from intrahost.errors import InvalidOptions, NonFiniteState, StepSizeUnderflow
from intrahost.model import ConstantRecruitment, ModelSpec, SystemState
from intrahost.simulate import (EventKind, IntegratorOptions, default_horizon, detect_extinction,
                                integrate, steady_state_detect)
from intrahost.threshold import threshold_report

from _draws import as_constant, broad_spec, random_nonnegative_state, running_spec, running_strain

seeds = st.integers(0, 2**32 - 1)


def test_dfe_start_stays_put():
    spec = running_spec()
    tr = integrate(spec, dfe_vector(spec), IntegratorOptions(t_end=100.0, samples=11))
    assert np.array_equal(tr.states, np.tile(dfe_vector(spec), (11, 1)))
    assert tr.event.kind is EventKind.STEADY_STATE


def test_x_axis_start_keeps_parasites_at_zero():
    spec = running_spec()
    tr = integrate(spec, [2.0, 0.0, 0.0, 0.0], IntegratorOptions(t_end=400.0))
    assert not tr.states[:, 1:].any()
    assert tr.final[0] == pytest.approx(10.0, rel=1e-6)


def test_running_example_reaches_endemic_equilibrium():
    spec = running_spec()
    ee = endemic_equilibrium(spec, 0).vector(spec)
    tr = integrate(spec, [10.0, 0.0, 0.0, 0.01], IntegratorOptions(t_end=2000.0))
    assert np.all(np.abs(tr.final - ee) <= 1e-4 * ee)
    assert tr.times[-1] == 2000.0
    assert len(tr) == 1001


def test_tight_tolerances_are_classified_steady():
    spec = running_spec()
    tr = integrate(spec, SystemState(10.0, [[0.0]], [0.0], [0.01]),
                   IntegratorOptions(t_end=2000.0, rtol=1e-12, atol=1e-14))
    assert tr.event.kind is EventKind.STEADY_STATE


def test_stop_on_steady_ends_early():
    spec = running_spec()
    tr = integrate(spec, [10.0, 0.0, 0.0, 0.01],
                   IntegratorOptions(t_end=1e5, rtol=1e-12, atol=1e-14, stop_on_steady=True))
    assert tr.event.kind is EventKind.STEADY_STATE
    assert tr.times[-1] < 1e5
    assert np.all(np.diff(tr.times) > 0)


def test_extinction_detection():
    two = ModelSpec.build(ConstantRecruitment(1, 0.1), [running_strain(), running_strain(0.2 * 2 / 3)], u=1)
    assert threshold_report(two).t0s.tolist() == pytest.approx([3.0, 2.0])
    v0 = np.array([10.0, 0.0, 0.0, 0.01, 0.0, 0.0, 0.01])
    tr = integrate(two, v0, IntegratorOptions(t_end=2000.0, atol=1e-15))
    assert detect_extinction(tr, two) == (False, True)
    assert tr.event.extinct == (1,)

    ee = endemic_equilibrium(two, 0).vector(two)
    still = integrate(two, ee, IntegratorOptions(t_end=10.0, samples=5))
    assert detect_extinction(still, two) == (False, True)


def test_steady_state_detection():
    spec = running_spec()
    assert steady_state_detect(spec, dfe_vector(spec))
    assert steady_state_detect(spec, endemic_equilibrium(spec, 0).vector(spec))
    bumped = dfe_vector(spec)
    bumped[3] += 1.0
    assert not steady_state_detect(spec, bumped)


@pytest.mark.parametrize("kw", [dict(rtol=0.0), dict(atol=-1.0), dict(samples=1),
                                dict(t_end=-5.0), dict(extinction_eps=0.0), dict(steady_tol=0.0),
                                dict(fixed_step=-1.0), dict(max_steps=0)])
def test_invalid_options(kw):
    with pytest.raises(InvalidOptions):
        integrate(running_spec(), [10.0, 0.0, 0.0, 0.01], IntegratorOptions(**kw))


def test_negative_or_nonfinite_start_rejected():
    with pytest.raises(InvalidOptions):
        integrate(running_spec(), [10.0, -1.0, 0.0, 0.01])
    with pytest.raises(NonFiniteState):
        integrate(running_spec(), [10.0, np.nan, 0.0, 0.01])


def test_step_budget_exhaustion():
    with pytest.raises(StepSizeUnderflow):
        integrate(running_spec(), [10.0, 0.0, 0.0, 0.01], IntegratorOptions(t_end=100.0, max_steps=5))


def test_impossible_tolerance_underflows():
    with pytest.raises(StepSizeUnderflow):
        integrate(running_spec(), [10.0, 0.0, 0.0, 0.01],
                  IntegratorOptions(t_end=10.0, rtol=1e-300, atol=1e-300))


def test_default_horizon_uses_slowest_rate():
    spec = running_spec()
    assert default_horizon(spec) == pytest.approx(2000 / 0.1)
    tr = integrate(spec, dfe_vector(spec), samples=3)
    assert tr.times[-1] == pytest.approx(20000.0)


def test_dense_output_matches_restarted_integration():
    spec = running_spec()
    opts = IntegratorOptions(t_end=50.0, samples=51, rtol=1e-10, atol=1e-12)
    tr = integrate(spec, [10.0, 0.0, 0.0, 0.01], opts)
    for j in (7, 23, 40):
        direct = integrate(spec, [10.0, 0.0, 0.0, 0.01], opts, t_end=float(tr.times[j]), samples=2)
        assert np.allclose(tr.states[j], direct.final, rtol=1e-7, atol=1e-9)


def test_concurrent_runs_match_serial():
    rng = np.random.default_rng(4)
    specs = [broad_spec(rng, k=2, n=2) for _ in range(6)]
    starts = [random_nonnegative_state(rng, s) for s in specs]
    opts = IntegratorOptions(t_end=20.0, samples=21)
    serial = [integrate(s, v, opts).states for s, v in zip(specs, starts)]
    with ThreadPoolExecutor(4) as pool:
        parallel = list(pool.map(lambda sv: integrate(sv[0], sv[1], opts).states, zip(specs, starts)))
    for a, b in zip(serial, parallel):
        assert np.array_equal(a, b)


@settings(max_examples=25)
@given(seed=seeds)
def test_forward_invariance_and_absorbing_set(seed):
    rng = np.random.default_rng(seed)
    spec = broad_spec(rng, k=int(rng.integers(1, 4)), n=int(rng.integers(1, 3)))
    spec = as_constant(spec)
    opts = IntegratorOptions(t_end=50.0 / spec.recruitment.mu_x, samples=401)
    tr = integrate(spec, random_nonnegative_state(rng, spec), opts)
    assert np.all(np.diff(tr.times) > 0)
    assert tr.states.min() >= -opts.atol
    tail = tr.states[len(tr) // 2:, 0]
    assert tail.max() <= spec.xstar * (1 + 1e-3)
