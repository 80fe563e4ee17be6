import numpy as np
import pytest
from hypothesis import given, strategies as st

from ntl.landscape import DiagonalQuadraticLandscape, InputError
from ntl.optimizer import DivergenceError, Family, OptimizerSpec, OptimizerState, run, step

LAND = DiagonalQuadraticLandscape.isotropic(2.0, 1)


def test_sgd_step_formula():
    spec = OptimizerSpec("sgd", 0.1, 0.5)
    s = step(spec, OptimizerState.initial(spec, [1.0]), LAND, 0.1, np.array([2.0]))
    assert np.isclose(s.position[0], 1.0 - 0.1 * (2.0 + 0.5 * 2.0))
    assert s.step_count == 1


def test_signgd_moves_exactly_eta():
    spec = OptimizerSpec("signgd", 0.05, 1.0)
    s = step(spec, OptimizerState.initial(spec, [0.3]), LAND, 0.05, np.array([-10.0]))
    assert np.isclose(s.position[0], 0.35)


def test_attract_pulls_toward_ema():
    spec = OptimizerSpec("sgd_attract", 0.1, 0.0, beta=0.5, gamma=1.0)
    st0 = OptimizerState(np.array([1.0]), np.array([0.0]), 0)
    s = step(spec, st0, LAND, 0.1, np.zeros(1))
    ema = 0.5 * 0.0 + 0.5 * 1.0
    assert np.isclose(s.ema[0], ema)
    assert np.isclose(s.position[0], 1.0 - 0.1 * (2.0 + 1.0 * (1.0 - ema)))


def test_attract_gamma_zero_is_sgd():
    a = OptimizerSpec("sgd_attract", 0.1, 0.3, beta=0.7, gamma=0.0)
    b = OptimizerSpec("sgd", 0.1, 0.3)
    ta = run(a, OptimizerState.initial(a, [1.0]), LAND, np.full(20, 0.1), 20, seed=4)
    tb = run(b, OptimizerState.initial(b, [1.0]), LAND, np.full(20, 0.1), 20, seed=4)
    assert np.allclose([s.position for s in ta], [s.position for s in tb])


@given(x0=st.floats(-3, 3), steps=st.integers(1, 30))
def test_noiseless_sgd_is_geometric(x0, steps):
    spec = OptimizerSpec("sgd", 0.1, 0.0)
    traj = run(spec, OptimizerState.initial(spec, [x0]), LAND, np.full(steps, 0.1), steps, seed=0)
    assert np.isclose(traj[-1].position[0], x0 * 0.8 ** steps, atol=1e-12)


def test_run_is_reproducible():
    spec = OptimizerSpec("sgd", 0.1, 1.0)
    s0 = OptimizerState.initial(spec, [0.0])
    a = run(spec, s0, LAND, np.full(50, 0.1), 50, seed=11)
    b = run(spec, s0, LAND, np.full(50, 0.1), 50, seed=11)
    assert all(np.array_equal(x.position, y.position) for x, y in zip(a, b))


def test_divergence_reports_step_and_state():
    spec = OptimizerSpec("sgd", 1.5, 0.0)
    with pytest.raises(DivergenceError) as err:
        run(spec, OptimizerState.initial(spec, [1.0]), LAND, np.full(200, 1.5), 200, seed=0)
    assert err.value.step > 0
    assert np.all(np.isfinite(err.value.last_state.position))


def test_validation():
    with pytest.raises(InputError):
        OptimizerSpec("sgd", -0.1, 1.0)
    with pytest.raises(InputError):
        OptimizerSpec("sgd", 0.1, -1.0)
    with pytest.raises(InputError):
        OptimizerSpec("sgd", 0.1, 1.0, beta=0.5)
    with pytest.raises(InputError):
        OptimizerSpec("sgd_attract", 0.1, 1.0, beta=1.0)
    with pytest.raises(ValueError):
        Family.parse("adam")
    spec = OptimizerSpec("sgd", 0.1, 1.0)
    with pytest.raises(InputError):
        step(spec, OptimizerState.initial(spec, [0.0]), LAND, 0.1, np.zeros(2))
