import numpy as np
import pytest
from hypothesis import given, strategies as st

from ntl.landscape import (BottomProfile, DiagonalQuadraticLandscape, InputError, RiverValleyLandscape,
                           SharpnessProfile, landscape_from_dict, landscape_to_dict)

finite = st.floats(-5, 5, allow_nan=False)


def numeric_grad(f, p, h=1e-6):
    g = np.zeros_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = h
        g[i] = (f(p + e) - f(p - e)) / (2 * h)
    return g


@given(x=finite, y=st.floats(0.05, 3))
def test_river_gradient_matches_finite_differences(x, y):
    land = RiverValleyLandscape(SharpnessProfile("exp", alpha=0.7), BottomProfile("linear", c=0.3))
    p = np.array([x, y])
    assert np.allclose(land.gradient(p), numeric_grad(land.loss, p), rtol=1e-5, atol=1e-6)


@given(x=finite, y=st.floats(0.05, 3) | st.floats(-3, -0.05))
def test_linear_abs_gradient_away_from_cusp(x, y):
    land = RiverValleyLandscape(SharpnessProfile("linear_abs", a0=1.0, b=2.0), BottomProfile("linear", c=0.1))
    p = np.array([x, y])
    assert np.allclose(land.gradient(p), numeric_grad(land.loss, p), rtol=1e-5, atol=1e-6)


def test_linear_abs_subgradient_at_zero():
    sp = SharpnessProfile("linear_abs", a0=1.0, b=2.0)
    assert sp.derivative(0.0) == 0.0


def test_loss_parts_add_up():
    land = RiverValleyLandscape(SharpnessProfile("exp"), BottomProfile("linear", c=0.1, level=2.0))
    pts = np.random.default_rng(0).normal(size=(50, 2))
    total, fast, slow = land.loss_parts(pts)
    assert np.allclose(total, fast + slow)
    assert np.all(fast >= 0)


def test_quadratic_batch_and_gradient():
    land = DiagonalQuadraticLandscape(np.array([1.0, 4.0]))
    th = np.array([[1.0, 1.0], [2.0, 0.5]])
    assert np.allclose(land.loss(th), [2.5, 2.5])
    assert np.allclose(land.gradient(th), [[1, 4], [2, 2]])


def test_log_spectrum_spans_four_decades():
    land = DiagonalQuadraticLandscape.log_spectrum(10_000)
    assert np.isclose(land.sharpness.max(), 100.0)
    assert land.sharpness.min() > 0.01
    assert np.isclose(land.sharpness.min(), 10 ** (-2 + 4 / 10_000))


def test_dimension_mismatch_rejected():
    with pytest.raises(InputError):
        DiagonalQuadraticLandscape.isotropic(1.0, 3).loss(np.zeros(2))
    with pytest.raises(InputError):
        RiverValleyLandscape().gradient(np.zeros(3))


def test_invalid_sharpness_rejected():
    with pytest.raises(InputError):
        DiagonalQuadraticLandscape(np.array([1.0, -1.0]))


def test_dict_round_trip():
    for land in (DiagonalQuadraticLandscape.isotropic(2.0, 5),
                 RiverValleyLandscape(SharpnessProfile("linear_abs", 1.0, 1.0), BottomProfile("linear", 0.1))):
        again = landscape_from_dict(landscape_to_dict(land))
        assert landscape_to_dict(again) == landscape_to_dict(land)
