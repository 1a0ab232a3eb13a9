import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bkl.branching_law import DomainError, NumericalError
from bkl.levy_models import JumpComponent, LevyModel, PreconditionError, esscher, psi, right_inverse
from bkl.scale import ScaleFunctionEvaluator, invert_laplace, scale_w, scale_w_bm

JUMPY = LevyModel(0.5, 1.0, (JumpComponent(1.0, "neg_exp", mu=2.0),))


def test_closed_form_examples():
    assert scale_w_bm(0.0, 0.5, 1.0) == pytest.approx(2 * math.sinh(1.0), rel=1e-14)
    assert scale_w_bm(0.3, 0.2, -1.0) == 0.0
    x = np.linspace(0.1, 3, 7)
    assert np.allclose(scale_w_bm(1.0, 0.0, x), np.expm1(2 * x), rtol=1e-13)


def test_asymptote():
    ev = ScaleFunctionEvaluator(LevyModel(-1.0, 1.0, ()), 0.0)
    assert ev.exponent == pytest.approx(2.0)
    assert ev(8.0) / float(ev.asymptote(8.0)) == pytest.approx(1.0, rel=1e-6)


def test_inversion_of_known_transform():
    # 1/(r+1) <-> e^{-x}
    for x in (0.3, 1.0, 4.0):
        assert invert_laplace(lambda r: 1.0 / (r + 1.0), x) == pytest.approx(math.exp(-x), rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.5, 1.5), st.sampled_from([0.0, 0.2, 1.0]), st.floats(0.1, 5.0))
def test_inversion_matches_brownian_closed_form(drift, q, x):
    m = LevyModel(drift, 1.0, ())
    inv = ScaleFunctionEvaluator(m, q, method="inversion")(x)
    assert inv == pytest.approx(scale_w_bm(-drift, q, x), rel=1e-5)


def test_laplace_identity_jump_model():
    q = 0.2
    ev = ScaleFunctionEvaluator(JUMPY, q)
    r = ev.exponent + 1.0
    xs = np.linspace(0.0, 40.0, 4001)
    w = ev(xs)
    integrand = np.exp(-r * xs) * w
    integral = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(xs)))
    assert integral == pytest.approx(1.0 / (psi(JUMPY, r) - q), rel=1e-3)


def test_tilt_relation():
    c, q = 0.7, 0.2
    lhs = scale_w(JUMPY, q, 1.5)
    rhs = math.exp(c * 1.5) * scale_w(esscher(JUMPY, c), q - psi(JUMPY, c), 1.5)
    assert lhs == pytest.approx(rhs, rel=1e-4)


def test_monotone_and_zero_below_origin():
    ev = ScaleFunctionEvaluator(JUMPY, 0.1)
    vals = ev(np.linspace(0.05, 4, 20))
    assert np.all(np.diff(vals) > 0)
    assert ev(-1.0) == 0.0


def test_errors():
    with pytest.raises(PreconditionError):
        ScaleFunctionEvaluator(LevyModel(0.0, 1.0, (JumpComponent(1.0, "pos_exp", mu=2.0),)), 0.0)
    with pytest.raises(PreconditionError):
        ScaleFunctionEvaluator(JUMPY, 0.0, method="closed_form")
    with pytest.raises(DomainError):
        ScaleFunctionEvaluator(LevyModel(1.0, 1.0, ()), -1.0)
    with pytest.raises(NumericalError):
        ScaleFunctionEvaluator(JUMPY, 0.2, nodes=8, rtol=1e-14)(1.0)
