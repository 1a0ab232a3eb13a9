import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bkl.levy_models import (
    JumpComponent, LevyModel, PreconditionError, dual, esscher, lambda_star, psi, psi_d1, psi_d2,
    right_inverse, sample_increment,
)

JUMPY = LevyModel(0.0, 1.0, (JumpComponent(1.0, "neg_exp", mu=2.0),))


def bm(drift, var=1.0):
    return LevyModel(drift, var, ())


@st.composite
def models(draw):
    drift = draw(st.floats(-2.0, 2.0))
    var = draw(st.floats(0.1, 2.0))
    jumps = []
    if draw(st.booleans()):
        jumps.append(JumpComponent(draw(st.floats(0.1, 2.0)), "neg_exp", mu=draw(st.floats(1.0, 4.0))))
    if draw(st.booleans()):
        jumps.append(JumpComponent(draw(st.floats(0.1, 2.0)), "pos_exp", mu=draw(st.floats(2.0, 4.0))))
    return LevyModel(drift, var, tuple(jumps))


def test_psi_examples():
    assert psi(bm(-1.0), 1.0) == pytest.approx(-0.5)
    assert psi(JUMPY, 0.0) == 0.0
    assert psi(JUMPY, 1.0) == pytest.approx(1 / 6, abs=1e-14)


def test_derivative_examples():
    m = bm(-1.0)
    for lam in (0.0, 0.7, 2.0):
        assert psi_d1(m, lam) == pytest.approx(-1.0 + lam)
        assert psi_d2(m, lam) == pytest.approx(1.0)
    assert psi_d1(bm(0.3), 0.0) == pytest.approx(0.3)
    assert psi_d2(JUMPY, 0.0) == pytest.approx(1.5)


def test_lambda_star():
    assert lambda_star(bm(-1.0)) == pytest.approx(1.0, abs=1e-12)
    assert psi(bm(-1.0), lambda_star(bm(-1.0))) == pytest.approx(-0.5)
    assert lambda_star(bm(-2.5)) == pytest.approx(2.5, abs=1e-12)
    with pytest.raises(PreconditionError):
        lambda_star(bm(1.0))


def test_right_inverse():
    for q in (0.0, 0.2, 1.0):
        assert right_inverse(bm(0.0), q) == pytest.approx(math.sqrt(2 * q), abs=1e-10)
    assert right_inverse(bm(-1.0), 0.0) == pytest.approx(2.0, abs=1e-10)
    assert right_inverse(JUMPY, 0.1) <= right_inverse(JUMPY, 0.2)


def test_esscher_and_dual_examples():
    t = esscher(bm(-1.0), 0.4)
    assert t.drift == pytest.approx(-0.6) and t.gaussian_var == 1.0 and not t.jumps
    assert abs(psi_d1(esscher(JUMPY, 0.0), 0.0) - psi_d1(JUMPY, 0.0)) < 1e-15
    assert dual(bm(-1.0)).drift == 1.0
    assert all(j.kind == "pos_exp" for j in dual(JUMPY).jumps)


def test_tilt_at_lambda_star_has_zero_mean():
    m = LevyModel(-0.5, 1.0, (JumpComponent(1.0, "neg_exp", mu=2.0),))
    assert abs(psi_d1(esscher(m, lambda_star(m)), 0.0)) < 1e-10


def test_config_roundtrip_and_unknown_keys():
    cfg = JUMPY.to_config()
    assert LevyModel.from_config(cfg) == JUMPY
    with pytest.raises(ValueError):
        LevyModel.from_config({"drift": 0.0, "sigma": 1.0})
    with pytest.raises(ValueError):
        LevyModel.from_config({"jumps": [{"rate": 1.0, "kind": "neg_exp", "mu": 1.0, "extra": 2}]})


def test_deterministic_increment():
    rng = np.random.default_rng(0)
    assert sample_increment(LevyModel(2.0, 0.0, ()), 0.5, rng) == 1.0


def test_increment_moments():
    rng = np.random.default_rng(1)
    n, dt = 400_000, 0.5
    x = sample_increment(JUMPY, dt, rng, size=n)
    mean, var = psi_d1(JUMPY, 0.0) * dt, psi_d2(JUMPY, 0.0) * dt
    assert abs(x.mean() - mean) < 4 * math.sqrt(var / n)
    # se of a sample variance ~ sqrt((m4 - var^2) / n)
    m4 = np.mean((x - x.mean()) ** 4)
    assert abs(x.var() - var) < 4 * math.sqrt((m4 - var * var) / n)


@settings(max_examples=40, deadline=None)
@given(models(), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_esscher_identity(model, c, lam):
    # Psi_c(lam) = Psi(lam + c) - Psi(c)
    assert psi(esscher(model, c), lam) == pytest.approx(psi(model, lam + c) - psi(model, c), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(models(), st.floats(-0.5, 0.5))
def test_dual_reflects(model, lam):
    assert psi(dual(model), lam) == pytest.approx(psi(model, -lam), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(models(), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_convexity(model, a, b):
    mid = 0.5 * (a + b)
    assert psi(model, mid) <= 0.5 * (psi(model, a) + psi(model, b)) + 1e-12
    assert psi_d2(model, a) > 0
