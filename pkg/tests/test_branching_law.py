import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bkl.branching_law import (
    DomainError, OffspringLaw, big_phi, c_sub, c_sub_details, llogl_value, mean_offspring, small_phi,
    small_phi_array, survival_g, survival_g_grid,
)

BINARY = OffspringLaw([0.6, 0.0, 0.4], 1.0)
DEATH = OffspringLaw([1.0], 1.0)


def binary_g(t):
    return 0.2 / (0.6 * math.exp(0.2 * t) - 0.4)


@st.composite
def subcritical_laws(draw):
    k = draw(st.integers(1, 5))
    w = np.array(draw(st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k)))
    q = w / w.sum()
    mean_q = float(np.arange(1, k + 1) @ q)
    s = min(1.0, draw(st.floats(0.05, 0.9)) / mean_q)
    p = [1.0 - s, *(s * q)]
    p[0] = 1.0 - math.fsum(p[1:])
    return OffspringLaw(p, draw(st.floats(0.2, 3.0)))


def test_mean_examples():
    assert mean_offspring(BINARY) == pytest.approx(0.8, abs=1e-15)
    assert mean_offspring(DEATH) == 0.0
    assert mean_offspring(OffspringLaw([0.5, 0.5])) == 0.5


def test_rejects_bad_laws():
    with pytest.raises(ValueError):
        OffspringLaw([0.0, 1.0])
    with pytest.raises(ValueError):
        OffspringLaw([0.5, 0.4])
    with pytest.raises(ValueError):
        OffspringLaw([0.6, 0.4], branch_rate=0.0)


def test_phi_examples():
    assert big_phi(BINARY, 0.5) == pytest.approx(0.2, abs=1e-15)
    assert small_phi(BINARY, 0.5) == pytest.approx(0.2, abs=1e-15)
    assert small_phi(BINARY, 0.0) == 0.0
    for u in (0.0, 0.3, 1.0):
        assert big_phi(DEATH, u) == pytest.approx(u)
        assert small_phi(DEATH, u) == 0.0
    with pytest.raises(DomainError):
        big_phi(BINARY, 1.5)


def test_phi_closed_form_on_grid():
    u = np.linspace(0, 1, 100)
    got = np.array([big_phi(BINARY, v) for v in u])
    assert np.max(np.abs(got - (0.2 * u + 0.4 * u * u))) < 1e-12
    assert np.allclose(small_phi_array(BINARY, u), 0.4 * u, atol=1e-14)


def test_llogl():
    assert llogl_value(BINARY) == pytest.approx(0.8 * math.log(2), rel=1e-12)
    assert llogl_value(DEATH) == 0.0


def test_survival_g_examples():
    assert survival_g(DEATH, 1.0) == pytest.approx(math.exp(-1), abs=1e-8)
    assert survival_g(BINARY, 1.0) == pytest.approx(binary_g(1.0), abs=1e-8)
    assert survival_g(BINARY, 0.0) == 1.0
    grid = survival_g_grid(BINARY, [0.5, 2.0, 10.0])
    assert np.allclose(grid, [binary_g(t) for t in (0.5, 2.0, 10.0)], atol=1e-8)


def test_c_sub_examples():
    assert c_sub(DEATH) == pytest.approx(1.0, abs=1e-12)
    assert c_sub(BINARY) == pytest.approx(1 / 3, abs=1e-8)
    det = c_sub_details(BINARY)
    assert det.value == pytest.approx(1 / 3, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(subcritical_laws(), st.floats(0.0, 1.0))
def test_phi_decomposition(law, u):
    # Phi(u) = (alpha + phi(u)) u and phi stays in [0, beta]
    assert big_phi(law, u) == pytest.approx((law.alpha + small_phi(law, u)) * u, abs=1e-12)
    assert -1e-12 <= small_phi(law, u) <= law.beta + 1e-12


@settings(max_examples=30, deadline=None)
@given(subcritical_laws(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_phi_increasing(law, a, b):
    lo, hi = min(a, b), max(a, b)
    assert small_phi(law, lo) <= small_phi(law, hi) + 1e-12


@settings(max_examples=15, deadline=None)
@given(subcritical_laws())
def test_scaled_survival_decreases_to_c_sub(law):
    # e^{alpha t} g(t) = exp(-int_0^t phi(g)) decreases towards C_sub
    ts = [0.0, 1.0, 4.0, 16.0]
    vals = [math.exp(law.alpha * t) * survival_g(law, t) for t in ts]
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))
    assert c_sub(law) <= vals[-1] + 1e-7
