import math

import numpy as np
import pytest
from scipy.special import ndtr

from bkl.branching_law import ConfigurationError, DomainError, OffspringLaw, c_sub, survival_g
from bkl.fluctuation import killed_positions
from bkl.levy_models import LevyModel
from bkl.particle_sim import (
    AcceptanceError, SimConfig, estimate_alltime_max_tail, estimate_mt_tail, estimate_survival,
    feynman_kac_rhs, run_spine, run_trees, simulate, yaglom_samples,
)
from bkl.levy_models import right_inverse

BM = LevyModel(0.0, 1.0, ())
BINARY = OffspringLaw([0.6, 0.0, 0.4], 1.0)
DEATH = OffspringLaw([1.0], 1.0)


def cfg(model=BM, law=BINARY, **kw):
    return SimConfig(model, law, **{"horizon": 20.0, "seed": 1, **kw})


def test_config_validation():
    with pytest.raises(ConfigurationError):
        cfg(dt=0.0)
    with pytest.raises(ConfigurationError):
        cfg(checkpoints=(2.0, 1.0))
    with pytest.raises(ConfigurationError):
        cfg(checkpoints=(30.0,))


def test_simulate_is_deterministic_and_consistent():
    c = cfg(checkpoints=(1.0, 2.0))
    a, b = simulate(c, 1.0, 7), simulate(c, 1.0, 7)
    assert a == b
    assert a.alltime_max >= 1.0
    for cnt, m in zip(a.alive_counts, a.running_max):
        assert (cnt > 0) == math.isfinite(m)
    with pytest.raises(DomainError):
        simulate(c, 0.0)


def test_pure_death_lifetime():
    batch = run_trees(cfg(law=DEATH, horizon=100.0), 1e6, 10_000, checkpoints=[])
    z = batch.extinction_time
    assert abs(z.mean() - 1.0) < 4 * z.std(ddof=1) / math.sqrt(z.size)


def test_far_from_barrier_survival_is_galton_watson():
    est = estimate_survival(cfg(), 1e6, 1.0, 20_000)
    assert abs(est.z_score(survival_g(BINARY, 1.0))) < 4


def test_survival_bounds_and_t_zero():
    c = cfg()
    assert estimate_survival(c, 1.0, 0.0, 100).mean == 1.0
    est = estimate_survival(c, 1.0, 2.0, 20_000)
    assert est.mean <= survival_g(BINARY, 2.0) + 3.5 * est.se
    pos = killed_positions(BM, 1.0, [2.0], 100_000, dt=0.05, seed=3)[:, 0]
    p_tau = np.mean(~np.isnan(pos))
    lower = c_sub(BINARY) * math.exp(-0.2 * 2.0) * p_tau
    assert est.mean >= lower - 3.5 * est.se


def test_naive_and_spine_agree():
    c = cfg()
    naive = estimate_survival(c, 1.0, 4.0, 40_000)
    spine = estimate_survival(c, 1.0, 4.0, 40_000, method="spine")
    assert abs((naive - spine).z_score(0.0)) < 3.5
    tn = estimate_mt_tail(c, 1.0, 4.0, [0.5, 2.0], 40_000)
    ts = estimate_mt_tail(c, 1.0, 4.0, [0.5, 2.0], 40_000, method="spine")
    for a, b in zip(tn, ts):
        assert abs((a - b).z_score(0.0)) < 3.5


def test_negative_drift_tilted_spine_agrees_with_trees():
    c = cfg(model=LevyModel(-1.0, 1.0, ()))
    naive = estimate_survival(c, 1.0, 3.0, 60_000)
    spine = estimate_survival(c, 1.0, 3.0, 20_000, method="spine")
    assert abs((naive - spine).z_score(0.0)) < 3.5


def test_tail_at_zero_is_survival_and_monotone():
    c = cfg()
    u = estimate_survival(c, 1.0, 3.0, 5000)
    q = estimate_mt_tail(c, 1.0, 3.0, [0.0, 1.0, 2.0], 5000)
    assert q[0].mean == u.mean
    assert q[0].mean >= q[1].mean >= q[2].mean
    with pytest.raises(DomainError):
        estimate_mt_tail(c, 1.0, 3.0, -1.0, 10)


def test_alltime_max_bounds():
    c = cfg(horizon=50.0)
    rate = right_inverse(BM, BINARY.alpha)
    ests = estimate_alltime_max_tail(c, 1.0, [2.0, 3.0], 20_000)
    for y, e in zip((2.0, 3.0), ests):
        assert e.mean <= math.exp((1.0 - y) * rate) + 3.5 * e.se
    assert ests[0].mean >= ests[1].mean
    shifted = estimate_alltime_max_tail(c.with_seed(2), 2.0, 3.0, 20_000)
    assert shifted.mean >= ests[0].mean - 3.5 * math.hypot(shifted.se, ests[0].se)
    with pytest.raises(DomainError):
        estimate_alltime_max_tail(c, 2.0, 1.0, 10)


def test_spine_weights_positive_and_bounded():
    sb = run_spine(cfg(), 1.0, 5.0, 2000, ylevels=(0.5,))
    w = sb.survival_weights()
    assert np.all(w >= 0) and np.all(w <= 1.0)
    tw = sb.tail_weights(0)
    assert np.all((tw > 0) <= (w > 0)) and np.all(tw <= 1.0)


def test_yaglom_methods_agree():
    c = cfg()
    a = yaglom_samples(c, 1.0, 4.0, 1500, method="rejection")
    b = yaglom_samples(c.with_seed(5), 1.0, 4.0, 1500, method="spine")
    assert a.size == b.size == 1500
    # two-sample KS critical value at 0.1% for n=m=1500 is about 0.071
    from bkl.stats import ks_two_sample
    assert ks_two_sample(a, b) < 0.071
    with pytest.raises(AcceptanceError):
        yaglom_samples(cfg(horizon=200.0), 1.0, 200.0, 10, method="rejection", max_trees=70_000)


def test_feynman_kac_pure_death_and_binary():
    xs, ts, y = [0.5, 1.0, 2.0], [0.5, 1.0], 0.0
    tab = feynman_kac_rhs(cfg(law=DEATH), xs, ts, y, 4000)
    for i, x in enumerate(xs):
        for k, t in enumerate(ts):
            exact = math.exp(-t) * (ndtr((x - y) / math.sqrt(t)) - ndtr((-x - y) / math.sqrt(t)))
            assert abs(tab.values[i, k] - exact) < 3.5 * tab.se[i, k] + 1e-12
    tab = feynman_kac_rhs(cfg(), xs, ts, y, 4000)
    v, s = tab.at(1.0, 1.0)
    direct = estimate_mt_tail(cfg(), 1.0, 1.0, y, 40_000)
    assert abs(v - direct.mean) < 3.5 * math.hypot(s, direct.se)
    with pytest.raises(KeyError):
        tab.at(1.1, 1.0)
