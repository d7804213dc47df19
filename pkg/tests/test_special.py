import mpmath as mp
import numpy as np
import pytest

from ttu.special import bernoulli_loglik, inv_logit, log_normal_sf, logit, normal_hazard, softplus

mp.mp.dps = 50


def mp_log_sf(z):
    return mp.log(mp.erfc(mp.mpf(z) / mp.sqrt(2)) / 2)


def test_log_normal_sf_matches_arbitrary_precision():
    # 1e-13 relative accuracy out to |z| = 38; absolute near the zero crossing
    # of the log (z << 0), where relative error is meaningless.
    zs = np.concatenate([np.linspace(-38, 38, 801), [0.0, -38.0, 38.0]])
    for z in zs:
        exact = mp_log_sf(float(z))
        got = float(log_normal_sf(z))
        if abs(exact) > 1e-8:
            assert abs((got - exact) / exact) < 1e-13
        else:
            assert abs(got - exact) < 1e-15


def test_log_normal_sf_known_points():
    assert log_normal_sf(0.0) == pytest.approx(np.log(0.5), abs=1e-15)
    assert np.isfinite(log_normal_sf(38.0))
    assert log_normal_sf(38.0) < -700


def test_normal_hazard_asymptotics():
    # h(z) -> z + 1/z - ... for large z; h(-inf side) -> 0
    assert normal_hazard(10.0) == pytest.approx(10.0 + 1 / 10.0, rel=1e-2)
    assert normal_hazard(-30.0) < 1e-100
    z = 2.5
    exact = float(mp.npdf(z) / (mp.erfc(mp.mpf(z) / mp.sqrt(2)) / 2))
    assert normal_hazard(z) == pytest.approx(exact, rel=1e-12)


def test_logit_inv_logit_roundtrip():
    p = np.array([1e-9, 0.2, 0.5, 0.8, 1 - 1e-9])
    assert np.allclose(inv_logit(logit(p)), p, rtol=0, atol=1e-12)


def test_softplus_extremes():
    assert softplus(800.0) == 800.0
    assert softplus(-800.0) == 0.0
    assert softplus(0.0) == pytest.approx(np.log(2.0), abs=1e-15)


def test_bernoulli_loglik_matches_direct_formula():
    rng = np.random.default_rng(3)
    g = rng.normal(scale=3, size=100)
    y = (rng.uniform(size=100) < 0.5).astype(float)
    p = inv_logit(g)
    direct = y * np.log(p) + (1 - y) * np.log1p(-p)
    assert np.allclose(bernoulli_loglik(g, y), direct, atol=1e-12)
    # no cancellation at extreme logits
    assert bernoulli_loglik(500.0, 1.0) == 0.0
    assert bernoulli_loglik(500.0, 0.0) == -500.0
