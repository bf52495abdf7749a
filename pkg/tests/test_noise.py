import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TWO_PI
from stochks import _expo
from stochks.noise import (
    NoiseOperator,
    NoiseStream,
    admissible_ipoalfa,
    admissible_ipotG,
    hs_partial_sum,
    regularity_window,
    sample_increment,
    standard_pairs,
    stochastic_increments,
)
from stochks.spectral import wavenumber_lambdas


@pytest.mark.parametrize("gamma,expected", [(0.5, True), (0.75, False), (-1.0, True), (0.8, False)])
def test_admissible_ipotG(gamma, expected):
    assert admissible_ipotG(gamma) is expected


@pytest.mark.parametrize("gamma,alpha,expected", [(0.5, 0.2, True), (0.5, 0.25, False), (-2.0, 2.0, True)])
def test_admissible_ipoalfa(gamma, alpha, expected):
    assert admissible_ipoalfa(gamma, alpha) is expected


def _numeric_convergent(p):
    """Classify sum k^-p by the ratio of successive dyadic tail blocks up to 10^4 terms."""
    k = np.arange(1, 10_001, dtype=np.float64)
    terms = k**-p
    b1 = terms[2500:5000].sum()
    b2 = terms[5000:10000].sum()
    return b2 / b1 < 1.0


@pytest.mark.parametrize("gamma", [-1.0, -0.5, 0.0, 0.25, 0.5, 0.7, 0.74, 0.76, 0.8, 1.0, 1.5])
def test_exponent_rule_matches_partial_sum_growth(gamma):
    # g_j^2 lam_j^(2(alpha-1)) ~ k^(4(gamma + alpha - 1))
    assert admissible_ipotG(gamma) == _numeric_convergent(-4 * (gamma - 1))
    for alpha in (0.0, 0.3, -0.5):
        assert admissible_ipoalfa(gamma, alpha) == _numeric_convergent(-4 * (gamma + alpha - 1))


def test_hs_partial_sum_values():
    G = NoiseOperator(gamma=0.0)
    assert hs_partial_sum(G, 0.0, 1, TWO_PI) == pytest.approx(2.0, rel=1e-15)
    assert hs_partial_sum(G, 0.0, 100_000, TWO_PI) == pytest.approx(math.pi**4 / 45, rel=1e-12)
    with pytest.raises(ValueError):
        hs_partial_sum(G, 0.0, 0)


@settings(max_examples=30)
@given(st.floats(-2, 1.5), st.floats(-1, 1), st.integers(1, 50))
def test_hs_partial_sum_monotone(gamma, alpha, n):
    G = NoiseOperator(gamma)
    assert hs_partial_sum(G, alpha, n + 1) >= hs_partial_sum(G, alpha, n)


def test_uso_profile_partial_sums_unbounded():
    G = NoiseOperator.uso()
    for n in (10, 100, 1000):
        assert hs_partial_sum(G, 0.0, n) >= 2 * n
    g = G.amplitudes(50, TWO_PI)
    lam = wavenumber_lambdas(50, TWO_PI)
    assert np.all(lam**-2 * g**2 >= 1)


def test_amplitudes_pairing_and_positivity():
    g = NoiseOperator(0.5).amplitudes(10, 3.0)
    assert np.all(g > 0) and np.array_equal(g[0::2], g[1::2])


@pytest.mark.parametrize("L", [TWO_PI, 50.0])
def test_shift_covariance_is_diagonal(L):
    G = NoiseOperator(0.5, shift_iso=True)
    M = G.matrix(12, L)
    g = G.amplitudes(12, L)
    assert np.max(np.abs(M @ M.T - np.diag(g**2))) <= 1e-14 * g.max() ** 2
    # the isomorphism is an isometry, so the matrix is g times an orthogonal matrix
    Q = M / g[:, None]
    assert np.allclose(Q @ Q.T, np.eye(24), atol=1e-15)


def test_regularity_window_cases():
    w = regularity_window(0.5)
    assert w.ipotG and w.space == "H" and w.alpha_sup == 0.25
    assert w.describe()[:2] == ["ipotG: true", "ipoalfa window: alpha < 0.25"]
    w = regularity_window(-1.5)
    assert (w.alpha_min, w.alpha_sup) == (1.0, 2.25)
    w = regularity_window(-2.5)
    assert (w.alpha_min, w.alpha_sup) == (1.5, 3.25)
    assert "1.5 <= alpha < 3.25" in w.describe()[2]
    assert not regularity_window(0.8).ipotG


# ---- random streams --------------------------------------------------------------------


def test_stream_determinism_and_chunking():
    a = NoiseStream(7, 3).normals(0, 11, 5)
    b = NoiseStream(7, 3).normals(0, 11, 5)
    assert np.array_equal(a, b)
    for start, n in [(1, 4), (3, 7), (10, 1), (4, 0)]:
        assert np.array_equal(NoiseStream(7, 3).normals(start, n, 5), a[start : start + n])
    assert np.array_equal(NoiseStream(7, 3).normals(2, 3, 2), a[2:5, :2])
    assert not np.array_equal(NoiseStream(7, 4).normals(0, 11, 5), a)
    assert not np.array_equal(NoiseStream(8, 3).normals(0, 11, 5), a)


def test_standard_pairs_layout():
    x = standard_pairs(1, [4, 2, 4], 5, 6, 3)
    assert x.shape == (6, 3, 3, 2)
    assert np.array_equal(x[:, 0], x[:, 2])
    assert np.array_equal(x[:, 1], NoiseStream(1, 2).normals(5, 6, 3))


def test_stream_marginals():
    x = NoiseStream(0).normals(0, 50_000, 4).reshape(-1)
    se = 1 / math.sqrt(x.size)
    assert abs(x.mean()) < 4 * se
    assert abs(x.var() - 1) < 4 * math.sqrt(2) * se


def test_sample_increment_matches_stream_and_statistics():
    dt, K = 0.01, 3
    stream = NoiseStream(5)
    G0 = NoiseOperator(gamma=0.0)
    one = sample_increment(G0, dt, stream, K, TWO_PI, step=17)
    assert np.array_equal(one, math.sqrt(dt) * stream.normals(17, 1, 2 * K)[0, :, 0])
    # 10^5 draws, built from the same coordinates as repeated sample_increment calls
    n = 100_000
    draws = math.sqrt(dt) * stream.normals(0, n, 2 * K)[..., 0]
    var = draws.var(axis=0)
    se = dt * math.sqrt(2 / n)
    assert np.all(np.abs(var - dt) < 4 * se)
    G = NoiseOperator(gamma=0.5)
    scaled = G.apply(draws, TWO_PI)
    var2 = scaled[:, 2:4].var(axis=0)  # pair k = 2, lam = 4
    assert np.all(np.abs(var2 - 4 * dt) < 4 * 4 * se)


def test_sample_increment_zero_operator_and_errors():
    assert np.array_equal(sample_increment(NoiseOperator.zero(), 0.1, NoiseStream(0), 4), np.zeros(8))
    with pytest.raises(ValueError):
        sample_increment(NoiseOperator(), 0.0, NoiseStream(0), 4)
    with pytest.raises(ValueError):
        NoiseStream(-1)


# ---- exact convolution increments --------------------------------------------------------


def _cond_var_oracle(rate, h):
    """(integral e^{-2 r s} - (integral e^{-r s})^2 / h) / h in 50-digit arithmetic."""
    with mp.workdps(50):
        r, h = mp.mpf(rate), mp.mpf(h)
        if r == 0:
            return 0.0
        sig2 = (1 - mp.e ** (-2 * r * h)) / (2 * r)
        phi = (1 - mp.e ** (-r * h)) / r
        return float((sig2 - phi**2 / h) / h)


@pytest.mark.parametrize("rate", [-50.0, -1.0, -1e-6, 0.0, 1e-9, 1e-4, 0.3, 5.0, 1e3, 1e6])
@pytest.mark.parametrize("h", [1e-4, 1e-2, 0.5])
def test_conditional_scale_against_high_precision(rate, h):
    s = float(_expo.conditional_scale(np.array([rate]), h)[0])
    oracle = _cond_var_oracle(rate, h)
    assert s * s / h == pytest.approx(oracle, rel=1e-9, abs=1e-300)
    assert np.sign(s) == np.sign(rate)


@pytest.mark.parametrize("rate", [-3.0, 0.0, 1e-12, 2.0, 400.0])
def test_phi1_against_high_precision(rate):
    h = 0.01
    with mp.workdps(40):
        oracle = float(h if rate == 0 else (1 - mp.e ** (-mp.mpf(rate) * h)) / rate)
    assert float(_expo.phi1(np.array([rate]), h)[0]) == pytest.approx(oracle, rel=1e-14)


def test_increment_covariance_monte_carlo():
    rates = np.array([-2.0, 0.0, 3.0, 40.0])
    h = 0.05
    xi = np.random.default_rng(0).standard_normal((400_000, 4, 2))
    db, conv = stochastic_increments(xi, rates, h)
    n = xi.shape[0]
    for q, (a, b, exact) in enumerate([
        (db, db, np.full(4, h)),
        (db, conv, _expo.phi1(rates, h)),
        (conv, conv, _expo.conv_variance(rates, h)),
    ]):
        emp = np.mean(a * b, axis=0)
        se = np.std(a * b, axis=0) / math.sqrt(n)
        assert np.all(np.abs(emp - exact) < 4 * se)


def test_substep_aggregation_is_exact():
    rates = np.array([-1.0, 0.5, 20.0])
    dt, sub = 0.02, 4
    xi = np.random.default_rng(1).standard_normal((3 * sub, 2, 3, 2))
    db, conv = stochastic_increments(xi, rates, dt, sub)
    db_f, conv_f = stochastic_increments(xi, rates, dt / sub)
    E = np.exp(-rates * dt / sub)
    for n in range(3):
        acc = np.zeros((2, 3))
        for i in range(sub):
            acc = E * acc + conv_f[n * sub + i]
        assert np.allclose(conv[n], acc, rtol=1e-13, atol=1e-15)
        assert np.allclose(db[n], db_f[n * sub : (n + 1) * sub].sum(axis=0), rtol=1e-13)
    with pytest.raises(ValueError):
        stochastic_increments(xi[:5], rates, dt, sub)


def test_lanes_match_fresh_philox_generators():
    from stochks.noise import _raw_lanes

    raw = _raw_lanes(11, [0, 3], 5, 4, 3)
    for m, traj in enumerate([0, 3]):
        for j in range(3):
            ref = np.random.Philox(key=np.array([11, traj], dtype=np.uint64), counter=[5, j, 0, 0])
            assert np.array_equal(raw[m, j], ref.random_raw(16))
