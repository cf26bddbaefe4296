import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trimpanel import (
    BreadVariant,
    CrossSectionDataset,
    DgpSpec,
    SingularMatrixError,
    TlsCounterexample,
    bread_h92,
    bread_h92_decompose,
    bread_tls,
    cross_section_bread,
    fit,
    meat_tlad,
    meat_tls,
    sandwich,
    simulate,
    stream,
)
from trimpanel.loss import tls_score
from trimpanel.variance import tls_covariance

from conftest import panel, random_panel


@pytest.fixture(scope="module")
def ce50k():
    return simulate(DgpSpec(TlsCounterexample(), 50_000), stream(2024))


def test_meat_tls_examples():
    np.testing.assert_array_equal(meat_tls(panel([2.0], [1.0], [1.0]), [0.0]), [[1.0]])
    zero = panel([2.0, 1.0], [1.0, 3.0], np.zeros((2, 2)))
    np.testing.assert_array_equal(meat_tls(zero, [1.0, 2.0]), np.zeros((2, 2)))


def test_meat_tls_counterexample(ce50k):
    assert abs(meat_tls(ce50k, [0.0])[0, 0] - (1 - 1 / math.pi)) < 0.01


def test_bread_tls_examples():
    np.testing.assert_array_equal(bread_tls(panel([1.0], [1.0], [1.0]), [0.0]), [[1.0]])
    np.testing.assert_array_equal(bread_tls(panel([1.0], [0.0], [1.0]), [0.5]), [[0.0]])


def test_bread_tls_counterexample(ce50k):
    assert abs(bread_tls(ce50k, [0.0])[0, 0] - 0.5) < 0.01


def test_bread_h92_examples():
    np.testing.assert_array_equal(bread_h92(panel([1.0], [1.0], [1.0]), [0.0]), [[1.0]])
    np.testing.assert_array_equal(bread_h92(panel([1.0], [0.0], [1.0]), [0.0]), [[0.0]])


def test_bread_h92_counterexample(ce50k):
    assert abs(bread_h92(ce50k, [0.0])[0, 0] - 0.25) < 0.01


def test_h92_decompose_examples():
    lo, r = bread_h92_decompose(panel([1.0], [1.0], [1.0]), [0.0])
    np.testing.assert_array_equal(lo, [[0.0]])
    np.testing.assert_array_equal(r, [[1.0]])
    lo, r = bread_h92_decompose(panel([2.0], [1.0], [1.0]), [0.5])
    np.testing.assert_array_equal(lo, [[1.0]])
    np.testing.assert_array_equal(r, [[0.0]])


def test_meat_tlad_examples():
    np.testing.assert_array_equal(meat_tlad(panel([2.0], [1.0], [1.0]), [0.0]), [[1.0]])
    np.testing.assert_array_equal(meat_tlad(panel([0.0], [0.0], [1.0]), [0.0]), [[0.0]])
    np.testing.assert_array_equal(meat_tlad(panel([1.0], [2.0], [1.0]), [0.0]), [[1.0]])


def test_sandwich_examples():
    np.testing.assert_array_equal(sandwich([[1.0]], [[1.0]]).sigma, [[1.0]])
    s = sandwich([[0.5]], [[1 - 1 / math.pi]]).sigma
    assert s[0, 0] == pytest.approx(4 * (1 - 1 / math.pi), rel=1e-14)
    assert s[0, 0] == pytest.approx(2.7268, abs=1e-4)
    with pytest.raises(SingularMatrixError, match="bread"):
        sandwich([[0.0]], [[1.0]])
    with pytest.raises(ValueError, match="dimension mismatch"):
        sandwich(np.eye(2), np.eye(3))


def test_sandwich_symmetric(rng):
    a = rng.normal(size=(3, 3))
    bread = a @ a.T + np.eye(3)
    b = rng.normal(size=(3, 3))
    s = sandwich(bread, b @ b.T).sigma
    assert np.array_equal(s, s.T)
    np.testing.assert_allclose(s, np.linalg.solve(bread, np.linalg.solve(bread, b @ b.T).T),
                               rtol=1e-10)


def test_cross_section_examples():
    d = CrossSectionDataset([1.0, 1.0], [[1.0], [0.0]])
    np.testing.assert_array_equal(cross_section_bread(d, [1.0]), [[1.0]])
    same = CrossSectionDataset([1.0, 2.0, 0.0], [[1.0, 2.0]] * 3)
    np.testing.assert_array_equal(cross_section_bread(same, [0.3, 0.1]), np.zeros((2, 2)))
    cens = CrossSectionDataset([0.0, 0.0], [[1.0], [3.0]])
    np.testing.assert_array_equal(cross_section_bread(cens, [1.0]), [[0.0]])
    with pytest.raises(ValueError):
        cross_section_bread(CrossSectionDataset([1.0], [[1.0]]), [1.0])


def brute_cross_section(d, theta):
    n, k = d.n, d.k
    acc = np.zeros((k, k))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dx = d.x[i] - d.x[j]
            t = dx @ theta
            w = (d.y[i] > 0) * ((t < 0) + 0.5 * (t == 0)) + (d.y[j] > 0) * ((t > 0) + 0.5 * (t == 0))
            acc += w * np.outer(dx, dx)
    return acc / (n * (n - 1))


def test_cross_section_matches_brute_force(rng):
    for _ in range(5):
        n, k = 25, 2
        x = rng.integers(-2, 3, (n, k)).astype(float)  # ties make dx'theta == 0 happen
        y = np.maximum(0, rng.normal(size=n))
        d = CrossSectionDataset(y, x)
        th = np.array([1.0, -1.0])
        np.testing.assert_allclose(cross_section_bread(d, th), brute_cross_section(d, th),
                                   rtol=1e-12, atol=1e-14)


def direct_midpoint(d, theta):
    t = d.dx @ theta
    w = (d.y1 > 0) * ((t < 0) + 0.5 * (t == 0)) + (d.y2 > 0) * ((t > 0) + 0.5 * (t == 0))
    return (d.dx * w[:, None]).T @ d.dx / d.n


def direct_h92(d, theta):
    t = d.dx @ theta
    w = (-d.y2 < t) & (t < d.y1)
    return (d.dx * w[:, None]).T @ d.dx / d.n


def tied_panel(rng, n=200, k=2):
    # integer regressors with theta on the lattice: many rows hit dx'theta == 0 exactly
    d = random_panel(rng, n, k, integer=True)
    return d, np.array([1.0, -1.0][:k] + [0.0] * max(0, k - 2))


def test_exact_identities(rng):
    for _ in range(50):
        d, th = tied_panel(rng)
        mid = bread_tls(d, th, "midpoint")
        a1, a2 = bread_tls(d, th, "alt1"), bread_tls(d, th, "alt2")
        assert np.array_equal(mid, 0.5 * (a1 + a2))
        lo, r = bread_h92_decompose(d, th)
        assert np.array_equal(bread_h92(d, th), lo + r)
        np.testing.assert_allclose(mid, direct_midpoint(d, th), atol=1e-12)
        np.testing.assert_allclose(bread_h92(d, th), direct_h92(d, th), atol=1e-12)


def test_variant_h92_dispatch(rng):
    d, th = tied_panel(rng)
    assert np.array_equal(bread_tls(d, th, BreadVariant.H92), bread_h92(d, th))


def test_no_zero_index_makes_variants_agree(rng):
    d = random_panel(rng, 300, 2)
    th = rng.normal(size=2)
    assert not np.any(d.dx @ th == 0)
    m = bread_tls(d, th)
    assert np.array_equal(m, bread_tls(d, th, "alt1"))
    assert np.array_equal(m, bread_tls(d, th, "alt2"))
    assert not np.any(bread_h92_decompose(d, th)[1])


def test_zero_tol():
    d = panel([1.0], [1.0], [1.0])
    np.testing.assert_array_equal(bread_h92_decompose(d, [1e-12])[1], [[0.0]])
    np.testing.assert_array_equal(bread_h92_decompose(d, [1e-12], zero_tol=1e-9)[1], [[1.0]])
    np.testing.assert_array_equal(bread_tls(d, [1e-12], "alt1", zero_tol=1e-9), [[1.0]])
    with pytest.raises(ValueError):
        bread_tls(d, [0.0], zero_tol=-1.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_all_outputs_symmetric_psd(seed, integer):
    rng = np.random.default_rng(seed)
    d = random_panel(rng, 40, 3, integer=integer)
    th = rng.integers(-1, 2, 3).astype(float) if integer else rng.normal(size=3)
    mats = [meat_tls(d, th), meat_tlad(d, th), bread_h92(d, th), *bread_h92_decompose(d, th)]
    mats += [bread_tls(d, th, v) for v in ("midpoint", "alt1", "alt2")]
    for m in mats:
        assert np.array_equal(m, m.T)
        assert np.linalg.eigvalsh(m)[0] >= -1e-10


def test_period_swap_invariance(rng):
    for _ in range(5):
        d = random_panel(rng, 500, 2, censor=0.3)
        th = fit(d, "tls").theta_hat
        s = d.swap_periods()
        th_s = fit(s, "tls").theta_hat
        np.testing.assert_allclose(th_s, th, atol=1e-10)
        np.testing.assert_allclose(bread_tls(s, th), bread_tls(d, th), atol=1e-15)
        np.testing.assert_allclose(meat_tls(s, th), meat_tls(d, th), rtol=1e-13)


def test_meat_uses_tls_score(rng):
    d = random_panel(rng, 100, 2)
    th = rng.normal(size=2)
    s = tls_score(d.dx @ th, d.y1, d.y2)
    np.testing.assert_allclose(meat_tls(d, th), (d.dx * (s * s)[:, None]).T @ d.dx / d.n,
                               rtol=1e-12)


def test_tls_covariance_counterexample(ce50k):
    cov = tls_covariance(ce50k, [0.0])
    assert cov.sigma[0, 0] == pytest.approx(4 * (1 - 1 / math.pi), rel=0.06)
    assert set(cov.to_dict()) == {"bread", "meat", "sigma"}
