import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtri

from trimpanel import (
    BootstrapConfig,
    BootstrapError,
    DgpSpec,
    SmoothExchangeable,
    fit,
    psd_project,
    resample,
    robust_sigma_tlad,
    simulate,
    stream,
)
from trimpanel.bootstrap import empirical_quantile, resample_indices, sigma_from_replicates

from conftest import panel, random_panel

Z95 = 1.6448536269514722


def test_normal_quantile_accuracy():
    assert abs(float(ndtri(0.95)) - Z95) < 1e-10
    assert BootstrapConfig().normal_level == 0.95
    assert BootstrapConfig(quantile_level=0.8).normal_level == pytest.approx(0.9, abs=1e-15)


def test_resample_single_row():
    d = panel([1.5], [0.5], [2.0])
    for seed in range(5):
        r = resample(d, stream(seed))
        assert r.n == 1 and r.y1[0] == 1.5 and r.dx[0, 0] == 2.0


def test_resample_deterministic(rng):
    d = random_panel(rng, 5, 1)
    a = resample(d, stream(42, 3))
    b = resample(d, stream(42, 3))
    assert a.y1.tobytes() == b.y1.tobytes() and a.x1.tobytes() == b.x1.tobytes()


def test_resample_multiplicities():
    n, draws = 20, 10_000
    counts = np.zeros(n)
    for b in range(draws):
        counts += np.bincount(resample_indices(stream(7, b), n), minlength=n)
    mean = counts / draws
    assert np.all(np.abs(mean - 1) < 0.05)
    # pooled index frequencies are uniform
    assert stats.chisquare(counts).pvalue > 0.001


def test_empirical_quantile_convention():
    v = np.arange(1.0, 501.0)
    assert empirical_quantile(v, 0.9) == 450.0  # ceil(0.9 * 500) = 450
    assert empirical_quantile(np.arange(1.0, 11.0), 0.85) == 9.0
    assert empirical_quantile([3.0], 0.5) == 3.0


def test_sigma_ratio_identity():
    # every |deviation| quantile equals z: diagonal exactly one
    n, b = 100, 10
    dev = np.full((b, 1), Z95 / math.sqrt(n))
    sigma, raw = sigma_from_replicates(dev, [0.0], n)
    assert sigma[0, 0] == pytest.approx(1.0, rel=1e-14)
    assert raw["diagonal"][0] == pytest.approx(Z95, rel=1e-14)


def test_sigma_from_normal_replicates_recovers_covariance():
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    x = stream(3).multivariate_normal(np.zeros(2), cov, size=200_000)
    sigma, raw = sigma_from_replicates(x, [0.0, 0.0], 1)
    np.testing.assert_allclose(sigma, cov, atol=0.03)
    assert raw["pairwise"][0][1] == raw["pairwise"][1][0]
    assert raw["pairwise"][0][0] is None


@pytest.fixture(scope="module")
def smooth_k2():
    spec = DgpSpec(SmoothExchangeable(k=2, theta0=(0.5, -0.5), rho=0.3, alpha_scale=0.5,
                                      design="gaussian"), 400)
    d = simulate(spec, stream(21))
    return d, fit(d, "tlad").theta_hat


def test_robust_sigma_determinism_and_diagonal(smooth_k2):
    d, th = smooth_k2
    cfg = BootstrapConfig(b=60, seed=5)
    a, b = robust_sigma_tlad(d, th, cfg), robust_sigma_tlad(d, th, cfg)
    assert a.sigma_hat.tobytes() == b.sigma_hat.tobytes()
    assert np.all(np.diag(a.sigma_hat) >= 0)
    assert np.array_equal(a.sigma_hat, a.sigma_hat.T)
    assert a.replicates_used + a.replicates_dropped == 60
    assert "tie_breaking" in a.metadata
    c = robust_sigma_tlad(d, th, BootstrapConfig(b=60, seed=6))
    assert c.sigma_hat.tobytes() != a.sigma_hat.tobytes()


def test_robust_sigma_psd_option(smooth_k2):
    d, th = smooth_k2
    res = robust_sigma_tlad(d, th, BootstrapConfig(b=40, seed=1, psd_project=True))
    assert res.psd_projected
    assert np.linalg.eigvalsh(res.sigma_hat)[0] >= -1e-12


def test_robust_sigma_flat_data_errors():
    d = panel([1.0, 2.0, 0.5, 3.0], [2.0, 1.0, 0.0, 1.0], np.zeros(4))
    with pytest.raises(BootstrapError):
        robust_sigma_tlad(d, [0.0], BootstrapConfig(b=20))


def test_bootstrap_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(quantile_level=1.0)
    with pytest.raises(ValueError):
        BootstrapConfig(b=0)


def test_psd_project_examples():
    np.testing.assert_array_equal(psd_project(np.eye(3)), np.eye(3))
    out = psd_project(np.array([[1.0, 2.0], [2.0, 1.0]]))
    np.testing.assert_allclose(out, [[1.5, 1.5], [1.5, 1.5]], atol=1e-14)
    with pytest.raises(ValueError, match="symmetric"):
        psd_project(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_psd_project_against_independent_eigensolver():
    m = np.array([[1.0, 2.0], [2.0, 1.0]])
    w, v = np.linalg.eig(m)  # general solver, not eigh
    expect = (v * np.maximum(w.real, 0)) @ np.linalg.inv(v)
    np.testing.assert_allclose(psd_project(m), expect, atol=1e-14)


def test_psd_project_properties(rng):
    for _ in range(200):
        k = int(rng.integers(1, 6))
        a = rng.normal(size=(k, k))
        m = a + a.T
        p = psd_project(m)
        assert np.array_equal(psd_project(p), p)
        assert np.linalg.eigvalsh(p)[0] >= -1e-12 * max(1, np.abs(m).max())
        # nearest in Frobenius norm: no random PSD matrix is closer
        for _ in range(5):
            b = rng.normal(size=(k, k))
            q = b @ b.T
            assert np.linalg.norm(m - p) <= np.linalg.norm(m - q) + 1e-12
        c = a @ a.T
        np.testing.assert_allclose(psd_project(c), c, atol=1e-12)


SMOOTH_K1 = DgpSpec(SmoothExchangeable(), 2000)


@pytest.fixture(scope="module")
def k1_monte_carlo_variance():
    th = np.array([fit(simulate(SMOOTH_K1, stream(100, i)), "tlad").theta_hat[0]
                   for i in range(1500)])
    return SMOOTH_K1.n * th.var(ddof=1)


@pytest.fixture(scope="module")
def k1_bootstrap():
    out = {0.9: [], 0.8: []}
    for i in range(15):
        d = simulate(SMOOTH_K1, stream(200, i))
        th = fit(d, "tlad").theta_hat
        for level in out:
            cfg = BootstrapConfig(b=500, seed=i, quantile_level=level)
            out[level].append(robust_sigma_tlad(d, th, cfg).sigma_hat[0, 0])
    return {k: np.array(v) for k, v in out.items()}


def test_k1_monte_carlo_variance_near_population(k1_monte_carlo_variance):
    # sandwich with population meat 3/4 (both censoring patterns) and closed-form Hessian
    h = 1 / (2 * math.sqrt(math.pi)) + 0.5 / math.sqrt(2 * math.pi)
    target = 0.75 / h ** 2
    se = target * math.sqrt(2 / 1500)
    assert abs(k1_monte_carlo_variance - target) < 4 * se + 0.03 * target


def test_k1_bootstrap_tracks_monte_carlo_variance(k1_bootstrap, k1_monte_carlo_variance):
    med = np.median(k1_bootstrap[0.9])
    assert abs(med / k1_monte_carlo_variance - 1) < 0.15


def test_quantile_level_robustness(k1_bootstrap):
    ratio = np.median(k1_bootstrap[0.8]) / np.median(k1_bootstrap[0.9])
    assert abs(ratio - 1) < 0.20
