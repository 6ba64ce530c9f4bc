import numpy as np
import pytest

from kolmolab.chain_model import linear_chain, smooth_chain
from kolmolab.flow_resolvent import build_frame
from kolmolab.gaussian_proxy import (
    GaussianProxy,
    ScalingMatrix,
    centering_defect,
    covariance,
    density,
    density_gradient,
    envelope_ratio,
    gsp_condition,
    moment_identity_defect,
    moment_vector,
    scaling_matrix,
    semigroup_apply,
    semigroup_derivative,
)


def proxy_for(spec, xi, t=0.0, s=1.0):
    fr = build_frame(spec, t, np.asarray(xi, dtype=float), t, s)
    return GaussianProxy.from_frame(spec, fr, t, s)


def kolmogorov_K(t):
    return np.array([[t, t * t / 2], [t * t / 2, t**3 / 3]])


# scaling -------------------------------------------------------------------

def test_scaling_matrix():  # [TRIVIAL]
    assert np.array_equal(scaling_matrix(1.0, 3, 2).matrix, np.eye(6))
    assert np.array_equal(scaling_matrix(2.0, 2, 1).matrix, np.diag([2.0, 4.0]))
    assert np.allclose((scaling_matrix(2.0, 3, 1) @ scaling_matrix(3.0, 3, 1)).matrix, scaling_matrix(6.0, 3, 1).matrix)
    with pytest.raises(ValueError):
        ScalingMatrix(0.0, 2, 1)


# covariance ----------------------------------------------------------------

@pytest.mark.parametrize("t", [0.1, 0.5, 1.0])
def test_kolmogorov_covariance(t):  # [DERIVED] symbolic integration
    spec = linear_chain()
    fr = build_frame(spec, 0.0, np.zeros(2), 0.0, t)
    assert np.abs(covariance(spec, fr, 0.0, t) - kolmogorov_K(t)).max() < 1e-10


def test_covariance_quadrature_doubling_stable():  # [DERIVED]
    spec = smooth_chain(n=2, d=2, sigma_amp=0.2)
    fr = build_frame(spec, 0.0, np.full(4, 0.4), 0.0, 0.8)
    K1 = covariance(spec, fr, 0.0, 0.8, quad=24)
    K2 = covariance(spec, fr, 0.0, 0.8, quad=48)
    assert np.abs(K1 - K2).max() < 1e-10


def test_covariance_degenerate_interval():  # [TRIVIAL]
    spec = linear_chain()
    fr = build_frame(spec, 0.0, np.zeros(2), 0.0, 1.0)
    K = covariance(spec, fr, 0.3, 0.3 + 1e-15)
    assert np.abs(K).max() < 1e-14
    assert np.linalg.eigvalsh(K).min() >= -1e-30


def test_gsp_kolmogorov_constant():  # [DERIVED] eigenvalues of [[1,1/2],[1/2,1/3]]
    ref = np.linalg.eigvalsh(np.array([[1, 0.5], [0.5, 1 / 3]]))
    assert ref == pytest.approx([0.0657, 1.2676], abs=1e-4)
    for dt in np.logspace(-3, 0, 7):
        lo, hi = gsp_condition(kolmogorov_K(dt), dt, 2, 1)
        assert abs(lo - ref[0]) < 1e-9 and abs(hi - ref[1]) < 1e-9


def test_gsp_isotropic():  # [TRIVIAL]
    dt = 0.3
    T = scaling_matrix(dt, 2, 2).diag
    assert gsp_condition(np.diag(T**2) / dt, dt, 2, 2) == pytest.approx((1.0, 1.0))


def test_gsp_drift_nonlinear():
    for spec in (smooth_chain(n=2), smooth_chain(n=3), smooth_chain(n=2, d=2, sigma_amp=0.2)):
        vals = []
        for dt in np.logspace(-3, 0, 7):
            fr = build_frame(spec, 0.0, np.full(spec.nd, 0.3), 0.0, dt)
            vals.append(gsp_condition(covariance(spec, fr, 0.0, dt), dt, spec.n, spec.d))
        vals = np.array(vals)
        assert np.max(vals.max(0) / vals.min(0) - 1) <= 0.2


# density -------------------------------------------------------------------

def test_kolmogorov_density_at_origin():  # [DERIVED] det K = 1/12
    pr = proxy_for(linear_chain(), np.zeros(2))
    assert density(pr, np.zeros(2), np.zeros(2)) == pytest.approx(np.sqrt(12) / (2 * np.pi), rel=1e-10)


def test_density_normalized_by_monte_carlo():  # [TRIVIAL]
    pr = proxy_for(smooth_chain(n=2), [0.2, 0.1])
    rng = np.random.default_rng(0)
    x = np.array([0.1, -0.3])
    # importance sample from a wide box-free Gaussian around the mean
    m = pr.mean(x)
    S = 3.0 * pr.covariance
    Y = rng.multivariate_normal(m, S, size=200_000)
    q = GaussianProxy(0.0, 1.0, np.eye(2), m, S, 2, 1)
    ratio = density(pr, x, Y) / density(q, np.zeros(2), Y)
    se = ratio.std() / np.sqrt(len(ratio))
    assert abs(ratio.mean() - 1) < 3 * se


def test_density_reflection_symmetry():  # [TRIVIAL]
    pr = proxy_for(smooth_chain(n=3), [0.3, 0.1, -0.2])
    x = np.array([0.1, 0.2, 0.3])
    z = np.array([0.3, -0.02, 0.01])
    m = pr.mean(x)
    assert density(pr, x, m + z) == pytest.approx(density(pr, x, m - z), rel=1e-12)


def test_density_gradient_matches_fd():  # [DERIVED] FD with intrinsic-scaled steps
    spec = smooth_chain(n=2, d=2, sigma_amp=0.1)
    pr = proxy_for(spec, np.full(4, 0.2), 0.0, 0.5)
    rng = np.random.default_rng(1)
    dt = 0.5
    scale = np.repeat(dt ** (np.arange(1, 3) - 0.5), 2)
    for _ in range(4):
        x = rng.normal(size=4) * 0.3
        y = pr.mean(x) + rng.normal(size=4) * scale * 0.5
        for l in (1, 2):
            g = density_gradient(pr, x, y, l)
            fd = np.empty(2)
            for b in range(2):
                e = np.zeros(4)
                h = 1e-5 * scale[(l - 1) * 2 + b]
                e[(l - 1) * 2 + b] = h
                fd[b] = (density(pr, x + e, y) - density(pr, x - e, y)) / (2 * h)
            assert np.abs(g - fd).max() <= 1e-5 * np.abs(fd).max()
            gc = density_gradient(pr, x, y, l, r=1)
            fdc = np.empty((2, 2))
            for c in range(2):
                e = np.zeros(4)
                h = 1e-5 * scale[c]
                e[c] = h
                fdc[:, c] = (density_gradient(pr, x + e, y, l) - density_gradient(pr, x - e, y, l)) / (2 * h)
            assert np.abs(gc - fdc).max() <= 1e-5 * np.abs(fdc).max()


def test_density_gradient_integrates_to_zero():  # [TRIVIAL]
    pr = proxy_for(smooth_chain(n=2), [0.2, 0.1])
    x = np.array([0.3, 0.2])
    for l in (1, 2):
        val = semigroup_derivative(pr, lambda Y: np.ones(Y.shape[:-1]), x, l)
        assert np.abs(val).max() < 1e-10


def test_envelope_ratio_bounded():  # [DERIVED] sweep over (dt, y)
    spec = smooth_chain(n=2)
    worst = []
    for dt in (1e-3, 1e-2, 1e-1, 1.0):
        pr = proxy_for(spec, [0.2, 0.1], 0.0, dt)
        x = np.zeros(2)
        z = np.stack(np.meshgrid(np.linspace(-4, 4, 9), np.linspace(-4, 4, 9)), -1).reshape(-1, 2)
        Y = pr.mean(x) + z @ pr.factor.T
        worst.append(max(envelope_ratio(pr, x, Y, l, r).max() for l in (1, 2) for r in (0, 1)))
    # the constant is dt-free: ~11.9 at every scale for this sweep
    assert max(worst) < 50 and max(worst) / min(worst) < 1.05


# semigroup -----------------------------------------------------------------

def test_semigroup_moments():  # [TRIVIAL] / [DERIVED] Gaussian moments
    pr = proxy_for(smooth_chain(n=2, d=2, sigma_amp=0.1), np.full(4, 0.2))
    x = np.array([0.1, -0.2, 0.3, 0.0])
    assert semigroup_apply(pr, lambda Y: np.ones(Y.shape[:-1]), x) == pytest.approx(1.0, abs=1e-10)
    m = pr.mean(x)
    for i in range(4):
        assert semigroup_apply(pr, lambda Y: Y[..., i], x) == pytest.approx(m[i], abs=1e-10)
        for j in range(4):
            val = semigroup_apply(pr, lambda Y: Y[..., i] * Y[..., j], x)
            assert val == pytest.approx(m[i] * m[j] + pr.covariance[i, j], abs=1e-10)


def test_semigroup_derivative_matches_fd():
    pr = proxy_for(smooth_chain(n=2), [0.2, 0.1])

    def g(Y):
        return np.sin(Y[..., 0]) * np.cos(Y[..., 1])

    x = np.array([0.3, 0.4])
    h = 1e-5
    for l in (1, 2):
        e = np.zeros(2)
        e[l - 1] = h
        fd = (semigroup_apply(pr, g, x + e) - semigroup_apply(pr, g, x - e)) / (2 * h)
        assert semigroup_derivative(pr, g, x, l)[0] == pytest.approx(fd, rel=1e-6, abs=1e-10)


# structural identities -----------------------------------------------------

def test_centering():  # [TRIVIAL] l=1; [DERIVED] Kolmogorov l=2; control
    pr = proxy_for(linear_chain(), np.zeros(2))
    assert centering_defect(pr, 1, np.zeros(2)) == 0.0
    assert centering_defect(pr, 2, np.array([0.3, -0.5]), h=0.7) < 1e-8
    ctrl = GaussianProxy(0.0, 1.0, np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2), kolmogorov_K(1.0), 2, 1)
    assert centering_defect(ctrl, 2, np.zeros(2), h=0.5) > 1e-3


def test_moment_identity_cases():  # [TRIVIAL] M=0; [STRUCTURAL] d=1; [DERIVED] d=2
    pr1 = proxy_for(smooth_chain(n=3), [0.1, 0.2, 0.3])
    x = np.array([0.2, 0.1, -0.1])
    assert moment_identity_defect(pr1, 2, np.zeros(1), x) == 0.0
    for k in (1, 2, 3):
        assert moment_vector(pr1, k, np.ones(1), x).sum() == pytest.approx(1.0, abs=1e-8)
        assert moment_identity_defect(pr1, k, np.ones(1), x) < 1e-8
    pr2 = proxy_for(smooth_chain(n=2, d=2, sigma_amp=0.1), np.full(4, 0.2))
    x2 = np.array([0.1, 0.2, 0.3, 0.4])
    for k in (1, 2):
        assert moment_vector(pr2, k, np.array([2.0, 3.0]), x2).sum() == pytest.approx(5.0, abs=1e-7)
        assert moment_identity_defect(pr2, k, np.array([2.0, 3.0]), x2) < 1e-7
    with pytest.raises(ValueError):
        moment_identity_defect(pr2, 3, np.ones(2), x2)


def test_cholesky_jitter_on_singular_covariance():
    pr = GaussianProxy(0.0, 1.0, np.eye(2), np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]]), 2, 1)
    assert pr.jitter > 0
    with pytest.raises(np.linalg.LinAlgError):
        GaussianProxy(0.0, 1.0, np.eye(2), np.zeros(2), -np.eye(2), 2, 1)
