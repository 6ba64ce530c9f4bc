import numpy as np
import pytest

from kolmolab.chain_model import holder_chain, linear_chain, smooth_chain
from kolmolab.flow_resolvent import build_frame
from kolmolab.gaussian_proxy import GaussianProxy, semigroup_apply
from kolmolab.green_estimator import (
    GreenJob,
    apply_generator,
    green_apply,
    green_cross_derivative,
    gradient_magnitude,
    parametrix_iterate,
    predicted_singularity,
    singularity_exponent_fit,
)

KOL = linear_chain()
X = np.array([0.4, -0.3])


def test_green_of_zero_and_one():  # [TRIVIAL] / [DERIVED] constants preserved
    assert green_apply(GreenJob(KOL, lambda s, y: 0 * y[..., 0], 0.1, 0.6, X)) == 0.0
    spec = smooth_chain(n=2)
    val = green_apply(GreenJob(spec, lambda s, y: np.ones(y.shape[:-1]), 0.1, 0.6, X))
    assert val == pytest.approx(-0.5, abs=1e-10)


def test_green_kolmogorov_linear_source():  # [DERIVED] E[X2_s] = x2 + (s-t) x1
    t, T = 0.2, 0.9
    val = green_apply(GreenJob(KOL, lambda s, y: y[..., 1], t, T, X))
    h = T - t
    assert val == pytest.approx(-(h * X[1] + h * h * X[0] / 2), abs=1e-10)


def test_cross_derivative_kolmogorov():  # [DERIVED]
    t, T = 0.0, 0.7
    d2 = green_cross_derivative(GreenJob(KOL, lambda s, y: y[..., 1], t, T, X, l=2))
    assert d2[0] == pytest.approx(-(T - t), abs=1e-9)
    d1 = green_cross_derivative(GreenJob(KOL, lambda s, y: y[..., 1], t, T, X, l=1))
    assert d1[0] == pytest.approx(-(T - t) ** 2 / 2, abs=1e-9)


def test_cross_derivative_vanishes_when_source_ignores_block():  # [TRIVIAL]
    spec = smooth_chain(n=3)
    x = np.array([0.1, 0.2, -0.1])
    val = green_cross_derivative(GreenJob(spec, lambda s, y: np.sin(y[..., 0]), 0.0, 0.5, x, l=2, r=1))
    assert np.abs(val).max() < 1e-12


def test_cross_derivative_matches_fd():  # [DERIVED] FD with intrinsic steps, fixed frame
    spec = smooth_chain(n=2, c_prev=0.3)
    xi = np.array([0.2, 0.1])

    def f(s, y):
        return np.sin(y[..., 0] + 2 * y[..., 1]) * (1 + s)

    x = np.array([0.25, 0.05])
    t, T = 0.0, 0.5
    for l, h in ((1, 1e-4), (2, 1e-4 * (T - t))):
        an = green_cross_derivative(GreenJob(spec, f, t, T, x, l=l, freeze=xi, tau=t))[0]
        e = np.zeros(2)
        e[l - 1] = h
        up = green_apply(GreenJob(spec, f, t, T, x + e, freeze=xi, tau=t))
        dn = green_apply(GreenJob(spec, f, t, T, x - e, freeze=xi, tau=t))
        assert an == pytest.approx((up - dn) / (2 * h), rel=1e-4)


def test_nonconvergence_flag():
    job = GreenJob(holder_chain(n=2, beta=[1.0, 0.9]), lambda s, y: np.abs(y[..., 1]) ** 0.9, 0.0, 0.3,
                   np.zeros(2), l=2, r=1, panels=1, gl_nodes=2, grading=1.0, check=False, rtol=1e-12)
    green_cross_derivative(job)
    assert job.info["converged"] is False


def test_job_validation():
    with pytest.raises(ValueError):
        GreenJob(KOL, lambda s, y: y[..., 0], 0.5, 0.5, X)
    with pytest.raises(ValueError):
        GreenJob(KOL, lambda s, y: y[..., 0], 0.0, 0.5, X, l=3)
    with pytest.raises(ValueError):
        green_cross_derivative(GreenJob(KOL, lambda s, y: y[..., 0], 0.0, 0.5, X))


def test_predicted_singularity():
    assert predicted_singularity(2, 1, (1.0, 0.8)) == pytest.approx(2.0 - 1.2)
    assert predicted_singularity(1, 0, (1.0, 1.0)) == 0.0


@pytest.mark.parametrize("j,l,r,beta,pred,tol", [(2, 2, 1, 0.8, -0.8, 0.1), (2, 2, 1, 1.0, -0.5, 0.1),
                                                  (1, 1, 0, 1.0, 0.0, 0.05)])
def test_singularity_exponent_fit(j, l, r, beta, pred, tol):  # [DERIVED]
    fit = singularity_exponent_fit(2, 1, j, beta, l, r)
    assert fit.predicted == pytest.approx(pred)
    assert abs(fit.fitted - pred) <= tol


def test_gradient_magnitude_decreases_with_horizon():
    spec = holder_chain(n=2, beta=[1.0, 0.9])
    src = lambda s, y: spec.drift_block(2, s, y)[..., 0]  # noqa: E731
    vals = [gradient_magnitude(spec, src, 0.0, T, np.array([0.5, 0.5]), exponents=spec.beta, check=False)
            for T in (0.2, 0.05)]
    assert vals[1] < vals[0]


# generators ----------------------------------------------------------------

def test_apply_generator_constant_and_ou():  # [TRIVIAL] / [DERIVED]
    x = np.array([0.3, 0.7])
    assert apply_generator(KOL, lambda y: 0 * y[..., 0] + 2.0, 0.0, x) == pytest.approx(0.0, abs=1e-8)
    # F_1 = 0, a = 1: L x1^2 = 1
    assert apply_generator(KOL, lambda y: y[..., 0] ** 2, 0.0, x) == pytest.approx(1.0, rel=1e-6)


def test_apply_generator_matches_semigroup_derivative():  # [DERIVED] FD of flow + heat
    spec = smooth_chain(n=2, d=1, sigma_amp=0.2)
    x = np.array([0.3, -0.2])

    def phi(y):
        return np.exp(-0.5 * np.sum((y - 0.1) ** 2, axis=-1))

    fr = build_frame(spec, 0.0, x, 0.0, 0.01)

    def D(h):
        pr = GaussianProxy.from_frame(spec, fr, 0.0, h)
        return (semigroup_apply(pr, phi, x) - phi(x)) / h

    rich = 2 * D(1e-3) - D(2e-3)  # first-order Richardson
    assert apply_generator(spec, phi, 0.0, x) == pytest.approx(rich, rel=1e-4)


# parametrix ----------------------------------------------------------------

AXES = [np.linspace(-1, 1, 21)] * 2


def src(s, y):
    return np.sin(y[..., 0]) * np.cos(y[..., 1])


def test_parametrix_proxy_exact_for_linear():  # [TRIVIAL] L = L~
    res = parametrix_iterate(KOL, src, AXES, 0.2, iterations=1)
    # only the finite-difference floor of the residual measurement remains
    assert res.residuals[0] < 1e-2
    assert res.residuals[1] == pytest.approx(res.residuals[0], rel=1e-6)


def test_parametrix_improves_for_perturbed_drift():  # [DERIVED]
    spec = smooth_chain(n=2, c_prev=0.3, c_own=0.5)
    res = parametrix_iterate(spec, src, AXES, 0.2, iterations=1)
    assert res.residuals[1] < res.residuals[0]
    assert len(res.records()) == 2


def test_parametrix_zero_source():  # [TRIVIAL]
    res = parametrix_iterate(smooth_chain(n=2), lambda s, y: 0 * y[..., 0], AXES, 0.2, iterations=1)
    assert np.all(res.iterates[-1] == 0) and res.residuals == [0.0, 0.0]


def test_parametrix_rejects_large_problems():
    with pytest.raises(ValueError):
        parametrix_iterate(linear_chain(n=5), src, [np.linspace(-1, 1, 3)] * 5, 0.2)
    with pytest.raises(ValueError):
        parametrix_iterate(KOL, src, AXES, 0.2, iterations=4)
