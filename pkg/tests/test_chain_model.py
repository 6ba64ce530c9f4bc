import warnings
from fractions import Fraction

import numpy as np
import pytest

from kolmolab.besov_thermic import GridFunction
from kolmolab.chain_model import (
    ChainSpec,
    MollifierSchedule,
    build_model,
    drift_taylor_remainder,
    estimate_holder_modulus,
    holder_chain,
    holder_threshold,
    kernel_nodes,
    linear_chain,
    mollifier_scale,
    mollify_drift,
    smooth_chain,
    validate_assumptions,
)


def grid(nd, k=5, r=1.0):
    ax = np.linspace(-r, r, k)
    return np.stack(np.meshgrid(*([ax] * nd), indexing="ij"), -1).reshape(-1, nd)


# assumptions -----------------------------------------------------------------

def test_kolmogorov_passes_with_unit_ellipticity():  # [TRIVIAL]
    spec = linear_chain(n=2, d=1)
    rep = validate_assumptions(spec, grid(2))
    assert rep.all_pass
    assert rep.ellipticity == pytest.approx((1.0, 1.0))
    assert "UE" in rep.to_text()


def test_zero_diffusion_fails_ue():
    spec = linear_chain(n=2, d=1, sigma=0.0)
    rep = validate_assumptions(spec, grid(2))
    assert not rep.ue_pass


def test_missing_subdiagonal_dependence_fails_h():
    spec = linear_chain(n=2).with_drift([lambda t, z: 0 * z[..., :1], lambda t, z: 0 * z[..., :1]])
    rep = validate_assumptions(spec, grid(2))
    assert not rep.h_pass
    assert rep.jacobian_min_sv[2] == 0.0


def test_validate_rejects_bad_grid():
    spec = linear_chain(n=2)
    with pytest.raises(ValueError):
        validate_assumptions(spec, np.zeros((0, 2)))
    with pytest.raises(ValueError):
        validate_assumptions(spec, np.zeros((3, 3)))


def test_spec_validation():
    with pytest.raises(ValueError):
        holder_chain(n=2, beta=[1.0, 1.2])
    with pytest.raises(ValueError):
        linear_chain(n=2, eta=1.0)
    with pytest.raises(ValueError):
        ChainSpec(n=2, d=1, drift=(lambda t, z: z,), sigma=lambda t, x: np.eye(1), beta=(1, 1))


def test_build_model_and_fingerprint():
    a = build_model({"n": 3, "d": 1, "model": {"name": "holder", "params": {"c": 0.3}}, "beta": [1, 0.9, 0.9]})
    b = build_model({"n": 3, "d": 1, "model": {"name": "holder", "params": {"c": 0.3}}, "beta": [1, 0.9, 0.9]})
    assert a.nd == 3 and a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != holder_chain(n=3, c=0.5).fingerprint()
    with pytest.raises(ValueError):
        build_model({"model": {"name": "nope"}})


def test_drift_sees_only_trailing_blocks():
    seen = []

    def F2(t, z):
        seen.append(z.shape[-1])
        return z[..., :1]

    spec = ChainSpec(n=3, d=1, drift=(lambda t, z: 0 * z[..., :1], F2, lambda t, z: z[..., :1]),
                     sigma=lambda t, x: np.eye(1), beta=(1, 1, 1))
    spec.F(0.0, np.zeros(3))
    assert seen == [3]  # block 2 sees x_1..x_3 (from x_{i-1})


# thresholds and mollification ------------------------------------------------

@pytest.mark.parametrize("j,expected", [(1, Fraction(0)), (2, Fraction(2, 3)), (3, Fraction(4, 5))])
def test_holder_threshold(j, expected):  # [STRUCTURAL] j=2 -> 2/3
    assert holder_threshold(j) == expected


def test_mollifier_scale_values():  # [DERIVED]
    assert mollifier_scale(2, 0.25) == pytest.approx(2 ** -1.5, rel=1e-12)
    assert mollifier_scale(3, 0.01) == pytest.approx(10 ** -3.75, rel=1e-12)
    for i in (2, 3, 4):
        assert mollifier_scale(i, 1.0) == 1.0
    with pytest.raises(ValueError):
        mollifier_scale(1, 0.5)


def test_kernel_nodes_symmetric_unit_mass():
    U, W = kernel_nodes(2, 8)
    assert W.sum() == pytest.approx(1.0)
    assert np.abs(W @ U).max() < 1e-14
    with pytest.raises(ValueError):
        kernel_nodes(1, 2)


def test_mollify_affine_unchanged():  # [TRIVIAL] odd moments vanish
    spec = smooth_chain(n=2, c_own=0.0)
    mol = mollify_drift(spec, MollifierSchedule.uniform(2, 0.3))
    X = grid(2, 7, 2.0)
    assert np.abs(mol.F(0, X) - spec.F(0, X)).max() < 1e-12


def test_mollify_converges_at_continuity_points():  # [TRIVIAL]
    spec = smooth_chain(n=2)
    X = grid(2, 9, 2.0)
    devs = [np.abs(mollify_drift(spec, MollifierSchedule.uniform(2, dl)).F(0, X) - spec.F(0, X)).max()
            for dl in (0.4, 0.2, 0.1, 0.05)]
    assert all(b < a for a, b in zip(devs, devs[1:])) and devs[-1] < 1e-3


def test_mollified_power_at_zero():  # [DERIVED] brute-force quadrature oracle
    beta = 0.8
    spec = holder_chain(n=2, beta=[1.0, beta], c=1.0)
    x = np.zeros(2)
    # F_2(0, y) = c |y|^beta; the mollified value is delta^beta * E|U|^beta
    from scipy.integrate import quad

    mass = quad(lambda u: (1 - u * u) ** 3, -1, 1)[0]
    moment = quad(lambda u: abs(u) ** beta * (1 - u * u) ** 3, -1, 1, points=[0])[0] / mass
    for dl in (0.2, 0.1, 0.05):
        val = mollify_drift(spec, MollifierSchedule.uniform(2, dl), quad_nodes=64).F(0, x)[1]
        assert val == pytest.approx(dl**beta * moment, rel=2e-3)


def test_schedule_from_dt():
    s = MollifierSchedule.from_dt(3, 0.01)
    assert s.deltas[1] == pytest.approx(mollifier_scale(2, 0.01))
    with pytest.raises(ValueError):
        MollifierSchedule((1.0, 0.0))


# Hoelder moduli --------------------------------------------------------------

def test_holder_modulus_sqrt():  # [DERIVED] all grid pairs
    f = GridFunction.sample(lambda x: np.sqrt(np.abs(x)), -1.0, 1.0, 1e-3)
    est = estimate_holder_modulus(f, 0.5)
    assert 0.95 <= est <= 1.0 + 1e-12


def test_holder_modulus_constant_and_linear():
    assert estimate_holder_modulus(GridFunction.sample(lambda x: 0 * x + 3, -1, 1, 0.01), 0.5) == 0.0
    assert estimate_holder_modulus(GridFunction.sample(lambda x: x, -1, 1, 0.01), 1.0) == pytest.approx(1.0)


def test_holder_modulus_callable():
    est = estimate_holder_modulus(lambda p: np.abs(p[..., 1]) ** 0.7, 0.7, variable=2, base=np.zeros(2),
                                  samples=np.linspace(-1, 1, 201))
    assert est == pytest.approx(1.0, abs=1e-9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert estimate_holder_modulus(lambda p: p[..., 1], 1.0, variable=2, base=np.zeros(2),
                                       samples=np.zeros(3)) == 0.0


# Taylor remainder --------------------------------------------------------------

def test_taylor_remainder_affine_and_coincident():  # [TRIVIAL]
    spec = linear_chain(n=3)
    rng = np.random.default_rng(0)
    y, th = rng.normal(size=3), rng.normal(size=3)
    rem, _ = drift_taylor_remainder(spec, 2, y, th, 0.5)
    assert rem < 1e-9
    rem, bound = drift_taylor_remainder(holder_chain(n=3), 3, th, th, 0.5)
    assert rem == 0.0 and bound == 0.0


def test_taylor_remainder_bounded_ratio():  # [DERIVED] MC over unit ball
    eta = 0.5

    def F2(t, z):
        return np.sign(z[..., :1]) * np.abs(z[..., :1]) ** (1 + eta) + np.abs(z[..., 1:2]) ** 0.8

    spec = ChainSpec(n=2, d=1, drift=(lambda t, z: 0 * z[..., :1], F2), sigma=lambda t, x: np.eye(1),
                     beta=(1.0, 0.8), eta=eta)
    rng = np.random.default_rng(1)
    ratios = []
    for _ in range(200):
        th = rng.uniform(-1, 1, 2)
        y = th + rng.uniform(-1, 1, 2)
        rem, bound = drift_taylor_remainder(spec, 2, y, th, 0.0)
        ratios.append(rem / bound)
    assert max(ratios) <= 1.0 + 1e-9
