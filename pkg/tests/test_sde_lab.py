import numpy as np
import pytest

from kolmolab.chain_model import MollifierSchedule, holder_chain, linear_chain, mollify_drift, smooth_chain
from kolmolab.green_estimator import DriftGreenField
from kolmolab.sde_lab import (
    NoiseStream,
    PathEnsemble,
    _simulate_batch,
    coupled_paths,
    euler_maruyama,
    fluctuation_scaling,
    strong_uniqueness_probe,
    zvonkin_remainder,
)


def test_noise_stream_deterministic_and_batch_free():
    a = NoiseStream(3, 1, 10, 2)
    b = NoiseStream(3, 1, 10, 2)
    full = a.normals(range(6))
    assert np.array_equal(full, b.normals(range(6)))
    assert np.array_equal(full[2:4], b.normals([2, 3]))
    assert not np.array_equal(full, NoiseStream(3, 2, 10, 2).normals(range(6)))
    assert a.increments([0], 0.4).std() == pytest.approx(np.sqrt(0.04), rel=0.6)


def test_zero_noise_zero_drift_constant_path():  # [TRIVIAL]
    spec = linear_chain(sigma=0.0).with_drift([lambda t, z: 0 * z[..., :1]] * 2, name="still")
    x0 = np.array([0.3, -0.7])
    ens = euler_maruyama(spec, x0, 1.0, 20, NoiseStream(0, 1, 20, 1), paths=3)
    assert np.all(ens.states == x0)


def test_euler_batching_and_jobs_invariant():
    spec = smooth_chain(n=2)
    noise = NoiseStream(0, 1, 50, 1)
    a = euler_maruyama(spec, np.zeros(2), 0.5, 50, noise, paths=30, batch=7, jobs=3)
    b = euler_maruyama(spec, np.zeros(2), 0.5, 50, noise, paths=30, batch=30)
    assert np.array_equal(a.states, b.states)
    with pytest.raises(ValueError):
        euler_maruyama(spec, np.zeros(2), 0.5, 40, noise)


def test_kolmogorov_variance():  # [DERIVED] Var X2_T = T^3/3
    T, M = 1.0, 10_000
    ens = euler_maruyama(linear_chain(), np.zeros(2), T, 200, NoiseStream(0, 1, 200, 1), paths=M, record=[200])
    x2 = ens.states[:, -1, 1]
    v = x2.var(ddof=1)
    se = v * np.sqrt(2 / (M - 1))
    # Euler bias on the grid: sum h^3 (k^2) ~ T^3/3 - T^3/(2 N) + ...
    exact = T**3 / 3
    assert abs(v - exact) < 3 * se + T**3 / 200


def test_strong_self_convergence():
    spec = smooth_chain(n=2, sigma_amp=0.3)
    T, fine, M = 0.5, 256, 400
    dW = NoiseStream(0, 5, fine, 1).increments(np.arange(M), T)
    ref = _simulate_batch([spec], np.zeros(2), T, fine, dW, np.array([fine]))[0][0, :, -1]
    errs, hs = [], []
    for coarse in (8, 16, 32, 64):
        agg = dW.reshape(M, coarse, fine // coarse, 1).sum(axis=2)
        X = _simulate_batch([spec], np.zeros(2), T, coarse, agg, np.array([coarse]))[0][0, :, -1]
        errs.append(np.sqrt(np.mean(np.sum((X - ref) ** 2, axis=-1))))
        hs.append(T / coarse)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 0.45


def test_coupled_paths():
    spec = holder_chain(n=2, beta=[1.0, 0.8])
    noise = NoiseStream(0, 2, 100, 1)
    a, b = coupled_paths(spec, spec, np.zeros(2), 0.5, 100, noise, paths=5)
    assert np.array_equal(a.states, b.states)
    gaps = []
    for dl in (0.2, 0.05, 0.0125):
        sd = mollify_drift(spec, MollifierSchedule.uniform(2, dl), 8)
        a, b = coupled_paths(spec, sd, np.zeros(2), 0.5, 100, noise, paths=20)
        gaps.append(np.abs(a.states - b.states).max())
    assert gaps[0] > gaps[1] > gaps[2]
    with pytest.raises(ValueError):
        coupled_paths(spec, spec, np.zeros(2), 0.5, 100, noise, noise_b=NoiseStream(1, 2, 100, 1))
    with pytest.raises(ValueError):
        coupled_paths(spec, linear_chain(n=3), np.zeros(2), 0.5, 100, noise)


def test_probe_identical_levels_zero():  # [TRIVIAL]
    pc = strong_uniqueness_probe(holder_chain(n=2), deltas=(0.1, 0.1), M=40, steps=20, n_batches=4, quad_nodes=4)
    assert np.all(pc.mean == 0) and pc.non_increasing()
    assert len(pc.records()) == 1
    with pytest.raises(ValueError):
        strong_uniqueness_probe(holder_chain(n=2), deltas=(0.1,))


def test_fluctuation_scaling_kolmogorov():  # [DERIVED] exponents 1/2 and 3/2
    e1, _ = fluctuation_scaling(linear_chain(), 1, [0.1, 0.2, 0.4, 0.8], M=4000, steps=400)
    e2, _ = fluctuation_scaling(linear_chain(), 2, [0.1, 0.2, 0.4, 0.8], M=4000, steps=400)
    assert e1 == pytest.approx(0.5, abs=0.05)
    assert e2 == pytest.approx(1.5, abs=0.05)
    with pytest.raises(ValueError):
        fluctuation_scaling(linear_chain(), 1, [0.0, 0.5], M=10, steps=10)


def test_path_ensemble_csv(tmp_path):
    ens = PathEnsemble(np.array([0.0, 0.5]), np.arange(8.0).reshape(2, 2, 2), "fp", 0, 1)
    p = tmp_path / "paths.csv"
    ens.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "path_id,time,x1,x2" and len(lines) == 5
    with pytest.raises(ValueError):
        PathEnsemble(np.array([0.5, 0.5]), np.zeros((1, 2, 2)), "fp", 0, 1)


class _ZeroField:
    def jacobian(self, s, x):
        return np.zeros((x.size, x.size))


def test_zvonkin_trivial_cases():  # [TRIVIAL]
    spec = holder_chain(n=2)
    ens = euler_maruyama(spec, np.zeros(2), 0.2, 10, NoiseStream(0, 1, 10, 1))
    R = zvonkin_remainder(spec, spec, _ZeroField(), ens.times, ens.states[0])
    assert np.all(R == 0)
    zero = linear_chain().with_drift([lambda t, z: 0 * z[..., :1]] * 2, name="zero")
    R = zvonkin_remainder(zero, zero, _ZeroField(), ens.times, ens.states[0])
    assert np.all(R == 0)


@pytest.mark.slow
def test_zvonkin_remainder_decreases_with_delta():  # [DERIVED] Hoelder chain
    spec = holder_chain(n=2, beta=[1.0, 0.8])
    T, steps = 0.2, 8
    ens = euler_maruyama(spec, np.zeros(2), T, steps, NoiseStream(0, 1, steps, 1), paths=1)
    norms = []
    for dl in (0.1, 0.05, 0.025):
        sd = mollify_drift(spec, MollifierSchedule.uniform(2, dl), quad_nodes=8)
        U = DriftGreenField(sd, T, {"check": False, "panels": 2, "gl_nodes": 4, "gh_order": 8})
        R = zvonkin_remainder(spec, sd, U, ens.times, ens.states[0])
        norms.append(np.linalg.norm(R[-1]))
    assert norms[0] > norms[1] > norms[2]
