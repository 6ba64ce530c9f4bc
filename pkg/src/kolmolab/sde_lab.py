"""Euler-Maruyama simulation of chain SDEs and pathwise diagnostics.

Randomness: every path p draws its increments from a Philox generator keyed
by SeedSequence(seed, spawn_key=(substream, p)), so increments depend only
on (seed, substream, path id), never on batching or worker count.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chain_model import ChainSpec, MollifierSchedule, mollify_drift

log = logging.getLogger(__name__)

BLOWUP_GUARD = 1e8


@dataclass(frozen=True)
class NoiseStream:
    """Brownian increments for a block of paths.

    ``increments(ids, T)`` returns shape (len(ids), steps, d) with variance T/steps.
    """

    seed: int
    substream: int
    steps: int
    d: int
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def normals(self, path_ids) -> np.ndarray:
        ids = tuple(int(p) for p in path_ids)
        if ids in self._cache:
            return self._cache[ids]
        out = np.empty((len(ids), self.steps, self.d))
        for k, p in enumerate(ids):
            ss = np.random.SeedSequence(self.seed, spawn_key=(self.substream, p))
            out[k] = np.random.Generator(np.random.Philox(ss)).standard_normal((self.steps, self.d))
        if len(self._cache) < 4:
            self._cache[ids] = out
        return out

    def increments(self, path_ids, T: float) -> np.ndarray:
        return self.normals(path_ids) * np.sqrt(T / self.steps)


@dataclass
class PathEnsemble:
    """Recorded states, shape (M, len(times), nd)."""

    times: np.ndarray
    states: np.ndarray
    fingerprint: str
    seed: int
    substream: int

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @property
    def M(self):
        return self.states.shape[0]

    def to_csv(self, path) -> None:
        nd = self.states.shape[-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "time"] + [f"x{k + 1}" for k in range(nd)])
            for p in range(self.M):
                for k, t in enumerate(self.times):
                    w.writerow([p, repr(float(t))] + [repr(float(v)) for v in self.states[p, k]])


def _step_indices(steps, record):
    if record is None:
        return np.arange(steps + 1)
    idx = np.unique(np.clip(np.asarray(record, dtype=int), 0, steps))
    return idx


def _simulate_batch(specs, x0, T, steps, dW, rec_idx, sup_pairs=False):
    """Run all specs on the same increments; returns recorded states per spec
    (L, B, R, nd) and, optionally, running sup of squared gaps of consecutive specs."""
    L = len(specs)
    Bn = dW.shape[0]
    nd = specs[0].nd
    d = specs[0].d
    h = T / steps
    X = np.broadcast_to(np.asarray(x0, dtype=float), (L, Bn, nd)).copy()
    rec = np.empty((L, Bn, len(rec_idx), nd))
    sup = np.zeros((max(L - 1, 0), Bn))
    pos = 0
    if rec_idx[0] == 0:
        rec[:, :, 0] = X
        pos = 1
    for k in range(steps):
        t = k * h
        for a, sp in enumerate(specs):
            drift = sp.F(t, X[a])
            noise = np.einsum("bij,bj->bi", sp.sig(t, X[a]), dW[:, k])
            X[a] += drift * h
            X[a][:, :d] += noise
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > BLOWUP_GUARD:
            raise FloatingPointError(f"Euler state exceeded {BLOWUP_GUARD:g} at step {k + 1}")
        if sup_pairs and L > 1:
            gap = np.sum((X[1:] - X[:-1]) ** 2, axis=-1)
            np.maximum(sup, gap, out=sup)
        if pos < len(rec_idx) and rec_idx[pos] == k + 1:
            rec[:, :, pos] = X
            pos += 1
    return rec, sup


def _batches(M, batch):
    return [np.arange(s, min(M, s + batch)) for s in range(0, M, batch)]


def euler_maruyama(spec: ChainSpec, x0, T: float, steps: int, noise: NoiseStream, paths: int = 1,
                   record=None, batch: int = 2000, jobs: int = 1) -> PathEnsemble:
    """Explicit Euler-Maruyama; noise enters block 1 through sigma.

    ``record`` lists step indices to keep (default: all).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if noise.steps != steps or noise.d != spec.d:
        raise ValueError("noise stream does not match (steps, d)")
    rec_idx = _step_indices(steps, record)
    chunks = _batches(paths, batch)

    def run(ids):
        return _simulate_batch([spec], x0, T, steps, noise.increments(ids, T), rec_idx)[0][0]

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    states = np.concatenate(parts, axis=0)
    return PathEnsemble(rec_idx * (T / steps), states, spec.fingerprint(), noise.seed, noise.substream)


def coupled_paths(spec_a: ChainSpec, spec_b: ChainSpec, x0, T: float, steps: int, noise: NoiseStream,
                  noise_b: NoiseStream | None = None, paths: int = 1, record=None):
    """Two ensembles driven by the identical increments."""
    if (spec_a.n, spec_a.d) != (spec_b.n, spec_b.d):
        raise ValueError("specs must share (n, d)")
    if noise_b is not None and (noise_b.seed, noise_b.substream, noise_b.steps) != (noise.seed, noise.substream,
                                                                                   noise.steps):
        raise ValueError("coupled paths must share one noise stream")
    rec_idx = _step_indices(steps, record)
    dW = noise.increments(np.arange(paths), T)
    rec, _ = _simulate_batch([spec_a, spec_b], x0, T, steps, dW, rec_idx)
    times = rec_idx * (T / steps)
    return (PathEnsemble(times, rec[0], spec_a.fingerprint(), noise.seed, noise.substream),
            PathEnsemble(times, rec[1], spec_b.fingerprint(), noise.seed, noise.substream))


@dataclass
class ProbeCurve:
    deltas: tuple
    mean: np.ndarray
    ci: np.ndarray
    batch_means: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        return self.mean[:-1] / self.mean[1:]

    def non_increasing(self) -> bool:
        """Each step down is consistent with <= at 95% (paired batch differences)."""
        diffs = self.batch_means[:, 1:] - self.batch_means[:, :-1]
        m = diffs.mean(axis=0)
        half = 1.96 * diffs.std(axis=0, ddof=1) / np.sqrt(diffs.shape[0])
        return bool(np.all(m <= half))

    def records(self) -> list[dict]:
        return [{"delta_k": self.deltas[k], "delta_k1": self.deltas[k + 1], "mean_sup_sq": float(self.mean[k]),
                 "ci95": float(self.ci[k])} for k in range(len(self.mean))]


DEFAULT_DELTAS = (0.2, 0.1, 0.05, 0.025, 0.0125)


def strong_uniqueness_probe(spec: ChainSpec, deltas=DEFAULT_DELTAS, M: int = 10_000, T: float = 0.5,
                            steps: int = 250, seed: int = 0, x0=None, n_batches: int = 20, quad_nodes: int = 16,
                            substream: int = 7) -> ProbeCurve:
    """E[sup_t |X^{delta_k} - X^{delta_{k+1}}|^2] for the mollified family on shared noise."""
    deltas = tuple(float(v) for v in deltas)
    if len(deltas) < 2:
        raise ValueError("need at least two mollification levels")
    specs = [mollify_drift(spec, MollifierSchedule.uniform(spec.n, dl), quad_nodes) for dl in deltas]
    x0 = np.zeros(spec.nd) if x0 is None else x0
    noise = NoiseStream(seed, substream, steps, spec.d)
    if M % n_batches:
        raise ValueError("M must be a multiple of the batch count")
    per = M // n_batches
    bm = np.empty((n_batches, len(deltas) - 1))
    for b in range(n_batches):
        ids = np.arange(b * per, (b + 1) * per)
        _, sup = _simulate_batch(specs, x0, T, steps, noise.increments(ids, T), np.array([steps]), sup_pairs=True)
        bm[b] = sup.mean(axis=1)
    mean = bm.mean(axis=0)
    ci = 1.96 * bm.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return ProbeCurve(deltas, mean, ci, bm)


def fluctuation_scaling(spec: ChainSpec, i: int, times, M: int = 10_000, steps: int = 2000, seed: int = 0,
                        x0=None, substream: int = 11) -> tuple[float, np.ndarray]:
    """Fit the log-log slope of std(X^i_t) (first coordinate of block i) against t.

    Returns (exponent, stds).
    """
    times = np.sort(np.asarray(times, dtype=float))
    T = float(times.max())
    idx = np.unique(np.rint(times / T * steps).astype(int))
    if idx[0] == 0:
        raise ValueError("time grid must avoid t = 0")
    noise = NoiseStream(seed, substream, steps, spec.d)
    x0 = np.zeros(spec.nd) if x0 is None else x0
    ens = euler_maruyama(spec, x0, T, steps, noise, paths=M, record=idx)
    sd = ens.states[:, :, (i - 1) * spec.d].std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise ValueError("degenerate variance: component does not fluctuate")
    slope = np.polyfit(np.log(idx * T / steps), np.log(sd), 1)[0]
    return float(slope), sd


def zvonkin_remainder(spec: ChainSpec, spec_delta: ChainSpec, u_delta, times, states) -> np.ndarray:
    """R_t = int (F - F^delta)(s, X_s) ds - int (L - L^delta) U^delta(s, X_s) ds along one path.

    ``u_delta.jacobian(s, x)`` returns D U^delta (nd x nd). Since only the
    drift is mollified, (L - L^delta)U = D U (F - F^delta). Left-point
    quadrature on the path grid; returns R at every grid time, shape (K, nd).
    """
    times = np.asarray(times, dtype=float)
    X = np.asarray(states, dtype=float)
    R = np.zeros_like(X)
    for k in range(len(times) - 1):
        s, x = times[k], X[k]
        dF = spec.F(s, x) - spec_delta.F(s, x)
        if np.any(dF != 0):
            J = u_delta.jacobian(s, x)
            inc = dF - J @ dF
        else:
            inc = np.zeros_like(dF)
        R[k + 1] = R[k] + inc * (times[k + 1] - s)
    return R
