"""Peano-type ODEs perturbed by self-similar noise.

Model (started at the singular point 0, sgn(0) = 0):

    dY = sgn(Z)|Z|^alpha dt + eps dW^{(i)},   Z = l-fold time integral of Y,

with W^{(i)} the (i-1)-fold iterated Brownian motion, self-similar of index
gamma = i - 1/2. The extremal solutions behave like t^{p}, p = (1 + alpha l)/(1 - alpha),
and noise dominates them in small time iff gamma < p, i.e.
alpha > (gamma - 1)/(l + gamma).

Scan statistic. For each path let D_T = Y_T - eps W_T be the drift-driven
part of the terminal value and S = median |D_T| / (|D_T| + eps |W_T|) the
drift share. Under the exact time scaling of the scheme, (eps, T) is
equivalent to (eps T^{gamma - p}, 1), so the share at a short horizon
exceeds the share at a long horizon exactly when gamma > p. The scan
locates the sign change of S(alpha, T_short) - S(alpha, T_long), computed
on common random numbers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .sde_lab import NoiseStream

log = logging.getLogger(__name__)

BLOWUP_GUARD = 1e8


def peano_extremal(alpha: float, t) -> np.ndarray:
    """Maximal solution ((1-alpha) t)^{1/(1-alpha)} of y' = |y|^alpha, y(0)=0."""
    if not (0 <= alpha < 1):
        raise ValueError("alpha must lie in [0, 1)")
    t = np.asarray(t, dtype=float)
    return ((1 - alpha) * np.maximum(t, 0.0)) ** (1 / (1 - alpha))


def extremal_exponent(alpha: float, l: int) -> float:
    """p = (1 + alpha l)/(1 - alpha)."""
    return (1 + alpha * l) / (1 - alpha)


def extremal_scale(alpha: float, l: int, t) -> np.ndarray:
    """c t^p for y' = |Z|^alpha with Z the l-fold integral of y.

    c = (p P^alpha)^{-1/(1-alpha)}, P = (p+1)...(p+l) from Z = c t^{p+l} / P.
    """
    p = extremal_exponent(alpha, l)
    P = float(np.prod([p + k for k in range(1, l + 1)])) if l else 1.0
    c = (p * P**alpha) ** (-1 / (1 - alpha))
    return c * np.asarray(t, dtype=float) ** p


def weak_threshold(i: int, j: int) -> Fraction:
    """(2i-3)/(2j-1)."""
    if not (2 <= i <= j):
        raise ValueError("need 2 <= i <= j")
    return Fraction(2 * i - 3, 2 * j - 1)


def strong_threshold(j: int) -> Fraction:
    """(2j-2)/(2j-1)."""
    if j < 1:
        raise ValueError("need j >= 1")
    return Fraction(2 * j - 2, 2 * j - 1)


def noise_level(gamma: float) -> int:
    i = gamma + 0.5
    if abs(i - round(i)) > 1e-12 or round(i) < 1:
        raise ValueError("gamma must be a half-integer 1/2, 3/2, ... (iterated Brownian motion)")
    return int(round(i))


def iterated_bm_noise(i: int, times, stream: NoiseStream, paths: int, path_offset: int = 0) -> np.ndarray:
    """(i-1)-fold cumulative trapezoid integral of Brownian paths on a uniform grid.

    Returns shape (paths, len(times)); times[0] must be 0.
    """
    if i < 1:
        raise ValueError("level must be >= 1")
    times = np.asarray(times, dtype=float)
    if times[0] != 0 or stream.steps != len(times) - 1:
        raise ValueError("grid must start at 0 and match the stream step count")
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-9):
        raise ValueError("uniform grid required")
    dW = stream.increments(np.arange(path_offset, path_offset + paths), times[-1])[..., 0]
    W = np.concatenate([np.zeros((paths, 1)), np.cumsum(dW, axis=1)], axis=1)
    for _ in range(i - 1):
        W = cumulative_trapezoid(W, times, axis=1, initial=0.0)
    return W


@dataclass(frozen=True)
class PeanoConfig:
    alpha: float
    gamma: float = 1.5
    l: int = 0
    eps: float = 1.0
    horizon: float = 1.0
    steps: int = 1000
    paths: int = 2000
    seed: int = 0
    y0: float = 0.0

    def __post_init__(self):
        if not (0 < self.alpha < 1):
            raise ValueError("alpha must lie in (0,1)")
        if self.l < 0 or self.steps < 1 or self.paths < 1 or self.horizon <= 0:
            raise ValueError("invalid Peano configuration")
        noise_level(self.gamma)


@dataclass
class PeanoPaths:
    times: np.ndarray
    Y: np.ndarray  # (paths, steps+1)
    noise: np.ndarray  # eps * W, same shape

    @property
    def drift_part(self) -> np.ndarray:
        return self.Y - self.noise - self.Y[:, :1]


def perturbed_peano(cfg: PeanoConfig, substream: int = 3) -> PeanoPaths:
    """Euler scheme for Y with Z the l-fold (left-point) integral of Y."""
    times = np.linspace(0.0, cfg.horizon, cfg.steps + 1)
    h = cfg.horizon / cfg.steps
    if cfg.eps > 0:
        W = iterated_bm_noise(noise_level(cfg.gamma), times, NoiseStream(cfg.seed, substream, cfg.steps, 1), cfg.paths)
        noise = cfg.eps * W
    else:
        noise = np.zeros((cfg.paths, cfg.steps + 1))
    dN = np.diff(noise, axis=1)
    Y = np.empty((cfg.paths, cfg.steps + 1))
    Y[:, 0] = cfg.y0
    Zs = [np.zeros(cfg.paths) for _ in range(cfg.l)]
    y = Y[:, 0].copy()
    for k in range(cfg.steps):
        z = Zs[-1] if cfg.l else y
        drift = np.sign(z) * np.abs(z) ** cfg.alpha
        # integrate the chain Z_1' = Y, Z_m' = Z_{m-1} (left point)
        prev = y
        for m in range(cfg.l):
            new_prev = Zs[m]
            Zs[m] = Zs[m] + h * prev
            prev = new_prev
        y = y + h * drift + dN[:, k]
        if np.max(np.abs(y)) > BLOWUP_GUARD:
            raise FloatingPointError("Peano path exceeded guard")
        Y[:, k + 1] = y
    return PeanoPaths(times, Y, noise)


def drift_share(paths: PeanoPaths) -> np.ndarray:
    D = np.abs(paths.drift_part[:, -1])
    N = np.abs(paths.noise[:, -1])
    tot = D + N
    return np.where(tot > 0, D / np.where(tot > 0, tot, 1.0), 0.0)


@dataclass
class ScanReport:
    alphas: np.ndarray
    gamma: float
    l: int
    eps: tuple
    horizon: float
    short_horizon: float
    share_long: dict  # eps -> array over alphas
    share_short: dict
    ci_short: dict
    trend: np.ndarray  # at the smallest eps
    crossing: float | None
    level_crossing: float | None
    predicted: float

    def records(self) -> list[dict]:
        e = min(self.eps)
        rows = []
        for k, a in enumerate(self.alphas):
            rows.append({"alpha": float(a), "S_short": float(self.share_short[e][k]),
                         "S_long": float(self.share_long[e][k]), "ci95": float(self.ci_short[e][k]),
                         "trend": float(self.trend[k])})
        return rows


def _first_crossing(x, y, level=0.0):
    """First down-crossing of level by linear interpolation (None if absent)."""
    y = np.asarray(y) - level
    for k in range(len(y) - 1):
        if y[k] > 0 >= y[k + 1]:
            return float(x[k] + (x[k + 1] - x[k]) * y[k] / (y[k] - y[k + 1]))
    return None


def threshold_scan(alphas, gamma: float, l: int = 0, eps_ladder=(1.0, 0.3, 0.1), M: int = 2000,
                   horizon: float = 1.0, short_horizon: float = 1e-3, steps: int = 1000, seed: int = 0,
                   substream: int = 3) -> ScanReport:
    """Scan the drift share over alpha; the threshold is where its trend in T flips sign."""
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size == 0 or len(eps_ladder) == 0:
        raise ValueError("grids must be nonempty")
    if M < 100:
        raise ValueError("insufficient paths (need >= 100)")
    eps_ladder = tuple(float(e) for e in eps_ladder)
    longs, shorts, cis = {}, {}, {}
    for e in eps_ladder:
        sl, ss, cs = [], [], []
        for a in alphas:
            base = PeanoConfig(alpha=a, gamma=gamma, l=l, eps=e, horizon=horizon, steps=steps, paths=M, seed=seed)
            short = PeanoConfig(alpha=a, gamma=gamma, l=l, eps=e, horizon=short_horizon, steps=steps, paths=M,
                                seed=seed)
            s_long = drift_share(perturbed_peano(base, substream))
            s_short = drift_share(perturbed_peano(short, substream))
            sl.append(np.median(s_long))
            ss.append(np.median(s_short))
            # order-statistic 95% band for the median
            srt = np.sort(s_short)
            half = int(np.ceil(1.96 * np.sqrt(M) / 2))
            cs.append((srt[min(M - 1, M // 2 + half)] - srt[max(0, M // 2 - half)]) / 2)
        longs[e], shorts[e], cis[e] = np.array(sl), np.array(ss), np.array(cs)
    e0 = min(eps_ladder)
    trend = shorts[e0] - longs[e0]
    pred = (gamma - 1) / (l + gamma)
    return ScanReport(alphas, gamma, l, eps_ladder, horizon, short_horizon, longs, shorts, cis, trend,
                      _first_crossing(alphas, trend), _first_crossing(alphas, shorts[e0], 0.5), pred)
