"""Thermic (heat-semigroup) Besov quasi-norms on 1-D grids.

    ||f||_{B^alpha_{p,q}} = ||phi(D) f||_p
        + ( int_0^1 dv/v  [v^{m - alpha/2} ||d_v^m h_v * f||_p]^q )^{1/q},

with h_v the heat kernel, m = floor(alpha/2) + 1 and phi(D) convolution with
h_1. The kernel derivative is d_v^m h_v = 2^{-m} v^{-m} He_{2m}(z/sqrt v) h_v
(probabilists' Hermite polynomials).

Convolutions are Riemann sums of the sampled kernel against the grid
samples, evaluated with FFTs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.polynomial import hermite_e
from scipy.integrate import trapezoid
from scipy.signal import fftconvolve

log = logging.getLogger(__name__)

KERNEL_WIDTH = 10.0  # kernel truncated at |z| <= KERNEL_WIDTH sqrt(v)


@dataclass(frozen=True)
class GridFunction:
    """Samples of f on origin + k * spacing, k = 0..count-1.

    ``boundary`` says how f continues outside: 'zero' (compact support) or
    'reflect' (even reflection at both ends).
    """

    origin: float
    spacing: float
    values: np.ndarray
    boundary: str = "zero"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if not self.spacing > 0:
            raise ValueError("spacing must be > 0")
        if v.ndim != 1 or v.size < 8:
            raise ValueError("need a 1-D grid with at least 8 points")
        if self.boundary not in ("zero", "reflect"):
            raise ValueError("boundary must be 'zero' or 'reflect'")

    @property
    def count(self) -> int:
        return self.values.size

    @property
    def x(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.count)

    @classmethod
    def sample(cls, f, a: float, b: float, h: float, boundary: str = "zero") -> "GridFunction":
        n = int(round((b - a) / h)) + 1
        x = a + h * np.arange(n)
        return cls(a, h, np.asarray(f(x), dtype=float), boundary)

    def scaled(self, c: float) -> "GridFunction":
        return GridFunction(self.origin, self.spacing, c * self.values, self.boundary)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        if (other.origin, other.spacing, other.count, other.boundary) != (self.origin, self.spacing, self.count,
                                                                          self.boundary):
            raise ValueError("grids differ")
        return GridFunction(self.origin, self.spacing, self.values + other.values, self.boundary)


def heat_kernel(v: float, z, d: int = 1) -> np.ndarray:
    """(2 pi v)^{-d/2} exp(-|z|^2 / (2v)); z has trailing axis of length d when d > 1."""
    if not v > 0:
        raise ValueError("v must be > 0")
    z = np.asarray(z, dtype=float)
    r2 = z * z if d == 1 else np.sum(z * z, axis=-1)
    return (2 * np.pi * v) ** (-d / 2) * np.exp(-r2 / (2 * v))


def heat_kernel_dv(v: float, z, m: int) -> np.ndarray:
    """d_v^m h_v in one dimension."""
    z = np.asarray(z, dtype=float)
    coef = np.zeros(2 * m + 1)
    coef[-1] = 1.0
    return 2.0 ** (-m) * v ** (-m) * hermite_e.hermeval(z / np.sqrt(v), coef) * heat_kernel(v, z)


def _kernel_samples(v, h, m, derivative, max_half=None):
    half = int(math.ceil(KERNEL_WIDTH * math.sqrt(v) / h))
    if max_half is not None:
        half = min(half, max_half)
    z = h * np.arange(-half, half + 1)
    k = heat_kernel_dv(v, z, m)
    if derivative:
        # d_z of d_v^m h_v via d_v^m applied to -z/v h_v: use the identity
        # d_z h_v = -(z/v) h_v and d_z commuting with d_v
        if m == 0:
            k = -(z / v) * heat_kernel(v, z)
        else:
            # d_z d_v^m h_v = 2^{-m} d_z^{2m+1} h_v
            coef = np.zeros(2 * m + 2)
            coef[-1] = 1.0
            k = -(2.0 ** (-m)) * v ** (-m - 0.5) * hermite_e.hermeval(z / np.sqrt(v), coef) * heat_kernel(v, z)
    return k * h, half


def convolve(f: GridFunction, v: float, m: int = 0, derivative: bool = False) -> np.ndarray:
    """(d_z^{derivative} d_v^m h_v) * f on the evaluation grid.

    Zero boundary: full convolution (all points where the result can be
    nonzero). Reflect boundary: values on the original grid.
    """
    k, half = _kernel_samples(v, f.spacing, m, derivative)
    if f.boundary == "zero":
        return fftconvolve(f.values, k, mode="full")
    padded = np.pad(f.values, half, mode="symmetric")
    return fftconvolve(padded, k, mode="valid")


def _lp(g: np.ndarray, p: float, h: float) -> float:
    if p == np.inf:
        return float(np.max(np.abs(g)))
    if p == 1:
        return float(np.sum(np.abs(g)) * h)
    raise ValueError("p must be 1 or inf")


@dataclass
class ThermicResult:
    value: float
    lowpass: float
    v: np.ndarray
    integrand: np.ndarray
    decay_exponent: float
    converged: bool
    refined_value: float | None = None
    m: int = 1
    info: dict = field(default_factory=dict)

    @property
    def growth(self) -> float | None:
        if self.refined_value is None or self.value == 0:
            return None
        return self.refined_value / self.value - 1.0


def default_m(alpha: float) -> int:
    return int(math.floor(alpha / 2)) + 1


def _aggregate(v, integ, q):
    if q == np.inf:
        return float(np.max(integ))
    if q == 1:
        return float(trapezoid(integ, np.log(v)))
    raise ValueError("q must be 1 or inf")


def _integrand(f, alpha, p, m, v, derivative):
    return np.array([vv ** (m - alpha / 2) * _lp(convolve(f, vv, m, derivative), p, f.spacing) for vv in v])


def _decay(v, integ, decades=2.0):
    mask = v <= v[0] * 10**decades
    if np.all(integ[mask] == 0) or mask.sum() < 2:
        return math.inf
    good = mask & (integ > 0)
    return float(np.polyfit(np.log(v[good]), np.log(integ[good]), 1)[0])


def thermic_norm(f: GridFunction, alpha: float, p: float = np.inf, q: float = np.inf, m: int | None = None,
                 v_min: float = 1e-5, n_v: int = 64, refine: bool = True, decay_tol: float = 0.01,
                 derivative: bool = False) -> ThermicResult:
    """Thermic Besov quasi-norm of f (or of f' when ``derivative``).

    Finite/divergent is decided from the small-v power law of the
    integrand, I(v) ~ v^kappa fitted over the two lowest decades: the
    v-integral is finite iff kappa > 0 (q = 1) or kappa >= 0 (q = inf);
    ``decay_tol`` is the numerical slack. The refined value (v_min halved,
    nodes doubled) is also reported.
    """
    m = default_m(alpha) if m is None else m
    if m <= alpha / 2:
        raise ValueError("need m > alpha/2")
    v = np.logspace(np.log10(v_min), 0.0, n_v)
    integ = _integrand(f, alpha, p, m, v, derivative)
    low = _lp(convolve(f, 1.0, 0, derivative), p, f.spacing)
    value = low + _aggregate(v, integ, q)
    kappa = _decay(v, integ)
    converged = kappa >= -decay_tol if q == np.inf else kappa > decay_tol
    refined = None
    if refine:
        v2 = np.logspace(np.log10(v_min / 2), 0.0, 2 * n_v)
        integ2 = _integrand(f, alpha, p, m, v2, derivative)
        refined = low + _aggregate(v2, integ2, q)
    return ThermicResult(value, low, v, integ, kappa, bool(converged), refined, m)


def norm_equivalence_ratio(f: GridFunction, alpha: float, **kw) -> float:
    """||f'||_{B^{alpha-1}_{inf,inf}} / ||f||_{B^alpha_{inf,inf}}."""
    if not (0 < alpha < 1):
        raise ValueError("alpha must lie in (0,1)")
    if np.ptp(f.values) == 0:
        raise ValueError("constant input: derivative norm vanishes, equivalence holds only modulo constants")
    kw.setdefault("refine", False)
    num = thermic_norm(f, alpha - 1, derivative=True, **kw).value
    den = thermic_norm(f, alpha, **kw).value
    return num / den


@dataclass(frozen=True)
class BesovExponents:
    i: int
    k: int
    eta: Fraction
    alpha: Fraction
    rho: int
    gamma: Fraction
    alpha_bound: Fraction
    admissible: bool
    integrable: bool

    def record(self) -> dict:
        return {"i": self.i, "k": self.k, "eta": str(self.eta), "alpha": str(self.alpha), "rho": self.rho,
                "gamma": str(self.gamma), "alpha_bound": str(self.alpha_bound), "admissible": self.admissible,
                "integrable": self.integrable}


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


def besov_exponents(i: int, k: int, eta, beta_k=1) -> BesovExponents:
    """alpha = (1 + eta/4)/(2i-1), rho = 2i-1, gamma = 1/2 + eta (i - 3/2), in exact arithmetic.

    Admissibility: alpha < (1 - (1 - beta_k)(k - 1/2)) / (i - 1/2).
    Integrability: -3/2 + gamma > -1, i.e. gamma > 1/2 (strict; eta = 0 is
    the boundary case and is flagged non-integrable).
    """
    if not (2 <= i <= k):
        raise ValueError("need 2 <= i <= k")
    eta = _frac(eta)
    beta_k = _frac(beta_k)
    if not (0 <= eta < 1):
        raise ValueError("eta must lie in [0,1)")
    alpha = (1 + eta / 4) / (2 * i - 1)
    gamma = Fraction(1, 2) + eta * (i - Fraction(3, 2))
    bound = (1 - (1 - beta_k) * (k - Fraction(1, 2))) / (i - Fraction(1, 2))
    return BesovExponents(i, k, eta, alpha, 2 * i - 1, gamma, bound, alpha < bound, Fraction(-3, 2) + gamma > -1)
