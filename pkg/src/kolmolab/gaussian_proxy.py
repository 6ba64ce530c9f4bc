"""Frozen Gaussian proxy: covariance, density, derivatives and semigroup.

For a frame (tau, xi) the linearized process started at x at time t is
Gaussian at time s with mean m_{s,t}(x) = R x + c and covariance

    K = int_t^s R(s,u) B a(u, theta_u) B^T R(s,u)^T du.

Derivatives in x follow from the score: with w = R^T K^{-1} (y - m),
D_x p = w p and D_{x_a} D_{x_b} p = (w_a w_b^T - [R^T K^{-1} R]_{ab}) p.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.stats import qmc

from .flow_resolvent import FreezingFrame, _unipotent_inv

log = logging.getLogger(__name__)

JITTER_EPS = 1e-12
MAX_JITTER_STEPS = 3


@dataclass(frozen=True)
class ScalingMatrix:
    """Intrinsic scale matrix T_u = diag(u I_d, u^2 I_d, ..., u^n I_d)."""

    u: float
    n: int
    d: int

    def __post_init__(self):
        if not self.u > 0:
            raise ValueError("scale must be > 0")

    @property
    def diag(self) -> np.ndarray:
        return np.repeat(self.u ** np.arange(1, self.n + 1, dtype=float), self.d)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diag)

    def __matmul__(self, other):
        if isinstance(other, ScalingMatrix):
            return ScalingMatrix(self.u * other.u, self.n, self.d)
        return self.matrix @ other


def scaling_matrix(u: float, n: int, d: int) -> ScalingMatrix:
    return ScalingMatrix(u, n, d)


def covariance(spec, frame: FreezingFrame, t: float, s: float, quad: int = 24) -> np.ndarray:
    """Gauss-Legendre quadrature of int_t^s R(s,u) B a B^T R(s,u)^T du along the frame."""
    if s < t:
        raise ValueError("need s >= t")
    nd = spec.nd
    if s == t:
        return np.zeros((nd, nd))
    g, w = np.polynomial.legendre.leggauss(quad)
    u = t + (s - t) * (g + 1) / 2
    w = w * (s - t) / 2
    B = spec.B()
    Rs = frame.R0(s)
    Ru = frame.R0(u)
    th = frame.theta(u)
    a = np.stack([spec.a(ui, thi) for ui, thi in zip(u, th)])
    K = np.zeros((nd, nd))
    for k in range(quad):
        Rsu = Rs @ _unipotent_inv(Ru[k], spec.d)
        RB = Rsu @ B
        K += w[k] * RB @ a[k] @ RB.T
    return (K + K.T) / 2


def gsp_condition(K, dt: float, n: int, d: int) -> tuple[float, float]:
    """Eigenvalue interval of dt T_dt^{-1} K T_dt^{-1}."""
    K = np.asarray(K, dtype=float)
    if not np.allclose(K, K.T, rtol=1e-10, atol=1e-300):
        raise ValueError("covariance must be symmetric")
    tinv = 1.0 / ScalingMatrix(dt, n, d).diag
    M = dt * K * np.outer(tinv, tinv)
    ev = np.linalg.eigvalsh((M + M.T) / 2)
    return float(ev[0]), float(ev[-1])


def _cholesky_with_jitter(K):
    nd = K.shape[0]
    jitter = 0.0
    base = JITTER_EPS * max(np.trace(K) / nd, np.finfo(float).tiny)
    for attempt in range(MAX_JITTER_STEPS + 1):
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(nd))
            return L, jitter
        except np.linalg.LinAlgError:
            jitter = base * (10.0 ** attempt)
    raise np.linalg.LinAlgError("covariance not positive definite after jitter escalation")


@dataclass(frozen=True)
class GaussianProxy:
    """Gaussian transition x -> N(R x + c, K) between times t < s."""

    t: float
    s: float
    R: np.ndarray
    c: np.ndarray
    covariance: np.ndarray
    n: int
    d: int
    frame: FreezingFrame | None = None
    factor: np.ndarray = field(init=False)
    jitter: float = field(init=False)
    log_norm: float = field(init=False)

    def __post_init__(self):
        L, jit = _cholesky_with_jitter(np.asarray(self.covariance, dtype=float))
        object.__setattr__(self, "factor", L)
        object.__setattr__(self, "jitter", jit)
        nd = self.n * self.d
        object.__setattr__(self, "log_norm", -0.5 * nd * np.log(2 * np.pi) - float(np.sum(np.log(np.diag(L)))))

    @classmethod
    def from_frame(cls, spec, frame: FreezingFrame, t: float, s: float, quad: int = 24) -> "GaussianProxy":
        K = covariance(spec, frame, t, s, quad)
        return cls(t=t, s=s, R=frame.resolvent(s, t), c=frame.shift(s, t), covariance=K, n=spec.n, d=spec.d,
                   frame=frame)

    @property
    def nd(self):
        return self.n * self.d

    def mean(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.R.T + self.c

    @property
    def precision_R(self) -> np.ndarray:
        """R^T K^{-1} R."""
        return self.R.T @ cho_solve((self.factor, True), self.R)

    def summary(self) -> dict:
        lo, hi = gsp_condition(self.covariance, self.s - self.t, self.n, self.d)
        return {"t": self.t, "s": self.s, "covariance": self.covariance.ravel().tolist(), "gsp_min": lo,
                "gsp_max": hi, "jitter": self.jitter}


def _whiten(proxy, x, y):
    diff = np.asarray(y, dtype=float) - proxy.mean(x)
    z = solve_triangular(proxy.factor, diff.reshape(-1, proxy.nd).T, lower=True).T
    return diff, z.reshape(diff.shape)


def density(proxy: GaussianProxy, x, y) -> np.ndarray:
    _, z = _whiten(proxy, x, y)
    return np.exp(proxy.log_norm - 0.5 * np.sum(z * z, axis=-1))


def score(proxy: GaussianProxy, x, y) -> np.ndarray:
    """w = R^T K^{-1} (y - m(x)), shape (..., nd)."""
    _, z = _whiten(proxy, x, y)
    kinv = solve_triangular(proxy.factor.T, z.reshape(-1, proxy.nd).T, lower=False).T.reshape(z.shape)
    return kinv @ proxy.R


def _bl(l, d):
    return slice((l - 1) * d, l * d)


def density_gradient(proxy: GaussianProxy, x, y, l: int, r: int = 0) -> np.ndarray:
    """D_{x_l} p (shape (..., d)) or, for r=1, D_{x_l} D_{x_1} p (shape (..., d, d))."""
    if not (1 <= l <= proxy.n) or r not in (0, 1):
        raise ValueError("need 1 <= l <= n and r in {0,1}")
    p = density(proxy, x, y)
    w = score(proxy, x, y)
    d = proxy.d
    if r == 0:
        return w[..., _bl(l, d)] * p[..., None]
    P = proxy.precision_R[_bl(l, d), _bl(1, d)]
    return (w[..., _bl(l, d), None] * w[..., None, _bl(1, d)] - P) * p[..., None, None]


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=32)
def gh_rule(nd: int, order: int | None = None, qmc_points: int = 1 << 14, seed: int = 0):
    """Standard-normal quadrature nodes (N, nd) and weights (N,)."""
    if order is None:
        order = 20 if nd <= 4 else 12
    if nd <= 6:
        g, w = np.polynomial.hermite_e.hermegauss(order)
        w = w / w.sum()
        grids = np.meshgrid(*([g] * nd), indexing="ij")
        Z = np.stack([q.ravel() for q in grids], axis=-1)
        W = np.ones(len(Z))
        for q in np.meshgrid(*([w] * nd), indexing="ij"):
            W = W * q.ravel()
        keep = W > 1e-300
        return Z[keep], W[keep]
    from scipy.special import ndtri

    U = qmc.Sobol(nd, scramble=True, seed=seed).random(qmc_points)
    return ndtri(U), np.full(qmc_points, 1.0 / qmc_points)


def nodes_for(proxy: GaussianProxy, x, order: int | None = None):
    """Quadrature points Y = m(x) + L z, shape (..., N, nd), and weights."""
    Z, W = gh_rule(proxy.nd, order)
    m = proxy.mean(x)
    Y = m[..., None, :] + Z @ proxy.factor.T
    return Y, Z, W


def semigroup_apply(proxy: GaussianProxy, g, x, order: int | None = None) -> np.ndarray:
    """P g(x) = E[g(Y)], Y ~ N(m(x), K); g maps (..., nd) -> (...)."""
    Y, _, W = nodes_for(proxy, x, order)
    return np.asarray(g(Y)) @ W


def score_weights(proxy: GaussianProxy, Z: np.ndarray, l: int, r: int) -> np.ndarray:
    """Weights H with D_{x_l} D^r_{x_1} E[g(Y)] = E[g(Y) H] in whitened coordinates."""
    d = proxy.d
    kz = solve_triangular(proxy.factor.T, Z.T, lower=False).T  # K^{-1} L z
    w = kz @ proxy.R
    if r == 0:
        return w[..., _bl(l, d)]
    P = proxy.precision_R[_bl(l, d), _bl(1, d)]
    return w[..., _bl(l, d), None] * w[..., None, _bl(1, d)] - P


def semigroup_derivative(proxy: GaussianProxy, g, x, l: int, r: int = 0, order: int | None = None) -> np.ndarray:
    """D_{x_l} D^r_{x_1} P g(x) via score weights; shape (..., d) or (..., d, d)."""
    Y, Z, W = nodes_for(proxy, x, order)
    H = score_weights(proxy, Z, l, r)
    gv = np.asarray(g(Y))
    return np.tensordot(gv * W, H, axes=([-1], [0]))


# ---------------------------------------------------------------------------
# structural identities


def _gauss_marginal_density(mean, cov, pts):
    L = np.linalg.cholesky(cov)
    z = solve_triangular(L, (pts - mean).T, lower=True).T
    k = len(mean)
    return np.exp(-0.5 * np.sum(z * z, axis=-1) - 0.5 * k * np.log(2 * np.pi) - np.sum(np.log(np.diag(L))))


def centering_defect(proxy: GaussianProxy, l: int, x, h: float = 1.0, probes=None) -> float:
    """sup over probes of |marginal_{1:l-1}(x + h e_l) - marginal_{1:l-1}(x)|.

    The marginal density of blocks 1..l-1 is the Gaussian sub-block
    marginal. For l = 1 the full mass is 1 on both sides.
    """
    if not (1 <= l <= proxy.n):
        raise ValueError("block index out of range")
    if l == 1:
        return 0.0
    d = proxy.d
    k = (l - 1) * d
    x = np.asarray(x, dtype=float)
    xh = x.copy()
    xh[_bl(l, d)] += h
    cov = proxy.covariance[:k, :k]
    m0 = proxy.mean(x)[:k]
    m1 = proxy.mean(xh)[:k]
    if probes is None:
        sd = np.sqrt(np.diag(cov))
        lin = np.linspace(-3, 3, 13)
        grids = np.meshgrid(*([lin] * k), indexing="ij")
        probes = m0 + np.stack([q.ravel() for q in grids], axis=-1) * sd
    probes = np.asarray(probes, dtype=float).reshape(-1, k)
    p0 = _gauss_marginal_density(m0, cov, probes)
    p1 = _gauss_marginal_density(m1, cov, probes)
    return float(np.max(np.abs(p1 - p0)))


def moment_vector(proxy: GaussianProxy, k: int, M, x, order: int | None = None) -> np.ndarray:
    """int D_{x_k} p(x,y) <M, (y-m)_k> dy, a d-vector (equals M)."""
    M = np.asarray(M, dtype=float).reshape(proxy.d)
    Y, Z, W = nodes_for(proxy, x, order)
    H = score_weights(proxy, Z, k, 0)
    diff = (Z @ proxy.factor.T)[:, _bl(k, proxy.d)]
    return (W * (diff @ M)) @ H


def moment_identity_defect(proxy: GaussianProxy, k: int, M, x, order: int | None = None) -> float:
    """|sum_b int D_{x_{k,b}} p <M,(y-m)_k> dy - <M, 1_d>|."""
    if not (1 <= k <= proxy.n):
        raise ValueError("block index out of range")
    M = np.asarray(M, dtype=float).reshape(proxy.d)
    return float(abs(moment_vector(proxy, k, M, x, order).sum() - M.sum()))


def envelope_ratio(proxy: GaussianProxy, x, y, l: int, r: int = 0, inflate: float = 2.0) -> np.ndarray:
    """|D_{x_l} D^r_{x_1} p| (s-t)^{(l-1/2)+r/2} / p_hat with p_hat = N(m, inflate K)."""
    g = density_gradient(proxy, x, y, l, r)
    mag = np.sqrt(np.sum(g.reshape(g.shape[: np.ndim(y) - 1] + (-1,)) ** 2, axis=-1))
    dt = proxy.s - proxy.t
    wide = GaussianProxy(t=proxy.t, s=proxy.s, R=proxy.R, c=proxy.c, covariance=inflate * proxy.covariance,
                         n=proxy.n, d=proxy.d)
    return mag * dt ** ((l - 0.5) + r / 2) / density(wide, x, y)
