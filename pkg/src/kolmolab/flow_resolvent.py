"""Deterministic flow, subdiagonal resolvent and affine mean maps.

Along the flow theta_v = theta_{v,tau}(xi) the linearized drift is

    F(v, theta_v) + DF(v, theta_v) (y - theta_v),

with DF the block-subdiagonal Jacobian. The resolvent solves
d/dv R(v, t) = DF(v, theta_v) R(v, t), R(t, t) = I, and the mean map is

    m_{s,t}(x) = R(s,t) x + c(s,t),   c(s,t) = int_t^s R(s,u) (F - DF theta)(u) du.

A FreezingFrame integrates (theta, R(., t0), c(., t0)) jointly with RK4 on
[t0, t1] and keeps cubic Hermite dense output; quantities between any
t0 <= t <= s <= t1 follow from the cocycle property.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .chain_model import ChainSpec, block

log = logging.getLogger(__name__)

BLOWUP_GUARD = 1e8


class FlowBlowUp(RuntimeError):
    pass


def _rk4(rhs, y0, t0, t1, steps):
    h = (t1 - t0) / steps
    ys = [y0]
    dys = [rhs(t0, y0)]
    y = y0
    t = t0
    for k in range(steps):
        k1 = dys[-1]
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t0 + (k + 1) * h
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > BLOWUP_GUARD:
            raise FlowBlowUp(f"state exceeded {BLOWUP_GUARD:g} at t={t:.6g}")
        ys.append(y)
        dys.append(rhs(t, y))
    return np.linspace(t0, t1, steps + 1), np.array(ys), np.array(dys)


def _integrate(rhs, y0, t0, t1, tol, min_steps, max_steps):
    """RK4 with step halving until successive endpoints agree within tol."""
    if t1 == t0:
        y0 = np.asarray(y0, dtype=float)
        return np.array([t0]), y0[None], rhs(t0, y0)[None], True
    steps = min_steps
    ts, ys, dys = _rk4(rhs, y0, t0, t1, steps)
    prev = None
    while True:
        ts2, ys2, dys2 = _rk4(rhs, y0, t0, t1, 2 * steps)
        err = np.max(np.abs(ys2[-1] - ys[-1])) / max(1.0, np.max(np.abs(ys2[-1])))
        ts, ys, dys = ts2, ys2, dys2
        steps *= 2
        if err < tol:
            return ts, ys, dys, True
        # nonsmooth drifts degrade the order; stop early when the observed
        # rate cannot reach tol within max_steps
        stalled = False
        if prev is not None and err > 0 and prev > err:
            order = np.log2(prev / err)
            stalled = np.log(steps) + np.log(err / tol) / order > np.log(4 * max_steps)
        if steps >= max_steps or stalled:
            log.warning("step halving did not reach tol %.1e (last change %.2e)", tol, err)
            return ts, ys, dys, False
        prev = err


def flow(spec: ChainSpec, t: float, s: float, xi, tol: float = 1e-11, min_steps: int = 16,
         max_steps: int = 1 << 14) -> np.ndarray:
    """theta_{s,t}(xi): solution at s of theta' = F(v, theta), theta_t = xi.

    ``xi`` may be batched, shape (..., nd). s < t integrates backwards.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != spec.nd:
        raise ValueError("point dimension mismatch")
    shape = xi.shape
    flat = xi.reshape(-1)

    def rhs(v, y):
        return spec.F(v, y.reshape(shape)).reshape(-1)

    _, ys, _, _ = _integrate(rhs, flat, t, s, tol, min_steps, max_steps)
    return ys[-1].reshape(shape)


@dataclass(frozen=True)
class FreezingFrame:
    """Flow from (tau, xi) with resolvent and shift relative to t0 on [t0, t1]."""

    tau: float
    xi: np.ndarray
    t0: float
    t1: float
    nodes: np.ndarray
    theta_nodes: np.ndarray
    R_nodes: np.ndarray
    c_nodes: np.ndarray
    G_nodes: np.ndarray
    n: int
    d: int
    converged: bool
    _spline: object
    _spec: ChainSpec

    @property
    def span(self):
        return (self.t0, self.t1)

    def _check(self, v):
        eps = 1e-12 * max(1.0, abs(self.t1))
        if np.any(np.asarray(v) < self.t0 - eps) or np.any(np.asarray(v) > self.t1 + eps):
            raise ValueError(f"time outside frame span [{self.t0}, {self.t1}]")

    def _state(self, v):
        self._check(v)
        return self._spline(np.clip(v, self.t0, self.t1))

    def _unpack(self, z):
        nd = self.n * self.d
        th = z[..., :nd]
        R = z[..., nd : nd + nd * nd].reshape(z.shape[:-1] + (nd, nd))
        c = z[..., nd + nd * nd : nd + nd * nd + nd]
        G = z[..., nd + nd * nd + nd :].reshape(z.shape[:-1] + (nd, nd))
        return th, R, c, G

    def theta(self, v) -> np.ndarray:
        return self._unpack(self._state(v))[0]

    def R0(self, v) -> np.ndarray:
        """R(v, t0)."""
        return self._unpack(self._state(v))[1]

    def resolvent(self, s: float, t: float) -> np.ndarray:
        """R(s, t) = R(s, t0) R(t, t0)^{-1}."""
        if s == t:
            return np.eye(self.n * self.d)
        Rs = self.R0(s)
        Rt = self.R0(t)
        return Rs @ _unipotent_inv(Rt, self.d)

    def shift(self, s: float, t: float) -> np.ndarray:
        """c(s,t) = c(s,t0) - R(s,t) c(t,t0)."""
        if s == t:
            return np.zeros(self.n * self.d)
        _, _, cs, _ = self._unpack(self._state(s))
        _, _, ct, _ = self._unpack(self._state(t))
        return cs - self.resolvent(s, t) @ ct

    def mean(self, x, s: float, t: float | None = None) -> np.ndarray:
        """m_{s,t}(x) = R(s,t) x + c(s,t); default t is the frame start."""
        t = self.t0 if t is None else t
        x = np.asarray(x, dtype=float)
        return x @ self.resolvent(s, t).T + self.shift(s, t)

    def jacobian(self, v) -> np.ndarray:
        return self._spec.subdiag_jacobian(v, self.theta(v))

    def to_record(self) -> dict:
        return {
            "tau": float(self.tau),
            "xi": [float(v) for v in np.ravel(self.xi)],
            "span": [float(self.t0), float(self.t1)],
            "n": self.n,
            "d": self.d,
            "times": [float(v) for v in self.nodes],
            "theta": [[float(v) for v in row] for row in self.theta_nodes],
            "resolvent": [[float(v) for v in R.ravel()] for R in self.R_nodes],
            "shift": [[float(v) for v in row] for row in self.c_nodes],
        }


def _unipotent_inv(R: np.ndarray, d: int) -> np.ndarray:
    """Inverse of a block lower-triangular matrix with identity diagonal blocks."""
    nd = R.shape[-1]
    N = R - np.eye(nd)
    # R = I + N with N nilpotent of order n
    out = np.eye(nd)
    term = np.eye(nd)
    for _ in range(nd // d):
        term = -term @ N
        out = out + term
    return out


def build_frame(spec: ChainSpec, tau: float, xi, t0: float, t1: float, tol: float = 1e-11,
                min_steps: int = 32, max_steps: int = 1 << 12, jac_step: float = 1e-5,
                gramian: bool = True) -> FreezingFrame:
    """Integrate flow, resolvent, shift and the covariance Gramian on [t0, t1].

    The Gramian G(v) = int_{t0}^v R(u,t0)^{-1} B a B^T R(u,t0)^{-T} du is
    carried along as well so covariances between any two frame times are
    available; ``covariance`` in gaussian_proxy recomputes them by
    Gauss-Legendre quadrature independently.
    """
    if t1 < t0:
        raise ValueError("frame span must satisfy t0 <= t1")
    xi = np.asarray(xi, dtype=float).reshape(spec.nd)
    nd, d = spec.nd, spec.d
    th0 = flow(spec, tau, t0, xi, tol=tol) if tau != t0 else xi.copy()
    B = spec.B()

    def rhs(v, z):
        th = z[:nd]
        R = z[nd : nd + nd * nd].reshape(nd, nd)
        c = z[nd + nd * nd : nd + nd * nd + nd]
        F = spec.F(v, th)
        A = spec.subdiag_jacobian(v, th, h=jac_step)
        b = F - A @ th
        if not gramian:
            return np.concatenate([F, (A @ R).ravel(), A @ c + b, np.zeros(nd * nd)])
        Rinv = _unipotent_inv(R, d)
        Q = Rinv @ B @ spec.a(v, th) @ B.T @ Rinv.T
        return np.concatenate([F, (A @ R).ravel(), A @ c + b, Q.ravel()])

    z0 = np.concatenate([th0, np.eye(nd).ravel(), np.zeros(nd), np.zeros(nd * nd)])
    ts, zs, dzs, ok = _integrate(rhs, z0, t0, t1, tol, min_steps, max_steps)
    Rn = zs[:, nd : nd + nd * nd].reshape(-1, nd, nd)
    if len(ts) == 1:
        spline = _ConstSpline(zs[0])
    else:
        spline = CubicHermiteSpline(ts, zs, dzs, axis=0)
    return FreezingFrame(
        tau=float(tau), xi=xi, t0=float(t0), t1=float(t1), nodes=ts, theta_nodes=zs[:, :nd], R_nodes=Rn,
        c_nodes=zs[:, nd + nd * nd : nd + nd * nd + nd],
        G_nodes=zs[:, nd + nd * nd + nd :].reshape(-1, nd, nd), n=spec.n, d=d, converged=ok,
        _spline=spline, _spec=spec,
    )


class _ConstSpline:
    def __init__(self, z):
        self.z = z

    def __call__(self, v):
        v = np.asarray(v)
        return np.broadcast_to(self.z, v.shape + self.z.shape).copy()


def resolvent(spec: ChainSpec, tau: float, xi, t: float, s: float, **kw) -> np.ndarray:
    """R(s, t) along the flow from (tau, xi), integrated from t."""
    if s < t:
        raise ValueError("need s >= t")
    if s == t:
        return np.eye(spec.nd)
    kw.setdefault("gramian", False)
    kw.setdefault("tol", 1e-10)
    return build_frame(spec, tau, xi, t, s, **kw).R0(s)


def mean(frame: FreezingFrame, x, s: float, t: float | None = None) -> np.ndarray:
    return frame.mean(x, s, t)


def homogeneous_distance(x, xp, n: int, d: int) -> np.ndarray:
    """sum_i |(x - x')_i|^{1/(2i-1)} (Euclidean norm per block)."""
    diff = np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)
    if diff.shape[-1] != n * d:
        raise ValueError("dimension mismatch")
    tot = 0.0
    for i in range(1, n + 1):
        tot = tot + np.linalg.norm(block(diff, i, d), axis=-1) ** (1.0 / (2 * i - 1))
    return tot


def flow_sensitivity_check(spec: ChainSpec, x, xp, t: float, s: float):
    """Per-block gap |theta_{s,t}(x) - theta_{s,t}(x')|_i against (s-t)^{i-1/2} + d^{2i-1}.

    Returns arrays (gap, bound, ratio), one entry per block.
    """
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    dist = float(homogeneous_distance(x, xp, spec.n, spec.d))
    if dist > 1 + 1e-12 or not (0 <= s - t <= 1):
        raise ValueError("need d(x,x') <= 1 and 0 <= s-t <= 1")
    tx = flow(spec, t, s, np.stack([x, xp]))
    gap = np.array([np.linalg.norm(block(tx[0] - tx[1], i, spec.d)) for i in range(1, spec.n + 1)])
    bound = np.array([(s - t) ** (i - 0.5) + dist ** (2 * i - 1) for i in range(1, spec.n + 1)])
    return gap, bound, gap / bound


def mean_vs_flow_gap(spec: ChainSpec, x, xp, t: float, c0: float):
    """Gap between the mean map frozen at x and the true flow from x'.

    x, x' differ only in block i; t0 = t + c0 |(x-x')_i|^{2/(2i-1)}.
    Returns (gap per block, normalized gap per block) where the
    normalization is |(x-x')_i|^{(2j-1)/(2i-1)}.
    """
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    n, d = spec.n, spec.d
    diffs = [i for i in range(1, n + 1) if np.any(block(x - xp, i, d) != 0)]
    if len(diffs) > 1:
        raise ValueError("x and x' must differ in a single block")
    if not (0 < c0 < 1):
        raise ValueError("c0 must lie in (0,1)")
    if not diffs:
        return np.zeros(n), np.zeros(n)
    i = diffs[0]
    dx = float(np.linalg.norm(block(x - xp, i, d)))
    t0 = t + c0 * dx ** (2.0 / (2 * i - 1))
    fr = build_frame(spec, t, x, t, t0)
    m = fr.mean(xp, t0)
    th = flow(spec, t, t0, xp)
    gap = np.array([np.linalg.norm(block(m - th, j, d)) for j in range(1, n + 1)])
    norm = np.array([dx ** ((2 * j - 1) / (2 * i - 1)) for j in range(1, n + 1)])
    return gap, gap / norm


def frame_from_record(spec: ChainSpec, rec: dict) -> FreezingFrame:
    """Rebuild a frame from a persisted record (re-integrates from tau, xi)."""
    return build_frame(spec, rec["tau"], rec["xi"], rec["span"][0], rec["span"][1])
