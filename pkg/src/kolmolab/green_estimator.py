"""Green operator of the frozen proxy, its derivatives and a Picard device.

Sign convention: u solves (d/dt + L) u = f on [t, T) with u(T) = 0, so the
proxy solution is

    u~(t, x) = - int_t^T P~_{s,t} f(s, .)(x) ds.

Derivatives put the score weights of the Gaussian proxy inside the time
integral and subtract f(s, y_{1:l-1}, theta^{l:n}_s) first (centering), which
leaves the value unchanged but tames the (s-t) singularity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .chain_model import ChainSpec
from .flow_resolvent import build_frame
from .gaussian_proxy import GaussianProxy, covariance, gh_rule, score_weights

log = logging.getLogger(__name__)


class QuadratureNonConvergence(RuntimeError):
    pass


class FitError(RuntimeError):
    pass


@dataclass
class GreenJob:
    """One evaluation of the proxy Green operator (or a derivative) at (t, x).

    ``source(s, y)`` maps y of shape (..., nd) to (...). ``exponents`` are the
    declared per-block Hoelder exponents of the source (used to grade the
    time mesh). ``freeze`` defaults to x, ``tau`` to t.
    """

    spec: ChainSpec
    source: Callable
    t: float
    T: float
    x: np.ndarray
    l: int | None = None
    r: int = 0
    exponents: tuple | None = None
    freeze: np.ndarray | None = None
    tau: float | None = None
    panels: int = 8
    gl_nodes: int = 8
    grading: float = 2.0
    gh_order: int | None = None
    rtol: float = 1e-6
    atol: float = 1e-10
    check: bool = True
    frame_tol: float = 1e-10
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.T > self.t:
            raise ValueError("need T > t")
        self.x = np.asarray(self.x, dtype=float).reshape(self.spec.nd)
        if self.exponents is not None and any(not (0 < e <= 1) for e in self.exponents):
            raise ValueError("declared exponents must lie in (0, 1]")
        if self.l is not None and not (1 <= self.l <= self.spec.n and self.r in (0, 1)):
            raise ValueError("need 1 <= l <= n, r in {0,1}")


def predicted_singularity(l: int, r: int, exponents, j_min: int | None = None) -> float:
    """Time-integrand singularity (l-1/2) + r/2 - min_{j>=l} exponents_j (j-1/2), floored at 0."""
    js = range(max(l, j_min or 1), len(exponents) + 1)
    gain = min((exponents[j - 1] * (j - 0.5) for j in js), default=0.0)
    return max(0.0, (l - 0.5) + r / 2 - gain)


def _grading(job: GreenJob, requests) -> float:
    p = job.grading
    if job.exponents is None:
        return p
    for (l, r) in requests:
        if l is None:
            continue
        th = predicted_singularity(l, r, job.exponents)
        if th < 1:
            p = max(p, 2.0 / (1.0 - th))
    return min(p, 8.0)


def _time_nodes(t, T, panels, q, p):
    g, w = np.polynomial.legendre.leggauss(q)
    edges = np.linspace(0.0, 1.0, panels + 1)
    u = ((edges[:-1, None] + edges[1:, None]) / 2 + (edges[1:, None] - edges[:-1, None]) / 2 * g).ravel()
    wu = ((edges[1:, None] - edges[:-1, None]) / 2 * w).ravel()
    s = t + (T - t) * u**p
    ws = wu * (T - t) * p * u ** (p - 1)
    return s, ws


def _integrand(job: GreenJob, frame, s: float, requests, x=None):
    spec = job.spec
    x = job.x if x is None else x
    proxy = GaussianProxy.from_frame(spec, frame, job.t, s)
    Z, W = gh_rule(spec.nd, job.gh_order)
    m = proxy.mean(x)
    Y = m + Z @ proxy.factor.T
    fY = np.asarray(job.source(s, Y), dtype=float)
    out = []
    theta = frame.theta(s)
    for (l, r) in requests:
        if l is None:
            out.append(np.array(fY @ W))
            continue
        Yc = Y.copy()
        Yc[:, (l - 1) * spec.d:] = theta[(l - 1) * spec.d:]
        g = fY - np.asarray(job.source(s, Yc), dtype=float)
        H = score_weights(proxy, Z, l, r)
        out.append(np.tensordot(g * W, H, axes=([0], [0])))
    return out


def _time_integral(job: GreenJob, frame, requests, panels):
    p = _grading(job, requests)
    s_nodes, w = _time_nodes(job.t, job.T, panels, job.gl_nodes, p)
    acc = [0.0 for _ in requests]
    for s, ws in zip(s_nodes, w):
        vals = _integrand(job, frame, s, requests)
        acc = [a + ws * v for a, v in zip(acc, vals)]
    return [-a for a in acc]


def job_frame(job: GreenJob):
    tau = job.t if job.tau is None else job.tau
    xi = job.x if job.freeze is None else np.asarray(job.freeze, dtype=float)
    return build_frame(job.spec, tau, xi, job.t, job.T, tol=job.frame_tol)


def green_values(job: GreenJob, requests, frame=None) -> list:
    """Evaluate several (l, r) requests (l=None for u~ itself) sharing proxies.

    Runs the time quadrature at ``panels`` and ``2*panels`` and returns the
    refined values; non-convergence raises when ``job.check``. A prebuilt
    ``frame`` (covering [job.t, job.T]) may be passed to share it across jobs.
    """
    frame = job_frame(job) if frame is None else frame
    coarse = _time_integral(job, frame, requests, job.panels)
    fine = _time_integral(job, frame, requests, 2 * job.panels)
    ok = True
    worst = 0.0
    for c, f in zip(coarse, fine):
        diff = float(np.max(np.abs(np.asarray(f) - np.asarray(c))))
        scale = float(np.max(np.abs(f)))
        worst = max(worst, diff / max(scale, 1e-300))
        if diff > job.rtol * scale + job.atol:
            ok = False
    job.info.update({"converged": ok, "relative_change": worst, "panels": 2 * job.panels})
    if not ok and job.check:
        raise QuadratureNonConvergence(f"time quadrature changed by {worst:.3g} (relative) under refinement")
    return fine


def green_apply(job: GreenJob) -> float:
    """u~(t,x) = -int_t^T P~_{s,t} f(s,.)(x) ds."""
    return float(green_values(job, [(None, 0)])[0])


def green_cross_derivative(job: GreenJob) -> np.ndarray:
    """D_{x_l} D^r_{x_1} u~(t,x) with the centering subtraction; shape (d,) or (d,d)."""
    if job.l is None:
        raise ValueError("job needs a derivative request l")
    return np.asarray(green_values(job, [(job.l, job.r)])[0])


def gradient_magnitude(spec: ChainSpec, source, t: float, T: float, x, exponents=None, **kw) -> float:
    """sum_l |D_{x_l} u~| + sum_l |D_{x_l} D_{x_1} u~| (Frobenius norms) at (t, x)."""
    job = GreenJob(spec=spec, source=source, t=t, T=T, x=x, exponents=exponents, **kw)
    req = [(l, r) for r in (0, 1) for l in range(1, spec.n + 1)]
    vals = green_values(job, req)
    return float(sum(np.linalg.norm(v) for v in vals))


@dataclass
class DriftGreenField:
    """U = Green[F] coordinatewise for the drift of ``spec`` on [., T].

    Each evaluation freezes the proxy at the evaluation point. ``jacobian``
    returns D U (nd x nd), zero at s >= T.
    """

    spec: ChainSpec
    T: float
    options: dict = field(default_factory=dict)

    def _jobs(self, s, x):
        spec = self.spec
        for k in range(spec.nd):
            def src(u, y, k=k):
                return spec.F(u, y)[..., k]

            yield GreenJob(spec=spec, source=src, t=s, T=self.T, x=x, exponents=spec.beta, **self.options)

    def _eval(self, s, x, req):
        jobs = list(self._jobs(s, x))
        frame = job_frame(jobs[0])  # all coordinates share one freezing frame
        return [green_values(job, req, frame) for job in jobs]

    def value(self, s: float, x) -> np.ndarray:
        if s >= self.T:
            return np.zeros(self.spec.nd)
        return np.array([v[0] for v in self._eval(s, x, [(None, 0)])])

    def jacobian(self, s: float, x) -> np.ndarray:
        nd = self.spec.nd
        if s >= self.T:
            return np.zeros((nd, nd))
        req = [(l, 0) for l in range(1, self.spec.n + 1)]
        return np.array([np.concatenate([np.ravel(v) for v in vals]) for vals in self._eval(s, x, req)])


# ---------------------------------------------------------------------------
# singularity exponents


@dataclass
class ExponentFit:
    j: int
    beta: float
    l: int
    r: int
    fitted: float
    predicted: float
    residual: float
    dts: np.ndarray
    values: np.ndarray

    def record(self) -> dict:
        return {"j": self.j, "beta": self.beta, "l": self.l, "r": self.r, "predicted": self.predicted,
                "fitted": self.fitted, "residual": self.residual}


def singularity_exponent_fit(n: int, d: int, j: int, beta: float, l: int, r: int, dts=None, x=None,
                             probes=(0.0, 0.5, 1.0, 2.0, 4.0), gh_order: int = 40,
                             max_residual: float = 0.05) -> ExponentFit:
    """Fit the log-log slope of the centered time integrand for f = |y_j|^beta.

    The integrand |D_{x_l} D^r_{x_1} P~_{t+dt,t}(f - f(y_{1:l-1}, theta^{l:n}))(x)|
    is maximized over probe points x + c (dt^{1/2}, dt^{3/2}, ...) for c in
    ``probes`` (intrinsic-scale offsets), for the linear chain proxy.
    """
    from .chain_model import linear_chain

    if not (0 < beta <= 1):
        raise ValueError("beta must lie in (0,1]")
    spec = linear_chain(n=n, d=d)
    dts = np.logspace(-3, -1, 9) if dts is None else np.asarray(dts, dtype=float)
    x0 = np.zeros(spec.nd) if x is None else np.asarray(x, dtype=float)

    def f(s, y):
        return np.linalg.norm(y[..., (j - 1) * d : j * d], axis=-1) ** beta

    vals = []
    for dt in dts:
        scale = np.repeat(dt ** (np.arange(1, n + 1) - 0.5), d)
        best = 0.0
        for c in probes:
            xp = x0 + c * scale
            job = GreenJob(spec=spec, source=f, t=0.0, T=dt, x=xp, gh_order=gh_order)
            frame = build_frame(spec, 0.0, xp, 0.0, dt)
            v = _integrand(job, frame, dt, [(l, r)])[0]
            best = max(best, float(np.linalg.norm(v)))
        vals.append(best)
    vals = np.asarray(vals)
    if np.any(vals <= 0):
        raise FitError("integrand vanished on the probe set; choose another x")
    coef = np.polyfit(np.log(dts), np.log(vals), 1)
    res = float(np.sqrt(np.mean((np.polyval(coef, np.log(dts)) - np.log(vals)) ** 2)))
    pred = -(l - 0.5) - r / 2 + beta * (j - 0.5)
    if res > max_residual:
        raise FitError(f"log-log fit residual {res:.3g} exceeds {max_residual}")
    return ExponentFit(j, beta, l, r, float(coef[0]), pred, res, dts, vals)


# ---------------------------------------------------------------------------
# generators


def apply_generator(spec: ChainSpec, phi, t: float, x, h: float = 1e-4) -> np.ndarray:
    """L_t phi(x) = <F, D phi> + 1/2 Tr(a D^2_{x_1} phi) by central differences."""
    x = np.asarray(x, dtype=float)
    nd, d = spec.nd, spec.d
    F = spec.F(t, x)
    a = spec.a(t, x)
    p0 = np.asarray(phi(x), dtype=float)
    out = np.zeros(p0.shape)
    for k in range(nd):
        e = np.zeros(nd)
        e[k] = h
        out = out + F[..., k] * (np.asarray(phi(x + e)) - np.asarray(phi(x - e))) / (2 * h)
    for p in range(d):
        for q in range(d):
            ep = np.zeros(nd)
            eq = np.zeros(nd)
            ep[p] = h
            eq[q] = h
            if p == q:
                d2 = (np.asarray(phi(x + ep)) - 2 * p0 + np.asarray(phi(x - ep))) / h**2
            else:
                d2 = (np.asarray(phi(x + ep + eq)) - np.asarray(phi(x + ep - eq)) - np.asarray(phi(x - ep + eq))
                      + np.asarray(phi(x - ep - eq))) / (4 * h * h)
            out = out + 0.5 * a[..., p, q] * d2
    return out


def frozen_coefficients(spec: ChainSpec, frame, s: float):
    """(F(theta_s), DF(theta_s), a(theta_s), theta_s) for the frozen generator."""
    th = frame.theta(s)
    return spec.F(s, th), spec.subdiag_jacobian(s, th), spec.a(s, th), th


def _grid_generator(spec, u, axes, s, frozen=None):
    """L u (or L~ u) on a tensor grid by np.gradient; u has shape of the grid."""
    nd, d = spec.nd, spec.d
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    grads = np.gradient(u, *axes) if nd > 1 else [np.gradient(u, axes[0])]
    if frozen is None:
        F = spec.F(s, mesh)
        a = spec.a(s, mesh)
    else:
        F0, A0, a0, th = frozen
        F = F0 + (mesh - th) @ A0.T
        a = np.broadcast_to(a0, mesh.shape[:-1] + (d, d))
    out = sum(F[..., k] * grads[k] for k in range(nd))
    for p in range(d):
        for q in range(d):
            hpq = np.gradient(grads[p], axes[q], axis=q)
            out = out + 0.5 * a[..., p, q] * hpq
    return out


@dataclass
class ParametrixResult:
    times: np.ndarray
    axes: list
    iterates: list
    residuals: list

    def records(self) -> list[dict]:
        return [{"iteration": k, "residual": float(r)} for k, r in enumerate(self.residuals)]


def parametrix_iterate(spec: ChainSpec, source, axes, T: float, iterations: int = 1, t0: float = 0.0,
                       n_t: int = 9, freeze=None, gh_order: int = 10, time_nodes: int = 10,
                       margin: float = 0.3) -> ParametrixResult:
    """Picard iteration u^{k+1} = Green[f - (L - L~) u^k] on a space-time grid.

    A single freezing frame (t0, freeze) is used for the whole grid; the
    Duhamel identity holds for any fixed frame. The correction (L - L~)u is
    tabulated by finite differences and interpolated (linear in space and
    time, linear extrapolation outside the grid). Residual
    max |(d_t + L) u^k - f| is measured on the inner (1 - 2 margin) part of
    the grid, at all time levels below T.
    """
    nd = spec.nd
    axes = [np.asarray(a, dtype=float) for a in axes]
    if len(axes) != nd or nd > 4:
        raise ValueError("parametrix_iterate is desk scale: need n*d <= 4 and one axis per coordinate")
    if not (0 <= iterations <= 3):
        raise ValueError("iterations must lie in [0, 3]")
    xi = np.zeros(nd) if freeze is None else np.asarray(freeze, dtype=float)
    frame = build_frame(spec, t0, xi, t0, T)
    times = np.linspace(t0, T, n_t)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    pts = mesh.reshape(-1, nd)
    Z, W = gh_rule(nd, gh_order)
    g_gl, w_gl = np.polynomial.legendre.leggauss(time_nodes)

    # proxies P~_{s, t_a}
    plan = []
    for ta in times[:-1]:
        s_nodes = ta + (T - ta) * (g_gl + 1) / 2
        ws = w_gl * (T - ta) / 2
        items = []
        for s, w in zip(s_nodes, ws):
            K = covariance(spec, frame, ta, s)
            pr = GaussianProxy(t=ta, s=s, R=frame.resolvent(s, ta), c=frame.shift(s, ta), covariance=K,
                               n=spec.n, d=spec.d)
            items.append((s, w, pr))
        plan.append(items)

    def green(g):
        u = np.zeros((n_t,) + mesh.shape[:-1])
        for a, items in enumerate(plan):
            acc = np.zeros(len(pts))
            for s, w, pr in items:
                Y = pr.mean(pts)[:, None, :] + (Z @ pr.factor.T)[None]
                acc += w * (np.asarray(g(s, Y)) @ W)
            u[a] = -acc.reshape(mesh.shape[:-1])
        return u

    def correction(u):
        c = np.empty_like(u)
        for a, s in enumerate(times):
            frozen = frozen_coefficients(spec, frame, s)
            c[a] = _grid_generator(spec, u[a], axes, s) - _grid_generator(spec, u[a], axes, s, frozen)
        return c

    def residual(u):
        dtu = np.gradient(u, times, axis=0)
        inner = tuple(
            slice(int(np.ceil(margin * (len(ax) - 1))), int(np.floor((1 - margin) * (len(ax) - 1))) + 1) for ax in axes
        )
        worst = 0.0
        for a, s in enumerate(times[:-1]):
            r = dtu[a] + _grid_generator(spec, u[a], axes, s) - np.asarray(source(s, mesh))
            worst = max(worst, float(np.max(np.abs(r[inner]))))
        return worst

    u = green(source)
    iterates = [u]
    residuals = [residual(u)]
    for _ in range(iterations):
        interp = RegularGridInterpolator([times] + axes, correction(u), bounds_error=False, fill_value=None)

        def g(s, Y, interp=interp):
            q = np.concatenate([np.full(Y.shape[:-1] + (1,), s), Y], axis=-1)
            return np.asarray(source(s, Y)) - interp(q.reshape(-1, nd + 1)).reshape(Y.shape[:-1])

        u = green(g)
        iterates.append(u)
        residuals.append(residual(u))
        if residuals[-1] > 10 * residuals[-2]:
            raise RuntimeError(f"Picard iteration diverges (residual {residuals[-2]:.3g} -> {residuals[-1]:.3g})")
    return ParametrixResult(times, axes, iterates, residuals)
