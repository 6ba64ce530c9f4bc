"""Chain SDE models, assumption checks and drift mollification.

A chain model is the system

    dX^1 = F_1(t, X^1, ..., X^n) dt + sigma(t, X) dW
    dX^i = F_i(t, X^{i-1}, ..., X^n) dt,   i = 2..n

with X^i in R^d. The state is stored flat, shape (..., n*d), block i
occupying columns (i-1)*d : i*d.

Drift callables receive ``(t, z)`` where ``z`` is the trailing slice
x_{(i-1) v 1 : n} of the state (shape (..., (n - max(i-1,1) + 1)*d)) and
return shape (..., d). Passing only that slice makes the chain dependence
hold by construction.
"""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DriftFn = Callable[[float, np.ndarray], np.ndarray]
SigmaFn = Callable[[float, np.ndarray], np.ndarray]

MIN_QUAD_NODES = 4


def block(x: np.ndarray, i: int, d: int) -> np.ndarray:
    """Return block i (1-based) of a flat state array."""
    return x[..., (i - 1) * d : i * d]


def holder_threshold(j: int) -> Fraction:
    """Critical Hoelder regularity (2j-2)/(2j-1) for level j."""
    if j < 1:
        raise ValueError("level index must be >= 1")
    return Fraction(2 * j - 2, 2 * j - 1)


@dataclass(frozen=True)
class ChainSpec:
    """Immutable description of a chain SDE.

    ``drift[i-1]`` is F_i, see the module docstring for the calling
    convention. ``sigma(t, x)`` takes the full state and returns (..., d, d).
    """

    n: int
    d: int
    drift: tuple
    sigma: SigmaFn
    beta: tuple
    eta: float = 0.5
    kappa: float = 1.0
    lam: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)
    # Optional Hoelder constants used by drift_taylor_remainder:
    # {"drift": {(l, j): C}, "jacobian": {l: C}}
    holder_constants: dict | None = None

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        if len(self.drift) != self.n:
            raise ValueError(f"expected {self.n} drift components, got {len(self.drift)}")
        if len(self.beta) != self.n:
            raise ValueError("beta must have one exponent per level")
        if any(not (0.0 < b <= 1.0) for b in self.beta):
            raise ValueError("beta_j must lie in (0, 1]")
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.lam < 1.0:
            raise ValueError("lambda must be >= 1")
        object.__setattr__(self, "drift", tuple(self.drift))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    @property
    def nd(self) -> int:
        return self.n * self.d

    @property
    def above_threshold(self) -> bool:
        return all(b > float(holder_threshold(j)) for j, b in enumerate(self.beta, start=1))

    def first_var(self, i: int) -> int:
        """First block index F_i depends on."""
        return max(i - 1, 1)

    def drift_block(self, i: int, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = (self.first_var(i) - 1) * self.d
        out = np.asarray(self.drift[i - 1](t, x[..., lo:]), dtype=float)
        shape = x.shape[:-1] + (self.d,)
        return out if out.shape == shape else np.broadcast_to(out, shape)

    def F(self, t: float, x: np.ndarray) -> np.ndarray:
        """Full drift vector, shape (..., nd)."""
        return np.concatenate([self.drift_block(i, t, x) for i in range(1, self.n + 1)], axis=-1)

    def sig(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        s = np.asarray(self.sigma(t, x), dtype=float)
        return np.broadcast_to(s, x.shape[:-1] + (self.d, self.d))

    def a(self, t: float, x: np.ndarray) -> np.ndarray:
        s = self.sig(t, x)
        return s @ np.swapaxes(s, -1, -2)

    def B(self) -> np.ndarray:
        B = np.zeros((self.nd, self.d))
        B[: self.d] = np.eye(self.d)
        return B

    def subdiag_jacobian(self, t: float, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
        """Matrix with blocks D_{x_{i-1}} F_i on the block subdiagonal.

        Central differences with relative step ``h``; shape (..., nd, nd).
        """
        x = np.asarray(x, dtype=float)
        d, nd = self.d, self.nd
        A = np.zeros(x.shape[:-1] + (nd, nd))
        for i in range(2, self.n + 1):
            A[..., (i - 1) * d : i * d, (i - 2) * d : (i - 1) * d] = self.partial_jacobian(i, i - 1, t, x, h)
        return A

    def partial_jacobian(self, i: int, j: int, t: float, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
        """D_{x_j} F_i by central differences, shape (..., d, d)."""
        x = np.asarray(x, dtype=float)
        d = self.d
        cols = slice((j - 1) * d, j * d)
        step = h * np.maximum(1.0, np.abs(x[..., cols]))  # (..., d)
        # all 2d perturbed points in one drift call
        E = np.eye(d)
        pert = np.zeros((2 * d,) + x.shape)
        pert[:d, ..., cols] = E.reshape((d,) + (1,) * (x.ndim - 1) + (d,)) * step
        pert[d:] = -pert[:d]
        vals = self.drift_block(i, t, x[None] + pert)
        J = (vals[:d] - vals[d:]) / (2 * np.moveaxis(step, -1, 0)[..., None])
        return np.moveaxis(J, 0, -1)

    def fingerprint(self) -> str:
        payload = json.dumps(
            {"name": self.name, "n": self.n, "d": self.d, "beta": self.beta, "eta": self.eta, "params": self.params},
            sort_keys=True,
            default=str,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def with_drift(self, drift: Sequence[DriftFn], name: str | None = None, **extra_params) -> "ChainSpec":
        params = dict(self.params)
        params.update(extra_params)
        return ChainSpec(
            n=self.n, d=self.d, drift=tuple(drift), sigma=self.sigma, beta=self.beta, eta=self.eta,
            kappa=self.kappa, lam=self.lam, name=name or self.name, params=params,
            holder_constants=self.holder_constants,
        )


# ---------------------------------------------------------------------------
# built-in models


def _sgnpow(z, alpha):
    # sgn(0) = 0 by np.sign
    return np.sign(z) * np.abs(z) ** alpha


def _const_sigma(d: int, s: float) -> SigmaFn:
    mat = s * np.eye(d)

    def sigma(t, x):
        return mat

    return sigma


def linear_chain(n: int = 2, d: int = 1, damping: float = 0.0, sigma: float = 1.0, beta=None, eta: float = 0.5) -> ChainSpec:
    """F_1 = -damping x_1, F_i = x_{i-1}; constant diffusion sigma I."""
    drift = [lambda t, z, c=damping, d=d: -c * z[..., :d]]
    for _ in range(2, n + 1):
        drift.append(lambda t, z, d=d: z[..., :d])
    return ChainSpec(
        n=n, d=d, drift=drift, sigma=_const_sigma(d, sigma), beta=tuple(beta or [1.0] * n), eta=eta,
        kappa=0.0, lam=max(1.0, sigma**2, 1.0 / sigma**2) if sigma > 0 else 1.0,
        name="linear", params={"damping": damping, "sigma": sigma},
        holder_constants={"drift": {}, "jacobian": {i: 0.0 for i in range(2, n + 1)}},
    )


def holder_chain(n: int = 2, d: int = 1, beta=None, c: float = 0.5, eta: float = 0.5, sigma: float = 1.0) -> ChainSpec:
    """F_i = x_{i-1} + c sum_{j>=i} |x_j|^{beta_j} (componentwise), F_1 uses j >= 1."""
    beta = tuple(beta or [1.0] + [0.9] * (n - 1))

    def make(i):
        def F(t, z, i=i):
            # z starts at block max(i-1,1)
            off = 0 if i == 1 else 1
            nb = z.shape[-1] // d
            lin = 0.0 if i == 1 else z[..., :d]
            pert = 0.0
            for k in range(off, nb):
                j = max(i - 1, 1) + k
                pert = pert + np.abs(z[..., k * d : (k + 1) * d]) ** beta[j - 1]
            return lin + c * pert

        return F

    hc = {"drift": {(i, j): c for i in range(1, n + 1) for j in range(i, n + 1)}, "jacobian": {i: 0.0 for i in range(2, n + 1)}}
    return ChainSpec(
        n=n, d=d, drift=[make(i) for i in range(1, n + 1)], sigma=_const_sigma(d, sigma), beta=beta, eta=eta,
        kappa=0.0, lam=max(1.0, sigma**2, 1.0 / sigma**2), name="holder", params={"c": c, "sigma": sigma},
        holder_constants=hc,
    )


def peano_chain(n: int = 2, d: int = 1, beta=None, c: float = 1.0, eta: float = 0.5, sigma: float = 1.0) -> ChainSpec:
    """F_1 = c sgn(x_1)|x_1|^{beta_1}, F_i = x_{i-1} + c sgn(x_i)|x_i|^{beta_i}."""
    beta = tuple(beta or [0.5] * n)

    def make(i):
        def F(t, z, i=i):
            if i == 1:
                return c * _sgnpow(z[..., :d], beta[0])
            return z[..., :d] + c * _sgnpow(z[..., d : 2 * d], beta[i - 1])

        return F

    hc = {"drift": {(i, i): 2.0 ** (1 - beta[i - 1]) * c for i in range(1, n + 1)}, "jacobian": {i: 0.0 for i in range(2, n + 1)}}
    return ChainSpec(
        n=n, d=d, drift=[make(i) for i in range(1, n + 1)], sigma=_const_sigma(d, sigma), beta=beta, eta=eta,
        kappa=0.0, lam=max(1.0, sigma**2, 1.0 / sigma**2), name="peano", params={"c": c, "sigma": sigma},
        holder_constants=hc,
    )


def smooth_chain(n: int = 2, d: int = 1, c_prev: float = 0.2, c_own: float = 0.3, damping: float = 0.0,
                 sigma: float = 1.0, sigma_amp: float = 0.0, eta: float = 0.5) -> ChainSpec:
    """Smooth nonlinear chain.

    F_1 = -damping x_1 + c_own sin(x_1),
    F_i = x_{i-1} + c_prev sin(x_{i-1}) + c_own sin(x_i),
    sigma = sigma (1 + sigma_amp tanh(x_1)) I.
    Jacobians 1 + c_prev cos(.) stay >= 1 - c_prev > 0.
    """
    if not c_prev < 1:
        raise ValueError("c_prev must be < 1 for a nondegenerate Jacobian")

    def make(i):
        def F(t, z, i=i):
            if i == 1:
                return -damping * z[..., :d] + c_own * np.sin(z[..., :d])
            prev, own = z[..., :d], z[..., d : 2 * d]
            return prev + c_prev * np.sin(prev) + c_own * np.sin(own)

        return F

    def sig(t, x):
        x1 = x[..., :d]
        scale = sigma * (1.0 + sigma_amp * np.tanh(x1.sum(axis=-1)))
        return scale[..., None, None] * np.eye(d)

    lo = sigma * (1 - sigma_amp)
    hi = sigma * (1 + sigma_amp)
    lam = max(1.0, hi**2, 1.0 / lo**2) if lo > 0 else np.inf
    hc = {"drift": {(i, i): c_own for i in range(1, n + 1)}, "jacobian": {i: c_prev for i in range(2, n + 1)}}
    return ChainSpec(
        n=n, d=d, drift=[make(i) for i in range(1, n + 1)], sigma=sig, beta=tuple([1.0] * n), eta=eta,
        kappa=sigma * sigma_amp, lam=lam, name="smooth",
        params={"c_prev": c_prev, "c_own": c_own, "damping": damping, "sigma": sigma, "sigma_amp": sigma_amp},
        holder_constants=hc,
    )


MODELS = {
    "linear": linear_chain,
    "kolmogorov": linear_chain,
    "holder": holder_chain,
    "peano": peano_chain,
    "smooth": smooth_chain,
}


def build_model(cfg: dict) -> ChainSpec:
    """Build a spec from a config tree {n, d, beta, eta, model: {name, params}}."""
    if not isinstance(cfg, dict):
        raise ValueError("model config must be a mapping")
    model = cfg.get("model", {"name": "linear"})
    if isinstance(model, str):
        model = {"name": model}
    name = model.get("name")
    if name not in MODELS:
        raise ValueError(f"unknown model {name!r}; known: {sorted(MODELS)}")
    kwargs = dict(model.get("params", {}) or {})
    for key in ("n", "d", "eta"):
        if key in cfg:
            kwargs[key] = cfg[key]
    if "beta" in cfg and name in ("linear", "kolmogorov", "holder", "peano"):
        kwargs["beta"] = list(cfg["beta"])
    return MODELS[name](**kwargs)


# ---------------------------------------------------------------------------
# assumption checks


@dataclass
class AssumptionReport:
    ellipticity: tuple
    lam: float
    ue_pass: bool
    jacobian_min_sv: dict
    sv_floor: float
    h_pass: bool
    sigma_lipschitz: float
    kappa: float
    ml_pass: bool
    above_threshold: bool
    n_samples: int
    evidence: str = "sampled"

    def records(self) -> list[dict]:
        rows = [
            {"assumption": "UE", "measured": f"[{self.ellipticity[0]:.6g}, {self.ellipticity[1]:.6g}]",
             "tolerance": f"[{1 / self.lam:.6g}, {self.lam:.6g}]", "passed": self.ue_pass},
        ]
        for i, sv in self.jacobian_min_sv.items():
            rows.append({"assumption": f"H_eta level {i}", "measured": f"{sv:.6g}",
                         "tolerance": f">= {self.sv_floor:g}", "passed": sv >= self.sv_floor})
        rows.append({"assumption": "ML", "measured": f"{self.sigma_lipschitz:.6g}",
                     "tolerance": f"<= {self.kappa:g}", "passed": self.ml_pass})
        rows.append({"assumption": "T_beta", "measured": str(self.above_threshold), "tolerance": "above threshold",
                     "passed": self.above_threshold})
        return rows

    def to_text(self) -> str:
        lines = [f"assumption checks on {self.n_samples} sampled points ({self.evidence}; a pass is evidence only)"]
        for r in self.records():
            lines.append(f"  {'PASS' if r['passed'] else 'FAIL'}  {r['assumption']}: {r['measured']} (want {r['tolerance']})")
        return "\n".join(lines)

    @property
    def all_pass(self) -> bool:
        return self.ue_pass and self.h_pass and self.ml_pass


def validate_assumptions(spec: ChainSpec, sample_grid, t: float = 0.0, sv_floor: float = 1e-6) -> AssumptionReport:
    """Check UE, H_eta and the sigma Lipschitz bound at sampled points."""
    X = np.atleast_2d(np.asarray(sample_grid, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("sample grid is empty")
    if X.shape[-1] != spec.nd:
        raise ValueError(f"sample points must have dimension {spec.nd}")
    a = spec.a(t, X)
    eig = np.linalg.eigvalsh(a)
    lo, hi = float(eig.min()), float(eig.max())
    ue = lo >= 1.0 / spec.lam * (1 - 1e-12) and hi <= spec.lam * (1 + 1e-12)

    svs = {}
    for i in range(2, spec.n + 1):
        J = spec.partial_jacobian(i, i - 1, t, X)
        svs[i] = float(np.linalg.svd(J, compute_uv=False).min())
    h_ok = all(v >= sv_floor for v in svs.values())

    # sigma Lipschitz ratio over consecutive sample pairs (Frobenius)
    lip = 0.0
    if X.shape[0] > 1:
        s = spec.sig(t, X)
        ds = np.linalg.norm((s[1:] - s[:-1]).reshape(len(X) - 1, -1), axis=1)
        dx = np.linalg.norm(X[1:] - X[:-1], axis=1)
        ok = dx > 0
        if ok.any():
            lip = float(np.max(ds[ok] / dx[ok]))
    ml = lip <= spec.kappa * (1 + 1e-9) + 1e-12
    return AssumptionReport((lo, hi), spec.lam, bool(ue), svs, sv_floor, bool(h_ok), lip, spec.kappa, bool(ml),
                            spec.above_threshold, X.shape[0])


# ---------------------------------------------------------------------------
# mollification


def mollifier_scale(i: int, dt: float) -> float:
    """delta_i = dt^{(i-3/2)(2i-1)/(2i-2)}; level 1 is never mollified."""
    if i < 2:
        raise ValueError("the first component is not mollified (i must be >= 2)")
    if not (0.0 < dt <= 1.0):
        raise ValueError("dt must lie in (0, 1]")
    return float(dt ** ((i - 1.5) * (2 * i - 1) / (2 * i - 2)))


def _kernel_1d(u):
    return np.where(np.abs(u) < 1, (1 - u * u) ** 3, 0.0)


KERNEL_MASS_1D = 32.0 / 35.0  # int_{-1}^{1} (1-u^2)^3 du


@dataclass(frozen=True)
class MollifierSchedule:
    """Per-level mollification scales; entry 0 (level 1) is ignored."""

    deltas: tuple
    kernel: str = "poly3"

    def __post_init__(self):
        if any(not (dl > 0) for dl in self.deltas):
            raise ValueError("mollification scales must be > 0")
        if self.kernel != "poly3":
            raise ValueError("only the (1-u^2)^3 kernel is implemented")

    @classmethod
    def from_dt(cls, n: int, dt: float) -> "MollifierSchedule":
        return cls(tuple([1.0] + [mollifier_scale(i, dt) for i in range(2, n + 1)]))

    @classmethod
    def uniform(cls, n: int, delta: float) -> "MollifierSchedule":
        return cls(tuple([delta] * n))


def kernel_nodes(d: int, quad_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes (K, d) and weights (K,) for the normalized bump on the unit ball.

    Tensor Gauss-Legendre on [-1,1]^d weighted by (1-|u|^2)^3, weights
    renormalized to unit discrete mass (symmetric, so odd moments vanish).
    """
    if quad_nodes < MIN_QUAD_NODES:
        raise ValueError(f"need at least {MIN_QUAD_NODES} quadrature nodes")
    g, w = np.polynomial.legendre.leggauss(quad_nodes)
    grids = np.meshgrid(*([g] * d), indexing="ij")
    U = np.stack([q.ravel() for q in grids], axis=-1)
    W = np.ones(len(U))
    for q in np.meshgrid(*([w] * d), indexing="ij"):
        W = W * q.ravel()
    r2 = np.sum(U * U, axis=-1)
    W = W * np.where(r2 < 1, (1 - r2) ** 3, 0.0)
    keep = W > 0
    U, W = U[keep], W[keep]
    return U, W / W.sum()


def mollify_drift(spec: ChainSpec, schedule: MollifierSchedule, quad_nodes: int = 16) -> ChainSpec:
    """Convolve F_i (i >= 2) in its own variable x_i against rho_{delta_i}."""
    if len(schedule.deltas) != spec.n:
        raise ValueError("schedule must list one scale per level")
    U, W = kernel_nodes(spec.d, quad_nodes)
    d = spec.d
    new = [spec.drift[0]]
    for i in range(2, spec.n + 1):
        Fi = spec.drift[i - 1]
        delta = schedule.deltas[i - 1]

        def Fd(t, z, Fi=Fi, delta=delta):
            # own variable x_i is the second block of z
            z = np.asarray(z, dtype=float)
            acc = 0.0
            for u, w in zip(U, W):
                zs = z.copy()
                zs[..., d : 2 * d] = zs[..., d : 2 * d] - delta * u
                acc = acc + w * np.asarray(Fi(t, zs), dtype=float)
            return acc

        new.append(Fd)
    return spec.with_drift(new, name=spec.name + "-mollified", deltas=list(schedule.deltas), quad_nodes=quad_nodes)


# ---------------------------------------------------------------------------
# Hoelder moduli


def _pairwise_modulus(z: np.ndarray, fz: np.ndarray, beta: float, chunk: int = 2048) -> float:
    z = np.asarray(z, dtype=float).reshape(len(z), -1)
    fz = np.asarray(fz, dtype=float).reshape(len(fz), -1)
    best = 0.0
    for s in range(0, len(z), chunk):
        dz = np.linalg.norm(z[s : s + chunk, None, :] - z[None, :, :], axis=-1)
        df = np.linalg.norm(fz[s : s + chunk, None, :] - fz[None, :, :], axis=-1)
        mask = dz > 0
        if mask.any():
            best = max(best, float(np.max(df[mask] / dz[mask] ** beta)))
    return best


def estimate_holder_modulus(f, beta: float, variable: int | None = None, base=None, samples=None, d: int = 1,
                            t: float = 0.0) -> float:
    """Max over sampled pairs of |f(z)-f(z')| / |z-z'|^beta.

    ``f`` is either a GridFunction (1-D grid, all pairs) or a callable of a
    flat point. For callables, ``samples`` (N, d) are values of block
    ``variable`` inserted into ``base`` with the other coordinates fixed.
    """
    from .besov_thermic import GridFunction

    if isinstance(f, GridFunction):
        z, fz = f.x, f.values
    else:
        if samples is None or base is None or variable is None:
            raise ValueError("callable input needs base, variable and samples")
        S = np.asarray(samples, dtype=float).reshape(-1, d)
        pts = np.repeat(np.asarray(base, dtype=float)[None, :], len(S), axis=0)
        pts[:, (variable - 1) * d : variable * d] = S
        z = S
        fz = np.asarray([np.atleast_1d(f(p)) for p in pts]) if not _vectorized(f, pts) else np.asarray(f(pts))
    if len(np.unique(np.asarray(z).reshape(len(z), -1), axis=0)) < 2:
        warnings.warn("fewer than two distinct sample points; modulus set to 0")
        return 0.0
    return _pairwise_modulus(z, fz, beta)


def _vectorized(f, pts) -> bool:
    try:
        out = np.asarray(f(pts))
    except Exception:
        return False
    return out.shape[:1] == (len(pts),)


def drift_taylor_remainder(spec: ChainSpec, ell: int, y, theta, s: float, k: int | None = None,
                           holder_constants: dict | None = None) -> tuple[float, float]:
    """Remainder of the first-order drift expansion around a flow point.

    Evaluates |F_l(s, y_{1:k-1}, theta^{k:n}) - F_l(s, theta) - D_{l-1}F_l(s, theta)(y-theta)_{l-1}|
    and the majorant sum_{j=l}^{k-1} C_j |(y-theta)_j|^{beta_j} + C_eta |(y-theta)_{l-1}|^{1+eta}.
    ``theta`` is the flow point (e.g. ``frame.theta(s)``). Returns (remainder, bound).
    """
    if not (2 <= ell <= spec.n):
        raise ValueError("level must lie in [2, n]")
    n, d = spec.n, spec.d
    k = n + 1 if k is None else k
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    mixed = theta.copy()
    mixed[: (k - 1) * d] = y[: (k - 1) * d]
    J = spec.partial_jacobian(ell, ell - 1, s, theta)
    dprev = block(y - theta, ell - 1, d)
    lin = spec.drift_block(ell, s, theta) + J @ dprev
    rem = float(np.linalg.norm(spec.drift_block(ell, s, mixed) - lin))

    hc = holder_constants or spec.holder_constants or {}
    dc = hc.get("drift", {})
    jc = hc.get("jacobian", {})
    bound = 0.0
    for j in range(ell, k):
        C = dc.get((ell, j), dc.get(str((ell, j)), None))
        if C is None:
            C = _line_modulus(spec, ell, j, s, theta, spec.beta[j - 1])
        bound += C * float(np.linalg.norm(block(y - theta, j, d))) ** spec.beta[j - 1]
    Ce = jc.get(ell, None)
    if Ce is None:
        Ce = _line_modulus(spec, ell, ell - 1, s, theta, spec.eta, jacobian=True)
    bound += Ce * float(np.linalg.norm(dprev)) ** (1 + spec.eta)
    return rem, bound


def _line_modulus(spec, ell, j, s, theta, beta, jacobian=False, npts: int = 81, radius: float = 2.0) -> float:
    # sampled modulus along block j through theta (first coordinate only)
    d = spec.d
    S = np.linspace(-radius, radius, npts)
    pts = np.repeat(theta[None, :], npts, axis=0)
    pts[:, (j - 1) * d] = theta[(j - 1) * d] + S
    if jacobian:
        vals = spec.partial_jacobian(ell, ell - 1, s, pts).reshape(npts, -1)
    else:
        vals = spec.drift_block(ell, s, pts)
    return _pairwise_modulus(S, vals, beta)
