"""Probability measures on the torus or the line, radial kernels, mollification,
ball thickness and Wasserstein distances.

Points are always stored as ``(N, dim)`` arrays.  Fields carried by a measure are
plain numpy arrays whose first axis is aligned with the atoms (or grid cells).
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
import numpy as np
from scipy import integrate, optimize
from scipy.special import expit

MASS_TOL = 1e-12
DEFAULT_CELLS_PER_UNIT = 256
MAX_EXACT_OT_ATOMS = 1000


# ---------------------------------------------------------------------------
# smooth cutoffs
# ---------------------------------------------------------------------------

def smooth_cutoff(t):
    """C-infinity step: 1 for t <= 0, 0 for t >= 1, monotone in between.

    Equal to g(1-t) / (g(1-t) + g(t)) with g(t) = exp(-1/t); it satisfies
    smooth_cutoff(t) + smooth_cutoff(1 - t) = 1.
    """
    t = np.asarray(t, dtype=float)
    out = np.atleast_1d((t <= 0).astype(float))
    t1 = np.atleast_1d(t)
    mid = (t1 > 0) & (t1 < 1)
    tm = t1[mid]
    out[mid] = expit(1.0 / tm - 1.0 / (1.0 - tm))
    return out.reshape(t.shape) if t.ndim else float(out[0])


def chi(s):
    """Thickness bump as a function of s = |x|/r: 1 on [0, 1/2], 0 beyond 1."""
    return smooth_cutoff(2.0 * np.asarray(s, dtype=float) - 1.0)


# integral of chi(|x|) over the unit ball: the smooth_cutoff symmetry gives
# 1/2 + 1/4 on each side in 1D
CHI_INTEGRAL_1D = 1.5


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    kind: str = "torus"
    length: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.kind not in ("torus", "line"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.dim not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.kind == "torus" and not self.length > 0:
            raise ValueError("torus length must be positive")

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    def wrap(self, x):
        x = np.asarray(x, dtype=float)
        if self.periodic:
            return np.mod(x, self.length)
        return x

    def displacement(self, a, b):
        """a - b, using the minimal image on the torus."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if self.periodic:
            L = self.length
            d = d - L * np.round(d / L)
        return d

    def pairwise(self, X, Y=None):
        """Distance matrix between point arrays of shape (N, dim) and (M, dim)."""
        X = as_points(X, self.dim)
        Y = X if Y is None else as_points(Y, self.dim)
        d = self.displacement(X[:, None, :], Y[None, :, :])
        if self.dim == 1:
            return np.abs(d[..., 0])
        return np.sqrt(np.sum(d * d, axis=-1))

    def grid(self, cells_per_unit: int = DEFAULT_CELLS_PER_UNIT):
        """Cell centers of a uniform grid on the torus (1D or 2D)."""
        if not self.periodic:
            raise ValueError("a default grid needs a bounded (torus) domain")
        n = max(1, int(round(cells_per_unit * self.length)))
        h = self.length / n
        c = (np.arange(n) + 0.5) * h
        if self.dim == 1:
            return c[:, None], h
        X, Y = np.meshgrid(c, c, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()]), h

    def volume(self) -> float:
        if not self.periodic:
            return math.inf
        return self.length ** self.dim

    def to_dict(self):
        return {"kind": self.kind, "length": self.length, "dim": self.dim}


def torus(length: float = 1.0, dim: int = 1) -> Domain:
    return Domain("torus", float(length), dim)


def line(dim: int = 1) -> Domain:
    return Domain("line", 1.0, dim)


def as_points(x, dim: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim == 1 else x.reshape(1, -1)
    if x.shape[1] != dim:
        raise ValueError(f"points have dimension {x.shape[1]}, expected {dim}")
    return x


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Measure:
    """Probability measure: weighted atoms, or masses at grid cell centers.

    ``cell`` is the grid spacing for grid measures and ``None`` for atomic ones.
    """

    domain: Domain
    points: np.ndarray
    weights: np.ndarray
    cell: float | None = None

    def __post_init__(self):
        pts = self.domain.wrap(as_points(self.points, self.domain.dim)).copy()
        w = np.asarray(self.weights, dtype=float).ravel().copy()
        if len(w) != len(pts):
            raise ValueError("points and weights differ in length")
        if len(w) == 0:
            raise ValueError("a measure needs at least one atom")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {w.sum():.15g} differs from 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    # constructors -----------------------------------------------------------
    @classmethod
    def atomic(cls, points, weights=None, domain: Domain | None = None,
               normalize: bool = False) -> "Measure":
        domain = domain or torus()
        pts = as_points(points, domain.dim)
        if weights is None:
            w = np.full(len(pts), 1.0 / len(pts))
        else:
            w = np.asarray(weights, dtype=float).ravel()
            if normalize:
                w = w / w.sum()
        return cls(domain, pts, w)

    @classmethod
    def grid(cls, density, domain: Domain | None = None,
             cells_per_unit: int = DEFAULT_CELLS_PER_UNIT,
             normalize: bool = True) -> "Measure":
        """Grid measure with cell masses density(center) * h^dim (midpoint rule).

        ``density`` is a callable on cell centers or an array of center values; in
        the array case its length fixes the resolution.
        """
        domain = domain or torus()
        if callable(density):
            pts, h = domain.grid(cells_per_unit)
            vals = np.asarray(density(pts[:, 0] if domain.dim == 1 else pts), dtype=float)
        else:
            vals = np.asarray(density, dtype=float).ravel()
            n = len(vals) if domain.dim == 1 else int(round(math.sqrt(len(vals))))
            pts, h = domain.grid(n / domain.length)
            if len(pts) != len(vals):
                raise ValueError("grid values do not match a square grid")
        mass = vals * h ** domain.dim
        if normalize:
            mass = mass / mass.sum()
        return cls(domain, pts, mass, cell=h)

    @classmethod
    def uniform(cls, domain: Domain | None = None,
                cells_per_unit: int = DEFAULT_CELLS_PER_UNIT) -> "Measure":
        return cls.grid(lambda x: np.ones(len(x)), domain, cells_per_unit)

    # views ------------------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def x(self) -> np.ndarray:
        """Flat coordinates of a 1D measure."""
        if self.dim != 1:
            raise ValueError("flat coordinates only exist in 1D")
        return self.points[:, 0]

    @property
    def is_grid(self) -> bool:
        return self.cell is not None

    @property
    def density(self) -> np.ndarray:
        if not self.is_grid:
            raise ValueError("density values only exist for grid measures")
        return self.weights / self.cell ** self.dim

    def with_points(self, points) -> "Measure":
        return replace(self, points=points)

    def support(self) -> np.ndarray:
        return self.points[self.weights > 0]

    def pairwise(self) -> np.ndarray:
        return self.domain.pairwise(self.points)

    def integrate(self, u) -> np.ndarray:
        """Integral of a field against the measure."""
        u = np.asarray(u, dtype=float)
        return np.tensordot(self.weights, u, axes=(0, 0))


def check_field(rho: Measure, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        u = np.full(rho.n, float(u))
    if u.shape[0] != rho.n:
        raise ValueError(f"field has {u.shape[0]} values for {rho.n} atoms")
    return u


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

PROFILES = ("cs_power", "bump", "gaussian", "bochner", "tabulated")


@dataclass(frozen=True, eq=False)
class Kernel:
    """Non-negative radial kernel k(|x|).

    Profiles:
      cs_power  lam * (1 + r^2)^(-beta/2)
      bump      1 on [0, r0), smooth decay to 0 at R0 (default R0 = 1.5 r0)
      gaussian  exp(-r^2 / (2 h^2))
      bochner   psi * psi (self-convolution of a kernel psi)
      tabulated piecewise linear through (r, value) nodes
    Every profile is multiplied by ``amplitude``.
    """

    profile: str
    params: dict = field(default_factory=dict)
    amplitude: float = 1.0
    mollifier: bool = False
    psi: "Kernel | None" = None
    dim: int = 1
    _table: tuple | None = None

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown kernel profile {self.profile!r}")
        if not self.amplitude > 0:
            raise ValueError("kernel amplitude must be positive")
        p = self.params
        if self.profile == "cs_power":
            if p.get("beta", 0) < 0 or p.get("lam", 1) <= 0:
                raise ValueError("cs_power needs lam > 0 and beta >= 0")
        elif self.profile == "bump":
            r0 = p.get("r0")
            R0 = p.get("R0", None)
            if r0 is None or r0 <= 0:
                raise ValueError("bump needs r0 > 0")
            if R0 is None:
                object.__setattr__(self, "params", {**p, "R0": 1.5 * r0})
            elif R0 <= r0:
                raise ValueError("bump needs R0 > r0")
        elif self.profile == "gaussian":
            if p.get("h", 0) <= 0:
                raise ValueError("gaussian needs h > 0")
        elif self.profile == "bochner":
            if self.psi is None:
                raise ValueError("bochner needs psi")
            if self.psi.profile != "gaussian" and self._table is None:
                object.__setattr__(self, "_table", _self_convolution_table(self.psi, self.dim))
        elif self.profile == "tabulated":
            r = np.asarray(p.get("r", []), dtype=float)
            v = np.asarray(p.get("values", []), dtype=float)
            if len(r) < 2 or len(r) != len(v) or np.any(np.diff(r) <= 0) or np.any(v < 0):
                raise ValueError("tabulated needs increasing r nodes and non-negative values")

    # evaluation -------------------------------------------------------------
    def __call__(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        return self.amplitude * self._shape(r)

    def _shape(self, r):
        p = self.params
        if self.profile == "cs_power":
            return p.get("lam", 1.0) * (1.0 + r * r) ** (-0.5 * p.get("beta", 0.0))
        if self.profile == "bump":
            r0, R0 = p["r0"], p["R0"]
            return smooth_cutoff((r - r0) / (R0 - r0))
        if self.profile == "gaussian":
            h = p["h"]
            return np.exp(-0.5 * (r / h) ** 2)
        if self.profile == "bochner":
            if self.psi.profile == "gaussian":
                h = self.psi.params["h"]
                a = self.psi.amplitude
                c = a * a * (h * math.sqrt(math.pi)) ** self.dim
                return c * np.exp(-0.25 * (r / h) ** 2)
            rr, vv = self._table
            return np.interp(r, rr, vv, right=0.0)
        rr = np.asarray(p["r"], dtype=float)
        vv = np.asarray(p["values"], dtype=float)
        return np.interp(r, rr, vv, right=0.0)

    # geometry ---------------------------------------------------------------
    @property
    def support(self) -> float:
        """Radius beyond which the kernel vanishes (inf when it never does)."""
        if self.profile == "bump":
            return self.params["R0"]
        if self.profile == "tabulated":
            return float(self.params["r"][-1]) if self.params["values"][-1] == 0 else math.inf
        if self.profile == "bochner":
            return 2 * self.psi.support
        return math.inf

    @property
    def locality(self) -> float | None:
        """Radius r0 with k >= c 1_{|x| < r0}, c > 0 (None when not set)."""
        if self.profile == "bump":
            return self.params["r0"]
        if self.profile == "gaussian":
            return self.params["h"]
        if self.profile == "bochner":
            return self.psi.locality
        return self.params.get("r0") if self.profile == "tabulated" else None

    @property
    def sup(self) -> float:
        return float(self(0.0))

    def integral(self, domain: Domain) -> float:
        """Integral of the kernel over one period (torus) or the whole space."""
        R = self.support
        if domain.periodic:
            half = domain.length / 2
            if domain.dim == 2 and R > half:
                n = 1024
                c = (np.arange(n) + 0.5) * domain.length / n - half
                X, Y = np.meshgrid(c, c)
                return float(np.sum(self(np.hypot(X, Y))) * (domain.length / n) ** 2)
            R = min(R, half)
        if self.profile == "bochner" and self.psi.profile == "gaussian" and not domain.periodic:
            return float(self.amplitude * self.psi.integral(domain) ** 2)
        brk = [b for b in self._breakpoints() if b < R]
        upper = R if math.isfinite(R) else np.inf
        weight = (lambda r: 2.0 * self(r)) if domain.dim == 1 else (lambda r: 2 * math.pi * r * self(r))
        opts = dict(limit=400, epsabs=1e-15, epsrel=1e-13)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            if math.isfinite(upper):
                val, _ = integrate.quad(weight, 0.0, upper, points=brk or None, **opts)
            else:
                a = brk[-1] if brk else 1.0
                v1, _ = integrate.quad(weight, 0.0, a, points=brk[:-1] or None, **opts)
                v2, _ = integrate.quad(weight, a, np.inf, **opts)
                val = v1 + v2
        return float(val)

    def _breakpoints(self):
        if self.profile == "bump":
            return [self.params["r0"], self.params["R0"]]
        if self.profile == "gaussian":
            return [self.params["h"], 4 * self.params["h"], 8 * self.params["h"]]
        if self.profile == "bochner":
            return [2 * b for b in self.psi._breakpoints()]
        if self.profile == "tabulated":
            return list(np.asarray(self.params["r"], dtype=float))
        return [1.0]

    def scaled(self, amplitude: float) -> "Kernel":
        return replace(self, amplitude=float(amplitude), mollifier=False)

    def normalized(self, domain: Domain) -> "Kernel":
        """Rescaled copy with unit integral over the domain, flagged as a mollifier."""
        base = replace(self, amplitude=1.0)
        return replace(self, amplitude=1.0 / base.integral(domain), mollifier=True)

    def describe(self) -> str:
        if self.profile == "bochner":
            inner = f"psi*psi, psi={self.psi.describe()}"
        else:
            inner = ", ".join(f"{k}={v}" for k, v in self.params.items()
                              if k not in ("r", "values"))
        return f"{self.profile}({inner}; amplitude={self.amplitude:.6g})"

    def to_dict(self) -> dict:
        d = {"profile": self.profile, "amplitude": self.amplitude,
             "mollifier": self.mollifier, "dim": self.dim}
        for k, v in self.params.items():
            d[k] = list(map(float, v)) if isinstance(v, (list, tuple, np.ndarray)) else v
        if self.psi is not None:
            d["psi"] = self.psi.to_dict()
        return d


def _self_convolution_table(psi: Kernel, dim: int, n: int = 2049):
    if dim != 1:
        raise ValueError("general bochner kernels are tabulated in 1D only")
    R = psi.support
    if not math.isfinite(R):
        raise ValueError("bochner tabulation needs a compactly supported psi")
    y = np.linspace(-R, R, 4097)
    dy = y[1] - y[0]
    r = np.linspace(0.0, 2 * R, n)
    py = psi(y)
    vals = np.array([np.sum(py * psi(ri - y)) * dy for ri in r])
    vals[-1] = 0.0
    return r, np.maximum(vals, 0.0)


def kernel_from_dict(d: dict) -> Kernel:
    d = dict(d)
    profile = d.pop("profile", None)
    if profile is None:
        raise ValueError("kernel.profile is required")
    amplitude = float(d.pop("amplitude", 1.0))
    mollifier = bool(d.pop("mollifier", False))
    dim = int(d.pop("dim", 1))
    psi = d.pop("psi", None)
    psi_k = kernel_from_dict(psi) if isinstance(psi, dict) else None
    return Kernel(profile, d, amplitude, mollifier, psi_k, dim)


def cs_power(beta: float, lam: float = 1.0) -> Kernel:
    return Kernel("cs_power", {"lam": float(lam), "beta": float(beta)})


def bump(r0: float, R0: float | None = None, amplitude: float = 1.0) -> Kernel:
    p = {"r0": float(r0)}
    if R0 is not None:
        p["R0"] = float(R0)
    return Kernel("bump", p, amplitude)


def gaussian(h: float, amplitude: float = 1.0) -> Kernel:
    return Kernel("gaussian", {"h": float(h)}, amplitude)


def bochner(psi: Kernel, dim: int = 1) -> Kernel:
    return Kernel("bochner", {}, 1.0, False, psi, dim)


def tabulated(r, values, r0: float | None = None) -> Kernel:
    p = {"r": list(map(float, r)), "values": list(map(float, values))}
    if r0 is not None:
        p["r0"] = float(r0)
    return Kernel("tabulated", p)


# ---------------------------------------------------------------------------
# convolution and thickness
# ---------------------------------------------------------------------------

def convolve(rho: Measure, k: Kernel, x=None) -> np.ndarray:
    """(rho * k)(x) = sum_i m_i k(x - x_i); x defaults to the atoms of rho."""
    X = rho.points if x is None else as_points(x, rho.dim)
    return k(rho.domain.pairwise(X, rho.points)) @ rho.weights


def evaluation_set(rho: Measure, S="domain", cells_per_unit: int = DEFAULT_CELLS_PER_UNIT):
    if isinstance(S, str):
        if S == "support":
            return rho.support()
        if S == "domain":
            if rho.domain.periodic:
                return rho.domain.grid(cells_per_unit)[0]
            lo, hi = rho.points.min(axis=0), rho.points.max(axis=0)
            if rho.dim == 1:
                n = max(2, int((hi[0] - lo[0]) * cells_per_unit) + 1)
                return np.linspace(lo[0], hi[0], n)[:, None]
            raise ValueError("'domain' evaluation on the 2D line needs explicit points")
        raise ValueError(f"unknown evaluation set {S!r}")
    pts = np.asarray(S, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, rho.dim)
    return as_points(pts, rho.dim)


def ball_thickness(rho: Measure, r: float, S="domain",
                   cells_per_unit: int = DEFAULT_CELLS_PER_UNIT) -> float:
    """inf over S of (rho * chi_r), the smoothed-ball mass."""
    if not r > 0:
        raise ValueError("thickness radius must be positive")
    X = evaluation_set(rho, S, cells_per_unit)
    if len(X) == 0:
        raise ValueError("empty evaluation set")
    vals = chi(rho.domain.pairwise(X, rho.points) / r) @ rho.weights
    return float(np.clip(vals.min(), 0.0, 1.0))


# ---------------------------------------------------------------------------
# Wasserstein distances
# ---------------------------------------------------------------------------

def _quantile_cost(a, wa, b, wb, p):
    ia, ib = np.argsort(a, kind="stable"), np.argsort(b, kind="stable")
    a, wa, b, wb = a[ia], wa[ia], b[ib], wb[ib]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    t = np.union1d(ca, cb)
    t = t[t > 0]
    lengths = np.diff(np.concatenate([[0.0], t]))
    mid = t - 0.5 * lengths
    qa = a[np.minimum(np.searchsorted(ca, mid), len(a) - 1)]
    qb = b[np.minimum(np.searchsorted(cb, mid), len(b) - 1)]
    return float(np.sum(lengths * np.abs(qa - qb) ** p))


def _circle_w1(mu1: Measure, mu2: Measure):
    L = mu1.domain.length
    pts = np.concatenate([mu1.x, mu2.x])
    sgn = np.concatenate([mu1.weights, -mu2.weights])
    order = np.argsort(pts, kind="stable")
    pts, sgn = pts[order], sgn[order]
    F = np.cumsum(sgn)
    lengths = np.diff(np.concatenate([pts, [pts[0] + L]]))
    # weighted median of the CDF difference minimizes int |F - c|
    o = np.argsort(F, kind="stable")
    cw = np.cumsum(lengths[o])
    c = F[o][np.searchsorted(cw, 0.5 * cw[-1])]
    return float(np.sum(lengths * np.abs(F - c)))


def transport_cost(D, w1, w2, max_atoms: int = MAX_EXACT_OT_ATOMS) -> float:
    """Optimal value of the discrete transport problem with cost matrix D."""
    D = np.asarray(D, dtype=float)
    n, m = D.shape
    if max(n, m) > max_atoms:
        raise ValueError("instance too large for exact OT")
    w1, w2 = np.asarray(w1, dtype=float), np.asarray(w2, dtype=float)
    uniform = np.allclose(w1, 1.0 / n, rtol=0, atol=1e-15) and \
        np.allclose(w2, 1.0 / m, rtol=0, atol=1e-15)
    lcm = n * m // math.gcd(n, m)
    if uniform and lcm <= 2 * max_atoms:
        from scipy.optimize import linear_sum_assignment
        C = np.repeat(np.repeat(D, lcm // n, axis=0), lcm // m, axis=1)
        r, c = linear_sum_assignment(C)
        return float(C[r, c].sum() / lcm)
    A_rows = np.kron(np.eye(n), np.ones(m))
    A_cols = np.kron(np.ones(n), np.eye(m))
    res = optimize.linprog(D.ravel(), A_eq=np.vstack([A_rows, A_cols]),
                           b_eq=np.concatenate([w1, w2]), bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _exact_ot(mu1: Measure, mu2: Measure, p: int, max_atoms: int):
    if max(mu1.n, mu2.n) > max_atoms:
        raise ValueError("instance too large for exact OT")
    D = mu1.domain.pairwise(mu1.points, mu2.points) ** p
    return transport_cost(D, mu1.weights, mu2.weights, max_atoms)


def _wasserstein(mu1: Measure, mu2: Measure, p: int, max_atoms: int) -> float:
    if mu1.domain != mu2.domain:
        raise ValueError("measures live on different domains")
    if mu1.dim == 1 and not mu1.domain.periodic:
        cost = _quantile_cost(mu1.x, mu1.weights, mu2.x, mu2.weights, p)
    elif mu1.dim == 1 and p == 1:
        cost = _circle_w1(mu1, mu2)
    else:
        cost = _exact_ot(mu1, mu2, p, max_atoms)
    return max(cost, 0.0) ** (1.0 / p)


def wasserstein1(mu1: Measure, mu2: Measure, max_atoms: int = MAX_EXACT_OT_ATOMS) -> float:
    """Exact W1: quantile coupling on the line, CDF-median formula on the circle,
    and an exact transport solve in 2D."""
    return _wasserstein(mu1, mu2, 1, max_atoms)


def wasserstein2(mu1: Measure, mu2: Measure, max_atoms: int = MAX_EXACT_OT_ATOMS) -> float:
    """Exact W2: quantile coupling on the line, exact transport solve otherwise."""
    return _wasserstein(mu1, mu2, 2, max_atoms)


# ---------------------------------------------------------------------------
# mollified velocity
# ---------------------------------------------------------------------------

def _z_grid(rho: Measure, delta: float, nodes: int | None):
    if rho.dim != 1:
        raise ValueError("mollified velocity is implemented in 1D")
    if rho.domain.periodic:
        L = rho.domain.length
        n = nodes or max(512, int(math.ceil(16 * L / delta)))
        h = L / n
        return (np.arange(n) + 0.5) * h, h
    lo, hi = rho.x.min() - 10 * delta, rho.x.max() + 10 * delta
    n = nodes or max(512, int(math.ceil(16 * (hi - lo) / delta)))
    h = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * h, h


def favre_gaussian(rho: Measure, u, delta: float, z) -> np.ndarray:
    """(u rho)_psi / rho_psi at points z for the Gaussian psi of width delta.

    Evaluated as a softmax over atoms so far-field values stay finite.
    """
    u = check_field(rho, u)
    d = rho.domain.pairwise(as_points(z, 1), rho.points)
    with np.errstate(divide="ignore"):
        logw = np.log(rho.weights)[None, :] - 0.5 * (d / delta) ** 2
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    return w @ u


def mollified_velocity(u, rho: Measure, delta: float, nodes: int | None = None) -> np.ndarray:
    """u_delta = ((u rho)_psi / rho_psi)_psi at the atoms, psi a Gaussian of width delta.

    The outer convolution is a Lebesgue integral done by midpoint quadrature and
    normalized per evaluation point, so constants are reproduced exactly and
    |u_delta| <= max |u|.
    """
    if not delta > 0:
        raise ValueError("mollification width delta must be positive")
    u = check_field(rho, u)
    z, _ = _z_grid(rho, delta, nodes)
    w = favre_gaussian(rho, u, delta, z)
    K = np.exp(-0.5 * (rho.domain.pairwise(rho.points, z[:, None]) / delta) ** 2)
    K /= K.sum(axis=1, keepdims=True)
    return K @ w


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def measure_to_dict(rho: Measure) -> dict:
    return {
        "domain": rho.domain.to_dict(),
        "representation": "grid" if rho.is_grid else "atomic",
        "cell": rho.cell,
        "points": rho.points.tolist(),
        "weights": rho.weights.tolist(),
    }


def measure_from_dict(d: dict) -> Measure:
    dom = Domain(**d["domain"])
    cell = d.get("cell") if d.get("representation") == "grid" else None
    return Measure(dom, np.asarray(d["points"], dtype=float), np.asarray(d["weights"]), cell)


def measure_to_json(rho: Measure) -> str:
    return json.dumps(measure_to_dict(rho))


def measure_from_json(text: str) -> Measure:
    return measure_from_dict(json.loads(text))


def grid_to_csv(rho: Measure, path) -> None:
    """Write (x, rho(x)) rows for a 1D grid measure."""
    if not rho.is_grid or rho.dim != 1:
        raise ValueError("CSV export needs a 1D grid measure")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "rho"])
        for xi, di in zip(rho.x, rho.density):
            w.writerow([f"{xi:.17g}", f"{di:.17g}"])


def random_grid_density(rng: np.random.Generator, domain: Domain | None = None,
                        cells_per_unit: int = DEFAULT_CELLS_PER_UNIT, modes: int = 6,
                        floor: float = 0.05, spikes: int = 0) -> Measure:
    """Random positive smooth density (Fourier modes) with optional narrow spikes."""
    domain = domain or torus()
    if domain.dim != 1:
        raise ValueError("random grid densities are 1D")
    pts, _ = domain.grid(cells_per_unit)
    x = pts[:, 0] / domain.length
    vals = np.ones_like(x)
    for k in range(1, modes + 1):
        a, b = rng.normal(size=2) / k
        vals = vals + a * np.cos(2 * np.pi * k * x) + b * np.sin(2 * np.pi * k * x)
    vals = vals - vals.min()
    vals = vals / vals.mean() + floor
    for _ in range(spikes):
        c = rng.uniform()
        w = rng.uniform(0.005, 0.02)
        d = np.abs((x - c + 0.5) % 1.0 - 0.5)
        vals = vals + rng.uniform(1, 10) * np.exp(-0.5 * (d / w) ** 2)
    return Measure.grid(vals, domain)


def dyadic_lipschitz_field(rng: np.random.Generator, n: int, L: float = 1.0,
                           levels: int | None = None) -> np.ndarray:
    """Random Lipschitz field on n periodic cells whose derivative is a sum of
    zero-mean +-1 dyadic square waves, one per scale L 2^-k (unit amplitude each).

    The field has roughness at every scale down to the grid, so its mollification
    error decays linearly in the mollification width.
    """
    levels = int(np.log2(n)) if levels is None else levels
    if n % 2 ** levels:
        raise ValueError("n must be divisible by 2^levels")
    du = np.zeros(n)
    for k in range(1, levels + 1):
        m = 2 ** k
        s = rng.choice([-1.0, 1.0], m // 2)
        du += np.repeat(np.stack([s, -s], axis=1).ravel(), n // m)
    u = np.cumsum(du) * L / n
    return u - u.mean()
