"""Fokker-Planck-Alignment on torus x truncated velocity line, with entropy and Fisher diagnostics.

Splitting: half step of x-transport, full velocity step, half step of transport.
Transport is upwind (optionally MUSCL/minmod with SSP-RK2).  The velocity step
is backward Euler with Scharfetter-Gummel fluxes, which keeps f >= 0, conserves
mass column by column, and leaves the sampled Maxwellian exactly stationary.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import exprel

from .measures import Measure, mollified_velocity, torus
from .models import Model, average, strength

VACUUM = 1e-14
NEGATIVE_TOL = 1e-12
CK_CONSTANT = 0.5


class CFLError(ValueError):
    def __init__(self, dt: float, suggested: float):
        super().__init__(f"CFL violated: dt={dt:.6g}; use dt <= {suggested:.6g}")
        self.suggested = suggested


@dataclass(frozen=True)
class PhaseGrid:
    nx: int = 128
    nv: int = 256
    L: float = 1.0
    V: float = 6.0

    @classmethod
    def for_sigma(cls, sigma: float, umax: float = 0.0, nx: int = 128, nv: int = 256,
                  L: float = 1.0) -> "PhaseGrid":
        """V = max|u| + 8 sqrt(sigma): Maxwellian tails below 1e-12 at the boundary."""
        return cls(nx, nv, L, umax + 8.0 * math.sqrt(max(sigma, 1e-12)))

    @property
    def dx(self) -> float:
        return self.L / self.nx

    @property
    def dv(self) -> float:
        return 2 * self.V / self.nv

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def v(self) -> np.ndarray:
        return -self.V + (np.arange(self.nv) + 0.5) * self.dv

    @property
    def v_faces(self) -> np.ndarray:
        """Interior faces v_{j+1/2}, j = 0..nv-2."""
        return -self.V + (np.arange(1, self.nv)) * self.dv

    @property
    def cell(self) -> float:
        return self.dx * self.dv


@dataclass(frozen=True, eq=False)
class KineticState:
    f: np.ndarray          # shape (nx, nv), density values
    grid: PhaseGrid
    sigma: float
    t: float = 0.0

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        if f.shape != (self.grid.nx, self.grid.nv):
            raise ValueError(f"f must have shape {(self.grid.nx, self.grid.nv)}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        object.__setattr__(self, "f", f)

    @property
    def mass(self) -> float:
        return float(self.f.sum() * self.grid.cell)

    @property
    def rho(self) -> np.ndarray:
        return self.f.sum(axis=1) * self.grid.dv

    @property
    def momentum_density(self) -> np.ndarray:
        return self.f @ self.grid.v * self.grid.dv

    @property
    def u(self) -> np.ndarray:
        rho = self.rho
        return np.divide(self.momentum_density, rho, out=np.zeros_like(rho), where=rho >= VACUUM)

    @property
    def ubar(self) -> float:
        return float(self.momentum_density.sum() * self.grid.dx / self.mass)

    @property
    def energy(self) -> float:
        return 0.5 * float((self.f @ self.grid.v ** 2).sum() * self.grid.cell)

    def measure(self) -> Measure:
        w = self.rho * self.grid.dx
        return Measure(torus(self.grid.L), self.grid.x, w / w.sum(), cell=self.grid.dx)

    def to_csv(self, path) -> None:
        g = self.grid
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "v", "f"])
            for i in range(g.nx):
                for j in range(g.nv):
                    w.writerow([repr(g.x[i]), repr(g.v[j]), repr(self.f[i, j])])


# ---------------------------------------------------------------------------
# equilibria and initial data
# ---------------------------------------------------------------------------

def maxwellian(sigma: float, ubar: float, grid: PhaseGrid) -> KineticState:
    """Sampled mu_{sigma, ubar}, uniform in x, renormalized to discrete mass 1."""
    if sigma <= 0:
        raise ValueError("the Maxwellian needs sigma > 0")
    m = np.exp(-0.5 * (grid.v - ubar) ** 2 / sigma)
    f = np.tile(m, (grid.nx, 1))
    return KineticState(f / (f.sum() * grid.cell), grid, sigma)


def from_profiles(rho0, velocity_pdf, grid: PhaseGrid, sigma: float) -> KineticState:
    """f0(x, v) = rho0(x) g(x, v) with each column of g normalized to unit v-mass."""
    x, v = grid.x, grid.v
    rho = np.asarray(rho0(x), dtype=float) * np.ones(grid.nx)
    g = np.asarray(velocity_pdf(x[:, None], v[None, :]), dtype=float) * np.ones((grid.nx, grid.nv))
    col = g.sum(axis=1, keepdims=True) * grid.dv
    g = np.divide(g, col, out=np.zeros_like(g), where=col > 0)
    f = rho[:, None] * g
    return KineticState(f / (f.sum() * grid.cell), grid, sigma)


def bimodal(grid: PhaseGrid, sigma: float, shift: float = 1.5, width: float = 0.5,
            rho0=None) -> KineticState:
    """Two velocity bumps at +-shift; density rho0 (default 1 + 0.5 cos 2 pi x / L)."""
    rho0 = rho0 or (lambda x: 1 + 0.5 * np.cos(2 * np.pi * x / grid.L))

    def g(x, v):
        return np.exp(-0.5 * ((v - shift) / width) ** 2) + np.exp(-0.5 * ((v + shift) / width) ** 2)

    return from_profiles(rho0, g, grid, sigma)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def _xlogy_ratio(f, mu):
    """f log(f/mu) - f + mu: pointwise non-negative, same integral when masses agree."""
    out = mu - f
    pos = f > 0
    out[pos] += f[pos] * np.log(f[pos] / mu[pos])
    return np.maximum(out, 0.0)


def relative_entropy(state: KineticState, mu: KineticState | None = None) -> float:
    """H(f | mu) = sigma * int f log(f / mu); mu defaults to mu_{sigma, ubar(f)}."""
    mu = mu or maxwellian(state.sigma, state.ubar, state.grid)
    return state.sigma * float(_xlogy_ratio(state.f, mu.f).sum() * state.grid.cell)


def l1_distance(state: KineticState, mu: KineticState | None = None) -> float:
    mu = mu or maxwellian(state.sigma, state.ubar, state.grid)
    return float(np.abs(state.f - mu.f).sum() * state.grid.cell)


def csiszar_kullback_slack(state: KineticState) -> float:
    """H - c sigma ||f - mu||_1^2 with c = 1/2; non-negative by the CK inequality."""
    mu = maxwellian(state.sigma, state.ubar, state.grid)
    return relative_entropy(state, mu) - CK_CONSTANT * state.sigma * l1_distance(state, mu) ** 2


def _log_f(f):
    return np.log(np.maximum(f, 1e-300))


def fisher_vv(state: KineticState) -> float:
    """int f |d_v log f + (v - ubar) / sigma|^2."""
    g = state.grid
    dlog = np.gradient(_log_f(state.f), g.dv, axis=1, edge_order=2)
    w = dlog + (g.v[None, :] - state.ubar) / state.sigma
    return float((state.f * w * w).sum() * g.cell)


def fisher_xx(state: KineticState) -> float:
    """int f |d_x log f|^2 (periodic central differences)."""
    g = state.grid
    L = _log_f(state.f)
    dlog = (np.roll(L, -1, axis=0) - np.roll(L, 1, axis=0)) / (2 * g.dx)
    return float((state.f * dlog * dlog).sum() * g.cell)


@dataclass
class KineticDiagnostics:
    sigma: float = 0.0
    t: list = field(default_factory=list)
    rho_min: list = field(default_factory=list)
    ubar: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    H: list = field(default_factory=list)
    L1: list = field(default_factory=list)
    I_vv: list = field(default_factory=list)
    I_xx: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    boundary_mass: list = field(default_factory=list)

    def record(self, state: KineticState):
        mu = maxwellian(state.sigma, state.ubar, state.grid) if state.sigma > 0 else None
        self.t.append(state.t)
        self.rho_min.append(float(state.rho.min()))
        self.ubar.append(state.ubar)
        self.energy.append(state.energy)
        self.mass.append(state.mass)
        edge = state.f[:, [0, -1]].sum() * state.grid.cell
        self.boundary_mass.append(float(edge))
        if mu is not None:
            self.H.append(relative_entropy(state, mu))
            self.L1.append(l1_distance(state, mu))
            self.I_vv.append(fisher_vv(state))
            self.I_xx.append(fisher_xx(state))

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)

    @property
    def ck_slack(self) -> np.ndarray:
        return np.asarray(self.H) - CK_CONSTANT * self.sigma * np.asarray(self.L1) ** 2


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def _bernoulli(z):
    """B(z) = z / (e^z - 1)."""
    with np.errstate(over="ignore"):
        return 1.0 / exprel(z)


def _solve_tridiagonal(lower, diag, upper, rhs):
    """Thomas algorithm along the last axis; lower[..., 0] and upper[..., -1] unused."""
    n = rhs.shape[-1]
    c = np.empty_like(rhs)
    d = np.empty_like(rhs)
    c[..., 0] = upper[..., 0] / diag[..., 0]
    d[..., 0] = rhs[..., 0] / diag[..., 0]
    for j in range(1, n):
        den = diag[..., j] - lower[..., j] * c[..., j - 1]
        c[..., j] = upper[..., j] / den
        d[..., j] = (rhs[..., j] - lower[..., j] * d[..., j - 1]) / den
    x = np.empty_like(rhs)
    x[..., -1] = d[..., -1]
    for j in range(n - 2, -1, -1):
        x[..., j] = d[..., j] - c[..., j] * x[..., j + 1]
    return x


def velocity_step(f, grid: PhaseGrid, s, w, sigma: float, dt: float):
    """Backward Euler for f_t = d_v( s (sigma f_v + (v - w) f) ) per column, zero flux at +-V.

    Face fluxes J = alpha f_j - beta f_{j+1} (Scharfetter-Gummel).  For sigma = 0 the
    exact characteristic map is used instead, see ``_characteristic_remap``.
    """
    if sigma == 0:
        return _characteristic_remap(f, grid, s, w, dt)
    s = np.asarray(s, dtype=float)[:, None]
    a = -(grid.v_faces[None, :] - np.asarray(w, dtype=float)[:, None])   # drift at faces
    if sigma > 0:
        P = a * grid.dv / sigma
        alpha = s * sigma / grid.dv * _bernoulli(-P)
        beta = s * sigma / grid.dv * _bernoulli(P)
    else:
        alpha = s * np.maximum(a, 0.0)
        beta = s * np.maximum(-a, 0.0)
    nx, nv = f.shape
    r = dt / grid.dv
    zero = np.zeros((nx, 1))
    al = np.concatenate([alpha, zero], axis=1)   # alpha_j, j = 0..nv-1 (last face closed)
    be = np.concatenate([beta, zero], axis=1)
    al_m = np.concatenate([zero, alpha], axis=1)  # alpha_{j-1}
    be_m = np.concatenate([zero, beta], axis=1)
    diag = 1.0 + r * (al + be_m)
    upper = -r * be
    lower = -r * al_m
    return _solve_tridiagonal(lower, diag, upper, f)


def _characteristic_remap(f, grid: PhaseGrid, s, w, dt: float):
    """Pure relaxation f_t = d_v(s (v - w) f) solved along characteristics.

    Cell masses move to w + (v_j - w) exp(-s dt) and are shared linearly between the
    two nearest cells, which preserves mass, mean velocity and positivity.
    """
    nx, nv = f.shape
    s = np.asarray(s, dtype=float)[:, None]
    w = np.asarray(w, dtype=float)[:, None]
    p = w + (grid.v[None, :] - w) * np.exp(-s * dt)
    q = np.clip((p - grid.v[0]) / grid.dv, 0.0, nv - 1.0)
    k = np.minimum(np.floor(q).astype(int), nv - 2)
    frac = q - k
    rows = np.repeat(np.arange(nx), nv).reshape(nx, nv) * nv
    out = np.bincount((rows + k).ravel(), weights=(f * (1 - frac)).ravel(), minlength=nx * nv)
    out += np.bincount((rows + k + 1).ravel(), weights=(f * frac).ravel(), minlength=nx * nv)
    return out.reshape(nx, nv)


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _transport_rhs(f, grid: PhaseGrid, muscl: bool):
    v = grid.v[None, :]
    if muscl:
        slope = _minmod(f - np.roll(f, 1, axis=0), np.roll(f, -1, axis=0) - f)
        left = f + 0.5 * slope                      # value at i+1/2 from cell i
        right = np.roll(f - 0.5 * slope, -1, axis=0)  # value at i+1/2 from cell i+1
    else:
        left, right = f, np.roll(f, -1, axis=0)
    F = np.where(v >= 0, v * left, v * right)
    return -(F - np.roll(F, 1, axis=0)) / grid.dx


def transport_step(f, grid: PhaseGrid, dt: float, muscl: bool = False):
    """Conservative upwind (or MUSCL with SSP-RK2) update of f_t + v f_x = 0."""
    if not muscl:
        return f + dt * _transport_rhs(f, grid, False)
    f1 = f + dt * _transport_rhs(f, grid, True)
    return 0.5 * (f + f1 + dt * _transport_rhs(f1, grid, True))


def max_dt(grid: PhaseGrid) -> float:
    """Transport CFL bound dx / V (the implicit velocity step has no restriction)."""
    return grid.dx / grid.V


def explicit_dt_bounds(grid: PhaseGrid, sigma: float, s_max: float, drift_max: float) -> float:
    """min(dx/V, dv^2/(2 sigma s), dv/drift): the fully explicit bound, for reference."""
    b = [grid.dx / grid.V]
    if sigma > 0 and s_max > 0:
        b.append(grid.dv ** 2 / (2 * sigma * s_max))
    if drift_max > 0:
        b.append(grid.dv / drift_max)
    return min(b)


def collision_coefficients(model: Model, state: KineticState):
    """(s(x), <u>(x)); vacuum columns use u = 0."""
    rho = state.measure()
    u = state.u
    s = strength(model, rho)
    avg = average(model, rho, u)
    return s, avg


def _split_step(state: KineticState, dt: float, coeffs, muscl: bool) -> KineticState:
    g = state.grid
    if dt > max_dt(g) * (1 + 1e-12):
        raise CFLError(dt, max_dt(g))
    f = transport_step(state.f, g, 0.5 * dt, muscl)
    mid = replace(state, f=f)
    s, w, sigma = coeffs(mid)
    f = velocity_step(f, g, s, w, sigma, dt)
    f = transport_step(f, g, 0.5 * dt, muscl)
    if np.min(f) < -NEGATIVE_TOL or not np.all(np.isfinite(f)):
        raise RuntimeError(f"scheme instability at t={state.t + dt:.6g}")
    return KineticState(np.maximum(f, 0.0), g, state.sigma, state.t + dt)


def fpa_step(model: Model, state: KineticState, dt: float, muscl: bool = False) -> KineticState:
    """One Strang step of the Fokker-Planck-Alignment equation."""
    def coeffs(st):
        s, avg = collision_coefficients(model, st)
        return s, avg, st.sigma
    return _split_step(state, dt, coeffs, muscl)


def penalized_step(model: Model, state: KineticState, dt: float, eps: float, delta: float,
                   muscl: bool = False) -> KineticState:
    """Step of the Vlasov equation with forced local alignment toward u_delta.

    The two drifts combine into strength s + 1/eps and target
    (eps s <u> + u_delta) / (eps s + 1); sigma is taken from the state (0 for the
    pure Vlasov problem).
    """
    def coeffs(st):
        s, avg = collision_coefficients(model, st)
        ud = mollified_velocity(st.u, st.measure(), delta)
        tot = s + 1.0 / eps
        w = (eps * s * avg + ud) / (eps * s + 1.0)
        return tot, w, st.sigma
    return _split_step(state, dt, coeffs, muscl)


def evolve(step, state: KineticState, T: float, dt: float | None = None, record_every: int = 10,
           diagnostics: bool = True):
    """Run ``step(state, dt)`` to T; returns (final state, diagnostics, snapshots)."""
    dt = dt or 0.9 * max_dt(state.grid)
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / n
    diag = KineticDiagnostics(sigma=state.sigma)
    snaps = [state]
    if diagnostics:
        diag.record(state)
    for k in range(1, n + 1):
        state = step(state, dt)
        if k % record_every == 0 or k == n:
            snaps.append(state)
            if diagnostics:
                diag.record(state)
    return state, diag, snaps


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def fit_rate(t, H, tail: float = 0.5, floor: float = 1e-12):
    """Least-squares slope of log H over the final ``tail`` fraction with H > floor."""
    t, H = np.asarray(t), np.asarray(H)
    keep = t >= t[0] + (1 - tail) * (t[-1] - t[0])
    keep &= H > floor
    if keep.sum() < 3:
        return float("nan"), float("nan")
    p = np.polyfit(t[keep], np.log(H[keep]), 1)
    resid = np.log(H[keep]) - np.polyval(p, t[keep])
    ss = np.sum((np.log(H[keep]) - np.log(H[keep]).mean()) ** 2)
    return float(p[0]), float(1 - resid @ resid / ss) if ss > 0 else 1.0


@dataclass
class RelaxationResult:
    diagnostics: KineticDiagnostics
    rate: float
    r2: float
    final: KineticState

    @property
    def monotone_after(self):
        t, H = np.asarray(self.diagnostics.t), np.asarray(self.diagnostics.H)
        return lambda t0, tol=0.0: bool(np.all(np.diff(H[t >= t0]) <= tol))


def relax_experiment(model: Model, f0: KineticState, T: float, dt: float | None = None,
                     record_every: int = 20, muscl: bool = False) -> RelaxationResult:
    final, diag, _ = evolve(lambda s, h: fpa_step(model, s, h, muscl), f0, T, dt, record_every)
    rate, r2 = fit_rate(diag.t, diag.H)
    return RelaxationResult(diag, rate, r2, final)


def entropy_law_audit(model: Model, diag: KineticDiagnostics, tol: float = 1e-6):
    """Per-record residuals of the entropy law.

    Conservative models: r_k = H_k - H_{k-1} (should be <= tol * H_0).
    Otherwise: the exponential envelope H <= H_0 e^{C t} with the smallest C, and
    r_k = H_k - H_0 e^{C t_k} (<= 0 by construction).
    """
    t, H = np.asarray(diag.t), np.asarray(diag.H)
    scale = max(H[0], 1e-300)
    if model.flags.get("conservative"):
        res = np.diff(H) / scale
        return {"kind": "monotone", "residuals": res, "ok": bool(np.all(res <= tol))}
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.where(t > t[0], np.log(np.maximum(H, 1e-300) / scale) / (t - t[0]), -np.inf)
    C = float(max(np.max(rates), 0.0))
    res = H - scale * np.exp(C * (t - t[0]))
    return {"kind": "envelope", "C": C, "residuals": res, "ok": bool(np.all(res <= tol * scale))}


def monokinetic_w2(state: KineticState, rho, u) -> float:
    """Upper bound on W2(f, rho (x) delta_u) from an explicit coupling.

    The x-marginals are coupled by the monotone (quantile) rearrangement on [0, L)
    with minimal-image cost; mass moved from column i to target cell k brings its
    whole velocity profile to u_k.
    """
    g = state.grid
    a = state.rho * g.dx
    a = a / a.sum()
    b = np.asarray(rho, dtype=float) * g.dx
    b = b / b.sum()
    ca, cb = np.cumsum(a), np.cumsum(b)
    ca[-1] = cb[-1] = 1.0
    t = np.union1d(ca, cb)
    t = t[t > 0]
    lengths = np.diff(np.concatenate([[0.0], t]))
    mid = t - 0.5 * lengths
    i = np.minimum(np.searchsorted(ca, mid), g.nx - 1)
    k = np.minimum(np.searchsorted(cb, mid), g.nx - 1)
    dx = torus(g.L).displacement(g.x[i], g.x[k])
    col = state.f / np.maximum(state.f.sum(axis=1, keepdims=True), 1e-300)  # v-profile weights
    u = np.asarray(u, dtype=float)
    # E|v - u_k|^2 under column i = var_i + (mean_i - u_k)^2
    mean = col @ g.v
    var = col @ g.v ** 2 - mean ** 2
    cost = dx ** 2 + np.maximum(var[i], 0.0) + (mean[i] - u[k]) ** 2
    return float(math.sqrt(np.sum(lengths * cost)))


@dataclass
class MonokineticResult:
    eps: list
    w2: list
    slope: float
    T: float

    @property
    def decreasing(self) -> bool:
        # eps is listed in decreasing order
        return bool(np.all(np.diff(self.w2) < 0))


def monokinetic_experiment(model: Model, rho0, u0, eps_list, T: float = 1.0,
                           delta_rule=lambda e: e * e, nx: int = 128, nv: int = 256,
                           L: float = 1.0, muscl: bool = False, cfl: float = 0.9) -> MonokineticResult:
    """W2 distance at T between the penalized kinetic solution and the hydro reference.

    f0^eps = rho0(x) N(u0(x), eps^2) so that W2(f0^eps, f0) = eps.
    """
    from .hydro import HydroState, run_hydro
    eps_list = [float(e) for e in eps_list]
    if min(eps_list) < 0.05:
        raise ValueError("epsilon below 0.05 is outside the supported range")
    x = (np.arange(nx) + 0.5) * L / nx
    umax = float(np.max(np.abs(u0(x))))
    hyd = HydroState.from_functions(rho0, u0, n=nx, L=L)
    ref = run_hydro(model, hyd, T, record_every=10 ** 9, sentinel=False)
    if ref.blowup is not None:
        raise RuntimeError("hydro reference blew up")
    end = ref.states[-1]
    w2 = []
    for eps in eps_list:
        grid = PhaseGrid(nx, nv, L, umax + 6.0 * eps + 0.5)
        f0 = from_profiles(rho0, lambda xx, vv: np.exp(-0.5 * ((vv - u0(xx)) / eps) ** 2), grid, 0.0)
        dt = cfl * max_dt(grid)
        fin, _, _ = evolve(lambda s, h: penalized_step(model, s, h, eps, delta_rule(eps), muscl),
                           f0, T, dt, record_every=10 ** 9, diagnostics=False)
        w2.append(monokinetic_w2(fin, end.rho, end.u))
    slope = float(np.polyfit(np.log(eps_list), np.log(w2), 1)[0]) if len(eps_list) > 1 else float("nan")
    return MonokineticResult(eps_list, w2, slope, T)
