"""1D pressureless Euler-alignment on a periodic grid, the e-quantity, and strength transport."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .measures import Measure, torus
from .models import Model, alignment_force, average, strength

VACUUM = 1e-14


class BlowUpError(RuntimeError):
    def __init__(self, t: float, x: float, grad: float):
        super().__init__(f"blow-up detected at t={t:.6g} (x={x:.6g}, max|u_x|={grad:.6g})")
        self.t, self.x, self.grad = t, x, grad


@dataclass(frozen=True, eq=False)
class HydroState:
    """Cell averages of density and velocity on [0, L); ``s`` is an optional transported strength."""

    rho: np.ndarray
    u: np.ndarray
    t: float = 0.0
    L: float = 1.0
    s: np.ndarray | None = None

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).copy()
        u = np.asarray(self.u, dtype=float).copy()
        if rho.shape != u.shape or rho.ndim != 1:
            raise ValueError("rho and u must be 1D arrays of equal length")
        if np.any(rho < -1e-12):
            raise ValueError("density must be non-negative")
        object.__setattr__(self, "rho", np.maximum(rho, 0.0))
        object.__setattr__(self, "u", u)
        if self.s is not None:
            object.__setattr__(self, "s", np.asarray(self.s, dtype=float).copy())

    @classmethod
    def from_functions(cls, rho0, u0, n: int = 256, L: float = 1.0, s0=None) -> "HydroState":
        x = (np.arange(n) + 0.5) * L / n
        rho = np.asarray(rho0(x), dtype=float) * np.ones(n)
        rho = rho / (rho.sum() * L / n)
        s = None if s0 is None else np.asarray(s0(x), dtype=float) * np.ones(n)
        return cls(rho, np.asarray(u0(x), dtype=float) * np.ones(n), 0.0, L, s)

    @property
    def n(self) -> int:
        return len(self.rho)

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.dx

    @property
    def mass(self) -> float:
        return float(self.rho.sum() * self.dx)

    @property
    def momentum(self) -> float:
        return float((self.rho * self.u).sum() * self.dx)

    @property
    def energy(self) -> float:
        return 0.5 * float((self.rho * self.u ** 2).sum() * self.dx)

    def measure(self) -> Measure:
        w = self.rho * self.dx
        return Measure(torus(self.L), self.x, w / w.sum(), cell=self.dx)

    def to_csv(self, path, model: Model | None = None) -> None:
        e = e_quantity(model, self) if (model is not None or self.s is not None) else None
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "rho", "u", "e", "s"])
            for i in range(self.n):
                w.writerow([repr(self.x[i]), repr(self.rho[i]), repr(self.u[i]),
                            "" if e is None else repr(e[i]),
                            "" if self.s is None else repr(self.s[i])])


def central_gradient(u, dx):
    return (np.roll(u, -1) - np.roll(u, 1)) / (2 * dx)


def forward_gradient(u, dx):
    return (np.roll(u, -1) - u) / dx


def e_quantity(model: Model | None, state: HydroState) -> np.ndarray:
    """e = u_x + s, with s the transported strength if present, else s_rho of the model."""
    s = state.s if state.s is not None else strength(model, state.measure())
    return central_gradient(state.u, state.dx) + s


def _extend_vacuum(u, rho):
    """Nearest-neighbour extension of u into vacuum cells."""
    occ = rho >= VACUUM
    if occ.all() or not occ.any():
        return u
    idx = np.flatnonzero(occ)
    n = len(u)
    pos = np.arange(n)
    # periodic nearest occupied cell
    d = np.abs(pos[:, None] - idx[None, :])
    d = np.minimum(d, n - d)
    return np.where(occ, u, u[idx[np.argmin(d, axis=1)]])


def _upwind_flux(q, a_face):
    """Flux at faces i+1/2 of the quantity q advected by face velocity a_face."""
    return np.where(a_face >= 0, a_face * q, a_face * np.roll(q, -1))


def _divergence(F, dx):
    return (F - np.roll(F, 1)) / dx


def _faces(v):
    return 0.5 * (v + np.roll(v, -1))


def _velocity(rho, mom):
    u = np.divide(mom, rho, out=np.zeros_like(mom), where=rho >= VACUUM)
    return _extend_vacuum(u, rho)


def _rhs(model: Model, rho, mom, s, L, dx, transport_strength: bool):
    u = _velocity(rho, mom)
    uf = _faces(u)
    drho = -_divergence(_upwind_flux(rho, uf), dx)
    dmom = -_divergence(_upwind_flux(mom, uf), dx)
    w = rho * dx
    rho_m = Measure(torus(L), (np.arange(len(rho)) + 0.5) * dx, w / w.sum(), cell=dx)
    if transport_strength:
        avg = average(model, rho_m, u)
        dmom = dmom + rho * s * (avg - u)
        ds = -_divergence(_upwind_flux(s, _faces(avg)), dx)
    else:
        F = alignment_force(model, rho_m, u)
        F = np.where(rho >= VACUUM, F, 0.0) if model.material else F
        dmom = dmom + rho * F
        ds = None
    return drho, dmom, ds


def _advance(model: Model, state: HydroState, dt: float, transport_strength: bool,
             sentinel: bool = True) -> HydroState:
    dx = state.dx
    umax = float(np.max(np.abs(state.u)))
    if dt * umax > dx * (1 + 1e-12):
        raise ValueError(f"CFL violated: dt={dt:.6g} > dx/max|u| = {dx / max(umax, 1e-300):.6g}")
    if transport_strength and state.s is None:
        raise ValueError("strength transport needs an initial strength s")
    rho0, mom0, s0 = state.rho, state.rho * state.u, state.s
    k1 = _rhs(model, rho0, mom0, s0, state.L, dx, transport_strength)
    rho1 = rho0 + dt * k1[0]
    mom1 = mom0 + dt * k1[1]
    s1 = s0 + dt * k1[2] if transport_strength else s0
    k2 = _rhs(model, rho1, mom1, s1, state.L, dx, transport_strength)
    rho2 = 0.5 * (rho0 + rho1 + dt * k2[0])
    mom2 = 0.5 * (mom0 + mom1 + dt * k2[1])
    s2 = 0.5 * (s0 + s1 + dt * k2[2]) if transport_strength else s0
    if np.any(rho2 < -1e-12) or not np.all(np.isfinite(mom2)):
        raise RuntimeError(f"scheme instability at t={state.t + dt:.6g}")
    rho2 = np.maximum(rho2, 0.0)
    new = HydroState(rho2, _velocity(rho2, mom2), state.t + dt, state.L, s2)
    if sentinel:
        g = np.abs(forward_gradient(new.u, dx))
        k = int(np.argmax(g))
        if g[k] > 1.0 / (10 * dx):
            raise BlowUpError(new.t, float(new.x[k] + 0.5 * dx), float(g[k]))
    return new


def eas_step(model: Model, state: HydroState, dt: float, sentinel: bool = True) -> HydroState:
    """One SSP-RK2 step: upwind finite volumes for rho and rho u, alignment source rho s(<u> - u)."""
    return _advance(model, state, dt, False, sentinel)


def eas_strength_transport_step(model: Model, state: HydroState, dt: float,
                                sentinel: bool = True) -> HydroState:
    """As ``eas_step`` but with s an unknown transported by the model average: s_t + (s<u>)_x = 0."""
    return _advance(model, state, dt, True, sentinel)


@dataclass
class HydroRun:
    states: list = field(default_factory=list)
    blowup: BlowUpError | None = None
    dt: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def blowup_time(self) -> float | None:
        return None if self.blowup is None else self.blowup.t

    def series(self, fn) -> np.ndarray:
        return np.array([fn(s) for s in self.states])


def stable_dt(model: Model, state: HydroState, cfl: float = 0.4) -> float:
    """cfl * min(dx / max|u|, 1 / max s): transport CFL and the alignment relaxation rate."""
    umax = float(np.max(np.abs(state.u)))
    smax = float(np.max(state.s)) if state.s is not None else \
        float(np.max(strength(model, state.measure())))
    return cfl * min(state.dx / max(umax, 1e-12), 1.0 / max(smax, 1e-12))


def run_hydro(model: Model, state: HydroState, T: float, dt: float | None = None,
              cfl: float = 0.4, record_every: int = 10, transport_strength: bool = False,
              sentinel: bool = True) -> HydroRun:
    """Integrate to T (adaptive dt from the CFL number unless ``dt`` is fixed).

    A detected blow-up ends the run and is stored in ``blowup``.
    """
    out = HydroRun(states=[state])
    k = 0
    while state.t < T - 1e-12:
        h = dt if dt is not None else stable_dt(model, state, cfl)
        h = min(h, T - state.t)
        try:
            state = _advance(model, state, h, transport_strength, sentinel)
        except BlowUpError as exc:
            out.blowup = exc
            break
        k += 1
        if k % record_every == 0:
            out.states.append(state)
    if out.states[-1] is not state:
        out.states.append(state)
    out.dt = dt or 0.0
    return out


def e_quantity_audit(model: Model | None, run: HydroRun, characteristics: int = 8):
    """Residuals of the e-law: drift of int e dx, and of e/rho along characteristics.

    Characteristics are traced through the stored snapshots with the midpoint rule
    and periodic linear interpolation of u.
    """
    states = run.states
    ints = np.array([e_quantity(model, s).sum() * s.dx for s in states])
    integral_drift = float(np.max(np.abs(ints - ints[0])))
    s0 = states[0]
    X = (np.arange(characteristics) + 0.5) * s0.L / characteristics

    def interp(st, f, pts):
        xp = np.concatenate([st.x - st.L, st.x, st.x + st.L])
        return np.interp(np.mod(pts, st.L), xp, np.tile(f, 3))

    def ratio(st, pts):
        return interp(st, e_quantity(model, st), pts) / interp(st, st.rho, pts)

    r0 = ratio(s0, X)
    dev = 0.0
    for a, b in zip(states[:-1], states[1:]):
        h = b.t - a.t
        mid = X + 0.5 * h * interp(a, a.u, X)
        X = X + h * 0.5 * (interp(a, a.u, mid) + interp(b, b.u, mid))
        dev = max(dev, float(np.max(np.abs(ratio(b, X) - r0) / np.maximum(np.abs(r0), 1e-12))))
    return {"integral_drift": integral_drift, "lagrangian_ratio_drift": dev}


def strength_ratio_drift(model: Model, run: HydroRun) -> float:
    """Relative drift of min and max of s / rho_phi over the run (CS-type kernels)."""
    from .measures import convolve

    def bounds(st):
        rphi = convolve(st.measure(), model.kernel)
        r = st.s / rphi
        return r.min(), r.max()

    lo0, hi0 = bounds(run.states[0])
    lo, hi = np.array([bounds(s) for s in run.states]).T
    return float(max(np.max(np.abs(lo - lo0)) / abs(lo0), np.max(np.abs(hi - hi0)) / abs(hi0)))


def translate(state: HydroState, c: float, t: float) -> HydroState:
    """Exact translated solution for constant velocity c (spectral shift)."""
    k = np.fft.fftfreq(state.n, d=state.dx)
    rho = np.real(np.fft.ifft(np.fft.fft(state.rho) * np.exp(-2j * np.pi * k * c * t)))
    return replace(state, rho=rho, t=state.t + t)
