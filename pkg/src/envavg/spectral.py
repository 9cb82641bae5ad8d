"""kappa-energies, spectral gaps and thickness-based lower bounds."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import null_space

from .finite import FiniteModel, numerical_range_max
from .measures import Kernel, Measure, ball_thickness
from .models import Model, average, finite_reduction, kappa, kernel_matrix

CONSTANTS_FILE = Path(__file__).with_name("data") / "gap_constants.json"


def energies(model: Model, rho: Measure, u):
    """E0 = (u,u)_kappa, E1 = (u,<u>)_kappa, E2 = (<u>,<u>)_kappa."""
    u = np.asarray(u, dtype=float)
    kap = kappa(model, rho)
    a = average(model, rho, u)
    U, Av = u.reshape(rho.n, -1), a.reshape(rho.n, -1)
    E0 = float(np.sum(kap[:, None] * U * U))
    E1 = float(np.sum(kap[:, None] * U * Av))
    E2 = float(np.sum(kap[:, None] * Av * Av))
    return E0, E1, E2


def _reduce(model: Model, rho: Measure):
    fm, keep = finite_reduction(model, rho)
    return fm, rho.weights[keep], keep


def spectral_gap(model: Model, rho: Measure, flavor: str = "numerical_range") -> float:
    """epsilon (numerical range on zero rho-momentum fields) or the variational lambda."""
    if flavor == "numerical_range":
        fm, m, _ = _reduce(model, rho)
        return 1.0 - numerical_range_max(fm, m)
    if flavor == "variational_lambda":
        return variational_lambda(model, rho)
    raise ValueError(f"unknown gap flavor {flavor!r}")


def variational_lambda(model: Model, rho: Measure) -> float:
    """inf over rho-mean-zero u of (u, s(u - <u>))_rho / (u, u)_rho."""
    fm, m, _ = _reduce(model, rho)
    KA = fm.KA
    B = np.diag(fm.kappa) - 0.5 * (KA + KA.T)
    sq = np.sqrt(m)
    M = B / sq[:, None] / sq[None, :]
    Q = null_space(sq[None, :])
    return float(np.linalg.eigvalsh(Q.T @ M @ Q)[0])


def extremal_field(model: Model, rho: Measure):
    """Zero-momentum field attaining the numerical-range maximum (unit kappa-norm)."""
    fm, m, keep = _reduce(model, rho)
    sq = np.sqrt(fm.kappa)
    S = 0.5 * (fm.KA + fm.KA.T) / sq[:, None] / sq[None, :]
    Q = null_space((m / sq)[None, :])
    _, vec = np.linalg.eigh(Q.T @ S @ Q)
    u = np.zeros(rho.n)
    u[keep] = (Q @ vec[:, -1]) / sq
    return u


# ---------------------------------------------------------------------------
# low-energy bounds
# ---------------------------------------------------------------------------

@dataclass
class GapReport:
    model: str
    law: str
    E0: float
    E1: float
    E2: float
    A0: float
    A1: float
    eps_measured: float
    eps_bound: float
    lambda_measured: float
    thickness: float
    radius: float
    exponent: int
    constant: float
    ok: bool = field(default=False)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _law(model: Model):
    """(law name, thickness radius, exponent) for the ball-positive families."""
    if model.kind == "overmollified":
        r0 = model.locality
        return "rho_bar", r0 / 2, 1
    if model.kind == "cucker_smale" and model.kernel.profile == "bochner":
        r0 = model.kernel.psi.locality
        return "rho_bar^3", r0 / 2, 3
    if model.kind == "segregation":
        L = model.partition.count
        return f"rho_bar^{2 * L}", model.partition.overlap_radius, 2 * L
    raise ValueError("low-energy method inapplicable")


def model_signature(model: Model) -> str:
    parts = [model.kind]
    if model.kernel is not None:
        parts.append(model.kernel.describe())
    if model.partition is not None:
        parts.append(f"partition(count={model.partition.count}, radius={model.partition.radius:.6g})")
    if model.kind == "overmollified":
        parts.append(f"nodes={model.quad_nodes}")
    return " | ".join(parts)


def load_constants(path: Path = CONSTANTS_FILE) -> dict:
    if Path(path).exists():
        return json.loads(Path(path).read_text())
    return {}


def calibrate_constant(model: Model, uniform: Measure) -> float:
    """c = eps(uniform) / rho_bar(uniform)^p for the model's law."""
    _, r, p = _law(model)
    eps = spectral_gap(model, uniform)
    th = ball_thickness(uniform, r)
    return eps / th ** p


def gap_constant(model: Model, uniform: Measure, path: Path = CONSTANTS_FILE) -> float:
    """Frozen constant for the model, calibrating (and storing) it when missing."""
    table = load_constants(path)
    key = f"{model_signature(model)} | L={uniform.domain.length:g} | cells={uniform.n}"
    if key not in table:
        table[key] = calibrate_constant(model, uniform)
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(json.dumps(table, indent=2, sort_keys=True))
        except OSError:
            pass
    return float(table[key])


def low_energy_bounds(model: Model, rho: Measure, constant: float | None = None) -> GapReport:
    """Measured gap against the thickness lower bound c * rho_bar_r(Omega)^p."""
    law, r, p = _law(model)
    if not rho.is_grid:
        raise ValueError("low-energy bounds are evaluated on grid measures")
    if constant is None:
        constant = gap_constant(model, Measure.uniform(rho.domain, int(round(1 / rho.cell))))
    eps = spectral_gap(model, rho)
    lam = variational_lambda(model, rho)
    th = ball_thickness(rho, r)
    bound = constant * th ** p
    u = extremal_field(model, rho)
    E0, E1, E2 = energies(model, rho, u)
    return GapReport(model.name, law, E0, E1, E2, E0 - E1, E1 - E2, eps, bound, lam,
                     th, r, p, constant, eps >= bound * (1 - 1e-12))


# ---------------------------------------------------------------------------
# flatness and Motsch-Tadmor criteria
# ---------------------------------------------------------------------------

def fourier_sup(phi: Kernel, rho: Measure) -> float:
    """c0 = sup_{k != 0} |phi_hat(k)| from the DFT of phi sampled on the grid of rho.

    phi is rescaled to unit discrete mass on the grid, so phi_hat(0) = 1 exactly.
    """
    d = rho.domain.pairwise(rho.points[:1], rho.points)[0]
    hat = np.fft.fft(phi(d))
    return float(np.max(np.abs(hat[1:])) / abs(hat[0].real))


def cs_flatness_gap(rho: Measure, phi: Kernel):
    """1 - c0 ||rho / rho_phi||_inf for a mollifier phi, or 'inapplicable'."""
    if not rho.is_grid or rho.dim != 1:
        raise ValueError("flatness gap needs a 1D grid measure")
    c0 = fourier_sup(phi, rho)
    if c0 >= 1:
        return "inapplicable"
    K = phi(rho.pairwise())
    rphi = K @ rho.weights / (K[0].sum() * rho.cell)   # unit discrete mass
    ratio = np.max(rho.density / rphi)
    eps = 1.0 - c0 * ratio
    return float(eps) if eps > 0 else "inapplicable"


def _rho_extrema(rho: Measure):
    d = rho.density
    return float(d.min()), float(d.max())


def mt_constant(phi: Kernel, uniform: Measure) -> float:
    """Calibrated c with lambda = c rho_-^2 / rho_+ at the uniform density."""
    from .models import motsch_tadmor
    lam = variational_lambda(motsch_tadmor(phi), uniform)
    lo, hi = _rho_extrema(uniform)
    return lam / (lo * lo / hi)


def mt_gap_condition(rho: Measure, phi: Kernel, c: float | None = None):
    """Small-variation criterion rho_+ - rho_- <= c rho_-^3 / rho_+ for MT averaging.

    Returns (condition holds, predicted lower bound (c/2) rho_-^2/rho_+, eigensolver
    lambda).  The factor 1/2 is what survives once the small-variation term is
    absorbed into the symmetric dissipation.
    """
    from .models import motsch_tadmor
    if c is None:
        c = mt_constant(phi, Measure.uniform(rho.domain, int(round(1 / rho.cell))))
    lo, hi = _rho_extrema(rho)
    holds = (hi - lo) <= c * lo ** 3 / hi
    lam_pred = 0.5 * c * lo * lo / hi
    lam = variational_lambda(motsch_tadmor(phi), rho)
    return bool(holds), float(lam_pred), float(lam)


# ---------------------------------------------------------------------------
# structural identities
# ---------------------------------------------------------------------------

def overmollified_alignment_identity(model: Model, rho: Measure, u):
    """A1 two ways for the overmollified model: E1 - E2 from ``energies``, and
    1/2 sum_{z,z'} rho_phiphi(z, z') |u_F(z) - u_F(z')|^2 h_z h_z' on the z grid.

    rho_phiphi(z, z') = sum_i m_i phi(z - x_i) phi(z' - x_i) / n(x_i), with n the
    discrete kernel mass used as the strength (n = 1 for a mollifier).
    """
    from .models import _overmollified_parts, _safe_div, _z_nodes
    if model.kind != "overmollified":
        raise ValueError("identity applies to the overmollified model")
    u = np.asarray(u, dtype=float).reshape(rho.n, -1)
    E0, E1, E2 = energies(model, rho, u if u.shape[1] > 1 else u[:, 0])
    z, hz = _z_nodes(model, rho)
    m = rho.weights
    Kz = model.kernel(rho.domain.pairwise(z, rho.points))       # phi(z - x_i)
    mass = Kz.sum(axis=0) * hz
    rphi = Kz @ m
    uF = _safe_div(Kz @ (m[:, None] * u), rphi[:, None])
    R = (Kz * _safe_div(m, mass)[None, :]) @ Kz.T                 # rho_phiphi on z x z
    sq = np.sum(uF * uF, axis=1)
    diff2 = sq[:, None] + sq[None, :] - 2 * uF @ uF.T
    quad = 0.5 * float(np.sum(R * np.maximum(diff2, 0.0))) * hz * hz
    return E1 - E2, quad


def nested_favre_average(psi: Kernel, rho: Measure, u, nodes: int = 8192) -> np.ndarray:
    """Two successive Favre filtrations with psi, evaluated at the atoms.

    v = (u rho)_psi / rho_psi and varrho = rho_psi on a fine xi grid, then
    (v varrho)_psi / varrho_psi.  With phi = psi * psi this is the CS average.
    """
    from .models import _safe_div
    dom = rho.domain
    if dom.dim != 1:
        raise ValueError("nested Favre composition is implemented in 1D")
    u = np.asarray(u, dtype=float).reshape(rho.n, -1)
    if dom.periodic:
        h = dom.length / nodes
        xi = (np.arange(nodes) + 0.5) * h
    else:
        R = psi.support if math.isfinite(psi.support) else 12.0 * psi.locality
        lo, hi = rho.x.min() - R, rho.x.max() + R
        h = (hi - lo) / nodes
        xi = lo + (np.arange(nodes) + 0.5) * h
    P = psi(dom.pairwise(xi[:, None], rho.points))               # psi(xi - x_j)
    m = rho.weights
    varrho = P @ m
    v = _safe_div(P @ (m[:, None] * u), varrho[:, None])
    Q = P.T * h                                                    # psi(x_i - xi) d xi
    out = _safe_div(Q @ (v * varrho[:, None]), (Q @ varrho)[:, None])
    return out.reshape((rho.n,) + np.shape(u)[1:]) if out.shape[1] > 1 else out[:, 0]
