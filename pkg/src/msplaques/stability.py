"""Linear stability machinery around the homogeneous equilibrium: Routh-Hurwitz
coefficients, Hopf boundary, dispersion relation of the diffusion-chemotaxis
coupling, Turing threshold, per-mode growth rates, and the bifurcation diagram
in the (theta, xi) plane.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import EquilibriumPoint, ModelParams, equilibrium, admissibility_bounds


@dataclass(frozen=True)
class LinearizedSystem:
    """Jacobian A and diffusion matrix D of the linearized field equations,
    rows/columns ordered (A, S, R, C, E)."""

    A_matrix: np.ndarray
    D_matrix: np.ndarray


def linearize(params: ModelParams, eq: EquilibriumPoint | None = None) -> LinearizedSystem:
    """Build the 5x5 Jacobian and diffusion matrices at the equilibrium.

    The cytokine row is (0, 0, 1, -tau, 0): the production line is linearized
    with the equilibrium-normalized coupling (see the pde module for the
    matching simulator variant).
    """
    p = params
    if eq is None:
        eq = equilibrium(p)
    if not eq.admissible:
        raise ValueError(f"equilibrium not admissible: violates {list(eq.violated_conditions)}")
    R1 = eq.R1
    A = np.zeros((5, 5))
    # (A,S,R) interaction block
    A[0, 0] = -p.mu
    A[0, 1] = -1.0 / p.mu
    A[0, 2] = p.beta / p.mu
    A[1, 0] = (p.eta - p.theta * p.mu) / p.phi
    A[2, 0] = R1 * p.eta
    A[2, 1] = -R1 * p.phi
    # cytokine row
    A[3, 2] = 1.0
    A[3, 3] = -p.tau
    # myelin row
    A[4, 2] = (R1 * p.Theta_cap * p.Xi_cap * (R1 + 2.0 * p.Omega_cap)
               / ((R1 + p.Omega_cap) * (R1 * (R1 * p.Theta_cap + p.Xi_cap)
                                        + p.Xi_cap * p.Omega_cap)))
    A[4, 4] = -p.Xi_cap - R1 * R1 * p.Theta_cap / (R1 + p.Omega_cap)

    sq = p.squeeze_pair
    D = np.zeros((5, 5))
    D[2, 2] = sq.phi0(R1)
    D[2, 3] = -p.xi * sq.phi1(R1) * R1
    D[3, 3] = p.delta
    return LinearizedSystem(A_matrix=A, D_matrix=D)


@dataclass(frozen=True)
class RouthHurwitz:
    A1: float
    A2: float
    A3: float
    homogeneous_stable: bool


def routh_hurwitz(params: ModelParams) -> RouthHurwitz:
    """Cubic coefficients of the (A,S,R) interaction block and the stability verdict.

    Evaluated formally from the equilibrium expression even when the
    equilibrium is inadmissible (bifurcation scans probe such regions).
    """
    p = params
    R1 = equilibrium(p).R1
    A1 = p.mu
    A2 = -R1 * p.beta * p.eta / p.mu - p.theta / p.phi + p.eta / (p.mu * p.phi)
    A3 = R1 * p.beta * (p.eta - p.theta * p.mu) / p.mu
    stable = (A1 > 0) and (A3 > 0) and (A1 * A2 > A3)
    return RouthHurwitz(A1, A2, A3, stable)


def theta_hopf(params: ModelParams) -> tuple[float, float] | None:
    """Roots (theta_minus, theta_plus) of A1*A2 = A3 along theta, or None if complex."""
    p = params
    disc = (p.eta ** 2 + 2.0 * p.eta * p.mu * (p.phi - 1.0) - 2.0 * p.zeta * p.eta * p.phi
            + (p.mu - p.zeta * p.phi + p.mu * p.phi) ** 2)
    if disc < 0:
        return None
    mid = p.eta / p.mu + 0.5 * (-p.mu * (1.0 + p.phi) + (p.eta + p.zeta * p.phi))
    half = 0.5 * math.sqrt(disc)
    return mid - half, mid + half


def hopf_period(params: ModelParams) -> float | None:
    """Linear oscillation period 2*pi/sqrt(A2); None when A2 <= 0."""
    A2 = routh_hurwitz(params).A2
    if A2 <= 0:
        return None
    return 2.0 * math.pi / math.sqrt(A2)


def _dispersion_coeffs(params: ModelParams) -> tuple[float, float, float]:
    """(quartic, quadratic, constant) coefficients of h as a polynomial in k^2."""
    p = params
    R1 = equilibrium(p).R1
    sq = p.squeeze_pair
    P0, P1 = sq.phi0(R1), sq.phi1(R1)
    a = p.delta * P0
    b = p.delta * R1 * p.beta * p.phi - P1 * R1 * p.xi + P0 * p.tau
    c = p.tau * R1 * p.beta * p.phi
    return a, b, c


def dispersion_h(k2, params: ModelParams):
    """h(k^2): negative values signal a positive real eigenvalue at wavenumber k."""
    a, b, c = _dispersion_coeffs(params)
    k2 = np.asarray(k2, dtype=float)
    out = a * k2 * k2 + b * k2 + c
    return out if out.ndim else float(out)


def dispersion_vertex(params: ModelParams) -> tuple[float, float]:
    """(k2_star, h(k2_star)): minimizer of the quadratic-in-k^2 dispersion polynomial."""
    a, b, c = _dispersion_coeffs(params)
    k2_star = max(0.0, -b / (2.0 * a))
    return k2_star, a * k2_star * k2_star + b * k2_star + c


def turing_threshold_xi(params: ModelParams) -> float | None:
    """Critical chemotaxis strength: instability iff xi > xi_star (strict).

    None when phi1(R1)*R1 = 0, where no chemotactic destabilization is possible.
    """
    p = params
    R1 = equilibrium(p).R1
    sq = p.squeeze_pair
    if not 0 < R1:
        return None
    P0, P1 = sq.phi0(R1), sq.phi1(R1)
    if P1 * R1 <= 0:
        return None
    dbf = p.delta * R1 * p.beta * p.phi
    pt = P0 * p.tau
    return (2.0 * math.sqrt(p.delta * P0 * p.tau * R1 * p.beta * p.phi) + dbf + pt) / (P1 * R1)


def neumann_modes(L: float, m_max: int) -> np.ndarray:
    """Discrete zero-flux wavenumbers k_m = m*pi/L for m = 0..m_max."""
    return np.arange(m_max + 1) * math.pi / L


@dataclass(frozen=True)
class GrowthRates:
    k: np.ndarray                 # wavenumbers
    eigenvalues: np.ndarray       # complex, shape (len(k), 5)
    max_re: np.ndarray            # shape (len(k),)
    unstable: np.ndarray          # boolean mask, max_re > 0

    @property
    def unstable_band(self) -> np.ndarray:
        return self.k[self.unstable]

    def fastest_mode_index(self) -> int:
        return int(np.argmax(self.max_re))


def growth_rates(params: ModelParams, k_list) -> GrowthRates:
    """Eigenvalues of A - k^2 D for every wavenumber in k_list."""
    lin = linearize(params)
    k = np.atleast_1d(np.asarray(k_list, dtype=float))
    mats = lin.A_matrix[None, :, :] - (k ** 2)[:, None, None] * lin.D_matrix[None, :, :]
    eig = np.linalg.eigvals(mats)
    if not np.all(np.isfinite(eig)):
        bad = k[~np.all(np.isfinite(eig), axis=1)][0]
        raise ArithmeticError(f"eigenvalue solve failed at k = {bad}")
    max_re = eig.real.max(axis=1)
    return GrowthRates(k=k, eigenvalues=eig, max_re=max_re, unstable=max_re > 0.0)


# ---------------------------------------------------------------------------
# Classification and reporting
# ---------------------------------------------------------------------------

CLASS_INADMISSIBLE = "inadmissible"
CLASS_HOMOGENEOUS_UNSTABLE = "homogeneous-unstable"
CLASS_STABLE = "stable"
CLASS_TURING = "turing"


def classify_point(params: ModelParams) -> str:
    """Classify one parameter point for the bifurcation diagram."""
    if not equilibrium(params).admissible:
        return CLASS_INADMISSIBLE
    if not routh_hurwitz(params).homogeneous_stable:
        return CLASS_HOMOGENEOUS_UNSTABLE
    xi_star = turing_threshold_xi(params)
    if xi_star is not None and params.xi > xi_star:
        return CLASS_TURING
    return CLASS_STABLE


@dataclass
class StabilityReport:
    A1: float
    A2: float
    A3: float
    theta_minus: float | None
    theta_plus: float | None
    theta_bar: float
    theta_bar_minus_beta_phi: float
    xi_star: float | None
    hopf_period: float | None
    homogeneous_stable: bool
    turing_unstable: bool
    equilibrium_admissible: bool
    eigen_band_nonempty: bool
    criteria_agree: bool
    dispersion: list = field(default_factory=list)  # rows (k2, h, max Re lambda)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["dispersion"] = [list(map(float, row)) for row in self.dispersion]
        return d


def stability_report(params: ModelParams, L: float = 7 * math.pi,
                     m_max: int = 40) -> StabilityReport:
    """Full report at one parameter point, with the dispersion curve sampled on
    the discrete zero-flux modes of a domain of length L.

    The closed-form Turing criterion (sign of min h) and the eigenvalue band
    from growth_rates are both reported; disagreement is surfaced via
    ``criteria_agree`` instead of being merged.
    """
    eq = equilibrium(params)
    rh = routh_hurwitz(params)
    th = theta_hopf(params)
    tbar, tbar_m = admissibility_bounds(params)
    xi_star = turing_threshold_xi(params) if eq.admissible else None
    turing = (eq.admissible and rh.homogeneous_stable
              and xi_star is not None and params.xi > xi_star)

    dispersion: list = []
    band_nonempty = False
    if eq.admissible:
        k = neumann_modes(L, m_max)
        gr = growth_rates(params, k)
        h = dispersion_h(k ** 2, params)
        dispersion = [(float(ki ** 2), float(hi), float(mi))
                      for ki, hi, mi in zip(k, h, gr.max_re)]
        band_nonempty = bool(np.any(gr.unstable & (k > 0)))
    agree = (not eq.admissible) or (not rh.homogeneous_stable) or (turing == band_nonempty)

    return StabilityReport(
        A1=rh.A1, A2=rh.A2, A3=rh.A3,
        theta_minus=None if th is None else th[0],
        theta_plus=None if th is None else th[1],
        theta_bar=tbar, theta_bar_minus_beta_phi=tbar_m,
        xi_star=xi_star,
        hopf_period=hopf_period(params),
        homogeneous_stable=rh.homogeneous_stable,
        turing_unstable=turing,
        equilibrium_admissible=eq.admissible,
        eigen_band_nonempty=band_nonempty,
        criteria_agree=agree,
        dispersion=dispersion,
    )


@dataclass
class BifurcationDiagram:
    theta: np.ndarray             # grid axis values
    xi: np.ndarray
    classes: np.ndarray           # shape (len(xi), len(theta)), dtype <U
    theta_bar: float
    theta_bar_minus_beta_phi: float
    theta_plus: float | None
    xi_star_curve: np.ndarray     # shape (len(theta),), NaN where undefined


def bifurcation_diagram(params_base: ModelParams, theta_range, xi_range,
                        resolution, threads: int = 1) -> BifurcationDiagram:
    """Classify a (theta, xi) grid and emit the boundary curves.

    resolution is (n_theta, n_xi) or a single int for both axes; columns are
    evaluated independently (theta fixed per column) and joined in input order.
    """
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    n_theta, n_xi = resolution
    if n_theta < 2 or n_xi < 2:
        raise ValueError("resolution must be >= 2 per axis")
    thetas = np.linspace(theta_range[0], theta_range[1], n_theta)
    xis = np.linspace(xi_range[0], xi_range[1], n_xi)
    if not (np.all(np.isfinite(thetas)) and np.all(np.isfinite(xis))):
        raise ValueError("theta/xi ranges must be finite")

    def column(th: float) -> tuple[list[str], float]:
        if th <= 0:
            # theta must stay positive; probe just inside
            return [CLASS_INADMISSIBLE] * len(xis), math.nan
        p_th = params_base.replace(theta=th)
        eq = equilibrium(p_th)
        if not eq.admissible:
            return [CLASS_INADMISSIBLE] * len(xis), math.nan
        stable = routh_hurwitz(p_th).homogeneous_stable
        xi_star = turing_threshold_xi(p_th)
        col = []
        for xv in xis:
            if xv <= 0:
                # xi -> 0+ limit: no chemotactic destabilization
                col.append(CLASS_STABLE if stable else CLASS_HOMOGENEOUS_UNSTABLE)
            elif not stable:
                col.append(CLASS_HOMOGENEOUS_UNSTABLE)
            elif xi_star is not None and xv > xi_star:
                col.append(CLASS_TURING)
            else:
                col.append(CLASS_STABLE)
        return col, (math.nan if xi_star is None else xi_star)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(column, thetas))
    else:
        results = [column(th) for th in thetas]

    classes = np.empty((len(xis), len(thetas)), dtype=object)
    xi_star_curve = np.empty(len(thetas))
    for j, (col, xs) in enumerate(results):
        classes[:, j] = col
        xi_star_curve[j] = xs

    tbar, tbar_m = admissibility_bounds(params_base)
    th_pm = theta_hopf(params_base)
    return BifurcationDiagram(
        theta=thetas, xi=xis, classes=classes,
        theta_bar=tbar, theta_bar_minus_beta_phi=tbar_m,
        theta_plus=None if th_pm is None else th_pm[1],
        xi_star_curve=xi_star_curve,
    )
