"""Dimensionless autoimmune demyelination model: parameters, reaction terms,
volume-filling squeeze functions, nondimensionalization, and the homogeneous
equilibrium with its admissibility window.

State ordering everywhere is (A, S, R, C, E):
    A - self-antigen presenting cells
    S - immunosuppressive cells
    R - self-reactive leukocytes (volume-filling, max density 1)
    C - cytokines
    E - destroyed myelin fraction
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

FIELD_NAMES = ("A", "S", "R", "C", "E")


class ParameterError(ValueError):
    """Raised when a parameter set is structurally invalid (e.g. zero denominator)."""


# ---------------------------------------------------------------------------
# Volume-filling (squeezing) function pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SqueezePair:
    """Pair (phi0, phi1) of density-dependent motility factors.

    phi1 is the squeezing probability: phi1(0)=1, phi1 in (0,1) on (0,1),
    phi1(r)=0 for r>=1, with phi1' <= 0 and phi1'' <= 0.  phi0 is tied to it
    by phi0(r) = phi1(r) - phi1'(r)*r.  Densities are dimensionless (packing
    maximum scaled to 1).
    """

    name: str
    # scalar callables on r >= 0; closed forms valid on [0, 1]
    _phi1: callable = field(repr=False)
    _phi0: callable = field(repr=False)
    _dphi1: callable = field(repr=False)

    def phi1(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValueError("squeeze functions are defined for r >= 0")
        out = np.where(r < 1.0, self._phi1(np.minimum(r, 1.0)), 0.0)
        return out if out.ndim else float(out)

    def phi0(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValueError("squeeze functions are defined for r >= 0")
        out = np.where(r <= 1.0, self._phi0(np.minimum(r, 1.0)), 0.0)
        return out if out.ndim else float(out)

    def dphi1(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(r <= 1.0, self._dphi1(np.minimum(r, 1.0)), 0.0)
        return out if out.ndim else float(out)

    def validate(self, n_grid: int = 2001) -> None:
        """Check the defining properties on a dense grid of [0, 1]."""
        r = np.linspace(0.0, 1.0, n_grid)
        p1 = self.phi1(r)
        if abs(p1[0] - 1.0) > 1e-12:
            raise ParameterError(f"squeeze pair {self.name!r}: phi1(0) != 1")
        if abs(p1[-1]) > 1e-12:
            raise ParameterError(f"squeeze pair {self.name!r}: phi1(1) != 0")
        if np.any(p1[1:-1] <= 0.0) or np.any(p1[1:-1] >= 1.0):
            raise ParameterError(f"squeeze pair {self.name!r}: phi1 not in (0,1) on (0,1)")
        if np.any(np.diff(p1) > 1e-12):
            raise ParameterError(f"squeeze pair {self.name!r}: phi1 increasing somewhere")
        if np.any(np.diff(p1, 2) > 1e-9):
            raise ParameterError(f"squeeze pair {self.name!r}: phi1 convex somewhere")
        # phi0 = phi1 - phi1' * r
        p0 = self.phi0(r)
        if np.max(np.abs(p0 - (p1 - self.dphi1(r) * r))) > 1e-10:
            raise ParameterError(f"squeeze pair {self.name!r}: phi0 != phi1 - phi1'*r")

    @property
    def phi0_max(self) -> float:
        """Upper bound of phi0 on [0,1] (phi0 is nondecreasing there)."""
        return float(self.phi0(1.0))


def _make_cosine() -> SqueezePair:
    return SqueezePair(
        name="cosine",
        _phi1=lambda r: np.cos(0.5 * np.pi * r),
        _phi0=lambda r: np.cos(0.5 * np.pi * r) + 0.5 * np.pi * r * np.sin(0.5 * np.pi * r),
        _dphi1=lambda r: -0.5 * np.pi * np.sin(0.5 * np.pi * r),
    )


def _make_quadratic() -> SqueezePair:
    return SqueezePair(
        name="quadratic",
        _phi1=lambda r: 1.0 - r * r,
        _phi0=lambda r: 1.0 + r * r,
        _dphi1=lambda r: -2.0 * r,
    )


SQUEEZE_PAIRS = {"cosine": _make_cosine(), "quadratic": _make_quadratic()}
for _pair in SQUEEZE_PAIRS.values():
    _pair.validate()

# integer codes used by the compiled kernels
SQUEEZE_CODES = {"cosine": 0, "quadratic": 1}


def get_squeeze(name: str) -> SqueezePair:
    try:
        return SQUEEZE_PAIRS[name]
    except KeyError:
        raise ParameterError(f"unknown squeeze pair {name!r}; known: {sorted(SQUEEZE_PAIRS)}")


def squeeze_phi1(r, squeeze: str = "cosine"):
    """Squeezing probability phi1 at dimensionless density r (>= 0)."""
    return get_squeeze(squeeze).phi1(r)


def squeeze_phi0(r, squeeze: str = "cosine"):
    """Diffusion motility factor phi0 = phi1 - phi1'*r at density r (>= 0)."""
    return get_squeeze(squeeze).phi0(r)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """The twelve dimensionless coefficients of the macroscopic system.

    All coefficients must be strictly positive.  ``squeeze`` selects the
    volume-filling pair.  zeta < mu is the conventional regime (it makes the
    admissibility window for theta self-contained); a violation only warns.
    """

    beta: float
    zeta: float
    mu: float
    delta: float
    tau: float
    xi: float
    eta: float
    phi: float
    theta: float
    Theta_cap: float
    Omega_cap: float
    Xi_cap: float
    squeeze: str = "cosine"

    def __post_init__(self):
        for name in ("beta", "zeta", "mu", "delta", "tau", "xi", "eta", "phi",
                     "theta", "Theta_cap", "Omega_cap", "Xi_cap"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"coefficient {name} must be finite and > 0, got {v!r}")
            object.__setattr__(self, name, v)
        get_squeeze(self.squeeze)
        if self.zeta >= self.mu:
            warnings.warn(
                f"zeta={self.zeta} >= mu={self.mu}: admissibility additionally "
                "requires theta < eta/mu", stacklevel=2)

    @property
    def squeeze_pair(self) -> SqueezePair:
        return get_squeeze(self.squeeze)

    def replace(self, **kw) -> "ModelParams":
        d = self.__dict__ | kw
        return ModelParams(**d)


@dataclass(frozen=True)
class DimensionalParams:
    """Mesoscopic/dimensional constants feeding the nondimensionalization map.

    Rates are per unit time; V_cap and W_cap are the maximal microscopic
    speeds of leukocytes and cytokines, lam and sigma their turning rates,
    gamma the microscopic chemotaxis rate, n the space dimension.
    """

    alpha: float        # constant source of self-antigen presenting cells
    p12: float          # proliferation of A from A-R encounters
    p31: float          # proliferation of S from S-A encounters
    p21: float          # proliferation of R from R-A encounters
    pC2: float          # cytokine production from A-R encounters
    d1: float           # natural death of A
    d2: float           # natural death of R
    d3: float           # natural death of S
    dC: float           # cytokine decay
    d13: float          # suppression of A by S
    d23: float          # suppression of R by S
    b52: float          # primary myelin damage rate
    b62: float          # full myelin destruction rate
    r5: float           # first-stage restoration rate
    r6: float           # full restoration rate
    R_M: float          # packing maximum of leukocyte density
    E_bar: float        # conserved total myelin density
    V_cap: float        # max leukocyte speed
    W_cap: float        # max cytokine speed
    lam: float          # leukocyte turning rate
    sigma: float        # cytokine turning rate
    gamma: float        # microscopic chemotaxis rate
    n: int = 1          # space dimension (1-3)
    squeeze: str = "cosine"

    def __post_init__(self):
        for name in ("alpha", "p12", "p31", "p21", "pC2", "d1", "d2", "d3", "dC",
                     "d13", "d23", "b52", "b62", "r5", "r6", "R_M", "E_bar",
                     "V_cap", "W_cap", "lam", "sigma", "gamma"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ParameterError(f"constant {name} must be finite and > 0, got {v!r}")
            object.__setattr__(self, name, v)
        if self.n not in (1, 2, 3):
            raise ParameterError(f"space dimension n must be 1, 2 or 3, got {self.n}")


def _ball_volume(n: int) -> float:
    # |B^n|: 2, pi, 4*pi/3
    return {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}[n]


def transport_coefficients(dim: DimensionalParams) -> tuple[float, float, float]:
    """(D_R, D_C, chi) of the macroscopic limit.

    D_R = V^2/((n+2)*lam), D_C = W^2/((n+2)*sigma), chi = gamma*omega*V/(n+1)^2
    with omega the measure of the leukocyte velocity ball (2V in 1D).
    """
    n = dim.n
    D_R = dim.V_cap ** 2 / ((n + 2) * dim.lam)
    D_C = dim.W_cap ** 2 / ((n + 2) * dim.sigma)
    omega = _ball_volume(n) * dim.V_cap ** n
    chi = dim.gamma * omega * dim.V_cap / (n + 1) ** 2
    return D_R, D_C, chi


def nondimensionalize(dim: DimensionalParams) -> ModelParams:
    """Map dimensional constants to the twelve dimensionless coefficients."""
    d3 = dim.d3
    D_R, D_C, chi = transport_coefficients(dim)
    for name, val in (("d3", d3), ("D_R", D_R), ("R_M*b52", dim.R_M * dim.b52)):
        if val == 0:
            raise ParameterError(f"nondimensionalization: zero denominator from {name}")
    return ModelParams(
        beta=dim.R_M * dim.p12 / d3,
        zeta=dim.d1 / d3,
        mu=dim.p31 * dim.alpha / d3 ** 2,
        delta=D_C / D_R,
        tau=dim.dC / d3,
        xi=chi * dim.pC2 * dim.alpha * dim.R_M / (D_R * d3 ** 2),
        eta=dim.p21 * dim.alpha / d3 ** 2,
        phi=dim.d23 / dim.d13,
        theta=dim.d2 / d3,
        Theta_cap=dim.b62 / d3,
        Omega_cap=dim.r5 / (dim.R_M * dim.b52),
        Xi_cap=dim.r6 / d3,
        squeeze=dim.squeeze,
    )


def density_scales(dim: DimensionalParams) -> np.ndarray:
    """Multipliers turning dimensional densities (A,S,R,C,E) into dimensionless ones."""
    d3 = dim.d3
    return np.array([
        d3 / dim.alpha,
        dim.d13 / d3,
        1.0 / dim.R_M,
        d3 ** 2 / (dim.pC2 * dim.alpha * dim.R_M),
        1.0 / dim.E_bar,
    ])


def time_space_scales(dim: DimensionalParams) -> tuple[float, float]:
    """(time, space) multipliers to dimensionless variables: t~ = d3*t, x~ = sqrt(d3/D_R)*x."""
    D_R, _, _ = transport_coefficients(dim)
    return dim.d3, math.sqrt(dim.d3 / D_R)


# ---------------------------------------------------------------------------
# Reaction terms and equilibrium
# ---------------------------------------------------------------------------

def reaction_terms(state, params: ModelParams):
    """Right-hand side of the dimensionless system without spatial operators.

    state is a 5-vector (A,S,R,C,E) or an array of shape (5, ...).
    """
    A, S, R, C, E = np.asarray(state, dtype=float)
    p = params
    if np.any(p.Omega_cap + R == 0):
        raise ParameterError("singular denominator Omega + R = 0 in the myelin term")
    dA = 1.0 + p.beta * A * R - A * S - p.zeta * A
    dS = p.mu * A * S - S
    dR = p.eta * A * R - p.phi * R * S - p.theta * R
    dC = A * R - p.tau * C
    dE = p.Theta_cap * R * R * (1.0 - E) / (p.Omega_cap + R) - p.Xi_cap * E
    return np.array([dA, dS, dR, dC, dE])


@dataclass(frozen=True)
class EquilibriumPoint:
    """Homogeneous steady state with biological admissibility flags."""

    A1: float
    S1: float
    R1: float
    C1: float
    E1: float
    admissible: bool
    violated_conditions: tuple[str, ...] = ()

    def as_array(self) -> np.ndarray:
        return np.array([self.A1, self.S1, self.R1, self.C1, self.E1])


def equilibrium(params: ModelParams) -> EquilibriumPoint:
    """The positive homogeneous steady state; admissibility is reported, never thrown."""
    p = params
    A1 = 1.0 / p.mu
    S1 = (p.eta - p.theta * p.mu) / (p.mu * p.phi)
    R1 = (-p.theta * p.mu + p.eta + p.mu * p.phi * (p.zeta - p.mu)) / (p.beta * p.mu * p.phi)
    C1 = R1 / (p.mu * p.tau)
    denom = R1 * R1 * p.Theta_cap + R1 * p.Xi_cap + p.Xi_cap * p.Omega_cap
    E1 = R1 * R1 * p.Theta_cap / denom if denom != 0 else math.nan

    violated = []
    if not A1 > 0:
        violated.append("A1 > 0")
    if not S1 > 0:
        violated.append("S1 > 0")
    if not 0 < R1 <= 1:
        violated.append("0 < R1 <= 1")
    if not C1 > 0:
        violated.append("C1 > 0")
    if not (math.isfinite(E1) and E1 > 0):
        violated.append("E1 > 0")
    return EquilibriumPoint(A1, S1, R1, C1, E1,
                            admissible=not violated,
                            violated_conditions=tuple(violated))


def admissibility_bounds(params: ModelParams) -> tuple[float, float]:
    """(theta_bar, theta_bar - beta*phi): the equilibrium is admissible iff
    theta_bar > theta > theta_bar - beta*phi (and theta < eta/mu, implied for zeta < mu)."""
    p = params
    theta_bar = p.eta / p.mu + p.phi * (p.zeta - p.mu)
    return theta_bar, theta_bar - p.beta * p.phi
