"""Method-of-lines finite-volume solver for the five-field
reaction-diffusion-chemotaxis system on a 1D interval with zero-flux walls.

One integrator serves both the dimensionless pattern-formation system and the
dimensional macroscopic limit (they share the reaction structure and the
volume-filled flux law); the two entry points are
``MacroSystem.from_model_params`` and ``MacroSystem.from_dimensional``.

Cytokine production in the dimensionless simulator defaults to the
equilibrium-normalized form mu*A*R (option ``cytokine_production="scaled"``),
whose linearization is exactly the stability matrix used by the dispersion
analysis and the bifurcation diagram; ``"printed"`` selects the plain A*R
production of the dimensionless reaction system, whose linear response is
weaker by the factor 1/mu.  The choice is recorded in run metadata.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .kernels import get_kernels
from .model import (SQUEEZE_CODES, DimensionalParams, ModelParams, get_squeeze,
                    nondimensionalize, transport_coefficients)

FIELD_INDEX = {"A": 0, "S": 1, "R": 2, "C": 3, "E": 4}


class DivergenceError(RuntimeError):
    """Simulation produced non-finite fields."""

    def __init__(self, t: float, dt: float):
        super().__init__(f"non-finite field values at t = {t:.6g} (dt = {dt:.3e})")
        self.t = t
        self.dt = dt


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centered grid on [0, L]."""

    L: float
    N: int

    def __post_init__(self):
        if self.N < 16:
            raise ValueError("grid needs at least 16 cells")
        if not self.L > 0:
            raise ValueError("domain length must be positive")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.dx


@dataclass
class FieldState:
    """Cell-averaged macroscopic fields at one time."""

    t: float
    A: np.ndarray
    S: np.ndarray
    R: np.ndarray
    C: np.ndarray
    E: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.A, self.S, self.R, self.C, self.E])

    @classmethod
    def from_stack(cls, t: float, F: np.ndarray) -> "FieldState":
        return cls(t, *(F[i].copy() for i in range(5)))

    def copy(self) -> "FieldState":
        return FieldState.from_stack(self.t, self.stack())


@dataclass(frozen=True)
class MacroSystem:
    """Coefficients of one concrete five-field system (reaction + transport)."""

    coef: tuple            # 16 reaction coefficients, kernel layout
    D_R: float
    chi: float
    D_C: float
    R_M: float
    squeeze: str = "cosine"
    upwind: bool = False
    label: str = "custom"

    @classmethod
    def from_model_params(cls, params: ModelParams,
                          cytokine_production: str = "scaled",
                          upwind: bool = False) -> "MacroSystem":
        p = params
        if cytokine_production == "scaled":
            pc2 = p.mu
        elif cytokine_production == "printed":
            pc2 = 1.0
        else:
            raise ValueError("cytokine_production must be 'scaled' or 'printed'")
        coef = (1.0, p.beta, 1.0, p.zeta, p.mu, 1.0, p.eta, p.phi, p.theta,
                pc2, p.tau, 1.0, p.Theta_cap, p.Omega_cap, p.Xi_cap, 1.0)
        return cls(coef=coef, D_R=1.0, chi=p.xi, D_C=p.delta, R_M=1.0,
                   squeeze=p.squeeze, upwind=upwind,
                   label=f"dimensionless/{cytokine_production}")

    @classmethod
    def from_dimensional(cls, dim: DimensionalParams, upwind: bool = False) -> "MacroSystem":
        D_R, D_C, chi = transport_coefficients(dim)
        coef = (dim.alpha, dim.p12, dim.d13, dim.d1, dim.p31, dim.d3,
                dim.p21, dim.d23, dim.d2, dim.pC2, dim.dC,
                dim.b52, dim.b62, dim.r5, dim.r6, dim.E_bar)
        return cls(coef=coef, D_R=D_R, chi=chi, D_C=D_C, R_M=dim.R_M,
                   squeeze=dim.squeeze, upwind=upwind, label="dimensional")

    @property
    def coef_array(self) -> np.ndarray:
        return np.asarray(self.coef, dtype=float)

    @property
    def trans_array(self) -> np.ndarray:
        return np.array([self.D_R, self.chi, self.D_C, self.R_M])

    @property
    def squeeze_code(self) -> int:
        return SQUEEZE_CODES[self.squeeze]

    def reaction(self, state) -> np.ndarray:
        """Reaction part of the right-hand side for a 5-vector or (5, N) array."""
        A, S, R, C, E = np.asarray(state, dtype=float)
        c = self.coef
        return np.array([
            c[0] + c[1] * A * R - c[2] * A * S - c[3] * A,
            c[4] * S * A - c[5] * S,
            c[6] * R * A - c[7] * R * S - c[8] * R,
            c[9] * A * R - c[10] * C,
            (c[15] - E) * c[11] * c[12] * R * R / (c[13] + c[11] * R) - c[14] * E,
        ])

    def equilibrium_fields(self) -> np.ndarray:
        """Positive homogeneous steady state of this system, (A,S,R,C,E)."""
        c = self.coef
        A = c[5] / c[4]
        S = (c[6] * A - c[8]) / c[7]
        R = (c[2] * A * S + c[3] * A - c[0]) / (c[1] * A)
        C = c[9] * A * R / c[10]
        Q = c[11] * c[12] * R * R / (c[13] + c[11] * R)
        E = c[15] * Q / (Q + c[14])
        return np.array([A, S, R, C, E])

    def dt_bound(self, dx: float) -> tuple[float, float, float]:
        """(dt, diffusion bound, reaction bound); dt = 0.2 * min(bounds)."""
        sq = get_squeeze(self.squeeze)
        d_ratio = self.D_C / self.D_R if self.D_R > 0 else 1.0
        diff_scale = self.D_R * sq.phi0_max * max(1.0, d_ratio)
        if diff_scale <= 0:
            diff_scale = max(self.D_C, 1e-300)
        dt_diff = dx * dx / (2.0 * diff_scale)
        # reaction rate scale: infinity norm of the reaction Jacobian at the
        # steady state, finite-differenced, with a 4x margin for excursions
        eq = self.equilibrium_fields()
        if np.all(np.isfinite(eq)) and np.all(eq >= 0):
            h = 1e-6
            J = np.empty((5, 5))
            f0 = self.reaction(eq)
            for j in range(5):
                pert = eq.copy()
                pert[j] += h * max(1.0, abs(eq[j]))
                J[:, j] = (self.reaction(pert) - f0) / (h * max(1.0, abs(eq[j])))
            rate = 4.0 * float(np.abs(J).sum(axis=1).max())
        else:
            rate = 4.0
        dt_react = 1.0 / rate if rate > 0 else dt_diff
        return 0.2 * min(dt_diff, dt_react), dt_diff, dt_react


def flux_R(R_field, C_field, system: MacroSystem, grid: Grid1D) -> np.ndarray:
    """Leukocyte face fluxes (length N+1): phi0-weighted diffusion minus the
    volume-filled chemotactic drift; exactly zero on the boundary faces."""
    R = np.asarray(R_field, dtype=float)
    C = np.asarray(C_field, dtype=float)
    sq = get_squeeze(system.squeeze)
    dx = grid.dx
    rn = np.clip(R / system.R_M, 0.0, 1.0)
    p0 = sq.phi0(rn)
    p1 = sq.phi1(rn)
    q = np.zeros(grid.N + 1)
    gR = np.diff(R) / dx
    gC = np.diff(C) / dx
    p0f = 0.5 * (p0[:-1] + p0[1:])
    if system.upwind:
        p1f = 0.5 * (p1[:-1] + p1[1:])
        w = system.chi * p1f * gC
        Rup = np.where(w > 0.0, R[:-1], R[1:])
        q[1:-1] = system.D_R * p0f * gR - w * Rup
    else:
        p1rf = 0.5 * (p1[:-1] * R[:-1] + p1[1:] * R[1:])
        q[1:-1] = system.D_R * p0f * gR - system.chi * p1rf * gC
    return q


def rhs(state: FieldState, system: MacroSystem, grid: Grid1D) -> FieldState:
    """Full right-hand side (reaction + transport) as a FieldState of rates."""
    F = state.stack()
    dF = np.asarray(system.reaction(F))
    div = np.diff(flux_R(F[2], F[3], system, grid)) / grid.dx
    dF[2] += div
    lapC = np.empty(grid.N)
    C = F[3]
    lapC[1:-1] = C[:-2] - 2.0 * C[1:-1] + C[2:]
    lapC[0] = C[1] - C[0]
    lapC[-1] = C[-2] - C[-1]
    dF[3] += system.D_C * lapC / grid.dx ** 2
    return FieldState.from_stack(state.t, dF)


def init_state(system: MacroSystem, grid: Grid1D, seed: int = 0,
               amplitude: float = 0.01) -> FieldState:
    """Multiplicative random perturbation of the steady state; destroyed myelin
    starts at zero.  Same seed, same grid -> bit-identical state."""
    if amplitude < 0:
        raise ValueError("perturbation amplitude must be >= 0")
    eq = system.equilibrium_fields()
    if not (np.all(np.isfinite(eq)) and np.all(eq[:4] > 0) and eq[2] <= system.R_M):
        raise ValueError(f"system equilibrium not admissible for initialization: {eq}")
    rng = np.random.default_rng(seed)
    F = np.empty((5, grid.N))
    for k in range(4):  # A, S, R, C
        u = rng.uniform(-1.0, 1.0, grid.N)
        F[k] = eq[k] * (1.0 + amplitude * u)
    F[2] = np.clip(F[2], 0.0, system.R_M)
    F[4] = 0.0
    return FieldState.from_stack(0.0, F)


@dataclass
class SpaceTimeRecord:
    """Snapshots of a simulation, with enough metadata to re-run it."""

    times: np.ndarray
    fields: dict                 # name -> (n_snaps, N)
    grid: Grid1D
    meta: dict = field(default_factory=dict)
    incomplete: bool = False

    def field_at(self, name: str, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        return self.fields[name][i]


def simulate(system: MacroSystem, grid: Grid1D, t_end: float,
             snapshot_every: float = 1.0, seed: int = 0, amplitude: float = 0.01,
             record_fields=("E",), init: FieldState | None = None,
             wall_clock_budget: float | None = None) -> SpaceTimeRecord:
    """Integrate to t_end recording snapshots every ``snapshot_every`` time units.

    The step is the stability-bound dt rounded down so snapshots land exactly.
    Exceeding ``wall_clock_budget`` (seconds) flags the record incomplete
    instead of raising.
    """
    kern = get_kernels()
    if record_fields == "all":
        record_fields = ("A", "S", "R", "C", "E")
    state = init.copy() if init is not None else init_state(system, grid, seed, amplitude)
    F = state.stack()

    dt_cap, dt_diff, dt_react = system.dt_bound(grid.dx)
    n_chunks = max(1, int(round(t_end / snapshot_every)))
    steps_per_chunk = max(1, int(math.ceil(snapshot_every / dt_cap)))
    dt = snapshot_every / steps_per_chunk

    idx = [FIELD_INDEX[name] for name in record_fields]
    snaps = {name: np.empty((n_chunks + 1, grid.N)) for name in record_fields}
    times = np.empty(n_chunks + 1)
    for name, k in zip(record_fields, idx):
        snaps[name][0] = F[k]
    times[0] = state.t

    stats = np.zeros(8)
    stats[1:6] = np.inf
    stats[6] = -np.inf
    coef = system.coef_array
    trans = system.trans_array
    start = time.monotonic()
    incomplete = False
    n_done = 0
    for chunk in range(1, n_chunks + 1):
        kern.macro_advance(F, coef, trans, system.squeeze_code, system.upwind,
                           grid.dx, dt, steps_per_chunk, stats)
        t_now = state.t + chunk * snapshot_every
        if stats[7] == 0.0:
            raise DivergenceError(t_now, dt)
        for name, k in zip(record_fields, idx):
            snaps[name][chunk] = F[k]
        times[chunk] = t_now
        n_done = chunk
        if wall_clock_budget is not None and time.monotonic() - start > wall_clock_budget:
            incomplete = chunk < n_chunks
            break

    if incomplete:
        times = times[:n_done + 1]
        snaps = {name: arr[:n_done + 1] for name, arr in snaps.items()}

    meta = {
        "system": system.label,
        "coef": list(map(float, system.coef)),
        "transport": {"D_R": system.D_R, "chi": system.chi, "D_C": system.D_C,
                      "R_M": system.R_M},
        "squeeze": system.squeeze,
        "upwind": bool(system.upwind),
        "grid": {"L": grid.L, "N": grid.N},
        "seed": int(seed),
        "amplitude": float(amplitude),
        "t_end": float(times[-1]),
        "snapshot_every": float(snapshot_every),
        "dt": dt,
        "dt_policy": {"safety": 0.2, "diffusion_bound": dt_diff,
                      "reaction_bound": dt_react},
        "clamp_events": int(stats[0]),
        "field_min": {n: float(stats[1 + i]) for n, i in FIELD_INDEX.items()},
        "R_max": float(stats[6]),
        "backend": kern.backend,
        "custom_init": init is not None,
    }
    return SpaceTimeRecord(times=times, fields=snaps, grid=grid, meta=meta,
                           incomplete=incomplete)


def step(state: FieldState, system: MacroSystem, grid: Grid1D, dt: float) -> FieldState:
    """One explicit RK4 step (exposed mainly for verification)."""
    kern = get_kernels()
    F = state.stack()
    stats = np.zeros(8)
    stats[1:6] = np.inf
    stats[6] = -np.inf
    if dt > 0:
        kern.macro_advance(F, system.coef_array, system.trans_array,
                           system.squeeze_code, system.upwind, grid.dx, dt, 1, stats)
        if stats[7] == 0.0:
            raise DivergenceError(state.t + dt, dt)
    out = FieldState.from_stack(state.t + dt, F)
    out.clamp_events = int(stats[0])  # attached diagnostic
    return out


# ---------------------------------------------------------------------------
# Pattern metrics and regime classification
# ---------------------------------------------------------------------------

def cosine_mode_amplitudes(values: np.ndarray, grid: Grid1D, m_max: int) -> np.ndarray:
    """Amplitudes of the zero-flux cosine modes cos(m*pi*x/L), m = 0..m_max.

    Row-wise for a (n_snaps, N) array; a_0 is the mean.
    """
    v = np.atleast_2d(values)
    x = grid.x
    m = np.arange(m_max + 1)
    basis = np.cos(np.outer(m, np.pi * x / grid.L))      # (m_max+1, N)
    amps = (2.0 / grid.N) * v @ basis.T
    amps[:, 0] *= 0.5
    return amps if values.ndim == 2 else amps[0]


def oscillation_score(series: np.ndarray, min_std: float = 1e-9) -> float:
    """Autocorrelation peak after the first sign change; 0 for monotone/flat series."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    denom = float(x @ x)
    if denom < min_std ** 2 * len(x):
        return 0.0
    n = len(x)
    lmax = n // 2
    acf = np.array([float(x[:n - l] @ x[l:]) / denom for l in range(1, lmax + 1)])
    below = np.nonzero(acf < 0.0)[0]
    if len(below) == 0:
        return 0.0
    first = below[0]
    if first + 1 >= len(acf):
        return 0.0
    return float(acf[first + 1:].max())


@dataclass(frozen=True)
class RegimeThresholds:
    """Fixed classification constants, recorded with every classification."""

    drift_frozen: float = 1e-3        # late-time sup-norm drift below which the
                                      # pattern counts as frozen
    osc_score_min: float = 0.3        # early-window oscillation score for a
                                      # relapsing (oscillatory) phase
    variance_floor: float = 1e-6      # minimum spatial variance of a pattern
    variance_ratio: float = 10.0      # late/initial spatial variance ratio
    early_window: tuple = (100.0, 500.0)
    n_probes: int = 8


@dataclass
class PatternMetrics:
    spatial_variance: np.ndarray      # per snapshot
    dominant_mode: dict               # field -> mode index at the last snapshot
    mode_amplitudes: dict             # field -> (n_snaps, m_max+1)
    oscillation: float                # early-window score (median over probes)
    late_drift: float                 # sup norm E(t_end) - E(0.9 t_end)
    thresholds: RegimeThresholds
    regime: str


def pattern_metrics(record: SpaceTimeRecord, m_max: int = 64,
                    thresholds: RegimeThresholds = RegimeThresholds()) -> PatternMetrics:
    """Quantify a space-time record: spatial structure, temporal oscillation,
    late-time drift, and the disease-phase regime label."""
    if len(record.times) < 10:
        raise ValueError("need at least 10 snapshots for pattern metrics")
    E = record.fields["E"]
    times = record.times
    var = E.var(axis=1)

    amps = {}
    dominant = {}
    for name, arr in record.fields.items():
        a = cosine_mode_amplitudes(arr, record.grid, m_max)
        amps[name] = a
        if arr[-1].var() <= thresholds.variance_floor:
            dominant[name] = 0
        else:
            dominant[name] = int(np.argmax(np.abs(a[-1, 1:])) + 1)

    t_lo, t_hi = thresholds.early_window
    t_hi = min(t_hi, times[-1])
    sel = (times >= t_lo) & (times <= t_hi)
    probes = np.linspace(0, record.grid.N - 1, thresholds.n_probes).round().astype(int)
    if sel.sum() >= 8:
        scores = [oscillation_score(E[sel, p]) for p in probes]
        osc = float(np.median(scores))
    else:
        osc = 0.0

    t_end = times[-1]
    drift = float(np.max(np.abs(record.field_at("E", t_end)
                                - record.field_at("E", 0.9 * t_end))))

    patterned = var[-1] > max(thresholds.variance_floor,
                              thresholds.variance_ratio * var[0])
    if not patterned:
        regime = "homogeneous"
    elif osc >= thresholds.osc_score_min and drift > thresholds.drift_frozen:
        regime = "oscillatory-patterned"
    elif osc >= thresholds.osc_score_min:
        regime = "oscillatory-then-frozen"
    elif drift <= thresholds.drift_frozen:
        regime = "frozen-patterned"
    else:
        regime = "mixed"

    return PatternMetrics(spatial_variance=var, dominant_mode=dominant,
                          mode_amplitudes=amps, oscillation=osc, late_drift=drift,
                          thresholds=thresholds, regime=regime)


def fit_growth_rate(times: np.ndarray, amplitudes: np.ndarray,
                    lo: float, hi: float) -> tuple[float, float]:
    """Least-squares slope of log|amplitude| over the window where the
    amplitude lies in [lo, hi]; returns (rate, r_squared)."""
    a = np.abs(np.asarray(amplitudes, dtype=float))
    sel = (a >= lo) & (a <= hi) & (a > 0)
    if sel.sum() < 4:
        raise ValueError("growth window too short to fit "
                         f"({int(sel.sum())} samples in [{lo:g}, {hi:g}])")
    t = np.asarray(times, dtype=float)[sel]
    y = np.log(a[sel])
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 0.0
    return float(slope), r2
