"""Discrete-velocity solver for the scaled mesoscopic transport system and the
experiments validating its macroscopic (diffusion-chemotaxis) limit.

Distributions are activity-marginalized: all transition probabilities are
constant in the activity variable, so it integrates out of every term that
survives in the macroscopic densities.  Quadrature convention: macroscopic
densities are the weighted node sums (R = sum_j w_j fR_j), so the uniform lift
of a density rho is rho / omega with omega the velocity-space measure, and the
velocity-independent cytokine production is distributed as pC2*A*R/omega per
node (its velocity integral is then exactly the macroscopic production term).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .kernels import build_kernels, get_kernels
from .model import SQUEEZE_CODES, DimensionalParams, get_squeeze, transport_coefficients
from .pde import (DivergenceError, FieldState, Grid1D, MacroSystem, SpaceTimeRecord,
                  cosine_mode_amplitudes, simulate)

# reference backend for single-step right-hand-side evaluation
_REF = build_kernels(False)


@dataclass(frozen=True)
class VelocityGrid:
    """Symmetric midpoint-rule velocity nodes on [-v_max, v_max], excluding 0."""

    v_max: float
    M: int

    def __post_init__(self):
        if self.M < 2 or self.M % 2:
            raise ValueError("need an even number (>= 2) of velocity nodes")
        if not self.v_max > 0:
            raise ValueError("maximal speed must be positive")

    @property
    def nodes(self) -> np.ndarray:
        h = 2.0 * self.v_max / self.M
        return -self.v_max + (np.arange(self.M) + 0.5) * h

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.M, 2.0 * self.v_max / self.M)

    @property
    def omega(self) -> float:
        return 2.0 * self.v_max


@dataclass
class KineticState:
    """Distributions and local fields on a shared spatial grid."""

    t: float
    grid: Grid1D
    vR: VelocityGrid
    vC: VelocityGrid
    fR: np.ndarray        # (N, M)
    fC: np.ndarray        # (N, Mc)
    A: np.ndarray
    S: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    E: np.ndarray
    eps: float

    def copy(self) -> "KineticState":
        return KineticState(self.t, self.grid, self.vR, self.vC,
                            self.fR.copy(), self.fC.copy(), self.A.copy(),
                            self.S.copy(), self.E1.copy(), self.E2.copy(),
                            self.E.copy(), self.eps)


# ---------------------------------------------------------------------------
# Turning operators (reference implementations, one spatial cell at a time)
# ---------------------------------------------------------------------------

def turning_L0_R(fR_cell, R_local: float, lam: float, vgrid: VelocityGrid,
                 R_M: float = 1.0, squeeze: str = "cosine") -> np.ndarray:
    """Density-damped uniform reorientation (lam/phi0(R)) * (mean - f)."""
    f = np.asarray(fR_cell, dtype=float)
    p0 = get_squeeze(squeeze).phi0(np.clip(R_local / R_M, 0.0, None))
    if p0 <= 0:
        raise ValueError(f"phi0(R) = {p0} <= 0: turning prefactor singular (R >= R_M)")
    mean = float(vgrid.weights @ f) / vgrid.omega
    return lam / p0 * (mean - f)


def bias_kernel_T1(v, v_prime, R_local: float, gradC_local: float, gamma: float,
                   v_max: float, R_M: float = 1.0, squeeze: str = "cosine"):
    """Chemotactic reorientation kernel in 1D:
    gamma * phi1(R) * (vhat.vhat') * (vhat'.gradC) * |v|/v_max."""
    v = np.asarray(v, dtype=float)
    vp = np.asarray(v_prime, dtype=float)
    p1 = get_squeeze(squeeze).phi1(np.clip(R_local / R_M, 0.0, None))
    return gamma * p1 * np.sign(v) * np.sign(vp) * (np.sign(vp) * gradC_local) * np.abs(v) / v_max


def turning_L1_R(fR_cell, R_local: float, gradC_local: float, gamma: float,
                 lam: float, vgrid: VelocityGrid, R_M: float = 1.0,
                 squeeze: str = "cosine") -> np.ndarray:
    """Gradient-bias operator: lam * integral T1(v, v') f(v') dv'.

    In 1D the kernel's v'-dependence cancels (sign(v')^2 = 1), leaving
    lam * gamma * phi1(R) * (v/v_max) * gradC * rho.
    """
    f = np.asarray(fR_cell, dtype=float)
    p1 = get_squeeze(squeeze).phi1(np.clip(R_local / R_M, 0.0, None))
    rho = float(vgrid.weights @ f)
    return lam * gamma * p1 * (vgrid.nodes / vgrid.v_max) * gradC_local * rho


def turning_LC(fC_cell, sigma: float, vgridC: VelocityGrid) -> np.ndarray:
    """Plain uniform reorientation of the cytokine distribution."""
    f = np.asarray(fC_cell, dtype=float)
    mean = float(vgridC.weights @ f) / vgridC.omega
    return sigma * (mean - f)


# ---------------------------------------------------------------------------
# State construction and moments
# ---------------------------------------------------------------------------

def myelin_split(E_field, R_field, dim: DimensionalParams) -> tuple[np.ndarray, np.ndarray]:
    """(E1, E2) on the quasi-steady manifold r5*E2 = b52*E1*R for given E and R."""
    E = np.asarray(E_field, dtype=float)
    R = np.asarray(R_field, dtype=float)
    E2 = (dim.E_bar - E) * dim.b52 * R / (dim.r5 + dim.b52 * R)
    E1 = dim.E_bar - E - E2
    return E1, E2


def lift_state(dim: DimensionalParams, grid: Grid1D, vR: VelocityGrid,
               vC: VelocityGrid, eps: float, A, S, R, C, E) -> KineticState:
    """Velocity-uniform lift of macroscopic fields: fR = R/(2V), fC = C/(2W);
    myelin stages start on the quasi-steady manifold."""
    N = grid.N
    R = np.broadcast_to(np.asarray(R, dtype=float), (N,)).copy()
    C = np.broadcast_to(np.asarray(C, dtype=float), (N,)).copy()
    fR = np.repeat((R / vR.omega)[:, None], vR.M, axis=1)
    fC = np.repeat((C / vC.omega)[:, None], vC.M, axis=1)
    E = np.broadcast_to(np.asarray(E, dtype=float), (N,)).copy()
    E1, E2 = myelin_split(E, R, dim)
    return KineticState(
        t=0.0, grid=grid, vR=vR, vC=vC, fR=fR, fC=fC,
        A=np.broadcast_to(np.asarray(A, dtype=float), (N,)).copy(),
        S=np.broadcast_to(np.asarray(S, dtype=float), (N,)).copy(),
        E1=E1, E2=E2, E=E, eps=eps)


def moments(state: KineticState) -> FieldState:
    """Macroscopic fields from the distributions; E is reported directly and
    satisfies E = E_bar - E1 - E2 up to integrator roundoff."""
    R = state.fR @ state.vR.weights
    C = state.fC @ state.vC.weights
    return FieldState(state.t, state.A.copy(), state.S.copy(), R, C, state.E.copy())


def first_moment_R(state: KineticState) -> np.ndarray:
    """Leukocyte velocity flux J = integral v fR dv."""
    return state.fR @ (state.vR.weights * state.vR.nodes)


def _kc_vector(dim: DimensionalParams, interactions: bool, freeze_fC: bool) -> np.ndarray:
    return np.array([
        dim.lam, dim.sigma, dim.gamma, dim.V_cap, dim.W_cap, dim.R_M,
        dim.alpha, dim.p12, dim.d13, dim.d1, dim.p31, dim.d3,
        dim.p21, dim.d23, dim.d2, dim.pC2, dim.dC,
        dim.b52, dim.b62, dim.r5, dim.r6,
        1.0 if interactions else 0.0,
        1.0 if freeze_fC else 0.0,
    ])


def kinetic_rhs(state: KineticState, dim: DimensionalParams,
                interactions: bool = True, freeze_fC: bool = False) -> KineticState:
    """Time derivative of every state component (one Euler step with dt = 1 of
    the reference backend, so the advancing kernel is the single source of truth)."""
    s = state.copy()
    stats = np.zeros(1)
    _REF.kinetic_advance(s.fR, s.fC, s.A, s.S, s.E1, s.E2, s.E,
                         state.vR.nodes, state.vR.weights,
                         state.vC.nodes, state.vC.weights,
                         _kc_vector(dim, interactions, freeze_fC),
                         SQUEEZE_CODES[dim.squeeze],
                         state.eps, state.grid.dx, 1.0, 1, stats)
    return KineticState(
        t=state.t, grid=state.grid, vR=state.vR, vC=state.vC,
        fR=s.fR - state.fR, fC=s.fC - state.fC, A=s.A - state.A,
        S=s.S - state.S, E1=s.E1 - state.E1, E2=s.E2 - state.E2,
        E=s.E - state.E, eps=state.eps)


def kinetic_dt(dim: DimensionalParams, grid: Grid1D, eps: float,
               safety: float = 0.35) -> float:
    """Stability step: turning stiffness eps^2/rate, transport CFL eps*dx/speed,
    and a reaction cap from the macroscopic rate scale."""
    dt_turn = eps * eps / max(dim.lam, dim.sigma)
    dt_cfl = eps * grid.dx / max(dim.V_cap, dim.W_cap)
    _, _, dt_react = MacroSystem.from_dimensional(dim).dt_bound(grid.dx)
    return safety * min(dt_turn, dt_cfl, dt_react)


def simulate_kinetic(dim: DimensionalParams, state: KineticState, t_end: float,
                     snapshot_every: float, interactions: bool = True,
                     freeze_fC: bool = False, dt: float | None = None,
                     safety: float = 0.35,
                     wall_clock_budget: float | None = None) -> SpaceTimeRecord:
    """Advance a kinetic state, recording moment fields at snapshot times.

    Recorded fields: R, C, A, S, E1, E2, E and the leukocyte flux JR.
    Metadata carries the negativity count and the worst per-cell drift of the
    conserved myelin total.
    """
    kern = get_kernels()
    st = state.copy()
    if dt is None:
        dt = kinetic_dt(dim, st.grid, st.eps, safety)
    n_chunks = max(1, int(round(t_end / snapshot_every)))
    steps_per_chunk = max(1, int(math.ceil(snapshot_every / dt)))
    dt = snapshot_every / steps_per_chunk

    kc = _kc_vector(dim, interactions, freeze_fC)
    code = SQUEEZE_CODES[dim.squeeze]
    names = ("R", "C", "A", "S", "E1", "E2", "E", "JR")
    snaps = {n: np.empty((n_chunks + 1, st.grid.N)) for n in names}
    times = np.empty(n_chunks + 1)

    def _record(k):
        m = moments(st)
        snaps["R"][k] = m.R
        snaps["C"][k] = m.C
        snaps["A"][k] = st.A
        snaps["S"][k] = st.S
        snaps["E1"][k] = st.E1
        snaps["E2"][k] = st.E2
        snaps["E"][k] = st.E
        snaps["JR"][k] = first_moment_R(st)

    _record(0)
    times[0] = st.t
    stats = np.zeros(1)
    myelin_total0 = st.E1 + st.E2 + st.E
    myelin_drift = 0.0
    start = time.monotonic()
    incomplete = False
    n_done = 0
    for chunk in range(1, n_chunks + 1):
        kern.kinetic_advance(st.fR, st.fC, st.A, st.S, st.E1, st.E2, st.E,
                             st.vR.nodes, st.vR.weights, st.vC.nodes, st.vC.weights,
                             kc, code, st.eps, st.grid.dx, dt, steps_per_chunk, stats)
        t_now = state.t + chunk * snapshot_every
        if not (np.all(np.isfinite(st.fR)) and np.all(np.isfinite(st.fC))
                and np.all(np.isfinite(st.A)) and np.all(np.isfinite(st.S))):
            raise DivergenceError(t_now, dt)
        myelin_drift = max(myelin_drift,
                           float(np.max(np.abs(st.E1 + st.E2 + st.E - myelin_total0))))
        _record(chunk)
        times[chunk] = t_now
        n_done = chunk
        if wall_clock_budget is not None and time.monotonic() - start > wall_clock_budget:
            incomplete = chunk < n_chunks
            break
    st.t = state.t + n_done * snapshot_every

    if incomplete:
        times = times[:n_done + 1]
        snaps = {n: a[:n_done + 1] for n, a in snaps.items()}

    meta = {
        "system": "kinetic",
        "eps": float(st.eps),
        "dt": dt,
        "dt_safety": safety,
        "grid": {"L": st.grid.L, "N": st.grid.N},
        "velocity_grid": {"V": st.vR.v_max, "M": st.vR.M,
                          "W": st.vC.v_max, "Mc": st.vC.M},
        "interactions": bool(interactions),
        "freeze_fC": bool(freeze_fC),
        "negativity_events": int(stats[0]),
        "myelin_total_drift": myelin_drift,
        "backend": kern.backend,
    }
    rec = SpaceTimeRecord(times=times, fields=snaps, grid=st.grid, meta=meta,
                          incomplete=incomplete)
    rec.final_state = st  # carried for chained experiments
    return rec


# ---------------------------------------------------------------------------
# Limit-validation experiments
# ---------------------------------------------------------------------------

def _block_average(values: np.ndarray, factor: int) -> np.ndarray:
    return values.reshape(-1, factor).mean(axis=1)


@dataclass
class ConvergenceEntry:
    eps: float
    N: int
    errors: dict               # field -> L2 error vs the macroscopic reference
    order: float | None        # observed order vs the previous entry (R field)
    negativity_events: int


def diffusive_limit_error(dim: DimensionalParams, eps_list, t_probe: float,
                          profiles: dict, L: float, N_ref: int = 256,
                          N_for_eps=None, M: int = 16,
                          snapshot_every: float | None = None) -> list[ConvergenceEntry]:
    """Kinetic-vs-macroscopic L2 errors for a decreasing sequence of scale
    separations, from identical initial macroscopic profiles.

    ``profiles`` maps field names (A,S,R,C,E) to callables of x.  The spatial
    grid is refined alongside eps (``N_for_eps``, default 128 * (0.1/eps)) so
    the first-order transport discretization does not mask the eps-trend.
    """
    eps_list = list(eps_list)
    if any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if N_for_eps is None:
        N_for_eps = lambda e: int(round(128 * (0.1 / e)))  # noqa: E731

    ref_grid = Grid1D(L, N_ref)
    x_ref = ref_grid.x
    init_ref = FieldState(0.0, *(np.asarray(profiles[n](x_ref), dtype=float)
                                 * np.ones(N_ref) for n in "ASRCE"))
    system = MacroSystem.from_dimensional(dim)
    snap = snapshot_every or t_probe
    pde_rec = simulate(system, ref_grid, t_probe, snapshot_every=snap,
                       record_fields="all", init=init_ref)
    ref = {n: pde_rec.fields[n][-1] for n in "ASRCE"}

    entries: list[ConvergenceEntry] = []
    prev = None
    for eps in eps_list:
        N = int(N_for_eps(eps))
        if N % N_ref:
            raise ValueError(f"kinetic N = {N} must be a multiple of N_ref = {N_ref}")
        grid = Grid1D(L, N)
        x = grid.x
        vR = VelocityGrid(dim.V_cap, M)
        vC = VelocityGrid(dim.W_cap, M)
        st = lift_state(dim, grid, vR, vC, eps,
                        *(np.asarray(profiles[n](x), dtype=float) * np.ones(N)
                          for n in "ASRCE"))
        rec = simulate_kinetic(dim, st, t_probe, snapshot_every=t_probe,
                               interactions=True)
        factor = N // N_ref
        errors = {}
        for n in "ASRCE":
            kin = _block_average(rec.fields[n][-1], factor)
            errors[n] = float(np.sqrt(ref_grid.dx * np.sum((kin - ref[n]) ** 2)))
        order = None
        if prev is not None:
            e_prev, eps_prev = prev
            if errors["R"] > 0 and e_prev > 0:
                order = float(math.log(e_prev / errors["R"])
                              / math.log(eps_prev / eps))
        entries.append(ConvergenceEntry(eps=eps, N=N, errors=errors, order=order,
                                        negativity_events=rec.meta["negativity_events"]))
        prev = (errors["R"], eps)
    return entries


@dataclass
class DecayRateResult:
    measured_rate: float
    predicted_rate: float       # D_R * k^2
    relative_error: float
    fit_r2: float


def pure_diffusion_decay(dim: DimensionalParams, eps: float, L: float, N: int,
                         M: int = 16, mode: int = 1, base: float = 1e-3,
                         amplitude: float = 5e-4, t_end: float = 0.4,
                         n_snapshots: int = 40) -> DecayRateResult:
    """Decay of one cosine mode of R under pure transport + turning
    (interactions off, cytokines frozen), against e^{-D_R k^2 t}."""
    grid = Grid1D(L, N)
    k = mode * math.pi / L
    R0 = base + amplitude * np.cos(k * grid.x)
    vR = VelocityGrid(dim.V_cap, M)
    vC = VelocityGrid(dim.W_cap, M)
    st = lift_state(dim, grid, vR, vC, eps, A=1.0, S=1.0, R=R0, C=1.0, E=0.0)
    rec = simulate_kinetic(dim, st, t_end, snapshot_every=t_end / n_snapshots,
                           interactions=False, freeze_fC=True)
    amps = cosine_mode_amplitudes(rec.fields["R"], grid, mode)[:, mode]
    sel = rec.times >= 0.1 * t_end
    t = rec.times[sel]
    y = np.log(np.abs(amps[sel]))
    coeffs = np.polyfit(t, y, 1)
    slope = float(coeffs[0])
    pred = np.polyval(coeffs, t)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(((y - pred) ** 2).sum()) / ss if ss > 0 else 0.0
    D_R, _, _ = transport_coefficients(dim)
    predicted = -D_R * k * k
    return DecayRateResult(measured_rate=float(slope), predicted_rate=predicted,
                           relative_error=abs(slope - predicted) / abs(predicted),
                           fit_r2=r2)


@dataclass
class DriftResult:
    measured_velocity: float
    kernel_prediction: float     # chi from the printed turning kernel (1D: 2/3 gamma V^2)
    reported_prediction: float   # chi = gamma*omega*V/(n+1)^2 as used macroscopically
    relative_error_kernel: float
    relative_error_reported: float


def chemotactic_drift(dim: DimensionalParams, eps: float, L: float, N: int,
                      M: int = 16, gradC: float = 0.5, bump_height: float = 0.02,
                      bump_width: float = 0.15, base: float = 1e-4,
                      t_end: float = 0.6, n_snapshots: int = 30) -> DriftResult:
    """Centroid velocity of a leukocyte bump in a frozen linear cytokine field.

    Compared against both candidate macroscopic chemotaxis coefficients: the
    value the printed 1D kernel integrates to (gamma*omega*V/(n(n+2))) and the
    reported closed form gamma*omega*V/(n+1)^2.
    """
    grid = Grid1D(L, N)
    x = grid.x
    x0 = 0.3 * L
    R0 = base + bump_height * np.exp(-((x - x0) / bump_width) ** 2)
    C0 = 1.0 + gradC * (x - L / 2)
    if np.any(C0 <= 0):
        raise ValueError("frozen cytokine profile must stay positive")
    vR = VelocityGrid(dim.V_cap, M)
    vC = VelocityGrid(dim.W_cap, M)
    st = lift_state(dim, grid, vR, vC, eps, A=1.0, S=1.0, R=R0, C=C0, E=0.0)
    rec = simulate_kinetic(dim, st, t_end, snapshot_every=t_end / n_snapshots,
                           interactions=False, freeze_fC=True)
    R = rec.fields["R"] - base
    centroid = (R @ x) / R.sum(axis=1)
    sel = rec.times >= 0.15 * t_end
    vel = float(np.polyfit(rec.times[sel], centroid[sel], 1)[0])

    omega = 2.0 * dim.V_cap
    chi_kernel = dim.gamma * omega * dim.V_cap / 3.0       # n(n+2) = 3 in 1D
    chi_reported = dim.gamma * omega * dim.V_cap / 4.0     # (n+1)^2 = 4 in 1D
    v_kernel = chi_kernel * gradC
    v_reported = chi_reported * gradC
    return DriftResult(
        measured_velocity=vel,
        kernel_prediction=v_kernel,
        reported_prediction=v_reported,
        relative_error_kernel=abs(vel - v_kernel) / abs(v_kernel),
        relative_error_reported=abs(vel - v_reported) / abs(v_reported),
    )
