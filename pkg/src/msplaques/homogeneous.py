"""Spatially homogeneous dynamics: reaction-only integration, the forward-Euler
positivity harness, closed-form cytokine/myelin solutions by integrating
factors, and the reduced two-field (R, C) system obtained by freezing the
non-diffusing species at quasi-steady state.

Population-level entry points work with total cell counts n = U * |V| and
volume-rescaled bilinear coefficients p* = p/|V|; with |V| = 1 the population
and density systems coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import get_kernels
from .model import DimensionalParams, ModelParams
from .pde import MacroSystem


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray            # (n_records, 5), columns (A,S,R,C,E)
    dt: float
    component_min: np.ndarray     # over records
    R_max: float

    def column(self, name: str) -> np.ndarray:
        return self.values[:, "ASRCE".index(name)]


def dimensionless_coeffs(params: ModelParams) -> np.ndarray:
    """Kernel coefficient vector of the printed dimensionless reaction system."""
    return MacroSystem.from_model_params(params, cytokine_production="printed").coef_array


def population_coeffs(dim: DimensionalParams, volume: float = 1.0) -> np.ndarray:
    """Starred (volume-rescaled) coefficients of the total-population system."""
    if volume <= 0:
        raise ValueError("volume must be positive")
    V = volume
    return np.array([
        dim.alpha * V, dim.p12 / V, dim.d13 / V, dim.d1,
        dim.p31 / V, dim.d3, dim.p21 / V, dim.d23 / V, dim.d2,
        dim.pC2 / V, dim.dC,
        dim.b52 / V, dim.b62 / V, dim.r5, dim.r6, dim.E_bar * V,
    ])


def _check_finite(times, traj, dt):
    bad = ~np.all(np.isfinite(traj), axis=1)
    if np.any(bad):
        k = int(np.nonzero(bad)[0][0])
        raise RuntimeError(f"trajectory diverged at t = {times[k]:.6g} (dt = {dt:.3e})")


def _integrate_rk4(coef, initial, t_end, dt, record_every):
    kern = get_kernels()
    y0 = np.asarray(initial, dtype=float)
    if y0.shape != (5,):
        raise ValueError("initial state must be a 5-vector (A,S,R,C,E)")
    nsteps = max(1, int(round(t_end / dt)))
    dt = t_end / nsteps
    stride = 1 if record_every is None else max(1, int(round(record_every / dt)))
    traj = kern.reaction_rk4(y0, np.asarray(coef, dtype=float), dt, nsteps, stride)
    times = np.arange(traj.shape[0]) * (dt * stride)
    _check_finite(times, traj, dt)
    return Trajectory(times=times, values=traj, dt=dt,
                      component_min=traj.min(axis=0), R_max=float(traj[:, 2].max()))


def ode_simulate(params: ModelParams, initial, t_end: float, dt: float,
                 record_every: float | None = None) -> Trajectory:
    """RK4 trajectory of the dimensionless reaction system."""
    if np.any(np.asarray(initial, dtype=float) < 0):
        raise ValueError("initial state must be componentwise nonnegative")
    return _integrate_rk4(dimensionless_coeffs(params), initial, t_end, dt, record_every)


def population_ode_simulate(dim: DimensionalParams, initial, t_end: float, dt: float,
                            volume: float = 1.0,
                            record_every: float | None = None) -> Trajectory:
    """RK4 trajectory of the population system with starred coefficients."""
    return _integrate_rk4(population_coeffs(dim, volume), initial, t_end, dt, record_every)


# ---------------------------------------------------------------------------
# Forward-Euler positivity harness
# ---------------------------------------------------------------------------

@dataclass
class PositivityReport:
    dt_list: np.ndarray
    min_by_dt: np.ndarray          # (len(dt_list), 5): worst minima over all runs
    positive: np.ndarray           # bool per dt
    dt_star: float | None          # largest probed dt with positivity intact

    def to_dict(self) -> dict:
        return {
            "dt_list": [float(v) for v in self.dt_list],
            "min_by_dt": [[float(v) for v in row] for row in self.min_by_dt],
            "positive": [bool(b) for b in self.positive],
            "dt_star": self.dt_star,
        }


def euler_positivity_harness(coef, initials, dt_list, t_end: float) -> PositivityReport:
    """Forward-Euler runs over a grid of nonnegative initial states.

    Violations are data, not exceptions: the report carries per-dt worst
    component minima and the largest dt at which every run stayed nonnegative.
    ``coef`` may be a ModelParams or a kernel coefficient vector.
    """
    kern = get_kernels()
    if isinstance(coef, ModelParams):
        coef = dimensionless_coeffs(coef)
    coef = np.asarray(coef, dtype=float)
    initials = np.atleast_2d(np.asarray(initials, dtype=float))
    if np.any(initials < 0):
        raise ValueError("harness initial states must be nonnegative")
    dt_list = np.asarray(list(dt_list), dtype=float)
    if np.any(dt_list < 0):
        raise ValueError("dt values must be nonnegative")

    min_by_dt = np.empty((len(dt_list), 5))
    for i, dt in enumerate(dt_list):
        mins = np.full(5, np.inf)
        if dt == 0.0:
            mins = initials.min(axis=0)
        else:
            nsteps = max(1, int(round(t_end / dt)))
            for y0 in initials:
                kern.reaction_euler(y0, coef, dt, nsteps, nsteps, mins)
        min_by_dt[i] = mins
    positive = np.all(min_by_dt >= 0.0, axis=1)
    dt_star = float(dt_list[positive].max()) if np.any(positive) else None
    return PositivityReport(dt_list=dt_list, min_by_dt=min_by_dt,
                            positive=positive, dt_star=dt_star)


def euler_step_map(coef, state, dt: float) -> np.ndarray:
    """Single forward-Euler update (the iteration map of the positivity argument)."""
    kern = get_kernels()
    if isinstance(coef, ModelParams):
        coef = dimensionless_coeffs(coef)
    if dt == 0.0:
        return np.asarray(state, dtype=float).copy()
    mins = np.full(5, np.inf)
    traj = kern.reaction_euler(np.asarray(state, dtype=float),
                               np.asarray(coef, dtype=float), dt, 1, 1, mins)
    return traj[-1]


# ---------------------------------------------------------------------------
# Closed-form cytokine and myelin solutions (integrating factors)
# ---------------------------------------------------------------------------

def _cumtrapz0(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.empty_like(y)
    out[0] = 0.0
    np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t), out=out[1:])
    return out


def integrating_factor_solution(t, decay, source, y0: float) -> np.ndarray:
    """Trapezoid-quadrature solution of y' = -decay(t)*y + source(t).

    Exactly y(t) = exp(-I(t)) * [y0 + integral exp(I(s)) source(s) ds] with
    I = cumtrapz(decay), evaluated blockwise so the exponentials never overflow.
    """
    t = np.asarray(t, dtype=float)
    decay = np.broadcast_to(np.asarray(decay, dtype=float), t.shape)
    source = np.asarray(source, dtype=float)
    if not (t.shape == source.shape):
        raise ValueError("time, decay and source grids must match")
    I = _cumtrapz0(decay, t)
    n = len(t)
    y = np.empty(n)
    y[0] = y0
    start = 0
    while start < n - 1:
        end = int(np.searchsorted(I, I[start] + 200.0, side="right"))
        end = min(max(end, start + 2), n)
        sl = slice(start, end)
        Ib = I[sl] - I[start]
        w = np.exp(Ib) * source[sl]
        y[sl] = np.exp(-Ib) * (y[start] + _cumtrapz0(w, t[sl]))
        start = end - 1
    return y


def closed_form_nC(times, nA, nR, pC2_star: float, dC: float, nC0: float) -> np.ndarray:
    """Cytokine count from the leukocyte/APC trajectories:
    n_C(t) = e^{-dC t} [n_C(0) + int e^{dC s} pC2* n_A n_R ds]."""
    times = np.asarray(times, dtype=float)
    nA = np.asarray(nA, dtype=float)
    nR = np.asarray(nR, dtype=float)
    if not (times.shape == nA.shape == nR.shape):
        raise ValueError("mismatched trajectory grids")
    return integrating_factor_solution(times, dC, pC2_star * nA * nR, nC0)


def myelin_damage_rate(nR, b52_star: float, b62_star: float, r5: float) -> np.ndarray:
    """Q(n_R) = b62* b52* n_R^2 / (r5 + b52* n_R), the destroyed-myelin gain rate."""
    nR = np.asarray(nR, dtype=float)
    return b62_star * b52_star * nR * nR / (r5 + b52_star * nR)


def closed_form_nE(times, nR, b52_star: float, b62_star: float, r5: float,
                   r6: float, nE_hat: float, nE0: float) -> np.ndarray:
    """Destroyed-myelin count via the integrating factor of
    n_E' = -(Q(n_R) + r6) n_E + nE_hat Q(n_R)."""
    times = np.asarray(times, dtype=float)
    nR = np.asarray(nR, dtype=float)
    if np.any(nR < 0):
        raise ValueError("leukocyte trajectory must be nonnegative")
    Q = myelin_damage_rate(nR, b52_star, b62_star, r5)
    return integrating_factor_solution(times, Q + r6, nE_hat * Q, nE0)


# ---------------------------------------------------------------------------
# Reduced two-field system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedSystem:
    """Logistic R-dynamics and linear C-dynamics after freezing A, S, E."""

    a: float
    b: float
    g_R: float                      # coefficient of R in g(R, C)
    g_C: float                      # decay of C in g(R, C)
    A_frozen: float
    corrected: bool

    @property
    def a_positive(self) -> bool:
        return self.a > 0

    def f(self, R):
        return self.a * np.asarray(R) * (1.0 - (self.b / self.a) * np.asarray(R))

    def g(self, R, C):
        return self.g_R * np.asarray(R) - self.g_C * np.asarray(C)

    def S_frozen(self, R, dim: DimensionalParams):
        return ((dim.alpha * dim.p31 - dim.d1 * dim.d3) / (dim.d3 * dim.d13)
                + dim.p12 / dim.d13 * np.asarray(R))

    def fixed_point_R(self) -> float:
        return self.a / self.b if self.b != 0 else math.inf


def reduced_system(dim: DimensionalParams, corrected: bool = False) -> ReducedSystem:
    """Build the reduced (R, C) system.

    ``corrected=False`` evaluates the coefficients exactly as displayed in the
    source derivation; ``corrected=True`` replaces the two d2-for-d3 slips in a
    and uses the d23-weighted logistic coefficient b, which is what the
    quasi-steady elimination actually produces (the corrected fixed point
    a/b coincides with the full system's steady leukocyte level).
    """
    for name in ("d3", "p31", "d13", "d2"):
        if getattr(dim, name) <= 0:
            raise ValueError(f"{name} must be positive")
    if corrected:
        a = (dim.p21 * dim.d3 / dim.p31
             - dim.d23 * (dim.alpha * dim.p31 - dim.d1 * dim.d3) / (dim.d3 * dim.d13)
             - dim.d2)
        b = dim.p12 * dim.d23 / dim.d13
    else:
        a = (dim.p21 * dim.d2 / dim.p31
             - dim.d23 * (dim.alpha * dim.p31 - dim.d1 * dim.d3) / (dim.d2 * dim.d13)
             - dim.d2)
        b = dim.p12 * dim.d2 / dim.d13
    return ReducedSystem(a=a, b=b,
                         g_R=dim.pC2 * dim.d3 / dim.p31, g_C=dim.dC,
                         A_frozen=dim.d3 / dim.p31, corrected=corrected)


def oscillation_period(times, series) -> float:
    """Mean spacing of upward zero crossings of the demeaned series."""
    t = np.asarray(times, dtype=float)
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    sign = x > 0
    up = np.nonzero(~sign[:-1] & sign[1:])[0]
    if len(up) < 3:
        raise ValueError("fewer than three oscillations in the window")
    # linear interpolation of each crossing time
    tc = t[up] + (t[up + 1] - t[up]) * (-x[up]) / (x[up + 1] - x[up])
    return float(np.diff(tc).mean())
