"""Hot numeric loops with two interchangeable backends.

The default backend compiles the loops with numba's @njit; setting the
environment variable ``MSPLAQUES_NO_NUMBA=1`` (before import) selects a pure
numpy implementation instead.  Both backends expose the same callables via
``get_kernels()`` / the module-level ``KERNELS`` namespace:

    macro_advance(F, coef, trans, code, upwind, dx, dt, nsteps, stats)
    kinetic_advance(fR, fC, A, S, E1, E2, E, vR, wR, vC, wC, kc, code,
                    eps, dx, dt, nsteps, stats)
    reaction_rk4(y0, coef, dt, nsteps, stride) -> trajectory
    reaction_euler(y0, coef, dt, nsteps, stride, mins) -> trajectory

Shared reaction coefficient vector layout (both dimensional and dimensionless
systems use it; see pde.reaction_coeffs):

    [0] src   [1] p12  [2] d13  [3] d1   [4] p31  [5] d3
    [6] p21   [7] d23  [8] d2   [9] pC2  [10] dC
    [11] b52  [12] b62 [13] r5  [14] r6  [15] Ebar

Transport vector for macro_advance: [D_R, chi, D_C, R_M].
``stats`` for macro_advance (length 8): clamp count, per-field pre-clamp
minima (5), pre-clamp max of R, finite flag.  For kinetic_advance (length 1):
count of negative distribution values produced.
"""

from __future__ import annotations

import math
import os
from types import SimpleNamespace

import numpy as np

ENV_FLAG = "MSPLAQUES_NO_NUMBA"


def _numba_available() -> bool:
    if os.environ.get(ENV_FLAG, "").strip() in ("1", "true", "yes"):
        return False
    try:
        import numba  # noqa: F401
        return True
    except ImportError:
        return False


# ---------------------------------------------------------------------------
# numba backend: scalar loops
# ---------------------------------------------------------------------------

def _build_numba() -> SimpleNamespace:
    from numba import njit

    opts = dict(cache=True, fastmath=False)

    @njit(**opts)
    def phi1_k(r, code):
        # squeeze argument clamped to [0,1]; solver-side regularization
        if r < 0.0:
            r = 0.0
        if r >= 1.0:
            return 0.0
        if code == 0:
            return math.cos(0.5 * math.pi * r)
        return 1.0 - r * r

    @njit(**opts)
    def phi0_k(r, code):
        if r < 0.0:
            r = 0.0
        if r > 1.0:
            r = 1.0
        if code == 0:
            return math.cos(0.5 * math.pi * r) + 0.5 * math.pi * r * math.sin(0.5 * math.pi * r)
        return 1.0 + r * r

    @njit(**opts)
    def _macro_rhs(F, dF, coef, D_R, chi, D_C, R_M, code, upwind, dx):
        N = F.shape[1]
        inv_dx = 1.0 / dx
        qleft = 0.0
        for i in range(N):
            if i == N - 1:
                qright = 0.0
            else:
                r0 = F[2, i] / R_M
                r1 = F[2, i + 1] / R_M
                p0f = 0.5 * (phi0_k(r0, code) + phi0_k(r1, code))
                gR = (F[2, i + 1] - F[2, i]) * inv_dx
                gC = (F[3, i + 1] - F[3, i]) * inv_dx
                if upwind:
                    p1f = 0.5 * (phi1_k(r0, code) + phi1_k(r1, code))
                    w = chi * p1f * gC
                    Rup = F[2, i] if w > 0.0 else F[2, i + 1]
                    qright = D_R * p0f * gR - w * Rup
                else:
                    p1rf = 0.5 * (phi1_k(r0, code) * F[2, i] + phi1_k(r1, code) * F[2, i + 1])
                    qright = D_R * p0f * gR - chi * p1rf * gC
            cl = F[3, i - 1] if i > 0 else F[3, i]
            cr = F[3, i + 1] if i < N - 1 else F[3, i]
            lapC = (cl - 2.0 * F[3, i] + cr) * inv_dx * inv_dx

            a = F[0, i]
            s = F[1, i]
            r = F[2, i]
            c = F[3, i]
            e = F[4, i]
            dF[0, i] = coef[0] + coef[1] * a * r - coef[2] * a * s - coef[3] * a
            dF[1, i] = coef[4] * s * a - coef[5] * s
            dF[2, i] = coef[6] * r * a - coef[7] * r * s - coef[8] * r + (qright - qleft) * inv_dx
            dF[3, i] = coef[9] * a * r - coef[10] * c + D_C * lapC
            dF[4, i] = ((coef[15] - e) * coef[11] * coef[12] * r * r / (coef[13] + coef[11] * r)
                        - coef[14] * e)
            qleft = qright

    @njit(**opts)
    def macro_advance(F, coef, trans, code, upwind, dx, dt, nsteps, stats):
        D_R, chi, D_C, R_M = trans[0], trans[1], trans[2], trans[3]
        N = F.shape[1]
        k1 = np.empty((5, N))
        k2 = np.empty((5, N))
        k3 = np.empty((5, N))
        k4 = np.empty((5, N))
        Ft = np.empty((5, N))
        clamp = 0
        for _ in range(nsteps):
            _macro_rhs(F, k1, coef, D_R, chi, D_C, R_M, code, upwind, dx)
            for f in range(5):
                for i in range(N):
                    Ft[f, i] = F[f, i] + 0.5 * dt * k1[f, i]
            _macro_rhs(Ft, k2, coef, D_R, chi, D_C, R_M, code, upwind, dx)
            for f in range(5):
                for i in range(N):
                    Ft[f, i] = F[f, i] + 0.5 * dt * k2[f, i]
            _macro_rhs(Ft, k3, coef, D_R, chi, D_C, R_M, code, upwind, dx)
            for f in range(5):
                for i in range(N):
                    Ft[f, i] = F[f, i] + dt * k3[f, i]
            _macro_rhs(Ft, k4, coef, D_R, chi, D_C, R_M, code, upwind, dx)
            sixth = dt / 6.0
            for f in range(5):
                for i in range(N):
                    F[f, i] += sixth * (k1[f, i] + 2.0 * k2[f, i] + 2.0 * k3[f, i] + k4[f, i])
            for f in range(5):
                for i in range(N):
                    v = F[f, i]
                    if v < stats[1 + f]:
                        stats[1 + f] = v
            for i in range(N):
                v = F[2, i]
                if v > stats[6]:
                    stats[6] = v
                if v < 0.0:
                    F[2, i] = 0.0
                    clamp += 1
                elif v > R_M:
                    F[2, i] = R_M
                    clamp += 1
        stats[0] += clamp
        ok = True
        for f in range(5):
            for i in range(N):
                if not math.isfinite(F[f, i]):
                    ok = False
        stats[7] = 1.0 if ok else 0.0

    @njit(**opts)
    def kinetic_advance(fR, fC, A, S, E1, E2, E, vR, wR, vC, wC, kc, code,
                        eps, dx, dt, nsteps, stats):
        N, M = fR.shape
        Mc = fC.shape[1]
        lam, sigma, gamma, Vcap = kc[0], kc[1], kc[2], kc[3]
        R_M = kc[5]
        alpha, p12, d13, d1 = kc[6], kc[7], kc[8], kc[9]
        p31, d3, p21, d23, d2 = kc[10], kc[11], kc[12], kc[13], kc[14]
        pC2, dC = kc[15], kc[16]
        b52, b62, r5, r6 = kc[17], kc[18], kc[19], kc[20]
        inter = kc[21]
        freeze_fC = kc[22] == 1.0
        omR = 0.0
        for j in range(M):
            omR += wR[j]
        omC = 0.0
        for j in range(Mc):
            omC += wC[j]
        inv_eps = 1.0 / eps
        inv_eps2 = inv_eps * inv_eps
        inv_dx = 1.0 / dx
        fRn = np.empty((N, M))
        fCn = np.empty((N, Mc))
        Rm = np.empty(N)
        Cm = np.empty(N)
        gC = np.empty(N)
        neg = 0
        for _ in range(nsteps):
            for i in range(N):
                sR = 0.0
                for j in range(M):
                    sR += wR[j] * fR[i, j]
                Rm[i] = sR
                sC = 0.0
                for j in range(Mc):
                    sC += wC[j] * fC[i, j]
                Cm[i] = sC
            for i in range(N):
                cl = Cm[i - 1] if i > 0 else Cm[0]
                cr = Cm[i + 1] if i < N - 1 else Cm[N - 1]
                gC[i] = (cr - cl) * 0.5 * inv_dx
            for i in range(N):
                r_eff = Rm[i] / R_M
                p0 = phi0_k(r_eff, code)
                p1 = phi1_k(r_eff, code)
                relaxR = lam / p0 * inv_eps2
                bias = lam * gamma * p1 * gC[i] * Rm[i] / Vcap * inv_eps
                avgR = Rm[i] / omR
                reactR = inter * (p21 * A[i] - d23 * S[i] - d2)
                for j in range(M):
                    v = vR[j]
                    if v > 0.0:
                        fl = fR[i - 1, j] if i > 0 else fR[0, M - 1 - j]
                        adv = v * (fR[i, j] - fl) * inv_dx
                    else:
                        fr_ = fR[i + 1, j] if i < N - 1 else fR[N - 1, M - 1 - j]
                        adv = v * (fr_ - fR[i, j]) * inv_dx
                    out = fR[i, j] + dt * (-inv_eps * adv
                                           + relaxR * (avgR - fR[i, j])
                                           + bias * v
                                           + reactR * fR[i, j])
                    if out < 0.0:
                        neg += 1
                    fRn[i, j] = out
                if freeze_fC:
                    for j in range(Mc):
                        fCn[i, j] = fC[i, j]
                else:
                    relaxC = sigma * inv_eps2
                    avgC = Cm[i] / omC
                    prodC = inter * pC2 * A[i] * Rm[i] / omC
                    for j in range(Mc):
                        v = vC[j]
                        if v > 0.0:
                            fl = fC[i - 1, j] if i > 0 else fC[0, Mc - 1 - j]
                            adv = v * (fC[i, j] - fl) * inv_dx
                        else:
                            fr_ = fC[i + 1, j] if i < N - 1 else fC[N - 1, Mc - 1 - j]
                            adv = v * (fr_ - fC[i, j]) * inv_dx
                        out = fC[i, j] + dt * (-inv_eps * adv
                                               + relaxC * (avgC - fC[i, j])
                                               + prodC
                                               - inter * dC * fC[i, j])
                        if out < 0.0:
                            neg += 1
                        fCn[i, j] = out
                # local populations and myelin stages (old moments, old fields)
                a = A[i]
                s = S[i]
                u = eps * (r5 * E2[i] - b52 * E1[i] * Rm[i])
                w = b62 * E2[i] * Rm[i] - r6 * E[i]
                A[i] = a + dt * inter * (alpha + p12 * a * Rm[i] - d13 * a * s - d1 * a)
                S[i] = s + dt * inter * (p31 * s * a - d3 * s)
                E1[i] += dt * inter * u
                E2[i] += dt * inter * (-u - w)
                E[i] += dt * inter * w
            for i in range(N):
                for j in range(M):
                    fR[i, j] = fRn[i, j]
                for j in range(Mc):
                    fC[i, j] = fCn[i, j]
        stats[0] += neg

    @njit(**opts)
    def _reaction(y, coef, dy):
        a, s, r, c, e = y[0], y[1], y[2], y[3], y[4]
        dy[0] = coef[0] + coef[1] * a * r - coef[2] * a * s - coef[3] * a
        dy[1] = coef[4] * s * a - coef[5] * s
        dy[2] = coef[6] * r * a - coef[7] * r * s - coef[8] * r
        dy[3] = coef[9] * a * r - coef[10] * c
        dy[4] = (coef[15] - e) * coef[11] * coef[12] * r * r / (coef[13] + coef[11] * r) - coef[14] * e

    @njit(**opts)
    def reaction_rk4(y0, coef, dt, nsteps, stride):
        nrec = nsteps // stride + 1
        traj = np.empty((nrec, 5))
        y = y0.copy()
        k1 = np.empty(5)
        k2 = np.empty(5)
        k3 = np.empty(5)
        k4 = np.empty(5)
        yt = np.empty(5)
        traj[0] = y
        rec = 1
        for step in range(1, nsteps + 1):
            _reaction(y, coef, k1)
            for f in range(5):
                yt[f] = y[f] + 0.5 * dt * k1[f]
            _reaction(yt, coef, k2)
            for f in range(5):
                yt[f] = y[f] + 0.5 * dt * k2[f]
            _reaction(yt, coef, k3)
            for f in range(5):
                yt[f] = y[f] + dt * k3[f]
            _reaction(yt, coef, k4)
            for f in range(5):
                y[f] += dt / 6.0 * (k1[f] + 2.0 * k2[f] + 2.0 * k3[f] + k4[f])
            if step % stride == 0:
                traj[rec] = y
                rec += 1
        return traj

    @njit(**opts)
    def reaction_euler(y0, coef, dt, nsteps, stride, mins):
        nrec = nsteps // stride + 1
        traj = np.empty((nrec, 5))
        y = y0.copy()
        dy = np.empty(5)
        traj[0] = y
        for f in range(5):
            if y[f] < mins[f]:
                mins[f] = y[f]
        rec = 1
        for step in range(1, nsteps + 1):
            _reaction(y, coef, dy)
            for f in range(5):
                y[f] += dt * dy[f]
                if y[f] < mins[f]:
                    mins[f] = y[f]
            if step % stride == 0:
                traj[rec] = y
                rec += 1
        return traj

    return SimpleNamespace(
        backend="numba", phi1=phi1_k, phi0=phi0_k,
        macro_advance=macro_advance, kinetic_advance=kinetic_advance,
        reaction_rk4=reaction_rk4, reaction_euler=reaction_euler,
    )


# ---------------------------------------------------------------------------
# numpy backend: vectorized fallback
# ---------------------------------------------------------------------------

def _build_numpy() -> SimpleNamespace:

    def phi1_v(r, code):
        r = np.clip(r, 0.0, 1.0)
        if code == 0:
            out = np.where(r >= 1.0, 0.0, np.cos(0.5 * np.pi * r))
        else:
            out = np.where(r >= 1.0, 0.0, 1.0 - r * r)
        return out

    def phi0_v(r, code):
        r = np.clip(r, 0.0, 1.0)
        if code == 0:
            return np.cos(0.5 * np.pi * r) + 0.5 * np.pi * r * np.sin(0.5 * np.pi * r)
        return 1.0 + r * r

    def _macro_rhs(F, coef, D_R, chi, D_C, R_M, code, upwind, dx):
        A, S, R, C, E = F
        N = F.shape[1]
        rn = R / R_M
        p0 = phi0_v(rn, code)
        p1 = phi1_v(rn, code)
        q = np.zeros(N + 1)
        gR = np.diff(R) / dx
        gC = np.diff(C) / dx
        p0f = 0.5 * (p0[:-1] + p0[1:])
        if upwind:
            p1f = 0.5 * (p1[:-1] + p1[1:])
            w = chi * p1f * gC
            Rup = np.where(w > 0.0, R[:-1], R[1:])
            q[1:-1] = D_R * p0f * gR - w * Rup
        else:
            p1rf = 0.5 * (p1[:-1] * R[:-1] + p1[1:] * R[1:])
            q[1:-1] = D_R * p0f * gR - chi * p1rf * gC
        lapC = np.empty(N)
        lapC[1:-1] = C[:-2] - 2.0 * C[1:-1] + C[2:]
        lapC[0] = C[1] - C[0]
        lapC[-1] = C[-2] - C[-1]
        lapC /= dx * dx

        dF = np.empty_like(F)
        dF[0] = coef[0] + coef[1] * A * R - coef[2] * A * S - coef[3] * A
        dF[1] = coef[4] * S * A - coef[5] * S
        dF[2] = coef[6] * R * A - coef[7] * R * S - coef[8] * R + np.diff(q) / dx
        dF[3] = coef[9] * A * R - coef[10] * C + D_C * lapC
        dF[4] = (coef[15] - E) * coef[11] * coef[12] * R * R / (coef[13] + coef[11] * R) - coef[14] * E
        return dF

    def macro_advance(F, coef, trans, code, upwind, dx, dt, nsteps, stats):
        D_R, chi, D_C, R_M = trans
        clamp = 0
        for _ in range(nsteps):
            k1 = _macro_rhs(F, coef, D_R, chi, D_C, R_M, code, upwind, dx)
            k2 = _macro_rhs(F + 0.5 * dt * k1, coef, D_R, chi, D_C, R_M, code, upwind, dx)
            k3 = _macro_rhs(F + 0.5 * dt * k2, coef, D_R, chi, D_C, R_M, code, upwind, dx)
            k4 = _macro_rhs(F + dt * k3, coef, D_R, chi, D_C, R_M, code, upwind, dx)
            F += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            stats[1:6] = np.minimum(stats[1:6], F.min(axis=1))
            stats[6] = max(stats[6], F[2].max())
            lo = F[2] < 0.0
            hi = F[2] > R_M
            clamp += int(np.count_nonzero(lo)) + int(np.count_nonzero(hi))
            F[2][lo] = 0.0
            F[2][hi] = R_M
        stats[0] += clamp
        stats[7] = 1.0 if np.all(np.isfinite(F)) else 0.0

    def kinetic_advance(fR, fC, A, S, E1, E2, E, vR, wR, vC, wC, kc, code,
                        eps, dx, dt, nsteps, stats):
        N, M = fR.shape
        Mc = fC.shape[1]
        lam, sigma, gamma, Vcap = kc[0], kc[1], kc[2], kc[3]
        R_M = kc[5]
        alpha, p12, d13, d1 = kc[6], kc[7], kc[8], kc[9]
        p31, d3, p21, d23, d2 = kc[10], kc[11], kc[12], kc[13], kc[14]
        pC2, dC = kc[15], kc[16]
        b52, b62, r5, r6 = kc[17], kc[18], kc[19], kc[20]
        inter = kc[21]
        freeze_fC = kc[22] == 1.0
        omR = wR.sum()
        omC = wC.sum()
        posR = vR > 0.0
        posC = vC > 0.0
        mirR = M - 1 - np.arange(M)
        mirC = Mc - 1 - np.arange(Mc)
        neg = 0
        for _ in range(nsteps):
            Rm = fR @ wR
            Cm = fC @ wC
            gC = np.empty(N)
            gC[1:-1] = (Cm[2:] - Cm[:-2]) * 0.5 / dx
            gC[0] = (Cm[1] - Cm[0]) * 0.5 / dx
            gC[-1] = (Cm[-1] - Cm[-2]) * 0.5 / dx
            rn = Rm / R_M
            p0 = phi0_v(rn, code)
            p1 = phi1_v(rn, code)

            adv = np.empty_like(fR)
            fl = np.empty((N, int(posR.sum())))
            fl[1:] = fR[:-1, posR]
            fl[0] = fR[0, mirR[posR]]
            adv[:, posR] = vR[posR] * (fR[:, posR] - fl) / dx
            fr_ = np.empty((N, int((~posR).sum())))
            fr_[:-1] = fR[1:, ~posR]
            fr_[-1] = fR[-1, mirR[~posR]]
            adv[:, ~posR] = vR[~posR] * (fr_ - fR[:, ~posR]) / dx
            relaxR = (lam / p0 / eps ** 2)[:, None] * (Rm[:, None] / omR - fR)
            bias = (lam * gamma * p1 * gC * Rm / Vcap / eps)[:, None] * vR[None, :]
            reactR = inter * (p21 * A - d23 * S - d2)
            fRn = fR + dt * (-adv / eps + relaxR + bias + reactR[:, None] * fR)

            if freeze_fC:
                fCn = fC
                neg += int(np.count_nonzero(fRn < 0.0))
            else:
                advC = np.empty_like(fC)
                fl = np.empty((N, int(posC.sum())))
                fl[1:] = fC[:-1, posC]
                fl[0] = fC[0, mirC[posC]]
                advC[:, posC] = vC[posC] * (fC[:, posC] - fl) / dx
                fr_ = np.empty((N, int((~posC).sum())))
                fr_[:-1] = fC[1:, ~posC]
                fr_[-1] = fC[-1, mirC[~posC]]
                advC[:, ~posC] = vC[~posC] * (fr_ - fC[:, ~posC]) / dx
                relaxC = sigma / eps ** 2 * (Cm[:, None] / omC - fC)
                prodC = (inter * pC2 * A * Rm / omC)[:, None]
                fCn = fC + dt * (-advC / eps + relaxC + prodC - inter * dC * fC)
                neg += int(np.count_nonzero(fRn < 0.0)) + int(np.count_nonzero(fCn < 0.0))

            u = eps * (r5 * E2 - b52 * E1 * Rm)
            w = b62 * E2 * Rm - r6 * E
            A_new = A + dt * inter * (alpha + p12 * A * Rm - d13 * A * S - d1 * A)
            S_new = S + dt * inter * (p31 * S * A - d3 * S)
            A[:] = A_new
            S[:] = S_new
            E1 += dt * inter * u
            E2 += dt * inter * (-u - w)
            E += dt * inter * w
            fR[:] = fRn
            fC[:] = fCn
        stats[0] += neg

    def _reaction(y, coef):
        a, s, r, c, e = y
        return np.array([
            coef[0] + coef[1] * a * r - coef[2] * a * s - coef[3] * a,
            coef[4] * s * a - coef[5] * s,
            coef[6] * r * a - coef[7] * r * s - coef[8] * r,
            coef[9] * a * r - coef[10] * c,
            (coef[15] - e) * coef[11] * coef[12] * r * r / (coef[13] + coef[11] * r) - coef[14] * e,
        ])

    def reaction_rk4(y0, coef, dt, nsteps, stride):
        nrec = nsteps // stride + 1
        traj = np.empty((nrec, 5))
        y = y0.astype(float).copy()
        traj[0] = y
        rec = 1
        for step in range(1, nsteps + 1):
            k1 = _reaction(y, coef)
            k2 = _reaction(y + 0.5 * dt * k1, coef)
            k3 = _reaction(y + 0.5 * dt * k2, coef)
            k4 = _reaction(y + dt * k3, coef)
            y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if step % stride == 0:
                traj[rec] = y
                rec += 1
        return traj

    def reaction_euler(y0, coef, dt, nsteps, stride, mins):
        nrec = nsteps // stride + 1
        traj = np.empty((nrec, 5))
        y = y0.astype(float).copy()
        traj[0] = y
        np.minimum(mins, y, out=mins)
        rec = 1
        for step in range(1, nsteps + 1):
            y += dt * _reaction(y, coef)
            np.minimum(mins, y, out=mins)
            if step % stride == 0:
                traj[rec] = y
                rec += 1
        return traj

    def phi1_s(r, code):
        return float(phi1_v(np.asarray(r, dtype=float), code))

    def phi0_s(r, code):
        return float(phi0_v(np.asarray(r, dtype=float), code))

    return SimpleNamespace(
        backend="numpy", phi1=phi1_s, phi0=phi0_s,
        macro_advance=macro_advance, kinetic_advance=kinetic_advance,
        reaction_rk4=reaction_rk4, reaction_euler=reaction_euler,
    )


def build_kernels(use_numba: bool) -> SimpleNamespace:
    """Construct a kernel namespace explicitly (used by tests and benchmarks)."""
    return _build_numba() if use_numba else _build_numpy()


USE_NUMBA = _numba_available()
KERNELS = build_kernels(USE_NUMBA)


def get_kernels() -> SimpleNamespace:
    return KERNELS
