"""Compiled iteration kernels for the consensus engine.

The full closed-form iteration (segment solves, projections, consensus
averaging, residuals, dual updates, adaptive penalty) is fused into one
jitted loop so per-iteration cost is dominated by per-segment arithmetic
rather than interpreter dispatch. Two variants are compiled from the same
source: a serial one used for a single worker, and a ``parallel=True`` one
whose ``prange`` regions fan per-segment work out to the requested worker
count.

Determinism contract: every per-segment computation is an independent,
fixed-order scalar loop, and all cross-segment reductions run serially in
fixed index order, so results are bitwise identical for any worker count.

All "batched" arrays are padded to uniform row counts per segment; padding
rows are exact no-ops (zero constraint rows, masked out of diagnostics).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

# status codes returned by the iteration loop
RUNNING = 0
CONVERGED = 1
FACTORIZATION_FAILED = 2


def _iterate_impl(
    n_iters,
    k0,
    # constant problem data
    Qt,      # (N, n, n) weighted Gram blocks
    Mt,      # (N, mc, n) boundary maps, rows (start stack; end stack)
    S,       # (N, n, n) fixed normal-equation sums
    Ao,      # (N, R, n) corridor rows (padded)
    bo,      # (N, R)
    rmask,   # (N, R) 1.0 for real rows, 0.0 for padding
    Av,      # (N, Mv*m, n) velocity maps, sample-major (padded)
    # consensus
    Z,       # (N+1, ms)
    Zold,    # (N+1, ms) scratch
    zfix,    # (N+1, ms) uint8, 1 = entry never changes
    # iterates
    C, U, Sl, V, PHI, W,
    # factorization
    Ainv,    # (N, n, n)
    rs,      # (3,) [rho, refactor flag, dual rescale factor]
    # scratch
    MtC, AoC, SPEED, obj_part, rd_part, cor_part, vex_part, fail,
    # scalars
    vmax, thr2, mu, tau_incr, tau_decr, rho_min, rho_max, adapt,
    # trace output rows [rp, rd, rho, obj, corviol, vexcess]
    trace,
):
    N = Qt.shape[0]
    n = Qt.shape[1]
    mc = Mt.shape[1]
    ms = mc // 2
    R = Ao.shape[1]
    Mv = PHI.shape[1]
    m = PHI.shape[2]
    vmax2 = vmax * vmax

    done = 0
    status = RUNNING
    for it in range(n_iters):
        rho = rs[0]

        if rs[1] != 0.0:
            scale = rs[2]
            for i in prange(N):
                if scale != 1.0:
                    for k in range(mc):
                        U[i, k] *= scale
                    for k in range(R):
                        V[i, k] *= scale
                    for k in range(Mv):
                        for d in range(m):
                            W[i, k, d] *= scale
                # refactor 2 Qt + rho S via Cholesky; Ainv = L^-T L^-1
                A = np.empty((n, n))
                L = np.zeros((n, n))
                X = np.zeros((n, n))
                for a in range(n):
                    for b in range(n):
                        A[a, b] = 2.0 * Qt[i, a, b] + rho * S[i, a, b]
                ok = True
                for a in range(n):
                    for b in range(a + 1):
                        acc = A[a, b]
                        for k in range(b):
                            acc -= L[a, k] * L[b, k]
                        if a == b:
                            if acc <= 0.0:
                                ok = False
                                break
                            L[a, a] = np.sqrt(acc)
                        else:
                            L[a, b] = acc / L[b, b]
                    if not ok:
                        break
                if not ok:
                    fail[i] = 1
                else:
                    for b in range(n):
                        X[b, b] = 1.0 / L[b, b]
                        for a in range(b + 1, n):
                            acc = 0.0
                            for k in range(b, a):
                                acc += L[a, k] * X[k, b]
                            X[a, b] = -acc / L[a, a]
                    for a in range(n):
                        for b in range(a, n):
                            acc = 0.0
                            for k in range(b, n):
                                acc += X[k, a] * X[k, b]
                            Ainv[i, a, b] = acc
                            Ainv[i, b, a] = acc
            rs[1] = 0.0
            rs[2] = 1.0
            bad = 0
            for i in range(N):
                bad += fail[i]
            if bad != 0:
                status = FACTORIZATION_FAILED
                break

        # --- phase A: per-segment closed-form solve, ball projection,
        #     velocity dual update, diagnostics (parallel) ---
        for i in prange(N):
            rhs = np.empty(n)
            for j in range(n):
                acc = 0.0
                for k in range(ms):
                    acc += Mt[i, k, j] * (Z[i, k] - U[i, k])
                for k in range(ms):
                    acc += Mt[i, ms + k, j] * (Z[i + 1, k] - U[i, ms + k])
                rhs[j] = acc
            for k in range(R):
                wc = bo[i, k] - Sl[i, k] - V[i, k]
                if wc != 0.0:
                    for j in range(n):
                        rhs[j] += Ao[i, k, j] * wc
            for k in range(Mv):
                for d in range(m):
                    wc = PHI[i, k, d] - W[i, k, d]
                    if wc != 0.0:
                        for j in range(n):
                            rhs[j] += Av[i, k * m + d, j] * wc
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc += Ainv[i, j, k] * rhs[k]
                C[i, j] = rho * acc
            vex = 0.0
            for k in range(Mv):
                nrm2 = 0.0
                spd2 = 0.0
                for d in range(m):
                    acc = 0.0
                    for j in range(n):
                        acc += Av[i, k * m + d, j] * C[i, j]
                    spd2 += acc * acc
                    yv = acc + W[i, k, d]
                    PHI[i, k, d] = yv  # stash y = Av c + w
                    nrm2 += yv * yv
                spd = np.sqrt(spd2)
                SPEED[i, k] = spd
                if spd - vmax > vex:
                    vex = spd - vmax
                sc = 1.0
                if nrm2 > vmax2:
                    sc = vmax / np.sqrt(nrm2)
                for d in range(m):
                    yv = PHI[i, k, d]
                    phi = sc * yv
                    PHI[i, k, d] = phi
                    W[i, k, d] = yv - phi
            vex_part[i] = vex
            for k in range(mc):
                acc = 0.0
                for j in range(n):
                    acc += Mt[i, k, j] * C[i, j]
                MtC[i, k] = acc
            cor = 0.0
            for k in range(R):
                acc = 0.0
                for j in range(n):
                    acc += Ao[i, k, j] * C[i, j]
                AoC[i, k] = acc
                viol = (acc - bo[i, k]) * rmask[i, k]
                if viol > cor:
                    cor = viol
            cor_part[i] = cor
            o = 0.0
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc += Qt[i, j, k] * C[i, k]
                o += C[i, j] * acc
            obj_part[i] = o

        # --- consensus update (serial) ---
        for i2 in range(N + 1):
            for j in range(ms):
                Zold[i2, j] = Z[i2, j]
        for i2 in range(1, N):
            for j in range(ms):
                if zfix[i2, j] == 0:
                    Z[i2, j] = 0.5 * (MtC[i2 - 1, ms + j] + MtC[i2, j])
        for j in range(ms):
            if zfix[0, j] == 0:
                Z[0, j] = MtC[0, j]
            if zfix[N, j] == 0:
                Z[N, j] = MtC[N - 1, ms + j]

        # --- primal residual: splice gaps (serial, fixed order) ---
        rp2 = 0.0
        for i2 in range(N - 1):
            for j in range(ms):
                g = MtC[i2, ms + j] - MtC[i2 + 1, j]
                rp2 += g * g

        # --- phase C: dual residual partials, slack and dual updates ---
        for i in prange(N):
            acc2 = 0.0
            for j in range(n):
                acc = 0.0
                for k in range(ms):
                    acc += Mt[i, k, j] * (Z[i, k] - Zold[i, k])
                    acc += Mt[i, ms + k, j] * (Z[i + 1, k] - Zold[i + 1, k])
                acc *= -rho
                acc2 += acc * acc
            rd_part[i] = acc2
            for k in range(R):
                e = AoC[i, k] - bo[i, k] + V[i, k]
                sk = -e if e < 0.0 else 0.0
                Sl[i, k] = sk
                V[i, k] = V[i, k] + AoC[i, k] + sk - bo[i, k]
            for k in range(ms):
                U[i, k] = U[i, k] + MtC[i, k] - Z[i, k]
                U[i, ms + k] = U[i, ms + k] + MtC[i, ms + k] - Z[i + 1, k]

        # --- reductions in fixed order (serial) ---
        rd2 = 0.0
        obj = 0.0
        for i2 in range(N):
            rd2 += rd_part[i2]
            obj += obj_part[i2]
        cormax = 0.0
        vexmax = 0.0
        for i2 in range(N):
            if cor_part[i2] > cormax:
                cormax = cor_part[i2]
            if vex_part[i2] > vexmax:
                vexmax = vex_part[i2]

        row = k0 + done
        trace[row, 0] = np.sqrt(rp2)
        trace[row, 1] = np.sqrt(rd2)
        trace[row, 2] = rho
        trace[row, 3] = obj
        trace[row, 4] = cormax
        trace[row, 5] = vexmax
        done += 1

        if rp2 < thr2 and rd2 < thr2:
            status = CONVERGED
            break

        if adapt == 1:
            rp_n = np.sqrt(rp2)
            rd_n = np.sqrt(rd2)
            f = 1.0
            if rp_n > mu * rd_n:
                f = tau_incr
            elif rd_n > mu * rp_n:
                f = 1.0 / tau_decr
            if f != 1.0:
                newr = rho * f
                if newr < rho_min:
                    newr = rho_min
                if newr > rho_max:
                    newr = rho_max
                if newr != rho:
                    rs[0] = newr
                    rs[1] = 1.0
                    rs[2] = rho / newr

    return done, status


iterate_serial = njit(cache=True)(_iterate_impl)
iterate_parallel = njit(parallel=True, cache=True)(_iterate_impl)
