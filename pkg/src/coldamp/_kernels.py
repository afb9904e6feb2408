"""Compiled inner loops shared by the trajectory engines.

Everything here operates on plain arrays so it can run under numba. The
python-facing wrappers live in :mod:`coldamp.sme`, :mod:`coldamp.gaussian` and
:mod:`coldamp.circuit`; tests compare the two paths step by step.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# status codes returned by the chunk kernels
OK = 0
POSITIVITY_BREACH = 1
TRUNCATION_BREACH = 2
COVARIANCE_BREACH = 3
TRACE_BREACH = 4

# pre-normalisation trace drift beyond which a step is rejected
TRACE_TOL = 0.5

# loop parameter vector layout
LP_MODE = 0  # 0 ideal demodulation, 1 filter circuit
LP_GAMMA_IN = 1
LP_ETA = 2
LP_PHASE = 3
LP_KICK = 4  # ideal: G_tilde; filter: 1 (the circuit output is the drive)
LP_GAIN = 5  # electronic gain (filter mode)
LP_B0 = 6
LP_B1 = 7
LP_B2 = 8
LP_A1 = 9
LP_A2 = 10
LP_ROT_C = 11
LP_ROT_S = 12
LP_COS_W = 13
LP_SIN_W = 14
LP_WINDOW = 15  # demodulation window length (s)
LP_SIZE = 16

# loop float state layout
LS_DRIVE = 0  # held drive amplitude for the current sample
LS_BQ1 = 1
LS_BQ2 = 2
LS_YPREV = 3
LS_SIZE = 4


@njit(cache=True)
def biquad_tick(b0, b1, b2, a1, a2, state, i1, i2, x):
    """Transposed direct-form II biquad; ``state[i1], state[i2]`` are the registers."""
    y = b0 * x + state[i1]
    state[i1] = b1 * x - a1 * y + state[i2]
    state[i2] = b2 * x - a2 * y
    return y


@njit(cache=True)
def rotate_tick(y, y_prev, rot_c, rot_s, cos_w, sin_w):
    """Rotate a narrowband tone at ``w`` by the phase encoded in ``rot_c, rot_s``.

    The quadrature of ``y[k] = A cos(a_k)`` is rebuilt exactly at ``w`` from the
    previous sample: ``A sin(a_k) = (y[k-1] - y[k] cos w) / sin w``.
    """
    q = (y_prev - y * cos_w) / sin_w
    return y * rot_c + q * rot_s


@njit(cache=True)
def loop_update(lp, fs, ring, ring_pos, delay, delay_pos, i_in, acc_c, acc_s, zeta,
                z_rot, p_rot, dt_sample):
    """Advance the feedback loop by one sample and set the next held drive.

    ``z_rot, p_rot`` are the conditional quadratures in the frame rotating at
    the trap frequency, evaluated at the end of the sample. Returns the new
    ring and delay positions.
    """
    if lp[LP_MODE] == 0.0:
        lw = ring.shape[1]
        ring[0, ring_pos] = acc_c
        ring[1, ring_pos] = acc_s
        ring[2, ring_pos] = zeta
        ring_pos = (ring_pos + 1) % lw
        sc = 0.0
        ss = 0.0
        sz = 0.0
        for m in range(lw):
            sc += ring[0, m]
            ss += ring[1, m]
            sz += ring[2, m]
        w = lp[LP_WINDOW]
        ph = lp[LP_PHASE]
        cph = math.cos(ph)
        sph = math.sin(ph)
        # unit-density demodulated in-loop noise in the fed-back quadrature
        xi_corr = (cph * sc - sph * ss) / (w * math.sqrt(2.0))
        xi = (xi_corr + sz / w) / math.sqrt(2.0)
        signal = z_rot * cph - p_rot * sph
        g = lp[LP_GAMMA_IN]
        new = g * lp[LP_ETA] * signal + math.sqrt(g / 2.0) * xi
    else:
        y = biquad_tick(lp[LP_B0], lp[LP_B1], lp[LP_B2], lp[LP_A1], lp[LP_A2],
                        fs, LS_BQ1, LS_BQ2, i_in)
        r = rotate_tick(y, fs[LS_YPREV], lp[LP_ROT_C], lp[LP_ROT_S],
                        lp[LP_COS_W], lp[LP_SIN_W])
        fs[LS_YPREV] = y
        new = lp[LP_GAIN] * r
    nd = delay.shape[0]
    delay[delay_pos] = new
    delay_pos = (delay_pos + 1) % nd
    fs[LS_DRIVE] = delay[delay_pos]
    return ring_pos, delay_pos


# -- density matrix engine ------------------------------------------------


@njit(cache=True)
def expect_z(rho, sq):
    d = rho.shape[0]
    acc = 0.0
    for n in range(d - 1):
        acc += sq[n + 1] * rho[n + 1, n].real
    return 2.0 * acc


@njit(cache=True)
def expect_p(rho, sq):
    # p = i(a^dag - a):  Tr(p rho) = 2 sum sqrt(n+1) Im rho[n+1, n]
    d = rho.shape[0]
    acc = 0.0
    for n in range(d - 1):
        acc += sq[n + 1] * rho[n + 1, n].imag
    return 2.0 * acc


@njit(cache=True)
def expect_n(rho):
    acc = 0.0
    for n in range(rho.shape[0]):
        acc += n * rho[n, n].real
    return acc


@njit(cache=True)
def _z_commutator(src, dst, sq):
    """dst = z src - src z."""
    d = src.shape[0]
    for i in range(d):
        for j in range(d):
            v = 0.0 + 0.0j
            if i + 1 < d:
                v += sq[i + 1] * src[i + 1, j]
            if i >= 1:
                v += sq[i] * src[i - 1, j]
            if j + 1 < d:
                v -= src[i, j + 1] * sq[j + 1]
            if j >= 1:
                v -= src[i, j - 1] * sq[j]
            dst[i, j] = v


@njit(cache=True)
def sme_step(rho, work, comm, comm2, sq, rot, Gamma, N, kappa, dW, theta, dt):
    """One integrator step of the conditional master equation, in place.

    Euler-Maruyama for the laser-cooling dissipator and the measurement
    innovation, a second-order unitary kick ``exp(-i theta z)`` for the
    feedback, the free rotation applied exactly, then hermitisation and
    trace renormalisation. Returns the pre-normalisation trace.
    """
    d = rho.shape[0]
    zc = expect_z(rho, sq)
    gp = Gamma * (N + 1.0)
    gm = Gamma * N
    for i in range(d):
        ci = i + 1.0 if i < d - 1 else 0.0  # (a a^dag)_ii on the truncated space
        for j in range(d):
            cj = j + 1.0 if j < d - 1 else 0.0
            r = rho[i, j]
            down = 0.0 + 0.0j
            if i + 1 < d and j + 1 < d:
                down = sq[i + 1] * sq[j + 1] * rho[i + 1, j + 1]
            up = 0.0 + 0.0j
            if i >= 1 and j >= 1:
                up = sq[i] * sq[j] * rho[i - 1, j - 1]
            lind = gp * (down - 0.5 * (i + j) * r) + gm * (up - 0.5 * (ci + cj) * r)
            zr = 0.0 + 0.0j
            if i + 1 < d:
                zr += sq[i + 1] * rho[i + 1, j]
            if i >= 1:
                zr += sq[i] * rho[i - 1, j]
            if j + 1 < d:
                zr += rho[i, j + 1] * sq[j + 1]
            if j >= 1:
                zr += rho[i, j - 1] * sq[j]
            work[i, j] = r + dt * lind + kappa * dW * (zr - 2.0 * zc * r)
    if theta != 0.0:
        _z_commutator(work, comm, sq)
        _z_commutator(comm, comm2, sq)
        h = 0.5 * theta * theta
        for i in range(d):
            for j in range(d):
                work[i, j] = work[i, j] - 1j * theta * comm[i, j] - h * comm2[i, j]
    tr = 0.0
    for i in range(d):
        tr += work[i, i].real
    if not abs(tr - 1.0) < TRACE_TOL:
        return tr  # diverged; caller reports it, rho left untouched
    for i in range(d):
        for j in range(i, d):
            v = 0.5 * (work[i, j] + np.conj(work[j, i])) * rot[i - j + d - 1] / tr
            rho[i, j] = v
            rho[j, i] = np.conj(v)
        rho[i, i] = rho[i, i].real + 0.0j
    return tr


@njit(cache=True)
def sme_chunk(rho, work, comm, comm2, sq, rot, phys, lp, fs, ring, ring_pos, delay,
              delay_pos, cos_tab, sin_tab, step0, dW_in, dW_out, zeta, out, out0,
              check_every):
    """Run ``dW_in.shape[0]`` samples of the density-matrix loop.

    ``phys = [nu, Gamma, N, gamma_in, gamma_out, eta, kappa_in, dt, kappa_out]``.
    ``dW_in`` and ``dW_out`` hold the per-step increments of both detectors;
    the state is conditioned on both. ``out`` has rows
    ``I_in, I_out, V_fb, z, p, n`` and is filled from column ``out0``.
    Returns ``(status, sample_index, ring_pos, delay_pos, value)``.
    """
    Gamma = phys[1]
    N = phys[2]
    g_in = phys[3]
    g_out = phys[4]
    eta = phys[5]
    k_in = phys[6]
    dt = phys[7]
    k_out = phys[8]
    kappa = math.sqrt(k_in * k_in + k_out * k_out)
    n_samp, sub = dW_in.shape
    dts = dt * sub
    period_steps = cos_tab.shape[0]
    ideal = lp[LP_MODE] == 0.0
    kick = lp[LP_KICK]
    step = step0
    for s in range(n_samp):
        drive = fs[LS_DRIVE]
        z_acc = 0.0
        w_acc = 0.0
        wo_acc = 0.0
        acc_c = 0.0
        acc_s = 0.0
        v_acc = 0.0
        for j in range(sub):
            k = step % period_steps
            c = cos_tab[k]
            sn = sin_tab[k]
            ifb = drive * c if ideal else drive
            theta = kick * ifb * dt
            v_acc += kick * ifb
            z_acc += expect_z(rho, sq)
            dw = dW_in[s, j]
            dwo = dW_out[s, j]
            w_acc += dw
            wo_acc += dwo
            dw_eff = (k_in * dw + k_out * dwo) / kappa
            acc_c += 2.0 * c * dw
            acc_s += 2.0 * sn * dw
            tr = sme_step(rho, work, comm, comm2, sq, rot, Gamma, N, kappa, dw_eff, theta, dt)
            if not abs(tr - 1.0) < TRACE_TOL:
                return TRACE_BREACH, s, ring_pos, delay_pos, tr
            step += 1
        zm = z_acc / sub
        col = out0 + s
        i_in = g_in * eta * zm + math.sqrt(g_in / 2.0) * w_acc / dts
        out[0, col] = i_in
        out[1, col] = g_out * eta * zm + math.sqrt(g_out / 2.0) * wo_acc / dts
        out[2, col] = v_acc / sub
        zl = expect_z(rho, sq)
        pl = expect_p(rho, sq)
        out[3, col] = zl
        out[4, col] = pl
        out[5, col] = expect_n(rho)
        top = rho[rho.shape[0] - 1, rho.shape[0] - 1].real
        if top >= 1e-4:
            return TRUNCATION_BREACH, s, ring_pos, delay_pos, top
        if check_every > 0 and (s + 1) % check_every == 0:
            lam = np.linalg.eigvalsh(rho)[0]
            if lam < -1e-4:
                return POSITIVITY_BREACH, s, ring_pos, delay_pos, lam
        k = step % period_steps
        zr = zl * cos_tab[k] - pl * sin_tab[k]
        pr = pl * cos_tab[k] + zl * sin_tab[k]
        ring_pos, delay_pos = loop_update(lp, fs, ring, ring_pos, delay, delay_pos, i_in,
                                          acc_c, acc_s, zeta[s], zr, pr, dts)
    return OK, n_samp, ring_pos, delay_pos, 0.0


# -- Gaussian engine ------------------------------------------------------


@njit(cache=True)
def gaussian_step(m, V, rot_c, rot_s, Gamma, N, kappa, dW, theta, dt):
    """One step for the conditional means ``m = (z, p)`` and covariance
    ``V = (Vzz, Vzp, Vpp)``; same splitting as :func:`sme_step`."""
    z = m[0]
    p = m[1]
    vzz = V[0]
    vzp = V[1]
    vpp = V[2]
    diff = Gamma * (2.0 * N + 1.0)
    k2 = 4.0 * kappa * kappa
    z = z - 0.5 * Gamma * z * dt + 2.0 * kappa * vzz * dW
    p = p - 0.5 * Gamma * p * dt + 2.0 * kappa * vzp * dW - 2.0 * theta
    nzz = vzz + (-Gamma * vzz + diff - k2 * vzz * vzz) * dt
    nzp = vzp + (-Gamma * vzp - k2 * vzz * vzp) * dt
    npp = vpp + (-Gamma * vpp + diff - k2 * vzp * vzp) * dt
    # exact free rotation by nu*dt
    c = rot_c
    s = rot_s
    m[0] = c * z + s * p
    m[1] = -s * z + c * p
    V[0] = c * c * nzz + 2 * c * s * nzp + s * s * npp
    V[1] = -c * s * nzz + (c * c - s * s) * nzp + c * s * npp
    V[2] = s * s * nzz - 2 * c * s * nzp + c * c * npp


@njit(cache=True)
def gaussian_chunk(m, V, phys, lp, fs, ring, ring_pos, delay, delay_pos, cos_tab, sin_tab,
                   step0, dW_in, dW_out, zeta, out, out0):
    """Gaussian counterpart of :func:`sme_chunk` (same loop, same record rows)."""
    nu = phys[0]
    Gamma = phys[1]
    N = phys[2]
    g_in = phys[3]
    g_out = phys[4]
    eta = phys[5]
    k_in = phys[6]
    dt = phys[7]
    k_out = phys[8]
    kappa = math.sqrt(k_in * k_in + k_out * k_out)
    rot_c = math.cos(nu * dt)
    rot_s = math.sin(nu * dt)
    n_samp, sub = dW_in.shape
    dts = dt * sub
    period_steps = cos_tab.shape[0]
    ideal = lp[LP_MODE] == 0.0
    kick = lp[LP_KICK]
    step = step0
    for s in range(n_samp):
        drive = fs[LS_DRIVE]
        z_acc = 0.0
        w_acc = 0.0
        wo_acc = 0.0
        acc_c = 0.0
        acc_s = 0.0
        v_acc = 0.0
        for j in range(sub):
            k = step % period_steps
            c = cos_tab[k]
            ifb = drive * c if ideal else drive
            theta = kick * ifb * dt
            v_acc += kick * ifb
            z_acc += m[0]
            dw = dW_in[s, j]
            dwo = dW_out[s, j]
            w_acc += dw
            wo_acc += dwo
            dw_eff = (k_in * dw + k_out * dwo) / kappa
            acc_c += 2.0 * c * dw
            acc_s += 2.0 * sin_tab[k] * dw
            gaussian_step(m, V, rot_c, rot_s, Gamma, N, kappa, dw_eff, theta, dt)
            step += 1
        zm = z_acc / sub
        col = out0 + s
        i_in = g_in * eta * zm + math.sqrt(g_in / 2.0) * w_acc / dts
        out[0, col] = i_in
        out[1, col] = g_out * eta * zm + math.sqrt(g_out / 2.0) * wo_acc / dts
        out[2, col] = v_acc / sub
        out[3, col] = m[0]
        out[4, col] = m[1]
        out[5, col] = 0.25 * (V[0] + V[2] + m[0] * m[0] + m[1] * m[1] - 2.0)
        det = V[0] * V[2] - V[1] * V[1]
        if V[0] <= 0.0 or V[2] <= 0.0 or det < 1.0 - 1e-6:
            return COVARIANCE_BREACH, s, ring_pos, delay_pos, det
        k = step % period_steps
        zr = m[0] * cos_tab[k] - m[1] * sin_tab[k]
        pr = m[1] * cos_tab[k] + m[0] * sin_tab[k]
        ring_pos, delay_pos = loop_update(lp, fs, ring, ring_pos, delay, delay_pos, i_in,
                                          acc_c, acc_s, zeta[s], zr, pr, dts)
    return OK, n_samp, ring_pos, delay_pos, 0.0
