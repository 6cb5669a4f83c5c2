# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled assembly kernels; mirrors _kernels_py exactly.

Residual entries and the Jacobian only touch a three element neighbourhood
per coefficient; the Jacobian is the exact derivative of the residual with
the stabilization max-branches frozen at the expansion point.
"""

import numpy as np

from .errors import DensityOverflowError

from libc.math cimport exp, fabs, sqrt

cdef double LAM_CAP = 200.0


cdef int _volume_row(const double[:, ::1] ck, const double[:, ::1] expp,
                     const double[::1] h, const double[::1] w,
                     const double[:, ::1] phi, const double[:, ::1] dphi,
                     double dt, double diff, double eps, bint reaction,
                     Py_ssize_t e, double[::1] out) noexcept nogil:
    """Volume terms of element e tested against its p+1 local test functions."""
    cdef Py_ssize_t m = phi.shape[0], nq = phi.shape[1]
    cdef Py_ssize_t i, q, j
    cdef double lam, lamd, E, integ
    cdef double sq = sqrt(h[e])
    cdef double volw = dt * diff / (h[e] * sq)
    for i in range(m):
        out[i] = 0.0
    for q in range(nq):
        lam = 0.0
        lamd = 0.0
        for j in range(m):
            lam += ck[e, j] * phi[j, q]
            lamd += ck[e, j] * dphi[j, q]
        if lam > LAM_CAP or lam < -LAM_CAP:
            return <int> e
        E = exp(lam)
        integ = (E - expp[e, q]) + eps * lam
        if reaction:
            integ -= dt * E * (1.0 - E)
        for i in range(m):
            out[i] += w[q] * (integ * phi[i, q] * sq + E * lamd * dphi[i, q] * volw)
    return -1


cdef int _elem_linf(const double[:, ::1] ck, const double[:, ::1] samp,
                    Py_ssize_t e, double* val, Py_ssize_t* idx, double* sgn) noexcept nogil:
    """max |lambda| over the sampling grid of element e, with argmax bookkeeping."""
    cdef Py_ssize_t m = samp.shape[0], ns = samp.shape[1]
    cdef Py_ssize_t s, j, best = 0
    cdef double v, av, bestv = -1.0, bestsigned = 0.0
    for s in range(ns):
        v = 0.0
        for j in range(m):
            v += ck[e, j] * samp[j, s]
        av = fabs(v)
        if av > bestv:
            bestv = av
            best = s
            bestsigned = v
    val[0] = bestv
    idx[0] = best
    sgn[0] = 1.0 if bestsigned >= 0.0 else -1.0
    if bestv > LAM_CAP:
        return <int> e
    return -1


cdef int _face_rows(const double[:, ::1] ck, const double[::1] h,
                    const double[:, ::1] samp,
                    const double[::1] phi0, const double[::1] phi1,
                    const double[::1] dphi0, const double[::1] dphi1,
                    const double[::1] pen_w, double c_inv2, double dtD,
                    Py_ssize_t f,
                    double[::1] out_l, double[::1] out_r) noexcept nogil:
    """Face f contributions to the left / right element test rows."""
    cdef Py_ssize_t m = phi0.shape[0]
    cdef Py_ssize_t i, j
    cdef Py_ssize_t el = f, er = f + 1
    cdef double lam_l = 0.0, lam_r = 0.0, g_l = 0.0, g_r = 0.0
    cdef double e_l, e_r, jump, avg_flux, alpha, pen, emax, mmax
    cdef double linf_l, linf_r, sgn_l, sgn_r
    cdef Py_ssize_t il, ir
    cdef double s_l, s_r
    for j in range(m):
        lam_l += ck[el, j] * phi1[j]
        lam_r += ck[er, j] * phi0[j]
        g_l += ck[el, j] * dphi1[j]
        g_r += ck[er, j] * dphi0[j]
    if fabs(lam_l) > LAM_CAP:
        return <int> el
    if fabs(lam_r) > LAM_CAP:
        return <int> er
    g_l /= h[el]
    g_r /= h[er]
    e_l = exp(lam_l)
    e_r = exp(lam_r)
    if _elem_linf(ck, samp, el, &linf_l, &il, &sgn_l) >= 0:
        return <int> el
    if _elem_linf(ck, samp, er, &linf_r, &ir, &sgn_r) >= 0:
        return <int> er
    emax = e_l if e_l >= e_r else e_r
    mmax = linf_l if linf_l >= linf_r else linf_r
    alpha = 1.5 * c_inv2 * emax * emax * exp(mmax)
    jump = lam_l - lam_r
    avg_flux = 0.5 * (e_l * g_l + e_r * g_r)
    pen = pen_w[f] * alpha * jump
    s_l = 1.0 / sqrt(h[el])
    s_r = 1.0 / sqrt(h[er])
    for i in range(m):
        out_l[i] = dtD * ((pen - avg_flux) * phi1[i] * s_l
                          - 0.5 * e_l * jump * dphi1[i] * s_l / h[el])
        out_r[i] = dtD * ((avg_flux - pen) * phi0[i] * s_r
                          - 0.5 * e_r * jump * dphi0[i] * s_r / h[er])
    return -1


def residual(double[:, ::1] ck, double[:, ::1] exp_prev_q,
             double[::1] h, double[::1] w,
             double[:, ::1] phi, double[:, ::1] dphi,
             double[::1] phi0, double[::1] phi1,
             double[::1] dphi0, double[::1] dphi1,
             double[:, ::1] samp, double[::1] pen_w,
             double c_inv2, double dt, double diff, double eps, bint reaction):
    cdef Py_ssize_t n_el = ck.shape[0], m = ck.shape[1]
    cdef Py_ssize_t e, f, i
    cdef int err
    out_np = np.zeros(n_el * m)
    cdef double[::1] out = out_np
    scratch_np = np.zeros(3 * m)
    cdef double[::1] row = scratch_np[:m]
    cdef double[::1] frow_l = scratch_np[m:2 * m]
    cdef double[::1] frow_r = scratch_np[2 * m:]
    for e in range(n_el):
        err = _volume_row(ck, exp_prev_q, h, w, phi, dphi, dt, diff, eps,
                          reaction, e, row)
        if err >= 0:
            raise DensityOverflowError(err)
        for i in range(m):
            out[e * m + i] += row[i]
    for f in range(n_el - 1):
        err = _face_rows(ck, h, samp, phi0, phi1, dphi0, dphi1, pen_w,
                         c_inv2, dt * diff, f, frow_l, frow_r)
        if err >= 0:
            raise DensityOverflowError(err)
        for i in range(m):
            out[f * m + i] += frow_l[i]
            out[(f + 1) * m + i] += frow_r[i]
    return out_np


def jacobian(double[:, ::1] ck, double[:, ::1] exp_prev_q,
             double[::1] h, double[::1] w,
             double[:, ::1] phi, double[:, ::1] dphi,
             double[::1] phi0, double[::1] phi1,
             double[::1] dphi0, double[::1] dphi1,
             double[:, ::1] samp, double[::1] pen_w,
             double c_inv2, double dt, double diff, double eps, bint reaction):
    """Exact Jacobian with stabilization branches frozen at ck."""
    cdef Py_ssize_t n_el = ck.shape[0], m = ck.shape[1]
    cdef Py_ssize_t nq = phi.shape[1]
    cdef Py_ssize_t n = n_el * m
    cdef Py_ssize_t n_f = n_el - 1
    J_np = np.zeros((n, n))
    cdef double[:, ::1] J = J_np
    cdef Py_ssize_t e, f, i, j, q, side, etrial
    cdef double lam, lamd, E, dint, sq, volw
    cdef double dtD = dt * diff

    # volume blocks
    for e in range(n_el):
        sq = sqrt(h[e])
        volw = dtD / (h[e] * sq)
        for q in range(nq):
            lam = 0.0
            lamd = 0.0
            for j in range(m):
                lam += ck[e, j] * phi[j, q]
                lamd += ck[e, j] * dphi[j, q]
            if lam > LAM_CAP or lam < -LAM_CAP:
                raise DensityOverflowError(<int> e)
            E = exp(lam)
            dint = E + eps
            if reaction:
                dint -= dt * (E - 2.0 * E * E)
            for i in range(m):
                for j in range(m):
                    J[e * m + i, e * m + j] += w[q] * (
                        dint * phi[i, q] * phi[j, q] * sq
                        + E * (lamd * phi[j, q] + dphi[j, q]) * dphi[i, q] * volw)

    if n_f <= 0:
        return J_np

    # frozen stabilization data per element
    linf_np = np.zeros(n_el)
    lidx_np = np.zeros(n_el, dtype=np.intp)
    lsgn_np = np.zeros(n_el)
    cdef double[::1] linf = linf_np
    cdef Py_ssize_t[::1] lidx = lidx_np
    cdef double[::1] lsgn = lsgn_np
    cdef double v
    cdef Py_ssize_t vi
    cdef double vs
    for e in range(n_el):
        if _elem_linf(ck, samp, e, &v, &vi, &vs) >= 0:
            raise DensityOverflowError(<int> e)
        linf[e] = v
        lidx[e] = vi
        lsgn[e] = vs

    cdef double lam_l, lam_r, g_l, g_r, e_l, e_r, jump, af, alpha, m_val
    cdef Py_ssize_t side_e, elem_m, idx_m
    cdef double sign_m, s_l, s_r
    cdef double dlam, djump, de_l, de_r, daf, dalpha, dpen, colv_l, colv_r
    for f in range(n_f):
        lam_l = 0.0
        lam_r = 0.0
        g_l = 0.0
        g_r = 0.0
        for j in range(m):
            lam_l += ck[f, j] * phi1[j]
            lam_r += ck[f + 1, j] * phi0[j]
            g_l += ck[f, j] * dphi1[j]
            g_r += ck[f + 1, j] * dphi0[j]
        if fabs(lam_l) > LAM_CAP:
            raise DensityOverflowError(<int> f)
        if fabs(lam_r) > LAM_CAP:
            raise DensityOverflowError(<int> (f + 1))
        g_l /= h[f]
        g_r /= h[f + 1]
        e_l = exp(lam_l)
        e_r = exp(lam_r)
        jump = lam_l - lam_r
        af = 0.5 * (e_l * g_l + e_r * g_r)
        side_e = 0 if lam_l >= lam_r else 1
        elem_m = f if linf[f] >= linf[f + 1] else f + 1
        idx_m = lidx[elem_m]
        sign_m = lsgn[elem_m]
        m_val = 0.0
        for j in range(m):
            m_val += ck[elem_m, j] * samp[j, idx_m]
        m_val *= sign_m
        alpha = 1.5 * c_inv2 * (e_l if side_e == 0 else e_r) ** 2 * exp(m_val)
        s_l = 1.0 / sqrt(h[f])
        s_r = 1.0 / sqrt(h[f + 1])
        for side in range(2):
            etrial = f + side
            for j in range(m):
                if side == 0:
                    dlam = phi1[j]
                    djump = dlam
                    de_l = e_l * dlam
                    de_r = 0.0
                    daf = 0.5 * (de_l * g_l + e_l * dphi1[j] / h[f])
                else:
                    dlam = phi0[j]
                    djump = -dlam
                    de_l = 0.0
                    de_r = e_r * dlam
                    daf = 0.5 * (de_r * g_r + e_r * dphi0[j] / h[f + 1])
                dalpha = 0.0
                if side_e == side:
                    dalpha += 2.0 * dlam
                if elem_m == etrial:
                    dalpha += sign_m * samp[j, idx_m]
                dalpha *= alpha
                dpen = pen_w[f] * (dalpha * jump + alpha * djump)
                colv_l = dpen - daf
                colv_r = 0.5 * (de_l * jump + e_l * djump) * s_l / h[f]
                for i in range(m):
                    J[f * m + i, etrial * m + j] += dtD * (
                        colv_l * phi1[i] * s_l - colv_r * dphi1[i])
                colv_l = daf - dpen
                colv_r = 0.5 * (de_r * jump + e_r * djump) * s_r / h[f + 1]
                for i in range(m):
                    J[(f + 1) * m + i, etrial * m + j] += dtD * (
                        colv_l * phi0[i] * s_r - colv_r * dphi0[i])
    return J_np
