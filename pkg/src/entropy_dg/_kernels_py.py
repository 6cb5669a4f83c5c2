"""Pure-numpy assembly kernels (reference implementation).

The compiled module `entropy_dg._speedups` provides the same three entry
points; `entropy_dg.kernels` picks one at import time.  Both operate on the
flat array tables prepared by `forms.AssemblyTable` and must agree to
round-off.  |lambda| is capped at LAM_CAP at every evaluation point so that
exp(2 max lambda + max |lambda|) stays representable inside the
stabilization factor.
"""

import numpy as np

from .errors import DensityOverflowError

LAM_CAP = 200.0


def _alpha_plan(ck, tab):
    """Frozen max-branch selections of the stabilization factor at ck.

    Per face: winning side of the exp-trace max, winning side / sample index /
    sign of the elementwise L-infinity max.  Holding these fixed makes the
    stabilization smooth for finite differencing.
    """
    lam_l = ck[:-1] @ tab.phi1
    lam_r = ck[1:] @ tab.phi0
    samples = ck @ tab.samp  # (n_el, ns)
    linf_idx = np.argmax(np.abs(samples), axis=1)
    rows = np.arange(ck.shape[0])
    linf_val = np.abs(samples[rows, linf_idx])
    linf_sign = np.where(samples[rows, linf_idx] >= 0.0, 1.0, -1.0)
    side_e = np.where(lam_l >= lam_r, 0, 1).astype(np.int64)
    side_m = np.where(linf_val[:-1] >= linf_val[1:], 0, 1).astype(np.int64)
    elem_m = np.arange(ck.shape[0] - 1) + side_m
    return {
        "side_e": side_e,
        "elem_m": elem_m,
        "idx_m": linf_idx[elem_m],
        "sign_m": linf_sign[elem_m],
    }


def _batch_residual(C, exp_prev_q, tab, dt, diff, eps, reaction, plan=None):
    """Scheme residuals for a batch of coefficient arrays, shape (b, n_dof).

    Residual entry i is the scheme tested against the physically orthonormal
    basis function phi_i / sqrt(h_K):

        int (e^l - e^l_prev) t_i + dt*D*B(l; l, t_i) + eps int l t_i
            - dt int e^l (1 - e^l) t_i      [reaction term optional]
    """
    b, n_el, m = C.shape
    w = tab.w
    sqrt_h = np.sqrt(tab.h)

    V = np.einsum("bem,mq->beq", C, tab.phi)
    if np.max(np.abs(V)) > LAM_CAP:
        bad = np.unravel_index(np.argmax(np.abs(V)), V.shape)[1]
        raise DensityOverflowError(bad)
    Vd = np.einsum("bem,mq->beq", C, tab.dphi)
    E = np.exp(V)

    integrand = (E - exp_prev_q[None]) + eps * V
    if reaction:
        integrand = integrand - dt * E * (1.0 - E)
    r = np.einsum("beq,iq->bei", integrand * w, tab.phi) * sqrt_h[:, None]
    r += (
        np.einsum("beq,iq->bei", E * Vd * w, tab.dphi)
        * (dt * diff / (tab.h * sqrt_h))[:, None]
    )

    if n_el > 1:
        end0 = C @ tab.phi0  # (b, n_el) traces at the left element endpoint
        end1 = C @ tab.phi1
        worst = np.maximum(np.abs(end0), np.abs(end1)).max(axis=0)
        if np.max(worst) > LAM_CAP:
            raise DensityOverflowError(int(np.argmax(worst)))
        lam_l = end1[:, :-1]
        lam_r = end0[:, 1:]
        g_l = (C[:, :-1, :] @ tab.dphi1) / tab.h[:-1]
        g_r = (C[:, 1:, :] @ tab.dphi0) / tab.h[1:]
        e_l = np.exp(lam_l)
        e_r = np.exp(lam_r)
        jump = lam_l - lam_r
        avg_flux = 0.5 * (e_l * g_l + e_r * g_r)

        if plan is None:
            samples = np.einsum("bem,ms->bes", C, tab.samp)
            linf = np.max(np.abs(samples), axis=2)
            if np.max(linf) > LAM_CAP:
                raise DensityOverflowError(int(np.argmax(np.max(linf, axis=0))))
            e_max = np.maximum(e_l, e_r)
            m_max = np.maximum(linf[:, :-1], linf[:, 1:])
        else:
            e_max = np.where(plan["side_e"][None, :] == 0, e_l, e_r)
            samp_cols = tab.samp[:, plan["idx_m"]]  # (m, n_f)
            m_max = plan["sign_m"][None, :] * np.einsum(
                "bfm,mf->bf", C[:, plan["elem_m"], :], samp_cols
            )
        alpha = 1.5 * tab.c_inv2 * e_max**2 * np.exp(m_max)
        pen = tab.pen_w * alpha * jump

        dtD = dt * diff
        s_l = 1.0 / sqrt_h[:-1]
        s_r = 1.0 / sqrt_h[1:]
        # left-element entries: jump(test) = +phi1*s_l
        left = (
            (-avg_flux + pen)[:, :, None] * (tab.phi1 * s_l[:, None])[None]
            - (0.5 * e_l * jump)[:, :, None]
            * (tab.dphi1 * (s_l / tab.h[:-1])[:, None])[None]
        )
        # right-element entries: jump(test) = -phi0*s_r
        right = (
            (avg_flux - pen)[:, :, None] * (tab.phi0 * s_r[:, None])[None]
            - (0.5 * e_r * jump)[:, :, None]
            * (tab.dphi0 * (s_r / tab.h[1:])[:, None])[None]
        )
        r[:, :-1, :] += dtD * left
        r[:, 1:, :] += dtD * right

    return r.reshape(b, n_el * m)


def residual(ck, exp_prev_q, tab, dt, diff, eps, reaction):
    """Scheme residual vector at coefficients ck, shape (n_dof,)."""
    return _batch_residual(ck[None], exp_prev_q, tab, dt, diff, eps, reaction)[0]


def fd_jacobian(ck, exp_prev_q, tab, dt, diff, eps, reaction):
    """Forward-difference Jacobian with frozen stabilization branches.

    Column j uses the step eta_j = sqrt(machine eps) * max(1, |c_j|); the
    max selections inside the stabilization factor stay pinned at ck, so the
    differenced map is smooth even at branch ties.  Used as a cross-check
    oracle; the production Jacobian is the exact derivative below, because
    differencing loses all significance against the exp-scaled curvature of
    the penalty on floor-datum states.
    """
    n_el, m = ck.shape
    n = n_el * m
    plan = _alpha_plan(ck, tab)
    flat = ck.reshape(-1)
    eta = np.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(flat))
    batch = np.broadcast_to(flat, (n + 1, n)).copy()
    batch[1:, :] += np.diag(eta)
    r = _batch_residual(
        batch.reshape(n + 1, n_el, m), exp_prev_q, tab, dt, diff, eps, reaction,
        plan=plan,
    )
    return (r[1:] - r[0]).T / eta[None, :]


def jacobian(ck, exp_prev_q, tab, dt, diff, eps, reaction):
    """Exact Jacobian of the residual with stabilization branches frozen at ck.

    Away from branch ties this is the derivative of the true residual; at a
    tie it is the one-sided derivative selected by the frozen plan.  Block
    tridiagonal: a coefficient touches its own element and the two faces it
    borders.
    """
    n_el, m = ck.shape
    n = n_el * m
    w = tab.w
    sqrt_h = np.sqrt(tab.h)
    J = np.zeros((n, n))

    V = np.einsum("em,mq->eq", ck, tab.phi)
    if np.max(np.abs(V)) > LAM_CAP:
        raise DensityOverflowError(int(np.argmax(np.max(np.abs(V), axis=1))))
    G = np.einsum("em,mq->eq", ck, tab.dphi)
    E = np.exp(V)

    dint = E + eps
    if reaction:
        dint = dint - dt * (E - 2.0 * E * E)
    blocks = np.einsum("eq,iq,jq->eij", w * dint, tab.phi, tab.phi) \
        * sqrt_h[:, None, None]
    volw = dt * diff / (tab.h * sqrt_h)
    blocks += volw[:, None, None] * (
        np.einsum("eq,iq,jq->eij", w * E * G, tab.dphi, tab.phi)
        + np.einsum("eq,iq,jq->eij", w * E, tab.dphi, tab.dphi)
    )
    for e in range(n_el):
        sl = slice(e * m, (e + 1) * m)
        J[sl, sl] += blocks[e]

    if n_el > 1:
        plan = _alpha_plan(ck, tab)
        h = tab.h
        n_f = n_el - 1
        lam_l = ck[:-1] @ tab.phi1
        lam_r = ck[1:] @ tab.phi0
        g_l = (ck[:-1] @ tab.dphi1) / h[:-1]
        g_r = (ck[1:] @ tab.dphi0) / h[1:]
        e_l, e_r = np.exp(lam_l), np.exp(lam_r)
        jump = lam_l - lam_r
        e_s = np.where(plan["side_e"] == 0, e_l, e_r)
        samp_cols = tab.samp[:, plan["idx_m"]]  # (m, n_f)
        m_val = plan["sign_m"] * np.einsum("fm,mf->f", ck[plan["elem_m"]], samp_cols)
        alpha = 1.5 * tab.c_inv2 * e_s**2 * np.exp(m_val)
        dtD = dt * diff
        s_l = 1.0 / sqrt_h[:-1]
        s_r = 1.0 / sqrt_h[1:]
        faces = np.arange(n_f)

        for side in (0, 1):  # trial coefficients of the left / right element
            if side == 0:
                dlam = np.broadcast_to(tab.phi1, (n_f, m))
                djump = dlam
                de_l = e_l[:, None] * dlam
                de_r = np.zeros((n_f, m))
                daf = 0.5 * (de_l * g_l[:, None]
                             + e_l[:, None] * tab.dphi1[None] / h[:-1, None])
            else:
                dlam = np.broadcast_to(tab.phi0, (n_f, m))
                djump = -dlam
                de_l = np.zeros((n_f, m))
                de_r = e_r[:, None] * dlam
                daf = 0.5 * (de_r * g_r[:, None]
                             + e_r[:, None] * tab.dphi0[None] / h[1:, None])
            dalpha = alpha[:, None] * (
                2.0 * dlam * (plan["side_e"] == side)[:, None]
                + plan["sign_m"][:, None] * samp_cols.T
                * (plan["elem_m"] == faces + side)[:, None]
            )
            dpen = tab.pen_w[:, None] * (dalpha * jump[:, None]
                                         + alpha[:, None] * djump)
            jl = dtD * (
                np.einsum("fj,i->fij", dpen - daf, tab.phi1) * s_l[:, None, None]
                - 0.5 * np.einsum("fj,i->fij",
                                  de_l * jump[:, None] + e_l[:, None] * djump,
                                  tab.dphi1) * (s_l / h[:-1])[:, None, None]
            )
            jr = dtD * (
                np.einsum("fj,i->fij", daf - dpen, tab.phi0) * s_r[:, None, None]
                - 0.5 * np.einsum("fj,i->fij",
                                  de_r * jump[:, None] + e_r[:, None] * djump,
                                  tab.dphi0) * (s_r / h[1:])[:, None, None]
            )
            for f in range(n_f):
                cols = slice((f + side) * m, (f + side + 1) * m)
                J[f * m:(f + 1) * m, cols] += jl[f]
                J[(f + 1) * m:(f + 2) * m, cols] += jr[f]
    return J
