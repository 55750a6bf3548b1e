"""Fused log-joint + gradient loops for both model families.

These are the sampler's hot path; numpy's per-call overhead dominates at the
problem sizes of interest, so everything is one compiled pass. Each kernel
fills ``grad`` (when ``want_grad`` is set) and ``terms`` with the per-block
contributions, and returns the total. Block offsets follow
``model.build_layout``; term slots follow ``model.SPARSE_TERMS`` /
``model.ARD_TERMS``.
"""

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
LOG_2_OVER_PI = math.log(2.0 / math.pi)
_BIG = 1e300


@njit(cache=True, inline="always")
def _softplus(x):
    if x > 30.0:
        return x + math.exp(-x)
    if x < -30.0:
        return math.exp(x)
    return math.log1p(math.exp(x))


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, inline="always")
def _rhs_element(x, ul, ut, uc2, tau2, c2, want_grad, grad, j_l, j_t, j_c, terms, t_x, t_l):
    """One coefficient under the regularised horseshoe plus its C+(0,1) local scale.

    Accumulates the log density into ``terms`` and the gradient w.r.t. the
    log local, log global and log slab coordinates into ``grad``; returns
    d/dx.
    """
    e = math.exp(2.0 * ul)
    q = tau2 * e
    den = c2 + q
    s2 = c2 * q / den if den > 0.0 else 0.0
    if 0.0 < e < _BIG and 0.0 < q < _BIG and 0.0 < c2 < _BIG and s2 > 0.0:
        logs2 = math.log(s2)
        inv_s2 = 1.0 / s2
        sp = math.log1p(e)
        sig_l = e / (1.0 + e)
        sig_c = c2 / den
    else:
        # over/underflow: stay in log space
        logq = 2.0 * (ut + ul)
        hi = max(uc2, logq)
        logs2 = uc2 + logq - (hi + math.log1p(math.exp(-abs(uc2 - logq))))
        inv_s2 = math.exp(-logs2)
        sp = _softplus(2.0 * ul)
        sig_l = _sigmoid(2.0 * ul)
        sig_c = _sigmoid(uc2 - logq)
    x2s = x * x * inv_s2
    terms[t_x] += -0.5 * LOG_2PI - 0.5 * logs2 - 0.5 * x2s
    terms[t_l] += LOG_2_OVER_PI - sp + ul
    if not want_grad:
        return 0.0
    # d log s2 / d log q = c2 / (c2 + q); d log s2 / d log c2 = q / (c2 + q)
    dls = -0.5 + 0.5 * x2s
    dq = dls * sig_c
    grad[j_l] = 2.0 * dq + 1.0 - 2.0 * sig_l
    grad[j_t] += 2.0 * dq
    grad[j_c] += dls - dq
    return -x * inv_s2


@njit(cache=True)
def _likelihood_and_rho(X, W, Z, rows, bounds, urho, a_rho, b_rho, c_rho, want_grad, gW, gZ, grho, terms):
    Dt, N = X.shape
    M = bounds.shape[0] - 1
    R = X - W @ Z
    ll = 0.0
    lp_rho = 0.0
    for m in range(M):
        rho = math.exp(urho[m])
        sq = 0.0
        for i in range(bounds[m], bounds[m + 1]):
            for n in range(N):
                sq += R[i, n] * R[i, n]
        Dm = bounds[m + 1] - bounds[m]
        ll += 0.5 * Dm * N * (urho[m] - LOG_2PI) - 0.5 * rho * sq
        # rho ~ Gamma(a, b) with log-Jacobian
        lp_rho += c_rho + a_rho * urho[m] - b_rho * rho
        if want_grad:
            grho[m] += 0.5 * Dm * N - 0.5 * rho * sq + a_rho - b_rho * rho
    terms[0] = ll
    terms[1] = lp_rho
    if want_grad:
        for i in range(Dt):
            r = math.exp(urho[rows[i]])
            for n in range(N):
                R[i, n] *= r
        gW += R @ Z.T
        gZ += W.T @ R


@njit(cache=True)
def sparse_gfa(u, X, rows, bounds, K, log_tau0_base, a_rho, b_rho, c_rho, a_ig, b_ig, c_ig,
               want_grad, grad, terms):
    Dt, N = X.shape
    M = bounds.shape[0] - 1
    oW = 0
    oZ = oW + Dt * K
    olw = oZ + K * N
    otw = olw + Dt * K
    oc2w = otw + M
    olz = oc2w + M * K
    otz = olz + K * N
    oc2z = otz + K
    orho = oc2z + K

    W = u[oW:oW + Dt * K].reshape((Dt, K))
    Z = u[oZ:oZ + K * N].reshape((K, N))
    urho = u[orho:orho + M]
    gW = np.zeros((Dt, K))
    gZ = np.zeros((K, N))
    grho = np.zeros(M)
    terms[:] = 0.0
    _likelihood_and_rho(X, W, Z, rows, bounds, urho, a_rho, b_rho, c_rho, want_grad, gW, gZ, grho, terms)

    # tau_w^(m) ~ C+(0, tau0^(m)), log tau0 = base - 0.5 log rho
    for m in range(M):
        ut = u[otw + m]
        lt0 = log_tau0_base[m] - 0.5 * urho[m]
        d = 2.0 * (ut - lt0)
        terms[6] += LOG_2_OVER_PI - lt0 - _softplus(d) + ut
        if want_grad:
            r = _sigmoid(d)
            grad[otw + m] = 1.0 - 2.0 * r
            grho[m] += 0.5 - r

    # tau_z ~ C+(0, 1)
    for k in range(K):
        ut = u[otz + k]
        terms[7] += LOG_2_OVER_PI - _softplus(2.0 * ut) + ut
        if want_grad:
            grad[otz + k] = 1.0 - 2.0 * _sigmoid(2.0 * ut)

    # c2 ~ InvGamma(a, b) with log-Jacobian
    for j in range(M * K):
        uc = u[oc2w + j]
        e = b_ig * math.exp(-uc)
        terms[8] += c_ig - a_ig * uc - e
        if want_grad:
            grad[oc2w + j] = -a_ig + e
    for k in range(K):
        uc = u[oc2z + k]
        e = b_ig * math.exp(-uc)
        terms[9] += c_ig - a_ig * uc - e
        if want_grad:
            grad[oc2z + k] = -a_ig + e

    for i in range(Dt):
        m = rows[i]
        utw = u[otw + m]
        tau2 = math.exp(2.0 * utw)
        for k in range(K):
            j = olw + i * K + k
            c = oc2w + m * K + k
            gW[i, k] += _rhs_element(W[i, k], u[j], utw, u[c], tau2, math.exp(u[c]), want_grad, grad,
                                     j, otw + m, c, terms, 2, 3)

    for k in range(K):
        utz = u[otz + k]
        tau2 = math.exp(2.0 * utz)
        c2 = math.exp(u[oc2z + k])
        for n in range(N):
            j = olz + k * N + n
            gZ[k, n] += _rhs_element(Z[k, n], u[j], utz, u[oc2z + k], tau2, c2, want_grad, grad,
                                     j, otz + k, oc2z + k, terms, 4, 5)

    if want_grad:
        grad[oW:oW + Dt * K] = gW.ravel()
        grad[oZ:oZ + K * N] = gZ.ravel()
        grad[orho:orho + M] = grho
    return terms.sum()


@njit(cache=True)
def ard_gfa(u, X, rows, bounds, K, a_rho, b_rho, c_rho, a_alpha, b_alpha, c_alpha,
            want_grad, grad, terms):
    Dt, N = X.shape
    M = bounds.shape[0] - 1
    oW = 0
    oZ = oW + Dt * K
    oa = oZ + K * N
    orho = oa + M * K
    W = u[oW:oW + Dt * K].reshape((Dt, K))
    Z = u[oZ:oZ + K * N].reshape((K, N))
    urho = u[orho:orho + M]
    gW = np.zeros((Dt, K))
    gZ = np.zeros((K, N))
    grho = np.zeros(M)
    terms[:] = 0.0
    _likelihood_and_rho(X, W, Z, rows, bounds, urho, a_rho, b_rho, c_rho, want_grad, gW, gZ, grho, terms)

    # alpha ~ Gamma(a, b) with log-Jacobian
    for j in range(M * K):
        ua = u[oa + j]
        terms[4] += c_alpha + a_alpha * ua - b_alpha * math.exp(ua)
        if want_grad:
            grad[oa + j] = a_alpha - b_alpha * math.exp(ua)
    for i in range(Dt):
        m = rows[i]
        for k in range(K):
            ua = u[oa + m * K + k]
            al = math.exp(ua)
            w = W[i, k]
            terms[2] += -0.5 * LOG_2PI + 0.5 * ua - 0.5 * al * w * w
            if want_grad:
                gW[i, k] += -al * w
                grad[oa + m * K + k] += 0.5 - 0.5 * al * w * w
    for k in range(K):
        for n in range(N):
            z = Z[k, n]
            terms[3] += -0.5 * LOG_2PI - 0.5 * z * z
            if want_grad:
                gZ[k, n] += -z
    if want_grad:
        grad[oW:oW + Dt * K] = gW.ravel()
        grad[oZ:oZ + K * N] = gZ.ravel()
        grad[orho:orho + M] = grho
    return terms.sum()


@njit(cache=True, inline="always")
def _scale_parts(ul, ut, uc2, tau2, c2):
    """Regularised horseshoe scale ``s`` plus the pieces its gradient needs.

    Returns ``(s, log1p(lambda^2), sigmoid(2 log lambda), c2 / (c2 + q))``
    with ``q = tau^2 lambda^2``.
    """
    e = math.exp(2.0 * ul)
    q = tau2 * e
    den = c2 + q
    if 0.0 < e < _BIG and 0.0 < q < _BIG and 0.0 < c2 < _BIG:
        s2 = c2 * q / den
        if s2 > 0.0:
            inv = 1.0 / den
            return math.sqrt(s2), math.log1p(e), e / (1.0 + e), c2 * inv
    logq = 2.0 * (ut + ul)
    hi = max(uc2, logq)
    logs2 = uc2 + logq - (hi + math.log1p(math.exp(-abs(uc2 - logq))))
    return math.exp(0.5 * logs2), _softplus(2.0 * ul), _sigmoid(2.0 * ul), _sigmoid(uc2 - logq)


@njit(cache=True)
def sparse_gfa_nc(u, X, rows, bounds, K, log_tau0_base, a_rho, b_rho, c_rho, a_ig, b_ig, c_ig,
                  want_grad, grad, terms):
    """Same model as :func:`sparse_gfa` in non-centred coordinates.

    The W and Z slots hold standard-normal innovations; the loadings and
    scores are ``s * innovation`` with ``s`` the regularised horseshoe scale.
    The returned density is the centred one plus ``sum(log s)``.
    """
    Dt, N = X.shape
    M = bounds.shape[0] - 1
    oW = 0
    oZ = oW + Dt * K
    olw = oZ + K * N
    otw = olw + Dt * K
    oc2w = otw + M
    olz = oc2w + M * K
    otz = olz + K * N
    oc2z = otz + K
    orho = oc2z + K

    Wr = u[oW:oW + Dt * K].reshape((Dt, K))
    Zr = u[oZ:oZ + K * N].reshape((K, N))
    urho = u[orho:orho + M]
    terms[:] = 0.0

    W = np.empty((Dt, K))
    Z = np.empty((K, N))
    sW = np.empty((Dt, K))
    sZ = np.empty((K, N))
    sig_cw = np.empty((Dt, K))
    sig_lw = np.empty((Dt, K))
    sig_cz = np.empty((K, N))
    sig_lz = np.empty((K, N))
    for i in range(Dt):
        m = rows[i]
        utw = u[otw + m]
        tau2 = math.exp(2.0 * utw)
        for k in range(K):
            j = olw + i * K + k
            uc = u[oc2w + m * K + k]
            scale, sp, sl, sc = _scale_parts(u[j], utw, uc, tau2, math.exp(uc))
            sW[i, k] = scale
            W[i, k] = sW[i, k] * Wr[i, k]
            sig_lw[i, k] = sl
            sig_cw[i, k] = sc
            terms[2] += -0.5 * LOG_2PI - 0.5 * Wr[i, k] * Wr[i, k]
            terms[3] += LOG_2_OVER_PI - sp + u[j]
    for k in range(K):
        utz = u[otz + k]
        tau2 = math.exp(2.0 * utz)
        uc = u[oc2z + k]
        c2 = math.exp(uc)
        for n in range(N):
            j = olz + k * N + n
            scale, sp, sl, sc = _scale_parts(u[j], utz, uc, tau2, c2)
            sZ[k, n] = scale
            Z[k, n] = sZ[k, n] * Zr[k, n]
            sig_lz[k, n] = sl
            sig_cz[k, n] = sc
            terms[4] += -0.5 * LOG_2PI - 0.5 * Zr[k, n] * Zr[k, n]
            terms[5] += LOG_2_OVER_PI - sp + u[j]

    gW = np.zeros((Dt, K))
    gZ = np.zeros((K, N))
    grho = np.zeros(M)
    _likelihood_and_rho(X, W, Z, rows, bounds, urho, a_rho, b_rho, c_rho, want_grad, gW, gZ, grho, terms)

    for m in range(M):
        ut = u[otw + m]
        lt0 = log_tau0_base[m] - 0.5 * urho[m]
        d = 2.0 * (ut - lt0)
        terms[6] += LOG_2_OVER_PI - lt0 - _softplus(d) + ut
        if want_grad:
            r = _sigmoid(d)
            grad[otw + m] = 1.0 - 2.0 * r
            grho[m] += 0.5 - r
    for k in range(K):
        ut = u[otz + k]
        terms[7] += LOG_2_OVER_PI - _softplus(2.0 * ut) + ut
        if want_grad:
            grad[otz + k] = 1.0 - 2.0 * _sigmoid(2.0 * ut)
    for j in range(M * K):
        uc = u[oc2w + j]
        e = b_ig * math.exp(-uc)
        terms[8] += c_ig - a_ig * uc - e
        if want_grad:
            grad[oc2w + j] = -a_ig + e
    for k in range(K):
        uc = u[oc2z + k]
        e = b_ig * math.exp(-uc)
        terms[9] += c_ig - a_ig * uc - e
        if want_grad:
            grad[oc2z + k] = -a_ig + e

    if want_grad:
        # x = s * r:  d/dr = s * dL/dx - r;  d/dlog s2 = 0.5 * x * dL/dx
        for i in range(Dt):
            m = rows[i]
            for k in range(K):
                w = W[i, k]
                r = Wr[i, k]
                g = gW[i, k]
                grad[oW + i * K + k] = g * sW[i, k] - r
                dls = 0.5 * w * g
                dq = dls * sig_cw[i, k]
                grad[olw + i * K + k] = 2.0 * dq + 1.0 - 2.0 * sig_lw[i, k]
                grad[otw + m] += 2.0 * dq
                grad[oc2w + m * K + k] += dls - dq
        for k in range(K):
            for n in range(N):
                z = Z[k, n]
                r = Zr[k, n]
                g = gZ[k, n]
                grad[oZ + k * N + n] = g * sZ[k, n] - r
                dls = 0.5 * z * g
                dq = dls * sig_cz[k, n]
                grad[olz + k * N + n] = 2.0 * dq + 1.0 - 2.0 * sig_lz[k, n]
                grad[otz + k] += 2.0 * dq
                grad[oc2z + k] += dls - dq
        grad[orho:orho + M] = grho
    return terms.sum()
