# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernel for GMM predictive-resampling chains.

Bit-compatibility contract: this module performs exactly the float64
operations of ``mdbc._chain_ref.gmm_chain_ref`` in the same order (libm
exp/log, sequential reductions, no FMA contraction), so outputs are
identical to the pure-Python path.
"""

import numpy as np

from libc.math cimport exp, log, M_PI
from libc.stdint cimport int64_t

cdef double LOG_2PI = log(2.0 * M_PI)


cdef inline Py_ssize_t _ltri(Py_ssize_t i, Py_ssize_t m) nogil:
    return i * (i - 1) / 2 + m


cdef void _sample(const double* theta, Py_ssize_t K, Py_ssize_t p,
                  double u, const double* z, double* probs, double* x) nogil:
    cdef Py_ssize_t j, i, mm
    cdef Py_ssize_t blk = p + p * (p - 1) / 2
    cdef Py_ssize_t off_mu = K
    cdef Py_ssize_t off_chol = K + K * p
    cdef double m = theta[0]
    cdef double total, target, acc
    cdef Py_ssize_t comp
    for j in range(1, K):
        if theta[j] > m:
            m = theta[j]
    total = 0.0
    for j in range(K):
        probs[j] = exp(theta[j] - m)
        total += probs[j]
    target = u * total
    acc = 0.0
    comp = K - 1
    for j in range(K):
        acc += probs[j]
        if target < acc:
            comp = j
            break
    cdef const double* mu = theta + off_mu + comp * p
    cdef const double* ch = theta + off_chol + comp * blk
    for i in range(p):
        acc = mu[i] + exp(ch[i]) * z[i]
        for mm in range(i):
            acc += ch[p + _ltri(i, mm)] * z[mm]
        x[i] = acc


cdef void _score(const double* theta, Py_ssize_t K, Py_ssize_t p,
                 const double* x, double* a, double* us, double* v,
                 double* g) nogil:
    cdef Py_ssize_t j, i, m
    cdef Py_ssize_t blk = p + p * (p - 1) / 2
    cdef Py_ssize_t off_mu = K
    cdef Py_ssize_t off_chol = K + K * p
    cdef double acc, q, sum_logdiag, diag
    cdef const double* mu
    cdef const double* ch
    cdef double* uj

    for j in range(K):
        mu = theta + off_mu + j * p
        ch = theta + off_chol + j * blk
        uj = us + j * p
        q = 0.0
        sum_logdiag = 0.0
        for i in range(p):
            acc = x[i] - mu[i]
            for m in range(i):
                acc -= ch[p + _ltri(i, m)] * uj[m]
            diag = exp(ch[i])
            uj[i] = acc / diag
            q += uj[i] * uj[i]
            sum_logdiag += ch[i]
        a[j] = theta[j] - 0.5 * p * LOG_2PI - sum_logdiag - 0.5 * q

    cdef double mx = a[0]
    for j in range(1, K):
        if a[j] > mx:
            mx = a[j]
    acc = 0.0
    for j in range(K):
        acc += exp(a[j] - mx)
    cdef double lse_a = mx + log(acc)

    mx = theta[0]
    for j in range(1, K):
        if theta[j] > mx:
            mx = theta[j]
    acc = 0.0
    for j in range(K):
        acc += exp(theta[j] - mx)
    cdef double lse_w = mx + log(acc)

    cdef double r, s
    for j in range(K):
        mu = theta + off_mu + j * p
        ch = theta + off_chol + j * blk
        uj = us + j * p
        r = exp(a[j] - lse_a)
        s = exp(theta[j] - lse_w)
        g[j] = r - s
        for i in range(p - 1, -1, -1):
            acc = uj[i]
            for m in range(i + 1, p):
                acc -= ch[p + _ltri(m, i)] * v[m]
            v[i] = acc / exp(ch[i])
        for i in range(p):
            g[off_mu + j * p + i] = r * v[i]
        for i in range(p):
            g[off_chol + j * blk + i] = r * (v[i] * uj[i] * exp(ch[i]) - 1.0)
        for i in range(p):
            for m in range(i):
                g[off_chol + j * blk + p + _ltri(i, m)] = r * v[i] * uj[m]


def gmm_chain(theta0, int n_comp, int p, uniforms, normals,
              double n_train, double eta0, int schedule_offset, double clip,
              checkpoints):
    """Run a GMM score-update chain; see ``_chain_ref.gmm_chain_ref``."""
    cdef double[::1] theta = np.array(theta0, dtype=np.float64)
    cdef const double[::1] u_blk = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef const double[:, ::1] z_blk = np.ascontiguousarray(normals, dtype=np.float64)
    cdef const int64_t[::1] cps = np.ascontiguousarray(checkpoints, dtype=np.int64)
    cdef Py_ssize_t d = theta.shape[0]
    cdef Py_ssize_t K = n_comp
    cdef Py_ssize_t pp = p
    cdef Py_ssize_t n_steps = cps[cps.shape[0] - 1]
    if z_blk.shape[0] < n_steps or u_blk.shape[0] < n_steps:
        raise ValueError("variate blocks shorter than the requested horizon")
    if z_blk.shape[1] != pp:
        raise ValueError("normal block width does not match dimension")

    snaps_arr = np.empty((cps.shape[0], d))
    cdef double[:, ::1] snaps = snaps_arr
    scratch = np.empty(K + K * pp + pp + pp + K + d)
    cdef double[::1] w = scratch
    cdef double* a = &w[0]
    cdef double* us = a + K
    cdef double* v = us + K * pp
    cdef double* x = v + pp
    cdef double* probs = x + pp
    cdef double* g = probs + K

    cdef int64_t n_clipped = 0
    cdef int64_t n_nan = 0
    cdef Py_ssize_t k, i, ci = 0
    cdef double eta, upd
    with nogil:
        for k in range(1, n_steps + 1):
            _sample(&theta[0], K, pp, u_blk[k - 1], &z_blk[k - 1, 0], probs, x)
            _score(&theta[0], K, pp, x, a, us, v, g)
            for i in range(d):
                if g[i] != g[i]:
                    g[i] = 0.0
                    n_nan += 1
                elif g[i] > clip:
                    g[i] = clip
                    n_clipped += 1
                elif g[i] < -clip:
                    g[i] = -clip
                    n_clipped += 1
            eta = eta0 / (n_train + k - schedule_offset)
            for i in range(d):
                upd = eta * g[i]
                theta[i] = theta[i] + upd
            if ci < cps.shape[0] and k == cps[ci]:
                for i in range(d):
                    snaps[ci, i] = theta[i]
                ci += 1
    return snaps_arr, int(n_clipped), int(n_nan)
