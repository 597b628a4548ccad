# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. See ``_kernels_py.py`` for the reference twins."""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, fabs, log, sqrt, INFINITY
from numpy.random cimport bitgen_t

cnp.import_array()

cdef double TAIL_SWITCH = 0.5


cdef inline bitgen_t *_bitgen(rng) except NULL:
    return <bitgen_t *> PyCapsule_GetPointer(rng.bit_generator.capsule, "BitGenerator")


cdef inline double _uniform(bitgen_t *bg) noexcept nogil:
    return bg.next_double(bg.state)


cdef double _normal(bitgen_t *bg) noexcept nogil:
    cdef double v1, v2, s
    while True:
        v1 = 2.0 * _uniform(bg) - 1.0
        v2 = 2.0 * _uniform(bg) - 1.0
        s = v1 * v1 + v2 * v2
        if 0.0 < s < 1.0:
            return v1 * sqrt(-2.0 * log(s) / s)


cdef double _std_truncnorm(bitgen_t *bg, double a) noexcept nogil:
    cdef double z, lam, u
    if a < TAIL_SWITCH:
        while True:
            z = _normal(bg)
            if z >= a:
                return z
    lam = 0.5 * (a + sqrt(a * a + 4.0))
    while True:
        z = a - log(1.0 - _uniform(bg)) / lam
        u = _uniform(bg)
        if u <= exp(-0.5 * (z - lam) * (z - lam)):
            return z


cdef inline double _truncnorm(bitgen_t *bg, double m, double s) noexcept nogil:
    cdef double x = m + s * _std_truncnorm(bg, -m / s)
    return x if x > 0.0 else 0.0


def sample_truncnorm(double m, double s, rng):
    cdef bitgen_t *bg = _bitgen(rng)
    with rng.bit_generator.lock:
        return _truncnorm(bg, m, s)


def truncnorm_gibbs(mu, prec, cond_sd, x0, Py_ssize_t n, rng):
    cdef double[::1] mu_v = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[:, ::1] Q = np.ascontiguousarray(prec, dtype=np.float64)
    cdef double[::1] sd = np.ascontiguousarray(cond_sd, dtype=np.float64)
    cdef double[::1] x = np.array(x0, dtype=np.float64)
    cdef Py_ssize_t d = mu_v.shape[0]
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef bitgen_t *bg = _bitgen(rng)
    cdef Py_ssize_t t, i, j
    cdef double acc, m
    with rng.bit_generator.lock, nogil:
        for t in range(n):
            i = <Py_ssize_t>(_uniform(bg) * d)
            acc = 0.0
            for j in range(d):
                if j != i:
                    acc += Q[i, j] * (x[j] - mu_v[j])
            m = mu_v[i] - acc / Q[i, i]
            x[i] = _truncnorm(bg, m, sd[i])
            for j in range(d):
                out[t, j] = x[j]
    return out_arr


def fast_flight(cnp.ndarray pi_arr, A_arr, rng, double snap=1e-9, double utol=1e-12, trace=None):
    cdef double[::1] pv = pi_arr
    cdef double[:, ::1] A = np.ascontiguousarray(A_arr, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0]
    cdef Py_ssize_t nrow = A.shape[0]
    cdef Py_ssize_t p = nrow + 1
    cdef double lo = snap, hi = 1.0 - snap

    act_arr = np.empty(p, dtype=np.intp)
    keep_arr = np.empty(p, dtype=np.intp)
    basis_arr = np.empty((max(nrow, 1), p))
    w_arr = np.empty(p)
    u_arr = np.empty(p)
    cdef Py_ssize_t[::1] act = act_arr
    cdef Py_ssize_t[::1] keep = keep_arr
    cdef double[:, ::1] basis = basis_arr
    cdef double[::1] w = w_arr
    cdef double[::1] u = u_arr

    cdef bitgen_t *bg = _bitgen(rng)
    cdef Py_ssize_t k = 0, nxt = 0, steps = 0, nb, r, c, q, j, rep, nkeep, arg1, arg2, hit
    cdef double norm0, norm, dot, vnorm, umax, lam1, lam2, uc, x, s1, s2, step, target
    cdef bint record = trace is not None

    for c in range(n):
        if pv[c] <= lo:
            pv[c] = 0.0
        elif pv[c] >= hi:
            pv[c] = 1.0

    with rng.bit_generator.lock:
        while True:
            with nogil:
                while k < p and nxt < n:
                    if lo < pv[nxt] < hi:
                        act[k] = nxt
                        k += 1
                    nxt += 1
                if k == 0:
                    break

                nb = 0
                for r in range(nrow):
                    norm0 = 0.0
                    for c in range(k):
                        w[c] = A[r, act[c]]
                        norm0 += w[c] * w[c]
                    norm0 = sqrt(norm0)
                    if norm0 == 0.0:
                        continue
                    for rep in range(2):
                        for q in range(nb):
                            dot = 0.0
                            for c in range(k):
                                dot += basis[q, c] * w[c]
                            for c in range(k):
                                w[c] -= dot * basis[q, c]
                    norm = 0.0
                    for c in range(k):
                        norm += w[c] * w[c]
                    norm = sqrt(norm)
                    if norm > 1e-10 * norm0:
                        for c in range(k):
                            basis[nb, c] = w[c] / norm
                        nb += 1

                for c in range(k):
                    u[c] = _normal(bg)
                vnorm = 0.0
                for c in range(k):
                    vnorm += u[c] * u[c]
                vnorm = sqrt(vnorm)
                for rep in range(2):
                    for q in range(nb):
                        dot = 0.0
                        for c in range(k):
                            dot += basis[q, c] * u[c]
                        for c in range(k):
                            u[c] -= dot * basis[q, c]
                umax = 0.0
                for c in range(k):
                    if fabs(u[c]) > umax:
                        umax = fabs(u[c])
                if umax <= 1e-10 * vnorm:
                    break
                for c in range(k):
                    u[c] /= umax

                lam1 = INFINITY
                lam2 = INFINITY
                arg1 = -1
                arg2 = -1
                for c in range(k):
                    uc = u[c]
                    if fabs(uc) <= utol:
                        continue
                    x = pv[act[c]]
                    if uc > 0.0:
                        s1 = (1.0 - x) / uc
                        s2 = x / uc
                    else:
                        s1 = -x / uc
                        s2 = (x - 1.0) / uc
                    if s1 < lam1:
                        lam1 = s1
                        arg1 = c
                    if s2 < lam2:
                        lam2 = s2
                        arg2 = c
                if lam1 + lam2 == 0.0:
                    break

                if _uniform(bg) < lam2 / (lam1 + lam2):
                    step = lam1
                    hit = arg1
                    target = 1.0 if u[hit] > 0.0 else 0.0
                else:
                    step = -lam2
                    hit = arg2
                    target = 0.0 if u[hit] > 0.0 else 1.0
                for c in range(k):
                    pv[act[c]] += step * u[c]
                pv[act[hit]] = target

                nkeep = 0
                for c in range(k):
                    j = act[c]
                    x = pv[j]
                    if x <= lo:
                        pv[j] = 0.0
                    elif x >= hi:
                        pv[j] = 1.0
                    else:
                        keep[nkeep] = j
                        nkeep += 1
                for c in range(nkeep):
                    act[c] = keep[c]
                k = nkeep
                steps += 1
            if record:
                trace.append(np.array(pi_arr))
    return steps


cdef inline double _kp(double[:, ::1] X, double[:, ::1] S, Py_ssize_t i, Py_ssize_t j,
                       double inv_l2, double dim_term) noexcept nogil:
    cdef Py_ssize_t c
    cdef double r2 = 0.0, dsx = 0.0, dsy = 0.0, ss = 0.0, diff, k
    for c in range(X.shape[1]):
        diff = X[i, c] - X[j, c]
        r2 += diff * diff
        dsx += diff * S[i, c]
        dsy += diff * S[j, c]
        ss += S[i, c] * S[j, c]
    k = exp(-0.5 * r2 * inv_l2)
    return k * (dim_term - r2 * inv_l2 * inv_l2 + (dsx - dsy) * inv_l2 + ss)


def stein_greedy(X_arr, S_arr, double ell, Py_ssize_t m):
    cdef double[:, ::1] X = np.ascontiguousarray(X_arr, dtype=np.float64)
    cdef double[:, ::1] S = np.ascontiguousarray(S_arr, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef double inv_l2 = 1.0 / (ell * ell)
    cdef double dim_term = d * inv_l2
    diag_arr = np.empty(n)
    chosen_arr = np.empty(m, dtype=np.int64)
    cdef double[::1] diag = diag_arr
    cdef cnp.int64_t[::1] chosen = chosen_arr
    cdef Py_ssize_t t, i, j, c, arg
    cdef double val, best
    with nogil:
        for i in range(n):
            val = dim_term
            for c in range(d):
                val = val + S[i, c] * S[i, c]
            diag[i] = val
        for t in range(m):
            best = INFINITY
            arg = 0
            for i in range(n):
                val = diag[i]
                for j in range(t):
                    val += _kp(X, S, i, chosen[j], inv_l2, dim_term)
                if val < best:
                    best = val
                    arg = i
            chosen[t] = arg
    return chosen_arr
