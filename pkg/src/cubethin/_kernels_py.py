"""Pure-Python kernels.

Twins of ``_kernels.pyx``. Both consume uniforms through
``Generator.random()`` (the bit generator's ``next_double``) and perform the
same floating-point operations in the same order, so for a given seed the
flight and Gibbs kernels of the two backends return identical results. The
Stein greedy kernel here is vectorised over candidates; it keeps the
summation order but relies on numpy's ``exp``, so scores may differ in the
last bits. Keep the two files in sync.
"""

import math

import numpy as np

TAIL_SWITCH = 0.5


def _normal(rng):
    # Marsaglia polar method, second variate discarded
    while True:
        v1 = 2.0 * rng.random() - 1.0
        v2 = 2.0 * rng.random() - 1.0
        s = v1 * v1 + v2 * v2
        if 0.0 < s < 1.0:
            return v1 * math.sqrt(-2.0 * math.log(s) / s)


def _std_truncnorm(rng, a):
    """Z ~ N(0, 1) conditioned on Z >= a."""
    if a < TAIL_SWITCH:
        while True:
            z = _normal(rng)
            if z >= a:
                return z
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a - math.log(1.0 - rng.random()) / lam
        u = rng.random()
        if u <= math.exp(-0.5 * (z - lam) * (z - lam)):
            return z


def sample_truncnorm(m, s, rng):
    x = m + s * _std_truncnorm(rng, -m / s)
    return x if x > 0.0 else 0.0


def truncnorm_gibbs(mu, prec, cond_sd, x0, n, rng):
    d = len(mu)
    mu = [float(v) for v in mu]
    Q = [[float(v) for v in row] for row in prec]
    sd = [float(v) for v in cond_sd]
    x = [float(v) for v in x0]
    out = np.empty((n, d))
    for t in range(n):
        i = int(rng.random() * d)
        acc = 0.0
        Qi = Q[i]
        for j in range(d):
            if j != i:
                acc += Qi[j] * (x[j] - mu[j])
        m = mu[i] - acc / Qi[i]
        x[i] = sample_truncnorm(m, sd[i], rng)
        out[t] = x
    return out


def fast_flight(pi, A, rng, snap=1e-9, utol=1e-12, trace=None):
    """Flight phase on a sliding block of ``J' + 1`` free units.

    ``pi`` (float64, length N') is updated in place; ``A`` is the J' x N'
    constraint matrix. Units enter the block in index order. Returns the
    number of successful steps.
    """
    n = pi.shape[0]
    nrow = A.shape[0]
    p = nrow + 1
    lo, hi = snap, 1.0 - snap
    Al = A.tolist()
    pv = pi.tolist()
    for k in range(n):
        if pv[k] <= lo:
            pv[k] = 0.0
        elif pv[k] >= hi:
            pv[k] = 1.0

    act = []
    nxt = 0
    steps = 0
    while True:
        while len(act) < p and nxt < n:
            if lo < pv[nxt] < hi:
                act.append(nxt)
            nxt += 1
        k = len(act)
        if k == 0:
            break

        # orthonormal basis of the row space of A[:, act], two MGS passes
        basis = []
        for r in range(nrow):
            row = Al[r]
            w = [row[c] for c in act]
            norm0 = 0.0
            for c in range(k):
                norm0 += w[c] * w[c]
            norm0 = math.sqrt(norm0)
            if norm0 == 0.0:
                continue
            for _ in range(2):
                for q in basis:
                    dot = 0.0
                    for c in range(k):
                        dot += q[c] * w[c]
                    for c in range(k):
                        w[c] -= dot * q[c]
            norm = 0.0
            for c in range(k):
                norm += w[c] * w[c]
            norm = math.sqrt(norm)
            if norm > 1e-10 * norm0:
                for c in range(k):
                    w[c] /= norm
                basis.append(w)

        u = [_normal(rng) for _ in range(k)]
        vnorm = 0.0
        for c in range(k):
            vnorm += u[c] * u[c]
        vnorm = math.sqrt(vnorm)
        for _ in range(2):
            for q in basis:
                dot = 0.0
                for c in range(k):
                    dot += q[c] * u[c]
                for c in range(k):
                    u[c] -= dot * q[c]
        umax = 0.0
        for c in range(k):
            if abs(u[c]) > umax:
                umax = abs(u[c])
        if umax <= 1e-10 * vnorm:
            # only reachable once the block holds every remaining free unit
            break
        for c in range(k):
            u[c] /= umax

        lam1 = math.inf
        lam2 = math.inf
        arg1 = arg2 = -1
        for c in range(k):
            uc = u[c]
            if abs(uc) <= utol:
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

        if rng.random() < lam2 / (lam1 + lam2):
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

        keep = []
        for c in range(k):
            j = act[c]
            x = pv[j]
            if x <= lo:
                pv[j] = 0.0
            elif x >= hi:
                pv[j] = 1.0
            else:
                keep.append(j)
        act = keep
        steps += 1
        if trace is not None:
            trace.append(np.array(pv))

    pi[:] = pv
    return steps


def _kp_column(X, S, j, inv_l2, dim_term):
    """k_p(x_i, x_j) for every i, accumulated coordinate by coordinate."""
    n, d = X.shape
    r2 = np.zeros(n)
    dsx = np.zeros(n)
    dsy = np.zeros(n)
    ss = np.zeros(n)
    for c in range(d):
        diff = X[:, c] - X[j, c]
        r2 += diff * diff
        dsx += diff * S[:, c]
        dsy += diff * S[j, c]
        ss += S[:, c] * S[j, c]
    k = np.exp(-0.5 * r2 * inv_l2)
    return k * (dim_term - r2 * inv_l2 * inv_l2 + (dsx - dsy) * inv_l2 + ss)


def stein_greedy(X, S, ell, m):
    """Greedy selection re-evaluating the full objective every iteration.

    At iteration ``t`` the candidate score is
    ``k_p(x_i, x_i) + sum_{j in selected} k_p(x_i, x_j)``, recomputed from
    scratch, which is what makes the cost O(N M^2).
    """
    X = np.ascontiguousarray(X, dtype=float)
    S = np.ascontiguousarray(S, dtype=float)
    n, d = X.shape
    inv_l2 = 1.0 / (ell * ell)
    dim_term = d * inv_l2
    diag = np.full(n, dim_term)
    for c in range(d):
        diag += S[:, c] * S[:, c]
    chosen = []
    for _ in range(m):
        val = diag.copy()
        for j in chosen:
            val += _kp_column(X, S, j, inv_l2, dim_term)
        chosen.append(int(np.argmin(val)))
    return np.asarray(chosen, dtype=np.int64)
