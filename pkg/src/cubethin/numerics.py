"""Dense linear-algebra and linear-programming kernels.

Everything here is a pure function of its arguments. Rank decisions share a
single rule: a singular value is treated as zero when it falls below
``RANK_EPS * max(rows, cols) * sigma_max``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, Infeasible, RankDeficient, Unbounded

RANK_EPS = 1e-12


def rank_cutoff(shape, sigma_max, eps=RANK_EPS):
    return eps * max(shape) * sigma_max


def ols(H, F, eps=RANK_EPS):
    """Ordinary least squares coefficients ``(H^t H)^{-1} H^t F``.

    Computed through a QR factorisation of ``H``; the normal equations are
    never formed.

    Raises
    ------
    RankDeficient
        If the smallest singular value of ``H`` is below the rank cutoff.
    """
    H = np.asarray(H, dtype=float)
    F = np.asarray(F, dtype=float)
    if H.ndim != 2 or F.shape != (H.shape[0],):
        raise DimensionMismatch(f"H {H.shape} and F {F.shape} are incompatible")
    n, p = H.shape
    if n < p:
        raise RankDeficient(f"{n} rows cannot determine {p} coefficients")
    Q, R = np.linalg.qr(H)
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] < rank_cutoff(H.shape, sv[0], eps):
        raise RankDeficient(
            f"design matrix is rank deficient (sigma_min={sv[-1]:.3g}, sigma_max={sv[0]:.3g})"
        )
    return linalg.solve_triangular(R, Q.T @ F)


def pseudo_inverse(A, eps=RANK_EPS):
    """Moore-Penrose pseudo-inverse via the SVD."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch("pseudo_inverse expects a matrix")
    m, n = A.shape
    if A.size == 0:
        return np.zeros((n, m))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    # the floor keeps 1/s finite for subnormal singular values
    keep = s > max(rank_cutoff(A.shape, s[0], eps), np.finfo(float).tiny)
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def project_to_null(v, A, free, eps=RANK_EPS):
    """Project ``v`` onto ``ker A`` restricted to the free coordinates.

    Equivalent to ``I v - I A^t (A I A^t)^- A I v`` with ``I = diag(free)``,
    evaluated through the row space of ``A[:, free]`` so that rank-deficient
    blocks need no special handling. Non-free coordinates of the result are
    exactly zero. May return the zero vector.
    """
    v = np.asarray(v, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    free = np.asarray(free, dtype=bool)
    if v.shape != free.shape or A.shape[1] != v.shape[0]:
        raise DimensionMismatch("v, A and free have inconsistent sizes")
    u = np.zeros_like(v)
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return u
    vf = v[idx]
    block = A[:, idx]
    if block.size and np.any(block):
        _, s, Vt = np.linalg.svd(block, full_matrices=False)
        rank = int(np.count_nonzero(s > rank_cutoff(block.shape, s[0], eps)))
        basis = Vt[:rank]
        vf = vf - basis.T @ (basis @ vf)
        # second pass removes the rounding left by the first
        vf = vf - basis.T @ (basis @ vf)
    u[idx] = vf
    return u


@dataclass
class LinearProgram:
    """``min c^t x`` subject to ``A_eq x = b_eq`` and ``lo <= x <= hi``."""

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lo: np.ndarray = None
    hi: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.b_eq.size != self.A_eq.shape[0]:
            raise DimensionMismatch("A_eq and b_eq disagree on the number of rows")
        self.lo = np.zeros(n) if self.lo is None else np.broadcast_to(np.asarray(self.lo, float), (n,)).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.broadcast_to(np.asarray(self.hi, float), (n,)).copy()
        if np.any(self.lo > self.hi):
            raise Infeasible("a variable has lower bound above its upper bound")


@dataclass
class _Tableau:
    T: np.ndarray
    basis: list = field(default_factory=list)


def _pivot(tab, row, col):
    T = tab.T
    T[row] /= T[row, col]
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    T -= np.outer(colvals, T[row])
    tab.basis[row] = col


def _run_simplex(tab, allowed, tol, stall=50):
    """Pivot until optimal; returns False if unbounded.

    Dantzig pricing (most negative reduced cost), switching for good to
    Bland's rule after ``stall`` consecutive degenerate pivots so that
    cycling is impossible.
    """
    T = tab.T
    m = T.shape[0] - 1
    degenerate = 0
    while True:
        reduced = T[m, :allowed]
        if degenerate < stall:
            col = int(np.argmin(reduced))
            if reduced[col] >= -tol:
                return True
        else:
            entering = np.flatnonzero(reduced < -tol)
            if entering.size == 0:
                return True
            col = int(entering[0])
        column = T[:m, col]
        rows = np.flatnonzero(column > tol)
        if rows.size == 0:
            return False
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        row = int(min(ties, key=lambda r: tab.basis[r]))
        degenerate = degenerate + 1 if best <= tol else 0
        _pivot(tab, row, col)


def _standard_simplex(c, A, b, tol):
    """Two-phase simplex for ``min c^t y, A y = b, y >= 0``; returns a vertex."""
    m, n = A.shape
    A = A.copy()
    b = b.copy()
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n : n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    tab = _Tableau(T, list(range(n, n + m)))
    _run_simplex(tab, n, tol)
    scale = 1.0 + np.abs(b).sum()
    if -tab.T[m, -1] > 1e-9 * scale:
        raise Infeasible(f"phase-one residual {-tab.T[m, -1]:.3g}")

    # drive artificials out of the basis, dropping redundant rows
    row = 0
    while row < tab.T.shape[0] - 1:
        if tab.basis[row] >= n:
            cand = np.flatnonzero(np.abs(tab.T[row, :n]) > tol)
            if cand.size:
                _pivot(tab, row, int(cand[0]))
            else:
                tab.T = np.delete(tab.T, row, axis=0)
                del tab.basis[row]
                continue
        row += 1

    T = np.delete(tab.T, np.s_[n : n + m], axis=1)
    tab.T = T
    k = T.shape[0] - 1
    cb = c[tab.basis]
    T[k, :n] = c - cb @ T[:k, :n]
    T[k, -1] = -cb @ T[:k, -1]
    if not _run_simplex(tab, n, tol):
        raise Unbounded("objective is unbounded below")
    y = np.zeros(n)
    y[tab.basis] = T[:k, -1]
    return y


def solve_lp(lp, tol=1e-10):
    """Solve a dense linear program with the simplex method.

    Bounds are folded into standard form (shifts, reflections, free-variable
    splits and upper-bound slack rows); the returned point is a basic
    feasible solution, i.e. a vertex of the feasible polyhedron.

    Raises
    ------
    Infeasible
        No point satisfies the constraints.
    Unbounded
        The objective is unbounded below on the feasible set.
    """
    c, A, b, lo, hi = lp.c, lp.A_eq, lp.b_eq, lp.lo, lp.hi
    n = c.size
    has_lo, has_hi = np.isfinite(lo), np.isfinite(hi)
    # one standard column per variable (two for free ones): x = offset + sgn * y
    free = ~has_lo & ~has_hi
    owner = np.concatenate([np.arange(n), np.flatnonzero(free)])
    sgn = np.concatenate([np.where(has_lo | free, 1.0, -1.0), -np.ones(int(free.sum()))])
    offset = np.where(has_lo, lo, np.where(has_hi, hi, 0.0))
    boxed = np.flatnonzero(has_lo & has_hi)

    nc, nb, m0 = owner.size, boxed.size, A.shape[0]
    As = np.zeros((m0 + nb, nc + nb))
    As[:m0, :nc] = A[:, owner] * sgn
    As[m0 + np.arange(nb), boxed] = 1.0
    As[m0 + np.arange(nb), nc + np.arange(nb)] = 1.0
    cs = np.concatenate([c[owner] * sgn, np.zeros(nb)])
    bs = np.concatenate([b - A @ offset, hi[boxed] - lo[boxed]])

    y = _standard_simplex(cs, As, bs, tol)
    x = offset + np.bincount(owner, weights=sgn * y[:nc], minlength=n)
    return np.clip(x, lo, hi)
