"""Cube thinning and the two baselines it is compared against.

Cube thinning turns the control-variate weights ``w`` of a chain into a
random signed measure supported on exactly ``M`` states:

1. ``Omega = sum |w_n|`` and ``W_n = M |w_n| / Omega`` so that ``sum W_n = M``;
2. a state with ``W_n > 1`` is split into ``ceil(W_n)`` copies sharing ``W_n``;
3. a balanced sample with inclusion probabilities ``W`` is drawn under the
   constraints ``sum S = M`` and ``sum S sgn(w) h_j = 0`` for every control
   variate;
4. each selected copy carries mass ``sgn(w_n) Omega / M``.

The resulting estimator is unbiased for ``sum_n w_n f(X_n)`` given the chain.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import _backend
from .control_variates import cv_weights
from .cube import BalancedProblem, cube_sample
from .errors import DegenerateWeights, DimensionMismatch, InvalidRange, MissingScores
from .samplers import as_generator

logger = logging.getLogger(__name__)


@dataclass
class NormalizedWeights:
    """Signed weights rescaled into inclusion probabilities.

    Attributes
    ----------
    omega : float
        ``sum |w_n|``.
    signs : ndarray of int, shape (N,)
        ``sgn(w_n)``; zero-weight states have sign 0 and no copies.
    owner : ndarray of int
        Original index of every expanded unit.
    W : ndarray
        Inclusion probability of every expanded unit, in ``(0, 1]``.
    copies : ndarray of int, shape (N,)
        Number of expanded units per original state.
    M : int
    """

    omega: float
    signs: np.ndarray
    owner: np.ndarray
    W: np.ndarray
    copies: np.ndarray
    M: int

    @property
    def N(self):
        return self.signs.size

    def total_W(self):
        """``W_n`` summed over copies, per original state."""
        return np.bincount(self.owner, weights=self.W, minlength=self.N)

    def implied_weights(self):
        """``(Omega / M) sgn(w_n) W_n``, which reproduces ``w``."""
        return self.omega / self.M * self.signs * self.total_W()


def normalize_weights(w, M):
    """Rescale signed weights ``w`` to inclusion probabilities summing to ``M``.

    Raises
    ------
    DegenerateWeights
        If every weight is zero (or any is non-finite).
    """
    w = np.asarray(w, dtype=float).ravel()
    M = int(M)
    if M < 1:
        raise InvalidRange("M must be at least 1")
    if not np.all(np.isfinite(w)):
        raise DegenerateWeights("weights contain non-finite values")
    a = np.abs(w)
    omega = float(a.sum())
    if omega == 0.0:
        raise DegenerateWeights("all weights are zero")
    Wn = M * a / omega
    copies = np.where(a > 0, np.maximum(np.ceil(Wn), 1.0), 0.0).astype(np.int64)
    owner = np.repeat(np.arange(w.size), copies)
    W = (Wn / np.maximum(copies, 1))[owner]
    return NormalizedWeights(omega, np.sign(w).astype(np.int64), owner, W, copies, M)


def build_constraints(cv, nw):
    """Constraint matrix with a ones row then ``sgn(w_n) h_j(X_n)`` per column ``j``.

    ``cv`` may be None (or have no columns), giving the size constraint only.
    Copies of the same state get identical columns.
    """
    ones = np.ones((1, nw.owner.size))
    if cv is None:
        return ones
    h = cv.values
    if h.shape[0] != nw.N:
        raise DimensionMismatch(f"{h.shape[0]} control-variate rows for {nw.N} weights")
    rows = (h[nw.owner] * nw.signs[nw.owner, None]).T
    return np.vstack([ones, rows])


def _independent_rows(A):
    """Ones row plus a maximal independent subset of the remaining rows.

    Rows are rescaled to unit max-norm. Both steps leave the set of
    balanced samples (and the landing cost) unchanged.
    """
    head, rest = A[:1], A[1:]
    if rest.shape[0] == 0:
        return head
    scale = np.abs(rest).max(axis=1)
    rest = rest[scale > 0] / scale[scale > 0, None]
    if rest.shape[0] == 0:
        return head
    q = head[0] / np.sqrt(head.shape[1])
    resid = rest - np.outer(rest @ q, q)
    _, R, piv = linalg.qr(resid.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return head
    rank = int(np.count_nonzero(diag > 1e-10 * diag[0]))
    return np.vstack([head, rest[np.sort(piv[:rank])]])


@dataclass
class SignedSubsample:
    """Multiset of selected states with signs and a common mass ``Omega / M``.

    ``residual`` counts the coordinates the landing phase had to round; when
    it is zero the flight ended on a vertex and every balancing equation
    holds exactly.
    """

    indices: np.ndarray
    signs: np.ndarray
    omega: float
    M: int
    residual: int = 0
    cv_residuals: np.ndarray = field(default=None, repr=False)

    @property
    def magnitude(self):
        return self.omega / self.M

    @property
    def landed(self):
        return self.residual > 0

    @property
    def weights(self):
        """Signed mass of every selected point."""
        return self.magnitude * self.signs

    def __len__(self):
        return self.indices.size


def cube_thin(chain, cv, M, rng=None, method="auto", weights=None, order="random"):
    """Compress ``chain`` to ``M`` signed points by cube thinning.

    Parameters
    ----------
    chain : Chain
    cv : ControlVariateMatrix
        Evaluated on ``chain``.
    M : int
        Subsample size, ``1 <= M < N``.
    rng : Generator or seed
    method : str
        Flight method passed to the cube sampler.
    order : {"random", "given"}
        Unit order for the block flight; ``"given"`` follows the chain.
    weights : WeightedSample, optional
        Precomputed ``cv_weights(cv)``.

    Returns
    -------
    SignedSubsample
    """
    M = int(M)
    if cv.N != chain.N:
        raise DimensionMismatch(f"control variates have {cv.N} rows, chain has {chain.N} states")
    if not 1 <= M < chain.N:
        raise InvalidRange(f"M must lie in [1, N) = [1, {chain.N}), got {M}")
    rng = as_generator(rng)
    ws = cv_weights(cv) if weights is None else weights
    nw = normalize_weights(ws.weights, M)
    A = _independent_rows(build_constraints(cv, nw))
    problem = BalancedProblem(nw.W, A, fixed_size=True)
    out = cube_sample(problem, rng, method=method, order=order, details=True)
    picked = np.flatnonzero(out.sample)
    idx = np.sort(nw.owner[picked])
    signs = nw.signs[idx]
    resid = signs @ cv.values[idx]
    if out.landed:
        logger.debug("landing rounded %d units", out.residual)
    return SignedSubsample(idx, signs, nw.omega, M, out.residual, resid)


def subsample_estimate(sub, f_values):
    """``(Omega / M) sum_{selected} sgn(w_n) f(X_n)``, counting multiplicity."""
    f_values = np.asarray(f_values, dtype=float)
    if f_values.ndim != 1:
        raise DimensionMismatch("f_values must be a vector")
    if sub.indices.size and sub.indices.max() >= f_values.size:
        raise DimensionMismatch("f_values is shorter than the chain")
    return float(sub.magnitude * (sub.signs @ f_values[sub.indices]))


def standard_thin(chain, b, M):
    """Evenly spaced post-burn-in indices ``b + round(k (N - b) / M)``, k < M.

    ``chain`` may also be the chain length. Halves round up.
    """
    N = chain if isinstance(chain, (int, np.integer)) else chain.N
    b, M = int(b), int(M)
    if not 0 <= b < N:
        raise InvalidRange(f"burn-in {b} outside [0, {N})")
    if not 1 <= M <= N - b:
        raise InvalidRange(f"M={M} outside [1, {N - b}]")
    k = np.arange(M)
    return b + np.floor(k * (N - b) / M + 0.5).astype(np.int64)


def stein_thin_greedy(chain, M, bandwidth=None):
    """Greedy Stein thinning: add the state minimising ``k_p(x, x) + sum_S k_p(x, y)``.

    Repeats are allowed. Cost is O(N M^2): the objective is re-evaluated
    over the whole selected set at every iteration. Bandwidth defaults to
    the median heuristic.
    """
    from .metrics import median_bandwidth

    if not chain.has_scores:
        raise MissingScores("Stein thinning needs the chain's score vectors")
    M = int(M)
    if M < 1:
        raise InvalidRange("M must be at least 1")
    ell = median_bandwidth(chain.states) if bandwidth is None else float(bandwidth)
    if not ell > 0:
        raise InvalidRange("bandwidth must be positive")
    return np.asarray(_backend.kernels.stein_greedy(chain.states, chain.scores, ell, M), dtype=np.int64)
